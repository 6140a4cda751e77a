"""Synthesise a short capture, solve IK on its markers and report MPJAE.

    python3 demos/ik_roundtrip.py [noise_mm]
"""
import sys
import time

from kinemetric import iksolve, rotmath
from kinemetric.synth import SynthSpec, generate


def main(noise_mm=0.0):
    data = generate(SynthSpec(duration_s=1.0, seed=21, marker_noise_mm=noise_mm))
    model = data.model
    t0 = time.perf_counter()
    results = iksolve.solve_sequence(model, data.markers, iksolve.default_weights(model))
    angles = iksolve.results_to_angleset(model, results, data.markers.times)
    elapsed = time.perf_counter() - t0
    unconverged = sum(not r.converged for r in results)
    print(f"{len(results)} frames in {elapsed:.2f}s, {unconverged} unconverged")
    print(f"MPJAE vs generator: {rotmath.mpjae(angles, data.full_angles):.4f} deg")
    for joint, err in rotmath.mpjae_per_joint(angles, data.full_angles).items():
        print(f"  {joint:12s} {err:.4f}")


if __name__ == "__main__":
    main(float(sys.argv[1]) if len(sys.argv) > 1 else 0.0)
