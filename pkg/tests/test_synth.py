import json

import numpy as np
import pytest

from kinemetric import iksolve, rotmath
from kinemetric.errors import InvalidArgument, ParseError
from kinemetric.synth import SynthSpec, generate, keypoint_positions, load_dataset, render_heatmaps, synth


@pytest.fixture(scope="module")
def small():
    spec = SynthSpec(duration_s=0.2, seed=4)
    return spec, generate(spec)


def test_shapes_and_defaults(small):
    spec, d = small
    assert len(d) == 20 and d.J == 14
    assert d.heatmaps.shape == (20, 3, 14, 45, 80)
    assert [(c.width, c.height) for c in d.cameras] == [(80, 45)] * 3
    assert d.markers.positions.shape == (20, 40, 3)
    assert not d.flagged.any()


def test_zero_amplitude_gives_constant_markers():
    d = generate(SynthSpec(amplitude_deg=0.0, root_sway_mm=0.0, duration_s=0.2))
    assert np.array_equal(d.markers.positions, np.repeat(d.markers.positions[:1], len(d), axis=0))
    assert np.all(d.full_angles.angles == 0)


def test_heatmap_peak_at_projected_keypoint(small):
    spec, d = small
    kp = keypoint_positions(d.model, d.roots, d.full_angles.angles, d.joints)
    for c, cam in enumerate(d.cameras):
        uv, _ = cam.project(kp)
        for t in (0, 7, 19):
            for j in range(d.J):
                hm = d.heatmaps[t, c, j]
                iv, iu = np.unravel_index(np.argmax(hm), hm.shape)
                u, v = uv[t, j]
                if 0 <= u <= cam.width - 1 and 0 <= v <= cam.height - 1:
                    assert (iu, iv) == (int(np.round(u)), int(np.round(v)))
                    assert hm.max() <= 1.0


def test_render_heatmaps_cases():
    uv = np.array([[3.0, 2.0], [1.2, 0.6], [2.0, 2.0]])
    depth = np.array([1.0, 1.0, -1.0])
    hm = render_heatmaps(uv, depth, 6, 4, 1.0)
    assert hm[0, 2, 3] == 1.0
    assert not hm[2].any()
    sharp = render_heatmaps(uv, depth, 6, 4, 0.0)
    assert sharp[1].sum() == 1.0 and sharp[1, 1, 1] == 1.0


def test_generation_is_deterministic():
    a = generate(SynthSpec(duration_s=0.1, seed=9, marker_noise_mm=2.0))
    b = generate(SynthSpec(duration_s=0.1, seed=9, marker_noise_mm=2.0))
    assert np.array_equal(a.heatmaps, b.heatmaps)
    assert np.array_equal(a.markers.positions, b.markers.positions)
    c = generate(SynthSpec(duration_s=0.1, seed=10, marker_noise_mm=2.0))
    assert not np.array_equal(a.full_angles.angles, c.full_angles.angles)


def test_targets_consistent(small):
    _, d = small
    d.check_consistency(1e-9)
    M = d.matrices()
    for kind, fn in (("euler", rotmath.euler_to_matrix), ("quat", rotmath.quat_to_matrix), ("6d", rotmath.sixd_to_matrix)):
        assert np.abs(fn(d.targets(kind)) - M).max() < 1e-9


def test_generator_angles_are_canonical(small):
    _, d = small
    back = rotmath.matrix_to_euler(d.matrices())
    assert np.abs(back - d.angles.angles).max() < 1e-9


def test_frames_behind_every_camera_are_flagged():
    # one camera and a sway that carries the body past it
    d = generate(SynthSpec(n_cameras=1, root_sway_mm=8000.0, duration_s=2.0, rate_hz=20, seed=2))
    assert d.flagged.any() and not d.flagged.all()
    for t in np.flatnonzero(d.flagged):
        assert not d.heatmaps[t].reshape(d.J, -1).any(axis=1).all()


def test_spec_validation():
    with pytest.raises(InvalidArgument):
        SynthSpec(amplitude_deg=90.0)
    with pytest.raises(InvalidArgument):
        SynthSpec(rate_hz=0)
    with pytest.raises(InvalidArgument):
        SynthSpec(n_cameras=0)
    with pytest.raises(InvalidArgument):
        SynthSpec(image_size=(1000, 720))
    with pytest.raises(InvalidArgument):
        generate(SynthSpec(joints=("Tail",)))
    with pytest.raises(InvalidArgument):
        generate(SynthSpec(motion={"R.Knee": {"amplitude_deg": 120.0}}))


def test_motion_override():
    spec = SynthSpec(duration_s=0.5, motion={"R.Knee": {"amplitude_deg": 45.0, "frequency_hz": 1.0, "phase_deg": 90.0}})
    d = generate(spec)
    j = d.model.joints_order.index("R.Knee")
    t = d.full_angles.times
    assert np.allclose(d.full_angles.angles[:, j, 1], 45.0 * np.cos(2 * np.pi * t), atol=1e-12)


def test_write_and_load_roundtrip(tmp_path):
    spec = SynthSpec(duration_s=0.1, seed=3, joints=("R.Hip", "L.Knee"))
    d = synth(spec, tmp_path / "a")
    synth(spec, tmp_path / "b")
    for f in sorted(p.name for p in (tmp_path / "a").iterdir()):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes(), f
    back = load_dataset(tmp_path / "a")
    assert back.joints == d.joints
    assert np.array_equal(back.heatmaps, d.heatmaps)
    assert np.array_equal(back.angles.angles, d.angles.angles)
    assert np.array_equal(back.markers.positions, d.markers.positions)
    for a, b in zip(back.cameras, d.cameras):
        assert np.allclose(a.P, b.P, rtol=1e-15, atol=0) and (a.width, a.height) == (b.width, b.height)
    manifest = json.loads((tmp_path / "a" / "manifest.json").read_text())
    assert manifest["n_frames"] == 10 and manifest["joints"] == ["R.Hip", "L.Knee"]
    assert SynthSpec.from_dict(manifest["spec"]) == spec


def test_load_rejects_other_directories(tmp_path):
    with pytest.raises(ParseError):
        load_dataset(tmp_path)


def test_synth_then_ik_recovers_angles(small):
    _, d = small
    res = iksolve.solve_sequence(d.model, d.markers, iksolve.default_weights(d.model))
    angles = iksolve.results_to_angleset(d.model, res, d.markers.times)
    assert rotmath.mpjae(angles, d.full_angles) < 0.1


def test_views_shape_and_cache(small):
    _, d = small
    v = d.views(8, 2500, "local")
    assert v.shape == (20, 3, 8, 8, 8, 14)
    assert d.views(8, 2500, "local") is v
    g = d.views(8, 2500, "global")
    assert g.shape == v.shape and not np.array_equal(g, v)
