"""Command-line entry point: ``kinemetric <subcommand> ...``."""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import fileio, geomcam, iksolve, rotmath
from .errors import KinemetricError, ParseError

log = logging.getLogger("kinemetric")

SEED_ENV = "KINEMETRIC_SEED"


def resolve_seed(value):
    """``--seed`` if given, else ``$KINEMETRIC_SEED``, else 0."""
    if value is not None:
        return int(value)
    env = os.environ.get(SEED_ENV)
    if env:
        try:
            return int(env)
        except ValueError:
            raise KinemetricError(f"{SEED_ENV} must be an integer, got {env!r}") from None
    return 0


def _load_model(path):
    from .kinmodel import KinematicModel, default_model

    return default_model() if path is None else KinematicModel.load(path)


# -- subcommands -------------------------------------------------------------
def cmd_synth(args):
    from .synth import SynthSpec, synth

    spec = SynthSpec(
        skeleton=args.skeleton,
        joints=tuple(args.joints.split(",")) if args.joints else None,
        amplitude_deg=args.amplitude,
        frequency_hz=tuple(args.frequency),
        root_sway_mm=args.root_sway,
        duration_s=args.duration,
        rate_hz=args.rate,
        n_cameras=args.cameras,
        ring_radius_mm=args.ring_radius,
        camera_height_mm=args.camera_height,
        image_size=tuple(args.image_size),
        heatmap_stride=args.stride,
        heatmap_sigma_px=args.sigma,
        marker_noise_mm=args.marker_noise,
        seed=resolve_seed(args.seed),
    )
    data = synth(spec, args.out)
    print(f"wrote {len(data)} frames, {len(data.cameras)} cameras, {data.J} joints to {args.out}")
    if data.flagged.any():
        print(f"warning: {int(data.flagged.sum())} frame(s) have a joint behind every camera", file=sys.stderr)
    return 0


def cmd_scale(args):
    from .kinmodel import scale_model

    model = _load_model(args.skeleton)
    seq = fileio.read_markers_csv(args.markers)
    pairs = None
    if args.pairs:
        pairs = json.loads(Path(args.pairs).read_text())
    scaled, factors = scale_model(model, seq, pairs)
    scaled.save(args.out)
    for seg, f in factors.items():
        print(f"{seg}\t{f:.6f}")
    return 0


def cmd_ik(args):
    model = _load_model(args.skeleton)
    seq = fileio.read_markers_csv(args.markers)
    weights = fileio.read_weights(args.weights) if args.weights else iksolve.default_weights(model)
    unknown = sorted(set(weights) - set(model.marker_names))
    if unknown:
        print(f"warning: ignoring weights for markers the skeleton lacks: {unknown}", file=sys.stderr)
        weights = {k: v for k, v in weights.items() if k in model.marker_names}
    opts = iksolve.IkOptions(max_iter=args.max_iter)
    results = iksolve.solve_sequence(model, seq, weights, opts)
    angles = iksolve.results_to_angleset(model, results, seq.times)
    fileio.write_angles_csv(args.out, angles)
    bad = [i for i, r in enumerate(results) if not r.converged]
    rms = np.sqrt(np.nanmean([r.residual for r in results]) / max(len(weights), 1))
    print(f"solved {len(results)} frames, {len(bad)} not converged, rms marker error {rms:.4f} mm")
    if bad and args.strict:
        print(f"error: frames not converged: {bad[:20]}", file=sys.stderr)
        return 1
    return 0


def cmd_metrics(args):
    a = fileio.read_angles_csv(args.pred)
    b = fileio.read_angles_csv(args.truth)
    if a.joints != b.joints:
        common = [j for j in a.joints if j in b.joints]
        if not common:
            raise KinemetricError("the two angle files share no joints")
        a, b = a.select(common), b.select(common)
    print(f"{rotmath.mpjae(a, b):.3f}")
    if args.per_joint:
        for j, v in rotmath.mpjae_per_joint(a, b).items():
            print(f"{j}\t{v:.3f}")
    return 0


def cmd_aggregate(args):
    from .synth import load_dataset

    data = load_dataset(args.data)
    if not 0 <= args.frame < len(data):
        raise KinemetricError(f"frame {args.frame} is out of range (0..{len(data) - 1})")
    grid = geomcam.build_grid(data.roots[args.frame], args.side, args.B, args.root_mode)
    vol = geomcam.unproject(data.heatmaps[args.frame], data.cameras, grid)
    fileio.write_tensor(
        args.out, vol.values, [c.name for c in data.cameras],
        {"joints": list(data.joints), "frame": args.frame, "B": args.B, "side_mm": args.side, "root_mode": args.root_mode},
    )
    print(f"wrote {vol.values.shape} volume to {args.out}")
    return 0


def _train_config(args):
    from .learn.trainer import TrainConfig

    return TrainConfig(
        kind=args.kind,
        supervision=args.supervision,
        lr=args.lr,
        anneal_factor=args.anneal_factor,
        anneal_epoch=args.anneal_epoch,
        epochs=args.epochs,
        batch_size=args.batch_size,
        seed=resolve_seed(args.seed),
        root_mode=args.root_mode,
        B=args.B,
        side_mm=args.side,
        hidden=args.hidden,
        batchnorm=not args.no_batchnorm,
        freeze_encoder=args.freeze_encoder,
    )


def cmd_train(args):
    from .learn.trainer import metrics_csv, save_checkpoint, train
    from .synth import load_dataset

    cfg = _train_config(args)
    data = load_dataset(args.data)
    val = load_dataset(args.val) if args.val else None
    res = train(data, cfg, val)
    save_checkpoint(args.out, res.net, cfg, data.joints)
    if args.metrics:
        Path(args.metrics).write_text(metrics_csv(res.metrics))
    last = res.final
    if last:
        print(f"epoch {last['epoch']} loss {last['loss']:.6g} mpjae_train {last['mpjae_train']:.6f} "
              f"mpjae_val {last['mpjae_val']:.6f}")
    if res.status != "ok":
        print(f"error: {res.message}", file=sys.stderr)
        return 1
    return 0


def cmd_eval(args):
    from .learn.trainer import evaluate, load_checkpoint, predict_angles
    from .synth import load_dataset

    net, cfg, joints = load_checkpoint(args.checkpoint)
    data = load_dataset(args.data)
    if joints is not None and tuple(joints) != data.joints:
        raise KinemetricError(f"checkpoint joints {joints} differ from dataset joints {list(data.joints)}")
    print(f"{evaluate(net, data, cfg):.6f}")
    if args.out:
        fileio.write_angles_csv(args.out, predict_angles(net, data, cfg))
    return 0


def cmd_ablate(args):
    from dataclasses import replace

    from .learn.trainer import ablation_csv, ablation_matrix
    from .synth import load_dataset

    base = _train_config(args)
    data = load_dataset(args.data)
    val = load_dataset(args.val) if args.val else None
    rows = ablation_matrix(
        data, replace(base), val,
        kinds=args.kinds.split(","), modes=args.modes.split(","),
        root_modes=args.roots.split(","), resolutions=[int(b) for b in args.resolutions.split(",")],
    )
    text = ablation_csv(rows)
    if args.out:
        Path(args.out).write_text(text)
    print(text, end="")
    return 0


def cmd_compare(args):
    from .compare import compare_ik_vs_direct
    from .learn.trainer import load_checkpoint
    from .synth import load_dataset

    net, cfg, _ = load_checkpoint(args.checkpoint)
    data = load_dataset(args.data)
    report = compare_ik_vs_direct(data, net, cfg, noise_mm=args.noise, seed=resolve_seed(args.seed))
    print(report.to_text())
    if args.out_dir:
        out = Path(args.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "report.csv").write_text(report.to_csv())
        for name, series in report.series.items():
            fileio.write_angles_csv(out / f"series_{name}.csv", series)
    return 0


# -- parser --------------------------------------------------------------------
def _add_train_options(p):
    p.add_argument("--kind", default="6d", choices=["euler", "quat", "6d"])
    p.add_argument("--supervision", default="direct", choices=["direct", "so3"])
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--anneal-factor", type=float, default=0.1)
    p.add_argument("--anneal-epoch", type=int, default=12)
    p.add_argument("--epochs", type=int, default=15)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--root-mode", default="local", choices=["global", "local"])
    p.add_argument("--B", type=int, default=16, help="voxel grid side (power of two)")
    p.add_argument("--side", type=float, default=2500.0, help="grid cube side in mm")
    p.add_argument("--hidden", type=int, default=256)
    p.add_argument("--no-batchnorm", action="store_true")
    p.add_argument("--freeze-encoder", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="kinemetric", description="Joint-angle estimation toolkit.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, func, help_text):
        p = sub.add_parser(name, help=help_text, description=help_text)
        p.add_argument("--seed", type=int, default=None, help=f"random seed (default: ${SEED_ENV} or 0)")
        p.set_defaults(func=func)
        return p

    p = add("synth", cmd_synth, "Generate a synthetic capture (markers, cameras, heatmaps, targets).")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--skeleton", help="skeleton JSON (default: built-in 14-joint model)")
    p.add_argument("--joints", help="comma-separated regression joints (default: all)")
    p.add_argument("--amplitude", type=float, default=30.0, help="joint amplitude in degrees")
    p.add_argument("--frequency", type=float, nargs=2, default=[0.2, 1.0], metavar=("LO", "HI"))
    p.add_argument("--root-sway", type=float, default=100.0, help="root sway amplitude in mm")
    p.add_argument("--duration", type=float, default=1.0, help="seconds")
    p.add_argument("--rate", type=float, default=100.0, help="frames per second")
    p.add_argument("--cameras", type=int, default=3)
    p.add_argument("--ring-radius", type=float, default=5000.0, help="mm")
    p.add_argument("--camera-height", type=float, default=300.0, help="mm")
    p.add_argument("--image-size", type=int, nargs=2, default=[1280, 720], metavar=("W", "H"))
    p.add_argument("--stride", type=int, default=16, help="image pixels per heatmap pixel")
    p.add_argument("--sigma", type=float, default=24.0, help="heatmap sigma in image pixels")
    p.add_argument("--marker-noise", type=float, default=0.0, help="marker noise sigma in mm")

    p = add("scale", cmd_scale, "Scale a skeleton to experimental marker distances.")
    p.add_argument("--markers", required=True)
    p.add_argument("--skeleton")
    p.add_argument("--pairs", help="JSON mapping segment -> [marker_a, marker_b]")
    p.add_argument("--out", required=True, help="scaled skeleton JSON")

    p = add("ik", cmd_ik, "Solve inverse kinematics for a marker CSV.")
    p.add_argument("--markers", required=True)
    p.add_argument("--skeleton")
    p.add_argument("--weights", help="JSON mapping marker -> weight")
    p.add_argument("--max-iter", type=int, default=200)
    p.add_argument("--strict", action="store_true",
                   help="exit nonzero if any frame fails to converge")
    p.add_argument("--out", required=True, help="output angle CSV")

    p = add("metrics", cmd_metrics, "MPJAE in degrees between two angle CSVs.")
    p.add_argument("pred")
    p.add_argument("truth")
    p.add_argument("--per-joint", action="store_true")

    p = add("aggregate", cmd_aggregate, "Dump one frame's fused volume to a tensor file.")
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--frame", type=int, default=0)
    p.add_argument("--B", type=int, default=16)
    p.add_argument("--side", type=float, default=2500.0)
    p.add_argument("--root-mode", default="local", choices=["global", "local"])
    p.add_argument("--out", required=True, help="output tensor base path")

    p = add("train", cmd_train, "Train the volumetric regressor.")
    p.add_argument("--data", required=True)
    p.add_argument("--val", help="held-out dataset directory")
    p.add_argument("--out", required=True, help="checkpoint JSON")
    p.add_argument("--metrics", help="per-epoch metrics CSV")
    _add_train_options(p)

    p = add("eval", cmd_eval, "MPJAE of a checkpoint on a dataset.")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", help="write predicted angles to this CSV")

    p = add("ablate", cmd_ablate, "Train the representation x supervision x root x B matrix.")
    p.add_argument("--data", required=True)
    p.add_argument("--val")
    p.add_argument("--out", help="CSV output")
    p.add_argument("--kinds", default="euler,quat,6d")
    p.add_argument("--modes", default="direct,so3")
    p.add_argument("--roots", default="global,local")
    p.add_argument("--resolutions", default="16,32,64")
    _add_train_options(p)

    p = add("compare", cmd_compare, "IK on joint positions versus direct regression.")
    p.add_argument("--data", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--noise", type=float, default=18.0, help="joint position noise sigma in mm")
    p.add_argument("--out-dir", help="write report.csv and trajectory series here")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except ParseError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (KinemetricError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
