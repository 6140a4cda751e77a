"""Synthetic capture generator and the on-disk dataset layout.

A dataset directory holds::

    manifest.json        generator settings, joints, flagged frames
    skeleton.json        the model used to drive the motion
    calibration.json     full-resolution cameras
    angles.csv           ground-truth joint angles for every model joint
    positions.csv        joint centres (root first) per frame
    markers.csv          virtual markers, optionally with noise
    heatmaps.bin/.json   (T, C, J, H, W) Gaussian heatmaps
    targets_quat.*       quaternion targets for the regression joints
    targets_6d.*         6D targets for the regression joints

The generator is a pure function of its SynthSpec, so writing the same SynthSpec twice
produces byte-identical files.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from . import fileio, rotmath
from .dataset import Dataset
from .errors import InvalidArgument, ParseError
from .geomcam import Camera
from .kinmodel import KinematicModel, MarkerSequence, Pose, default_model
from .learn.rotrep import from_matrix

FORMAT_VERSION = 1


@dataclass
class SynthSpec:
    skeleton: str | None = None
    joints: tuple[str, ...] | None = None
    # sinusoidal motion; per-joint overrides map joint -> {"amplitude_deg", "frequency_hz", "phase_deg"}
    amplitude_deg: float = 30.0
    frequency_hz: tuple[float, float] = (0.2, 1.0)
    motion: Mapping[str, Mapping[str, Sequence[float]]] = field(default_factory=dict)
    root_sway_mm: float = 100.0
    duration_s: float = 1.0
    rate_hz: float = 100.0
    n_cameras: int = 3
    ring_radius_mm: float = 5000.0
    camera_height_mm: float = 300.0
    image_size: tuple[int, int] = (1280, 720)
    hfov_deg: float = 60.0
    heatmap_stride: int = 16
    heatmap_sigma_px: float = 24.0
    marker_noise_mm: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if not self.rate_hz > 0:
            raise InvalidArgument("rate_hz must be positive")
        if not self.duration_s > 0:
            raise InvalidArgument("duration_s must be positive")
        if self.n_cameras < 1:
            raise InvalidArgument("at least one camera is required")
        if self.heatmap_sigma_px < 0 or self.marker_noise_mm < 0:
            raise InvalidArgument("noise and heatmap sigma must be nonnegative")
        if not 0 <= self.amplitude_deg < 90:
            raise InvalidArgument("amplitude_deg must lie in [0, 90) to stay off the Euler fold")
        if self.heatmap_stride < 1:
            raise InvalidArgument("heatmap_stride must be >= 1")
        W, H = self.image_size
        if W % self.heatmap_stride or H % self.heatmap_stride:
            raise InvalidArgument("image size must be divisible by heatmap_stride")
        self.image_size = (int(W), int(H))
        self.frequency_hz = tuple(float(f) for f in self.frequency_hz)
        if self.joints is not None:
            self.joints = tuple(self.joints)

    @property
    def n_frames(self) -> int:
        return int(round(self.duration_s * self.rate_hz))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["joints"] = None if self.joints is None else list(self.joints)
        d["frequency_hz"] = list(self.frequency_hz)
        d["image_size"] = list(self.image_size)
        d["motion"] = {k: {kk: list(vv) for kk, vv in v.items()} for k, v in self.motion.items()}
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SynthSpec":
        known = {f.name for f in fields(cls)}
        return cls(**{k: (tuple(v) if isinstance(v, list) else v) for k, v in d.items() if k in known})


def ring_cameras(spec: SynthSpec, target=(0.0, 0.0, 0.0)) -> list[Camera]:
    """Evenly spaced cameras on a horizontal ring, all looking at ``target``."""
    W, H = spec.image_size
    cams = []
    for c in range(spec.n_cameras):
        phi = 2 * np.pi * c / spec.n_cameras
        eye = np.array([spec.ring_radius_mm * np.cos(phi), spec.ring_radius_mm * np.sin(phi), spec.camera_height_mm])
        cams.append(Camera.look_at(eye, target, W, H, spec.hfov_deg, name=f"cam{c}"))
    return cams


def _motion_params(model: KinematicModel, spec: SynthSpec, rng):
    J = model.J
    mask = model.dof_mask()
    amp = rng.uniform(0.5, 1.0, (J, 3)) * spec.amplitude_deg
    freq = rng.uniform(spec.frequency_hz[0], spec.frequency_hz[1], (J, 3))
    phase = rng.uniform(0.0, 2 * np.pi, (J, 3))
    for name, m in spec.motion.items():
        if name not in model.joints_order:
            raise InvalidArgument(f"motion override for unknown joint {name!r}")
        j = model.joints_order.index(name)
        if "amplitude_deg" in m:
            amp[j] = m["amplitude_deg"]
        if "frequency_hz" in m:
            freq[j] = m["frequency_hz"]
        if "phase_deg" in m:
            phase[j] = np.deg2rad(m["phase_deg"])
    if np.any(np.abs(amp) >= 90):
        raise InvalidArgument("joint amplitudes must stay below 90 degrees")
    return amp * mask, freq, phase


def sample_motion(model: KinematicModel, spec: SynthSpec, rng=None):
    """Sinusoidal joint angles ``(T, J, 3)`` and root positions ``(T, 3)``."""
    rng = rng if rng is not None else np.random.default_rng(spec.seed)
    t = np.arange(spec.n_frames) / spec.rate_hz
    amp, freq, phase = _motion_params(model, spec, rng)
    angles = amp * np.sin(2 * np.pi * freq * t[:, None, None] + phase)
    rf = rng.uniform(spec.frequency_hz[0], spec.frequency_hz[1], 3)
    rp = rng.uniform(0.0, 2 * np.pi, 3)
    sway = spec.root_sway_mm * np.array([1.0, 1.0, 0.2])
    roots = sway * np.sin(2 * np.pi * rf * t[:, None] + rp)
    return t, angles, roots


def render_heatmaps(uv, depth, width, height, sigma):
    """Gaussian maps ``(J, H, W)`` with value 1 at each projected point.

    Points behind the camera give empty maps. With ``sigma == 0`` the
    nearest pixel is set to 1.
    """
    J = len(uv)
    out = np.zeros((J, height, width))
    us = np.arange(width, dtype=float)
    vs = np.arange(height, dtype=float)
    for j in range(J):
        if depth[j] <= 0 or not np.all(np.isfinite(uv[j])):
            continue
        u0, v0 = uv[j]
        if sigma == 0:
            iu, iv = int(np.round(u0)), int(np.round(v0))
            if 0 <= iu < width and 0 <= iv < height:
                out[j, iv, iu] = 1.0
            continue
        gu = np.exp(-((us - u0) ** 2) / (2 * sigma**2))
        gv = np.exp(-((vs - v0) ** 2) / (2 * sigma**2))
        out[j] = np.outer(gv, gu)
    return out


def keypoint_positions(model: KinematicModel, roots, angles, joints: Sequence[str]):
    """Distal end of each named joint's segment, ``(T, len(joints), 3)``."""
    out = np.empty((len(angles), len(joints), 3))
    by_joint = {s.joint_name: s for s in model.segments}
    for t in range(len(angles)):
        fk = model.forward_kinematics(Pose(roots[t], angles[t]))
        idx = {n: i for i, n in enumerate(fk.segment_names)}
        for k, j in enumerate(joints):
            out[t, k] = fk.tip_positions[idx[by_joint[j].name]]
    return out


def generate(spec: SynthSpec) -> Dataset:
    """Build the synthetic capture in memory."""
    model = default_model() if spec.skeleton is None else KinematicModel.load(spec.skeleton)
    joints = tuple(spec.joints) if spec.joints is not None else model.joints_order
    unknown = set(joints) - set(model.joints_order)
    if unknown:
        raise InvalidArgument(f"unknown joints {sorted(unknown)}")
    rng = np.random.default_rng(spec.seed)
    times, angles, roots = sample_motion(model, spec, rng)
    _, markers = model.forward_kinematics_batch(roots, angles)
    if spec.marker_noise_mm > 0:
        markers = markers + rng.normal(0.0, spec.marker_noise_mm, markers.shape)

    cams = ring_cameras(spec)
    hm_cams = [c.rescaled(1.0 / spec.heatmap_stride) for c in cams]
    sigma = spec.heatmap_sigma_px / spec.heatmap_stride
    kp = keypoint_positions(model, roots, angles, joints)
    T, C, J = len(times), len(cams), len(joints)
    W, H = hm_cams[0].width, hm_cams[0].height
    heatmaps = np.empty((T, C, J, H, W))
    behind = np.ones((T, J), dtype=bool)
    for c, cam in enumerate(hm_cams):
        uv, depth = cam.project(kp)
        behind &= depth <= 0
        for t in range(T):
            heatmaps[t, c] = render_heatmaps(uv[t], depth[t], W, H, sigma)

    full = rotmath.AngleSet(model.joints_order, angles, times, model.convention)
    sel = full.select(joints)
    return Dataset(
        angles=sel,
        roots=roots,
        cameras=hm_cams,
        heatmaps=heatmaps,
        markers=MarkerSequence(model.marker_names, markers, times),
        full_angles=full,
        model=model,
        flagged=behind.any(axis=1),
    )


def write_dataset(data: Dataset, spec: SynthSpec, out_dir) -> Path:
    """Write ``data`` (as produced by :func:`generate`) under ``out_dir``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    model = data.model
    model.save(out / "skeleton.json")
    full_cams = ring_cameras(spec)
    fileio.write_calibration(out / "calibration.json", full_cams)
    fileio.write_angles_csv(out / "angles.csv", data.full_angles)
    fileio.write_markers_csv(out / "markers.csv", data.markers)
    P, _ = model.forward_kinematics_batch(data.roots, data.full_angles.angles)
    names = [s.joint_name for s in model.segments]
    fileio.write_positions_csv(out / "positions.csv", names, data.angles.times, P)
    views = [c.name for c in full_cams]
    fileio.write_tensor(
        out / "heatmaps", data.heatmaps, views,
        {"joints": list(data.joints), "stride": spec.heatmap_stride},
    )
    M = data.matrices()
    for kind in ("quat", "6d"):
        fileio.write_tensor(out / f"targets_{kind}", from_matrix(M, kind, data.convention), [], {"joints": list(data.joints)})
    manifest = {
        "format": "kinemetric.dataset",
        "version": FORMAT_VERSION,
        "spec": spec.to_dict(),
        "joints": list(data.joints),
        "n_frames": len(data),
        "flagged_frames": [int(i) for i in np.flatnonzero(data.flagged)],
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")
    return out


def synth(spec: SynthSpec, out_dir) -> Dataset:
    data = generate(spec)
    write_dataset(data, spec, out_dir)
    return data


def load_dataset(path) -> Dataset:
    """Read a dataset directory written by :func:`write_dataset`."""
    d = Path(path)
    manifest_path = d / "manifest.json"
    try:
        manifest = json.loads(manifest_path.read_text())
    except json.JSONDecodeError as exc:
        raise ParseError(manifest_path, exc.lineno, None, exc.msg) from None
    except OSError as exc:
        raise ParseError(manifest_path, message=exc.strerror or str(exc)) from None
    if manifest.get("format") != "kinemetric.dataset":
        raise ParseError(manifest_path, field="format", message="not a dataset manifest")
    model = KinematicModel.load(d / "skeleton.json")
    full = fileio.read_angles_csv(d / "angles.csv")
    joints = tuple(manifest["joints"])
    markers = fileio.read_markers_csv(d / "markers.csv")
    cams = fileio.read_calibration(d / "calibration.json")
    heatmaps, side = fileio.read_tensor(d / "heatmaps", with_sidecar=True)
    stride = side.get("stride", 1)
    hm_cams = [c.rescaled(1.0 / stride) for c in cams]
    with open(d / "positions.csv") as fh:
        header = fh.readline().strip().split(",")
    root_cols = [header.index(f"{model.segments[0].joint_name}_{a}") for a in "xyz"]
    pos = np.loadtxt(d / "positions.csv", delimiter=",", skiprows=1, ndmin=2)
    flagged = np.zeros(len(full), dtype=bool)
    flagged[manifest.get("flagged_frames", [])] = True
    return Dataset(
        angles=full.select(joints),
        roots=pos[:, root_cols],
        cameras=hm_cams,
        heatmaps=heatmaps,
        markers=markers,
        full_angles=full,
        model=model,
        flagged=flagged,
    )
