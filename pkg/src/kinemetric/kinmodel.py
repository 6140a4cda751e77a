"""Kinematic-tree skeleton: forward kinematics, virtual markers and segment scaling.

World frame is z-up. Every segment frame coincides with the world axes in
the rest pose; a segment's joint sits at ``offset`` in its parent's frame and
its distal end at ``tip`` in its own frame.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from . import rotmath
from .errors import (
    DegenerateVirtualDistance,
    InvalidArgument,
    MissingData,
    ParseError,
    ShapeMismatch,
)

AXIS_INDEX = {"x": 0, "y": 1, "z": 2}
MIN_VIRTUAL_DISTANCE = 1.0


@dataclass(frozen=True)
class Segment:
    name: str
    parent: str | None
    offset: np.ndarray
    dof: tuple[str, ...] = ()
    tip: np.ndarray | None = None
    joint: str | None = None

    @property
    def length_mm(self) -> float:
        return 0.0 if self.tip is None else float(np.linalg.norm(self.tip))

    @property
    def joint_name(self) -> str:
        return self.joint or self.name


@dataclass(frozen=True)
class MarkerAttachment:
    name: str
    segment: str
    offset: np.ndarray


@dataclass
class Pose:
    """Root translation (mm) plus per-joint Euler triples (degrees, per axis)."""

    root: np.ndarray
    angles: np.ndarray

    def __post_init__(self):
        self.root = np.asarray(self.root, dtype=float).reshape(3)
        self.angles = np.asarray(self.angles, dtype=float)
        if self.angles.ndim != 2 or self.angles.shape[1] != 3:
            raise ShapeMismatch(f"pose angles must be (J, 3), got {self.angles.shape}")

    def copy(self) -> "Pose":
        return Pose(self.root.copy(), self.angles.copy())


@dataclass
class MarkerSequence:
    """Marker trajectories in mm; missing samples are NaN."""

    names: tuple[str, ...]
    positions: np.ndarray
    times: np.ndarray | None = None

    def __post_init__(self):
        self.names = tuple(self.names)
        self.positions = np.asarray(self.positions, dtype=float)
        if self.positions.ndim == 2:
            self.positions = self.positions[None]
        if self.positions.shape[1:] != (len(self.names), 3):
            raise ShapeMismatch(
                f"positions must be (frames, {len(self.names)}, 3), got {self.positions.shape}"
            )
        if len(set(self.names)) != len(self.names):
            raise InvalidArgument("marker names must be unique")
        if self.times is None:
            self.times = np.arange(len(self.positions), dtype=float)
        self.times = np.asarray(self.times, dtype=float)

    def __len__(self):
        return len(self.positions)

    def frame(self, t: int) -> "MarkerFrame":
        return MarkerFrame(self.names, self.positions[t], float(self.times[t]))


@dataclass
class MarkerFrame:
    names: tuple[str, ...]
    positions: np.ndarray
    time: float = 0.0

    def __post_init__(self):
        self.names = tuple(self.names)
        self.positions = np.asarray(self.positions, dtype=float).reshape(len(self.names), 3)

    def get(self, name: str) -> np.ndarray:
        try:
            p = self.positions[self.names.index(name)]
        except ValueError:
            raise MissingData(f"marker {name!r} is not in the frame") from None
        if not np.all(np.isfinite(p)):
            raise MissingData(f"marker {name!r} is missing at t={self.time}")
        return p

    def as_dict(self) -> dict:
        return {n: p for n, p in zip(self.names, self.positions)}


@dataclass
class FKResult:
    segment_names: tuple[str, ...]
    joint_positions: np.ndarray
    tip_positions: np.ndarray
    marker_names: tuple[str, ...]
    marker_positions: np.ndarray
    rotations: np.ndarray

    @property
    def markers(self) -> dict:
        return dict(zip(self.marker_names, self.marker_positions))

    @property
    def joints(self) -> dict:
        return dict(zip(self.segment_names, self.joint_positions))


@dataclass
class KinematicModel:
    segments: tuple[Segment, ...]
    markers: tuple[MarkerAttachment, ...]
    joints_order: tuple[str, ...]
    convention: str = rotmath.DEFAULT_CONVENTION
    scale_pairs: dict = field(default_factory=dict)

    def __post_init__(self):
        self.segments = tuple(self.segments)
        self.markers = tuple(self.markers)
        self.joints_order = tuple(self.joints_order)
        self._validate()
        self._index = {s.name: i for i, s in enumerate(self.segments)}
        self._parent_idx = np.array(
            [-1 if s.parent is None else self._index[s.parent] for s in self.segments]
        )
        by_joint = {s.joint_name: s for s in self.segments}
        self._joint_segment = [self._index[by_joint[j].name] for j in self.joints_order]
        self._marker_seg = np.array([self._index[m.segment] for m in self.markers], dtype=int)
        self._marker_off = np.array([m.offset for m in self.markers], dtype=float).reshape(-1, 3)
        # (joint, axis) pairs that the parameter vector exposes
        self._free = [
            (j, AXIS_INDEX[a])
            for j, seg in enumerate(self.joint_segments)
            for a in sorted(seg.dof, key=AXIS_INDEX.get)
        ]

    def _validate(self):
        names = [s.name for s in self.segments]
        if len(set(names)) != len(names):
            raise InvalidArgument("segment names must be unique")
        roots = [s for s in self.segments if s.parent is None]
        if len(roots) != 1:
            raise InvalidArgument("the skeleton needs exactly one root segment")
        seen = set()
        for s in self.segments:
            if s.parent is not None and s.parent not in seen:
                raise InvalidArgument(
                    f"segment {s.name!r} must follow its parent {s.parent!r} (tree order, no cycles)"
                )
            seen.add(s.name)
            if s.parent is not None:
                if s.length_mm <= 0:
                    raise InvalidArgument(f"segment {s.name!r} needs a nonzero length")
            bad = set(s.dof) - set(AXIS_INDEX)
            if bad:
                raise InvalidArgument(f"segment {s.name!r} has unknown DOF axes {sorted(bad)}")
        joint_names = {s.joint_name: s for s in self.segments if s.parent is not None and s.dof}
        if set(self.joints_order) != set(joint_names) or len(self.joints_order) != len(joint_names):
            raise InvalidArgument(
                "joints_order must list every non-root segment with at least one DOF exactly once"
            )
        mnames = [m.name for m in self.markers]
        if len(set(mnames)) != len(mnames):
            raise InvalidArgument("marker names must be unique")
        for m in self.markers:
            if m.segment not in names:
                raise InvalidArgument(f"marker {m.name!r} is attached to unknown segment {m.segment!r}")

    # -- structure --------------------------------------------------------
    @property
    def J(self) -> int:
        return len(self.joints_order)

    @property
    def segment_names(self) -> tuple[str, ...]:
        return tuple(s.name for s in self.segments)

    @property
    def marker_names(self) -> tuple[str, ...]:
        return tuple(m.name for m in self.markers)

    @property
    def joint_segments(self) -> list[Segment]:
        return [self.segments[i] for i in self._joint_segment]

    def segment(self, name: str) -> Segment:
        return self.segments[self._index[name]]

    def children(self, name: str) -> list[Segment]:
        return [s for s in self.segments if s.parent == name]

    @property
    def n_params(self) -> int:
        return 3 + len(self._free)

    def dof_mask(self) -> np.ndarray:
        """Boolean ``(J, 3)`` mask of unlocked axes."""
        mask = np.zeros((self.J, 3), dtype=bool)
        for j, a in self._free:
            mask[j, a] = True
        return mask

    def rest_pose(self) -> Pose:
        return Pose(np.zeros(3), np.zeros((self.J, 3)))

    # -- parameter vector --------------------------------------------------
    def pose_to_vector(self, pose: Pose) -> np.ndarray:
        self._check_pose(pose)
        return np.concatenate([pose.root, [pose.angles[j, a] for j, a in self._free]])

    def vector_to_pose(self, x) -> Pose:
        x = np.asarray(x, dtype=float)
        angles = np.zeros((self.J, 3))
        for (j, a), v in zip(self._free, x[3:]):
            angles[j, a] = v
        return Pose(x[:3].copy(), angles)

    def vectors_to_angles(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        angles = np.zeros((len(X), self.J, 3))
        if self._free:
            j, a = np.array(self._free).T
            angles[:, j, a] = X[:, 3:]
        return angles

    def _check_pose(self, pose: Pose):
        if pose.angles.shape != (self.J, 3):
            raise ShapeMismatch(f"pose has {pose.angles.shape[0]} joints, model has {self.J}")
        if np.any(pose.angles[~self.dof_mask()] != 0.0):
            raise InvalidArgument("pose rotates a locked axis")

    # -- kinematics --------------------------------------------------------
    def _fk_arrays(self, roots, angles):
        """Batched FK: ``roots (N, 3)``, ``angles (N, J, 3)`` degrees."""
        N = len(roots)
        S = len(self.segments)
        local = np.broadcast_to(np.eye(3), (N, S, 3, 3)).copy()
        if self.J:
            local[:, self._joint_segment] = rotmath.euler_to_matrix(angles, self.convention)
        R = np.empty((N, S, 3, 3))
        P = np.empty((N, S, 3))
        for s, seg in enumerate(self.segments):
            p = self._parent_idx[s]
            if p < 0:
                R[:, s] = local[:, s]
                P[:, s] = roots
            else:
                R[:, s] = R[:, p] @ local[:, s]
                P[:, s] = P[:, p] + R[:, p] @ seg.offset
        markers = P[:, self._marker_seg] + np.einsum(
            "nmij,mj->nmi", R[:, self._marker_seg], self._marker_off
        )
        return R, P, markers

    def markers_from_vectors(self, X) -> np.ndarray:
        """Marker positions ``(N, M, 3)`` for a batch of parameter vectors."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        return self._fk_arrays(X[:, :3], self.vectors_to_angles(X))[2]

    def forward_kinematics(self, pose: Pose) -> FKResult:
        self._check_pose(pose)
        R, P, M = self._fk_arrays(pose.root[None], pose.angles[None])
        tips = np.array(
            [
                P[0, s] if seg.tip is None else P[0, s] + R[0, s] @ seg.tip
                for s, seg in enumerate(self.segments)
            ]
        )
        return FKResult(self.segment_names, P[0], tips, self.marker_names, M[0], R[0])

    def forward_kinematics_batch(self, roots, angles):
        """Joint and marker positions for ``(T, 3)`` roots and ``(T, J, 3)`` angles."""
        roots = np.asarray(roots, dtype=float)
        angles = np.asarray(angles, dtype=float)
        if angles.shape[1:] != (self.J, 3) or roots.shape != (len(angles), 3):
            raise ShapeMismatch("roots must be (T, 3) and angles (T, J, 3)")
        R, P, M = self._fk_arrays(roots, angles * self.dof_mask())
        return P, M

    # -- scaling -----------------------------------------------------------
    def scaled(self, factors: Mapping[str, float]) -> "KinematicModel":
        """Isotropically scale each named segment: its tip, its markers and its children's offsets."""
        for name, s in factors.items():
            if name not in self._index:
                raise InvalidArgument(f"unknown segment {name!r}")
            if not s > 0:
                raise InvalidArgument(f"scale factor for {name!r} must be positive")
        segs = []
        for seg in self.segments:
            own = factors.get(seg.name, 1.0)
            parent = factors.get(seg.parent, 1.0) if seg.parent else 1.0
            segs.append(
                replace(
                    seg,
                    offset=seg.offset * parent,
                    tip=None if seg.tip is None else seg.tip * own,
                )
            )
        marks = [replace(m, offset=m.offset * factors.get(m.segment, 1.0)) for m in self.markers]
        return replace(self, segments=tuple(segs), markers=tuple(marks))

    # -- serialisation -----------------------------------------------------
    def to_dict(self) -> dict:
        def seg_dict(s):
            d = {"name": s.name, "parent": s.parent, "offset_mm": s.offset.tolist(), "dof": list(s.dof)}
            if s.joint:
                d["joint"] = s.joint
            if s.tip is not None:
                d["tip_mm"] = s.tip.tolist()
            return d

        out = {
            "euler_convention": self.convention,
            "joints_order": list(self.joints_order),
            "segments": [seg_dict(s) for s in self.segments],
            "markers": [
                {"name": m.name, "segment": m.segment, "offset_mm": m.offset.tolist()}
                for m in self.markers
            ],
        }
        if self.scale_pairs:
            out["scale_pairs"] = {k: list(v) for k, v in self.scale_pairs.items()}
        return out

    @classmethod
    def from_dict(cls, d: dict, source="<skeleton>") -> "KinematicModel":
        def vec(x, where):
            a = np.asarray(x, dtype=float)
            if a.shape != (3,) or not np.all(np.isfinite(a)):
                raise ParseError(source, field=where, message="expected three finite numbers")
            return a

        try:
            raw_segments = d["segments"]
            seg_names_in_file = [s["name"] for s in raw_segments]
            children = {}
            for s in raw_segments:
                children.setdefault(s.get("parent"), []).append(s)
            segments = []
            for s in raw_segments:
                name = s["name"]
                tip = s.get("tip_mm")
                if tip is None and len(children.get(name, [])) == 1:
                    tip = children[name][0]["offset_mm"]
                segments.append(
                    Segment(
                        name=name,
                        parent=s.get("parent"),
                        offset=vec(s.get("offset_mm", [0, 0, 0]), f"segments.{name}.offset_mm"),
                        dof=tuple(a.lower() for a in s.get("dof", [])),
                        tip=None if tip is None else vec(tip, f"segments.{name}.tip_mm"),
                        joint=s.get("joint"),
                    )
                )
            markers = [
                MarkerAttachment(m["name"], m["segment"], vec(m["offset_mm"], f"markers.{m['name']}.offset_mm"))
                for m in d.get("markers", [])
            ]
            joints_order = d.get("joints_order")
            if joints_order is None:
                by_name = {s.name: s for s in segments}
                joints_order = [by_name[n].joint_name for n in seg_names_in_file if by_name[n].parent and by_name[n].dof]
            pairs = {k: tuple(v) for k, v in d.get("scale_pairs", {}).items()}
            return cls(
                tuple(segments),
                tuple(markers),
                tuple(joints_order),
                d.get("euler_convention", rotmath.DEFAULT_CONVENTION),
                pairs,
            )
        except KeyError as exc:
            raise ParseError(source, field=str(exc.args[0]), message="required key is missing") from None
        except InvalidArgument as exc:
            raise ParseError(source, message=str(exc)) from None

    @classmethod
    def load(cls, path) -> "KinematicModel":
        path = Path(path)
        try:
            d = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ParseError(path, exc.lineno, None, exc.msg) from None
        return cls.from_dict(d, source=path)

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")


def default_model() -> KinematicModel:
    """Generic 14-joint humanoid with a 40-marker set."""
    text = resources.files("kinemetric.data").joinpath("default_skeleton.json").read_text()
    return KinematicModel.from_dict(json.loads(text), source="default_skeleton.json")


def forward_kinematics(model: KinematicModel, pose: Pose) -> FKResult:
    return model.forward_kinematics(pose)


def segment_length_from_markers(frame: MarkerFrame, a: str, b: str) -> float:
    return float(np.linalg.norm(frame.get(a) - frame.get(b)))


def mean_marker_distance(seq: MarkerSequence, a: str, b: str) -> float:
    """Mean inter-marker distance over the frames where both markers are present."""
    for name in (a, b):
        if name not in seq.names:
            raise MissingData(f"marker {name!r} is not in the experimental data")
    pa = seq.positions[:, seq.names.index(a)]
    pb = seq.positions[:, seq.names.index(b)]
    ok = np.all(np.isfinite(pa), axis=1) & np.all(np.isfinite(pb), axis=1)
    if not ok.any():
        raise MissingData(f"markers {a!r}/{b!r} are never both present")
    return float(np.linalg.norm(pa[ok] - pb[ok], axis=1).mean())


def scale_model(
    model: KinematicModel,
    experimental: MarkerSequence,
    segment_marker_pairs: Mapping[str, Sequence[str]] | None = None,
):
    """Scale each segment by the ratio of experimental to virtual marker distance.

    Returns ``(scaled_model, factors)``.
    """
    pairs = segment_marker_pairs if segment_marker_pairs is not None else model.scale_pairs
    rest = model.forward_kinematics(model.rest_pose())
    virtual = MarkerFrame(rest.marker_names, rest.marker_positions)
    factors = {}
    for seg, (a, b) in pairs.items():
        if seg not in model.segment_names:
            raise InvalidArgument(f"unknown segment {seg!r}")
        d_v = segment_length_from_markers(virtual, a, b)
        if d_v < MIN_VIRTUAL_DISTANCE:
            raise DegenerateVirtualDistance(
                f"virtual distance {a}-{b} on {seg!r} is {d_v:.3g} mm (< 1 mm)"
            )
        factors[seg] = mean_marker_distance(experimental, a, b) / d_v
    return model.scaled(factors), factors
