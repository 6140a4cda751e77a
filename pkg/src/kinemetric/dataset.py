"""In-memory dataset: heatmaps, cameras, ground-truth angles and markers."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import geomcam, rotmath
from .errors import InvalidArgument, ShapeMismatch
from .geomcam import Camera
from .kinmodel import KinematicModel, MarkerSequence
from .learn.rotrep import canonical_kind, from_matrix, map_to_so3


@dataclass
class Dataset:
    """One synthetic (or loaded) capture.

    ``angles`` holds the ground truth for the regression joints. ``heatmaps``
    is ``(T, C, J, H, W)`` and matches ``cameras`` (heatmap-resolution
    projections). ``roots`` is the pelvis position per frame in mm.
    """

    angles: rotmath.AngleSet
    roots: np.ndarray
    cameras: list[Camera] | None = None
    heatmaps: np.ndarray | None = None
    markers: MarkerSequence | None = None
    full_angles: rotmath.AngleSet | None = None
    model: KinematicModel | None = None
    flagged: np.ndarray | None = None
    _views: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        T = len(self.angles)
        self.roots = np.asarray(self.roots, dtype=float)
        if self.roots.shape != (T, 3):
            raise ShapeMismatch(f"roots must be ({T}, 3), got {self.roots.shape}")
        if self.heatmaps is not None:
            self.heatmaps = np.asarray(self.heatmaps, dtype=float)
            if self.cameras is None:
                raise InvalidArgument("heatmaps need cameras")
            shape = self.heatmaps.shape
            if len(shape) != 5 or shape[:3] != (T, len(self.cameras), self.J):
                raise ShapeMismatch(
                    f"heatmaps must be ({T}, {len(self.cameras)}, {self.J}, H, W), got {shape}"
                )
        if self.flagged is None:
            self.flagged = np.zeros(T, dtype=bool)
        self.flagged = np.asarray(self.flagged, dtype=bool)

    def __len__(self):
        return len(self.angles)

    @property
    def J(self) -> int:
        return len(self.angles.joints)

    @property
    def joints(self) -> tuple[str, ...]:
        return self.angles.joints

    @property
    def convention(self) -> str:
        return self.angles.convention

    def matrices(self):
        return self.angles.matrices()

    def targets(self, kind: str):
        """Ground truth in representation ``kind`` (``(T, J, D)``)."""
        return from_matrix(self.matrices(), canonical_kind(kind), self.convention)

    def check_consistency(self, tol: float = 1e-9) -> float:
        """Largest disagreement between the three target kinds after mapping back to SO(3)."""
        ref = self.matrices()
        worst = 0.0
        for kind in ("euler", "quat", "6d"):
            back = map_to_so3(self.targets(kind), kind, self.convention)
            worst = max(worst, float(np.abs(back - ref).max()))
        if worst > tol:
            raise InvalidArgument(f"target kinds disagree by {worst:.3g}")
        return worst

    def views(self, B: int, side_mm: float = 2500.0, mode: str = "local"):
        """Per-view volumes ``(T, C, B, B, B, J)``, cached per grid setting."""
        if self.heatmaps is None:
            raise InvalidArgument("dataset has no heatmaps")
        key = (int(B), float(side_mm), mode)
        if key not in self._views:
            out = np.empty((len(self), len(self.cameras), B, B, B, self.J))
            for t in range(len(self)):
                grid = geomcam.build_grid(self.roots[t], side_mm, B, mode)
                out[t] = geomcam.sample_views(self.heatmaps[t], self.cameras, grid)
            self._views[key] = out
        return self._views[key]

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx)
        a = self.angles
        sub = Dataset(
            rotmath.AngleSet(a.joints, a.angles[idx], a.times[idx], a.convention),
            self.roots[idx],
            self.cameras,
            None if self.heatmaps is None else self.heatmaps[idx],
            None if self.markers is None else MarkerSequence(
                self.markers.names, self.markers.positions[idx], self.markers.times[idx]
            ),
            None if self.full_angles is None else rotmath.AngleSet(
                self.full_angles.joints, self.full_angles.angles[idx],
                self.full_angles.times[idx], self.full_angles.convention,
            ),
            self.model,
            self.flagged[idx],
        )
        for key, v in self._views.items():
            sub._views[key] = v[idx]
        return sub
