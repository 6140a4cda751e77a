"""Cameras, voxel grids, bilinear sampling and softmax multi-view fusion.

Arrays follow the voxel-last layout used throughout the package: a view
volume is ``(B, B, B, J)``, a stack of views ``(C, B, B, B, J)``. Pixel
coordinates are ``(u, v)`` with ``u`` to the right, ``v`` down and the origin
at the centre of the top-left pixel, so ``heatmap[j, v, u]`` is the value at
integer pixel ``(u, v)``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import DegenerateView, InvalidArgument, ShapeMismatch

MIN_DEPTH = 1e-6


@dataclass(frozen=True)
class Camera:
    """Pinhole camera described by its 3x4 projection (world mm to pixels)."""

    P: np.ndarray
    width: int
    height: int
    name: str = "cam"

    def __post_init__(self):
        P = np.asarray(self.P, dtype=float)
        if P.shape != (3, 4):
            raise InvalidArgument(f"projection matrix must be 3x4, got {P.shape}")
        if not np.all(np.isfinite(P)) or abs(np.linalg.det(P[:, :3])) == 0.0:
            raise InvalidArgument("projection matrix has a singular left 3x3 block")
        object.__setattr__(self, "P", P)

    def project(self, points):
        """Project ``(..., 3)`` world points; returns ``(uv, depth)``."""
        pts = np.asarray(points, dtype=float)
        h = pts @ self.P[:, :3].T + self.P[:, 3]
        depth = h[..., 2]
        safe = np.where(depth > MIN_DEPTH, depth, 1.0)
        return h[..., :2] / safe[..., None], depth

    def rescaled(self, factor: float, name: str | None = None) -> "Camera":
        """Same camera imaging onto a pixel grid resized by ``factor``.

        Pixel centres stay aligned: ``u' = factor * (u + 0.5) - 0.5``.
        """
        if not factor > 0:
            raise InvalidArgument("rescale factor must be positive")
        off = 0.5 * (factor - 1.0)
        A = np.array([[factor, 0.0, off], [0.0, factor, off], [0.0, 0.0, 1.0]])
        w = max(1, int(round(self.width * factor)))
        h = max(1, int(round(self.height * factor)))
        return Camera(A @ self.P, w, h, self.name if name is None else name)

    @classmethod
    def look_at(cls, eye, target, width, height, hfov_deg=60.0, up=(0.0, 0.0, 1.0), name="cam"):
        """Camera at ``eye`` looking at ``target`` with square pixels."""
        eye = np.asarray(eye, dtype=float)
        fwd = np.asarray(target, dtype=float) - eye
        fwd /= np.linalg.norm(fwd)
        right = np.cross(fwd, np.asarray(up, dtype=float))
        right /= np.linalg.norm(right)
        down = np.cross(fwd, right)
        R = np.stack([right, down, fwd])
        f = (width / 2.0) / np.tan(np.deg2rad(hfov_deg) / 2.0)
        K = np.array([[f, 0.0, (width - 1) / 2.0], [0.0, f, (height - 1) / 2.0], [0.0, 0.0, 1.0]])
        P = K @ np.hstack([R, (-R @ eye)[:, None]])
        return cls(P, int(width), int(height), name)


@dataclass(frozen=True)
class VoxelGrid:
    B: int
    side_mm: float
    center: np.ndarray
    coords: np.ndarray

    @property
    def spacing(self) -> float:
        return self.side_mm / self.B


def build_grid(root=None, side_mm: float = 2500.0, B: int = 16, mode: str = "global") -> VoxelGrid:
    """Cube of ``B**3`` voxel centres.

    In ``"global"`` mode the cube is centred on ``root``; in ``"local"`` mode
    the root is pinned to the world origin and ``root`` is ignored.
    """
    if int(B) != B or B < 2:
        raise InvalidArgument("B must be an integer >= 2")
    if not side_mm > 0:
        raise InvalidArgument("side_mm must be positive")
    if mode not in ("global", "local"):
        raise InvalidArgument(f"unknown root mode {mode!r}")
    B = int(B)
    if mode == "local" or root is None:
        center = np.zeros(3)
    else:
        center = np.asarray(root, dtype=float).reshape(3)
    spacing = side_mm / B
    ticks = -side_mm / 2.0 + spacing * (np.arange(B) + 0.5)
    gx, gy, gz = np.meshgrid(ticks, ticks, ticks, indexing="ij")
    coords = np.stack([gx, gy, gz], axis=-1) + center
    return VoxelGrid(B, float(side_mm), center, coords)


def project_voxels(cam: Camera, grid: VoxelGrid):
    """Pixel coordinates ``(B, B, B, 2)`` of every voxel centre plus a front-of-camera mask."""
    uv, depth = cam.project(grid.coords)
    valid = depth > MIN_DEPTH
    if not valid.any():
        raise DegenerateView(f"every voxel lies behind camera {cam.name!r}")
    return uv, valid


def bilinear_sample(maps, uv):
    """Sample ``(J, H, W)`` maps at ``(..., 2)`` pixel coordinates.

    Returns ``(..., J)``. Coordinates outside ``[0, W-1] x [0, H-1]`` (or
    non-finite ones) yield zeros.
    """
    maps = np.asarray(maps, dtype=float)
    if maps.ndim != 3:
        raise ShapeMismatch(f"maps must be (J, H, W), got {maps.shape}")
    J, H, W = maps.shape
    uv = np.asarray(uv, dtype=float)
    lead = uv.shape[:-1]
    u = uv[..., 0].ravel()
    v = uv[..., 1].ravel()
    inside = np.isfinite(u) & np.isfinite(v) & (u >= 0) & (u <= W - 1) & (v >= 0) & (v <= H - 1)
    u = np.where(inside, u, 0.0)
    v = np.where(inside, v, 0.0)
    x0 = np.clip(np.floor(u).astype(int), 0, max(W - 2, 0))
    y0 = np.clip(np.floor(v).astype(int), 0, max(H - 2, 0))
    x1 = np.minimum(x0 + 1, W - 1)
    y1 = np.minimum(y0 + 1, H - 1)
    fx = u - x0
    fy = v - y0
    flat = maps.reshape(J, H * W)
    out = (
        flat[:, y0 * W + x0] * ((1 - fx) * (1 - fy))
        + flat[:, y0 * W + x1] * (fx * (1 - fy))
        + flat[:, y1 * W + x0] * ((1 - fx) * fy)
        + flat[:, y1 * W + x1] * (fx * fy)
    )
    out = np.where(inside, out, 0.0)
    return out.T.reshape(lead + (J,))


@dataclass
class AggregatedVolume:
    values: np.ndarray
    weights: np.ndarray


def aggregate(views) -> AggregatedVolume:
    """Softmax-weighted fusion over the view axis.

    Per scalar location the weights are ``exp(v_c) / sum_c exp(v_c)`` and the
    output is ``sum_c w_c v_c``. Values are sorted along the view axis before
    reduction, so the result is bitwise independent of view order.
    """
    if isinstance(views, np.ndarray):
        stack = np.asarray(views, dtype=float)
    else:
        views = list(views)
        if not views:
            raise InvalidArgument("at least one view is required")
        shapes = {np.shape(v) for v in views}
        if len(shapes) != 1:
            raise InvalidArgument(f"view volumes differ in shape: {sorted(shapes)}")
        stack = np.stack([np.asarray(v, dtype=float) for v in views])
    if stack.ndim < 1 or stack.shape[0] == 0:
        raise InvalidArgument("at least one view is required")
    values, weights, _ = _softmax_fuse(stack)
    return AggregatedVolume(values, weights)


def _softmax_fuse(stack):
    ordered = np.sort(stack, axis=0)
    top = ordered[-1]
    exp_sorted = np.exp(ordered - top)
    denom = np.zeros_like(top)
    num = np.zeros_like(top)
    for c in range(stack.shape[0]):
        denom += exp_sorted[c]
        num += exp_sorted[c] * ordered[c]
    weights = np.exp(stack - top) / denom
    return num / denom, weights, denom


def aggregate_backward(stack, values, weights, grad_out):
    """Gradient of the fused volume with respect to each input view.

    ``d out / d v_c = w_c (1 + v_c - out)``.
    """
    return grad_out * weights * (1.0 + stack - values)


def sample_views(heatmaps, cameras: Sequence[Camera], grid: VoxelGrid):
    """Per-view volumes ``(C, B, B, B, J)``; behind-camera voxels are zero."""
    heatmaps = np.asarray(heatmaps, dtype=float)
    if heatmaps.ndim != 4 or heatmaps.shape[0] != len(cameras):
        raise ShapeMismatch(
            f"heatmaps must be (views={len(cameras)}, J, H, W), got {heatmaps.shape}"
        )
    out = np.empty((len(cameras), grid.B, grid.B, grid.B, heatmaps.shape[1]))
    for c, cam in enumerate(cameras):
        if heatmaps.shape[2:] != (cam.height, cam.width):
            raise ShapeMismatch(f"heatmap size does not match camera {cam.name!r}")
        uv, valid = project_voxels(cam, grid)
        uv = np.where(valid[..., None], uv, np.nan)
        out[c] = bilinear_sample(heatmaps[c], uv)
    return out


def unproject(heatmaps, cameras: Sequence[Camera], grid: VoxelGrid) -> AggregatedVolume:
    """Lift per-view heatmaps into the grid and fuse them."""
    return aggregate(sample_views(heatmaps, cameras, grid))
