"""Rotation representations and conversions onto SO(3).

Every function is vectorised over leading axes: Euler triples are ``(..., 3)``
arrays in degrees, quaternions ``(..., 4)`` in ``(w, x, y, z)`` order, 6D
representations ``(..., 6)`` holding the first two matrix columns, and
rotation matrices ``(..., 3, 3)``.

Euler triples are always stored per axis, ``(x, y, z)``; the convention tag
only fixes the order in which the elementary rotations are composed.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import DegenerateRepresentation, InvalidArgument, ShapeMismatch

DEFAULT_CONVENTION = "XYZ_intrinsic"

# cos(middle angle) below this counts as gimbal lock (|middle| = 90 deg within 1e-9 deg)
LOCK_COS = float(np.sin(np.deg2rad(1e-9)))
ORTHO_TOL = 1e-6
QUAT_NORM_TOL = 1e-6
SIXD_MIN_NORM = 1e-12
SIXD_MIN_ANGLE = 1e-9

_AXES = {"X": 0, "Y": 1, "Z": 2}


def parse_convention(convention: str = DEFAULT_CONVENTION) -> tuple[int, int, int]:
    """Return the axis indices in matrix-product order (left to right).

    ``"XYZ_intrinsic"`` gives ``Rx @ Ry @ Rz``; an extrinsic sequence is the
    reversed intrinsic one. Only Tait-Bryan orders are supported.
    """
    tag = convention.strip()
    order, _, kind = tag.partition("_")
    kind = kind.lower() or "intrinsic"
    order = order.upper()
    if len(order) != 3 or set(order) != set("XYZ") or kind not in ("intrinsic", "extrinsic"):
        raise InvalidArgument(f"unsupported Euler convention {convention!r}")
    axes = tuple(_AXES[a] for a in order)
    if kind == "extrinsic":
        axes = axes[::-1]
    return axes


def wrap_deg(angle):
    """Wrap angles into [-180, 180)."""
    return (np.asarray(angle, dtype=float) + 180.0) % 360.0 - 180.0


def wrap_diff_deg(delta):
    """Wrap angle differences into (-180, 180]."""
    w = wrap_deg(delta)
    return np.where(w == -180.0, 180.0, w)


def elementary(axis: int, theta_rad):
    """Right-handed rotation about a coordinate axis, batched over ``theta_rad``."""
    theta = np.asarray(theta_rad, dtype=float)
    c, s = np.cos(theta), np.sin(theta)
    out = np.zeros(theta.shape + (3, 3))
    p, q = (axis + 1) % 3, (axis + 2) % 3
    out[..., axis, axis] = 1.0
    out[..., p, p] = c
    out[..., p, q] = -s
    out[..., q, p] = s
    out[..., q, q] = c
    return out


def _require_finite(a, what):
    if not np.all(np.isfinite(a)):
        raise InvalidArgument(f"{what} contains non-finite values")


def euler_to_matrix(euler_deg, convention: str = DEFAULT_CONVENTION):
    e = np.asarray(euler_deg, dtype=float)
    if e.shape[-1:] != (3,):
        raise ShapeMismatch(f"Euler triples need a trailing axis of 3, got {e.shape}")
    _require_finite(e, "Euler triple")
    rad = np.deg2rad(e)
    i, j, k = parse_convention(convention)
    return elementary(i, rad[..., i]) @ elementary(j, rad[..., j]) @ elementary(k, rad[..., k])


def check_rotation(m, tol: float = ORTHO_TOL):
    """Raise ``InvalidArgument`` unless every matrix is in SO(3) within ``tol``."""
    m = np.asarray(m, dtype=float)
    if m.shape[-2:] != (3, 3):
        raise ShapeMismatch(f"rotation matrices need trailing shape (3, 3), got {m.shape}")
    _require_finite(m, "rotation matrix")
    gram = np.swapaxes(m, -1, -2) @ m
    if np.max(np.abs(gram - np.eye(3)), initial=0.0) > tol:
        raise InvalidArgument("matrix is not orthogonal")
    if np.max(np.abs(np.linalg.det(m) - 1.0), initial=0.0) > tol:
        raise InvalidArgument("matrix determinant is not +1")
    return m


def matrix_to_euler(m, convention: str = DEFAULT_CONVENTION):
    """Extract per-axis Euler angles (degrees, each in [-180, 180)).

    At gimbal lock the last angle in the composition order is fixed to 0.
    """
    m = check_rotation(m)
    i, j, k = parse_convention(convention)
    sign = 1.0 if (j - i) % 3 == 1 else -1.0

    cos_mid = np.hypot(m[..., i, i], m[..., i, j])
    mid = np.arctan2(sign * m[..., i, k], cos_mid)
    locked = cos_mid < LOCK_COS
    last = np.where(locked, 0.0, np.arctan2(-sign * m[..., i, j], m[..., i, i]))

    # recover the first angle by undoing the other two, which keeps the
    # reconstruction accurate close to the lock
    rest = elementary(j, mid) @ elementary(k, last)
    first_m = m @ np.swapaxes(rest, -1, -2)
    p, q = (i + 1) % 3, (i + 2) % 3
    first = np.arctan2(first_m[..., q, p], first_m[..., p, p])

    out = np.empty(m.shape[:-2] + (3,))
    out[..., i] = first
    out[..., j] = mid
    out[..., k] = last
    return wrap_deg(np.rad2deg(out))


def normalize_quat(q, strict: bool = False):
    q = np.asarray(q, dtype=float)
    if q.shape[-1:] != (4,):
        raise ShapeMismatch(f"quaternions need a trailing axis of 4, got {q.shape}")
    _require_finite(q, "quaternion")
    n = np.linalg.norm(q, axis=-1, keepdims=True)
    if np.any(n == 0.0):
        raise InvalidArgument("zero-norm quaternion")
    if strict and np.any(np.abs(n - 1.0) > QUAT_NORM_TOL):
        raise InvalidArgument("quaternion is not unit norm within 1e-6")
    return q / n


def quat_to_matrix(q, strict: bool = True):
    """Unit quaternion ``(w, x, y, z)`` to rotation matrix.

    With ``strict`` the input must already be unit norm within 1e-6; it is
    renormalised either way. The map is even in ``q``, so ``q`` and ``-q``
    give bitwise-identical matrices.
    """
    q = normalize_quat(q, strict=strict)
    w, x, y, z = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    out = np.empty(q.shape[:-1] + (3, 3))
    out[..., 0, 0] = 1.0 - 2.0 * (y * y + z * z)
    out[..., 0, 1] = 2.0 * (x * y - w * z)
    out[..., 0, 2] = 2.0 * (x * z + w * y)
    out[..., 1, 0] = 2.0 * (x * y + w * z)
    out[..., 1, 1] = 1.0 - 2.0 * (x * x + z * z)
    out[..., 1, 2] = 2.0 * (y * z - w * x)
    out[..., 2, 0] = 2.0 * (x * z - w * y)
    out[..., 2, 1] = 2.0 * (y * z + w * x)
    out[..., 2, 2] = 1.0 - 2.0 * (x * x + y * y)
    return out


def matrix_to_quat(m):
    """Rotation matrix to unit quaternion with ``w >= 0`` (Shepperd's method)."""
    m = check_rotation(m)
    flat = m.reshape(-1, 3, 3)
    out = np.empty((flat.shape[0], 4))
    tr = np.trace(flat, axis1=1, axis2=2)
    diag = np.stack([flat[:, 0, 0], flat[:, 1, 1], flat[:, 2, 2]], axis=1)
    choice = np.argmax(np.concatenate([tr[:, None], diag], axis=1), axis=1)
    for n, (r, c) in enumerate(zip(flat, choice)):
        if c == 0:
            s = 2.0 * np.sqrt(1.0 + tr[n])
            q = [0.25 * s, (r[2, 1] - r[1, 2]) / s, (r[0, 2] - r[2, 0]) / s, (r[1, 0] - r[0, 1]) / s]
        elif c == 1:
            s = 2.0 * np.sqrt(1.0 + r[0, 0] - r[1, 1] - r[2, 2])
            q = [(r[2, 1] - r[1, 2]) / s, 0.25 * s, (r[0, 1] + r[1, 0]) / s, (r[0, 2] + r[2, 0]) / s]
        elif c == 2:
            s = 2.0 * np.sqrt(1.0 + r[1, 1] - r[0, 0] - r[2, 2])
            q = [(r[0, 2] - r[2, 0]) / s, (r[0, 1] + r[1, 0]) / s, 0.25 * s, (r[1, 2] + r[2, 1]) / s]
        else:
            s = 2.0 * np.sqrt(1.0 + r[2, 2] - r[0, 0] - r[1, 1])
            q = [(r[1, 0] - r[0, 1]) / s, (r[0, 2] + r[2, 0]) / s, (r[1, 2] + r[2, 1]) / s, 0.25 * s]
        out[n] = q
    out /= np.linalg.norm(out, axis=1, keepdims=True)
    out[out[:, 0] < 0] *= -1.0
    return out.reshape(m.shape[:-2] + (4,))


def sixd_to_matrix(r):
    """Gram-Schmidt map from ``(a1, a2)`` to a rotation with columns ``(b1, b2, b1 x b2)``."""
    r = np.asarray(r, dtype=float)
    if r.shape[-1:] != (6,):
        raise ShapeMismatch(f"6D representations need a trailing axis of 6, got {r.shape}")
    _require_finite(r, "6D representation")
    a1, a2 = r[..., :3], r[..., 3:]
    n1 = np.linalg.norm(a1, axis=-1, keepdims=True)
    n2 = np.linalg.norm(a2, axis=-1, keepdims=True)
    if np.any(n1 <= SIXD_MIN_NORM) or np.any(n2 <= SIXD_MIN_NORM):
        raise DegenerateRepresentation("6D representation has a zero column")
    b1 = a1 / n1
    u2 = a2 - np.sum(b1 * a2, axis=-1, keepdims=True) * b1
    nu = np.linalg.norm(u2, axis=-1, keepdims=True)
    # |u2| = |a2| sin(angle between a1 and a2)
    if np.any(nu <= n2 * np.sin(SIXD_MIN_ANGLE)):
        raise DegenerateRepresentation("6D columns are parallel")
    b2 = u2 / nu
    b3 = np.cross(b1, b2)
    return np.stack([b1, b2, b3], axis=-1)


def matrix_to_sixd(m):
    m = np.asarray(m, dtype=float)
    if m.shape[-2:] != (3, 3):
        raise ShapeMismatch(f"rotation matrices need trailing shape (3, 3), got {m.shape}")
    return np.concatenate([m[..., :, 0], m[..., :, 1]], axis=-1)


def geodesic_deg(a, b):
    """Angle of the relative rotation ``a.T @ b`` in degrees, in [0, 180]."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    tr = np.trace(np.swapaxes(a, -1, -2) @ b, axis1=-2, axis2=-1)
    return np.rad2deg(np.arccos(np.clip((tr - 1.0) / 2.0, -1.0, 1.0)))


@dataclass
class AngleSet:
    """Per-frame Euler triples for an ordered list of joints.

    ``angles`` has shape ``(frames, joints, 3)`` in degrees, stored per axis.
    """

    joints: tuple[str, ...]
    angles: np.ndarray
    times: np.ndarray | None = None
    convention: str = DEFAULT_CONVENTION
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.joints = tuple(self.joints)
        self.angles = np.asarray(self.angles, dtype=float)
        if self.angles.ndim != 3 or self.angles.shape[1:] != (len(self.joints), 3):
            raise ShapeMismatch(
                f"angles must be (frames, {len(self.joints)}, 3), got {self.angles.shape}"
            )
        if self.times is None:
            self.times = np.arange(len(self.angles), dtype=float)
        self.times = np.asarray(self.times, dtype=float)
        if self.times.shape != (len(self.angles),):
            raise ShapeMismatch("one time stamp per frame is required")

    def __len__(self):
        return len(self.angles)

    def matrices(self):
        return euler_to_matrix(self.angles, self.convention)

    def select(self, joints: Sequence[str]) -> "AngleSet":
        idx = [self.joints.index(j) for j in joints]
        return AngleSet(tuple(joints), self.angles[:, idx], self.times.copy(), self.convention)


def _as_angles(a, joints=None):
    if isinstance(a, AngleSet):
        return a.angles, a.joints
    arr = np.asarray(a, dtype=float)
    if arr.ndim == 2:
        arr = arr[None]
    if arr.ndim != 3 or arr.shape[-1] != 3:
        raise ShapeMismatch(f"expected (frames, joints, 3) angles, got {arr.shape}")
    return arr, joints


def _abs_errors(pred, gt):
    p, pj = _as_angles(pred)
    g, gj = _as_angles(gt)
    if pj is not None and gj is not None and tuple(pj) != tuple(gj):
        raise ShapeMismatch(f"joint order differs: {pj} vs {gj}")
    if p.shape != g.shape:
        raise ShapeMismatch(f"angle sets differ in shape: {p.shape} vs {g.shape}")
    if p.shape[0] == 0:
        raise ShapeMismatch("angle sets are empty")
    return np.abs(wrap_diff_deg(p - g)), gj if gj is not None else pj


def mpjae(pred, gt) -> float:
    """Mean per-joint angle error in degrees.

    Each of the ``3J`` Euler component differences is wrapped into
    (-180, 180] before taking its magnitude; the per-frame means are then
    averaged over frames.
    """
    err, _ = _abs_errors(pred, gt)
    per_frame = err.reshape(len(err), -1).mean(axis=1)
    return float(per_frame.mean())


def mpjae_per_joint(pred, gt) -> dict:
    """Per-joint breakdown of :func:`mpjae` (mean over frames and the three axes)."""
    err, joints = _abs_errors(pred, gt)
    per_joint = err.mean(axis=(0, 2))
    if joints is None:
        joints = [str(j) for j in range(err.shape[1])]
    return {j: float(v) for j, v in zip(joints, per_joint)}
