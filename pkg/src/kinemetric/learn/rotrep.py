"""Rotation representations as network outputs: mapping to SO(3), losses and their gradients.

A prediction ``r`` is ``(N, J, D)`` with ``D = 3`` (Euler, degrees per axis),
``4`` (quaternion ``w, x, y, z``) or ``6`` (first two matrix columns).
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .. import rotmath
from ..errors import DegenerateRepresentation, InvalidArgument, ShapeMismatch

log = logging.getLogger(__name__)

KINDS = {"euler": 3, "quat": 4, "6d": 6}
_ALIASES = {"quaternion": "quat", "sixd": "6d", "six_d": "6d", "6D": "6d", "Euler": "euler"}
MODES = ("direct", "so3")

_GEN = np.zeros((3, 3, 3))
for _a in range(3):
    _p, _q = (_a + 1) % 3, (_a + 2) % 3
    _GEN[_a, _q, _p] = 1.0
    _GEN[_a, _p, _q] = -1.0


def canonical_kind(kind: str) -> str:
    k = _ALIASES.get(kind, kind)
    if k not in KINDS:
        raise InvalidArgument(f"unknown representation {kind!r}; expected one of {sorted(KINDS)}")
    return k


def rep_dim(kind: str) -> int:
    return KINDS[canonical_kind(kind)]


def from_matrix(m, kind: str, convention: str = rotmath.DEFAULT_CONVENTION):
    """Target representation of rotation matrices."""
    kind = canonical_kind(kind)
    if kind == "euler":
        return rotmath.matrix_to_euler(m, convention)
    if kind == "quat":
        return rotmath.matrix_to_quat(m)
    return rotmath.matrix_to_sixd(m)


def valid_mask(r, kind: str):
    """Per-slice flag of whether ``r`` can be mapped onto SO(3)."""
    kind = canonical_kind(kind)
    r = np.asarray(r, dtype=float)
    finite = np.all(np.isfinite(r), axis=-1)
    if kind == "euler":
        return finite
    if kind == "quat":
        return finite & (np.linalg.norm(r, axis=-1) > 0)
    a1, a2 = r[..., :3], r[..., 3:]
    n1 = np.linalg.norm(a1, axis=-1)
    n2 = np.linalg.norm(a2, axis=-1)
    with np.errstate(invalid="ignore", divide="ignore"):
        cross = np.linalg.norm(np.cross(a1, a2), axis=-1) / (n1 * n2)
    return finite & (n1 > rotmath.SIXD_MIN_NORM) & (n2 > rotmath.SIXD_MIN_NORM) & (cross > np.sin(rotmath.SIXD_MIN_ANGLE))


def map_to_so3(r, kind: str, convention: str = rotmath.DEFAULT_CONVENTION):
    """Map per-joint representation slices onto rotation matrices."""
    kind = canonical_kind(kind)
    r = np.asarray(r, dtype=float)
    if r.shape[-1] != KINDS[kind]:
        raise ShapeMismatch(f"{kind} slices need a trailing axis of {KINDS[kind]}, got {r.shape}")
    if kind == "euler":
        return rotmath.euler_to_matrix(r, convention)
    if kind == "quat":
        if np.any(np.linalg.norm(r, axis=-1) == 0):
            raise DegenerateRepresentation("zero quaternion")
        return rotmath.quat_to_matrix(r, strict=False)
    return rotmath.sixd_to_matrix(r)


def map_to_so3_backward(r, kind: str, G, convention: str = rotmath.DEFAULT_CONVENTION):
    """Pull a gradient ``G = dL/dY`` (``(..., 3, 3)``) back to the representation."""
    kind = canonical_kind(kind)
    r = np.asarray(r, dtype=float)
    if kind == "euler":
        return _euler_backward(r, G, convention)
    if kind == "quat":
        return _quat_backward(r, G)
    return _sixd_backward(r, G)


def _euler_backward(r, G, convention):
    i, j, k = rotmath.parse_convention(convention)
    rad = np.deg2rad(r)
    Ei = rotmath.elementary(i, rad[..., i])
    Ej = rotmath.elementary(j, rad[..., j])
    Ek = rotmath.elementary(k, rad[..., k])
    Y = Ei @ Ej @ Ek
    out = np.empty(r.shape)
    out[..., i] = np.sum(G * (_GEN[i] @ Y), axis=(-2, -1))
    out[..., j] = np.sum(G * (Ei @ _GEN[j] @ Ej @ Ek), axis=(-2, -1))
    out[..., k] = np.sum(G * (Y @ _GEN[k]), axis=(-2, -1))
    return out * (np.pi / 180.0)


def _quat_backward(r, G):
    n = np.linalg.norm(r, axis=-1, keepdims=True)
    q = r / n
    w, x, y, z = (q[..., c] for c in range(4))
    g = lambda a, b: G[..., a, b]  # noqa: E731
    gq = np.stack(
        [
            2 * (-z * g(0, 1) + y * g(0, 2) + z * g(1, 0) - x * g(1, 2) - y * g(2, 0) + x * g(2, 1)),
            2 * (y * g(0, 1) + z * g(0, 2) + y * g(1, 0) - 2 * x * g(1, 1) - w * g(1, 2)
                 + z * g(2, 0) + w * g(2, 1) - 2 * x * g(2, 2)),
            2 * (-2 * y * g(0, 0) + x * g(0, 1) + w * g(0, 2) + x * g(1, 0) + z * g(1, 2)
                 - w * g(2, 0) + z * g(2, 1) - 2 * y * g(2, 2)),
            2 * (-2 * z * g(0, 0) - w * g(0, 1) + x * g(0, 2) + w * g(1, 0) - 2 * z * g(1, 1)
                 + y * g(1, 2) + x * g(2, 0) + y * g(2, 1)),
        ],
        axis=-1,
    )
    return (gq - q * np.sum(q * gq, axis=-1, keepdims=True)) / n


def _sixd_backward(r, G):
    a1, a2 = r[..., :3], r[..., 3:]
    n1 = np.linalg.norm(a1, axis=-1, keepdims=True)
    b1 = a1 / n1
    d = np.sum(b1 * a2, axis=-1, keepdims=True)
    u = a2 - d * b1
    nu = np.linalg.norm(u, axis=-1, keepdims=True)
    b2 = u / nu
    gb1 = G[..., :, 0] + np.cross(b2, G[..., :, 2])
    gb2 = G[..., :, 1] + np.cross(G[..., :, 2], b1)
    gu = (gb2 - b2 * np.sum(b2 * gb2, axis=-1, keepdims=True)) / nu
    ga2 = gu - b1 * np.sum(b1 * gu, axis=-1, keepdims=True)
    gb1 = gb1 - d * gu - np.sum(b1 * gu, axis=-1, keepdims=True) * a2
    ga1 = (gb1 - b1 * np.sum(b1 * gb1, axis=-1, keepdims=True)) / n1
    return np.concatenate([ga1, ga2], axis=-1)


@dataclass
class LossValue:
    loss: float
    per_joint: np.ndarray
    per_sample: np.ndarray
    grad: np.ndarray | None = None
    skipped: np.ndarray | None = None


def aligned_target(r, target, kind: str):
    """Direct-mode target moved to the branch nearest the prediction.

    Euler components are shifted by multiples of 360 degrees and quaternions
    sign-flipped; 6D targets are returned unchanged.
    """
    kind = canonical_kind(kind)
    if kind == "euler":
        return r + rotmath.wrap_diff_deg(target - r)
    if kind == "quat":
        sign = np.where(np.sum(r * target, axis=-1, keepdims=True) < 0, -1.0, 1.0)
        return sign * target
    return target


def loss(
    pred,
    target,
    mode: str,
    kind: str,
    convention: str = rotmath.DEFAULT_CONVENTION,
    align: bool = True,
    with_grad: bool = False,
    skip_degenerate: bool = False,
) -> LossValue:
    """Supervision loss averaged over joints and then over samples.

    ``pred`` is ``(N, J, D)`` (or ``(J, D)``). ``target`` is either the
    representation in the same kind or rotation matrices ``(N, J, 3, 3)``.
    ``mode="so3"`` compares ``|Y - map(pred)|_F^2``; ``mode="direct"``
    compares raw representation vectors after alignment (``align=False``
    disables the alignment).
    """
    kind = canonical_kind(kind)
    if mode not in MODES:
        raise InvalidArgument(f"unknown supervision mode {mode!r}")
    pred = np.asarray(pred, dtype=float)
    target = np.asarray(target, dtype=float)
    single = pred.ndim == 2
    if single:
        pred = pred[None]
        target = target[None]
    D = KINDS[kind]
    if pred.ndim != 3 or pred.shape[-1] != D:
        raise ShapeMismatch(f"predictions must be (N, J, {D}), got {pred.shape}")
    N, J, _ = pred.shape
    is_matrix = target.ndim == 4 and target.shape[-2:] == (3, 3)
    is_rep = target.ndim == 3 and target.shape[-1] == D
    if target.shape[:2] != (N, J) or not (is_matrix or is_rep):
        raise ShapeMismatch(f"target shape {target.shape} does not match predictions {pred.shape}")

    skipped = np.zeros(N, dtype=bool)
    if mode == "so3":
        ok = valid_mask(pred, kind).all(axis=1)
        if not ok.all():
            if not skip_degenerate:
                raise DegenerateRepresentation(f"{np.count_nonzero(~ok)} sample(s) cannot be mapped onto SO(3)")
            log.warning("skipping %d degenerate sample(s)", np.count_nonzero(~ok))
            skipped = ~ok
        safe = np.where(skipped[:, None, None], _identity_rep(kind), pred)
        Y = target if is_matrix else map_to_so3(target, kind, convention)
        Yhat = map_to_so3(safe, kind, convention)
        diff = Yhat - Y
        per = np.sum(diff**2, axis=(-2, -1))
    else:
        t = from_matrix(target, kind, convention) if is_matrix else target
        if align:
            t = aligned_target(pred, t, kind)
        diff = pred - t
        per = np.sum(diff**2, axis=-1)
    per = np.where(skipped[:, None], 0.0, per)
    per_sample = per.mean(axis=1)
    kept = max(np.count_nonzero(~skipped), 1)
    value = float(per_sample.sum() / kept)
    per_joint = per.sum(axis=0) / kept

    grad = None
    if with_grad:
        scale = 2.0 / (J * kept)
        if mode == "so3":
            grad = map_to_so3_backward(safe, kind, scale * diff, convention)
        else:
            grad = scale * diff
        grad = np.where(skipped[:, None, None], 0.0, grad)
        if single:
            grad = grad[0]
    return LossValue(value, per_joint, per_sample, grad, skipped)


def _identity_rep(kind):
    return {"euler": np.zeros(3), "quat": np.array([1.0, 0, 0, 0]), "6d": np.array([1.0, 0, 0, 0, 1, 0])}[kind]


def predicted_euler(r, kind: str, convention: str = rotmath.DEFAULT_CONVENTION):
    """Canonical Euler angles of a prediction, going through SO(3)."""
    kind = canonical_kind(kind)
    r = np.asarray(r, dtype=float)
    ok = valid_mask(r, kind)
    safe = np.where(ok[..., None], r, _identity_rep(kind))
    return rotmath.matrix_to_euler(map_to_so3(safe, kind, convention), convention)
