"""Weighted marker least-squares inverse kinematics.

The objective for one frame is ``sum_i w_i |m_i^exp - m_i^model(pose)|^2``
(mm^2). It is minimised with Levenberg-Marquardt over the root translation
and the unlocked joint angles, using a central-difference Jacobian.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from . import rotmath
from .errors import UnsolvableFrame
from .kinmodel import KinematicModel, MarkerFrame, MarkerSequence, Pose

log = logging.getLogger(__name__)


@dataclass
class IkOptions:
    max_iter: int = 200
    grad_tol: float = 1e-8
    step_tol: float = 1e-10
    lambda0: float = 1e-3
    lambda_max: float = 1e16
    angle_step: float = 1e-4  # degrees
    trans_step: float = 1e-2  # mm
    low_rank_tol: float = 1e-8
    # joint name -> {axis: (lo, hi)} in degrees, applied by projection
    limits: Mapping[str, Mapping[str, tuple[float, float]]] | None = None


@dataclass
class IkResult:
    pose: Pose
    residual: float
    iterations: int
    converged: bool
    marker_errors: dict = field(default_factory=dict)
    low_rank: bool = False
    status: str = ""
    initial_residual: float = float("nan")


def default_weights(model: KinematicModel) -> dict:
    """1.0 for every marker, 2.0 for markers at the knees and elbows."""
    return {m: 2.0 if (".Knee" in m or ".Elbow" in m) else 1.0 for m in model.marker_names}


def _align(model: KinematicModel, frame: MarkerFrame, weights: Mapping[str, float]):
    """Experimental positions and weights aligned with the model's marker order."""
    unknown = set(weights) - set(model.marker_names)
    if unknown:
        raise UnsolvableFrame(f"weights reference markers the model lacks: {sorted(unknown)}")
    lookup = frame.as_dict()
    exp = np.full((len(model.markers), 3), np.nan)
    w = np.zeros(len(model.markers))
    for i, name in enumerate(model.marker_names):
        wi = float(weights.get(name, 0.0))
        if wi < 0 or not np.isfinite(wi):
            raise ValueError(f"weight for {name!r} must be a nonnegative number")
        p = lookup.get(name)
        if p is not None and np.all(np.isfinite(p)):
            exp[i] = p
            w[i] = wi
    if not np.any(w > 0):
        raise UnsolvableFrame(f"no positively weighted marker is present at t={frame.time}")
    return np.where(np.isfinite(exp), exp, 0.0), w


def objective(model: KinematicModel, pose: Pose, frame: MarkerFrame, weights: Mapping[str, float]) -> float:
    exp, w = _align(model, frame, weights)
    virt = model.forward_kinematics(pose).marker_positions
    return float(np.sum(w * np.sum((exp - virt) ** 2, axis=1)))


class _Problem:
    def __init__(self, model, exp, w, opts):
        self.model = model
        self.keep = w > 0
        self.exp = exp[self.keep]
        self.sw = np.sqrt(w[self.keep])[:, None]
        self.opts = opts
        n = model.n_params
        self.h = np.full(n, opts.angle_step)
        self.h[:3] = opts.trans_step
        self.lo = np.full(n, -np.inf)
        self.hi = np.full(n, np.inf)
        if opts.limits:
            free = model._free
            for k, (j, a) in enumerate(free):
                jl = opts.limits.get(model.joints_order[j], {})
                axis = "xyz"[a]
                if axis in jl:
                    self.lo[3 + k], self.hi[3 + k] = jl[axis]

    def residuals(self, X):
        M = self.model.markers_from_vectors(X)[:, self.keep]
        return ((M - self.exp) * self.sw).reshape(len(M), -1)

    def cost(self, x):
        r = self.residuals(x)[0]
        return float(r @ r), r

    def jacobian(self, x):
        n = len(x)
        steps = np.diag(self.h)
        R = self.residuals(np.vstack([x + steps, x - steps]))
        return ((R[:n] - R[n:]) / (2.0 * self.h[:, None])).T

    def project(self, x):
        return np.clip(x, self.lo, self.hi)


def _wrap_params(model, x):
    x = x.copy()
    x[3:] = rotmath.wrap_deg(x[3:])
    return x


def solve_frame(
    model: KinematicModel,
    frame: MarkerFrame,
    weights: Mapping[str, float],
    init: Pose | None = None,
    opts: IkOptions | None = None,
    _return_raw: bool = False,
):
    """Fit one frame of markers; the returned residual never exceeds the initial one."""
    opts = opts or IkOptions()
    init = init or model.rest_pose()
    exp, w = _align(model, frame, weights)
    prob = _Problem(model, exp, w, opts)
    x = prob.project(model.pose_to_vector(init))
    x_init = x.copy()
    f, r = prob.cost(x)
    lam = opts.lambda0
    it = 0
    status = "max_iter"
    converged = False
    Jm = prob.jacobian(x)
    while it < opts.max_iter:
        g = Jm.T @ r
        if np.linalg.norm(g) < opts.grad_tol:
            status, converged = "gradient", True
            break
        A = Jm.T @ Jm
        d = np.diag(A).copy()
        d = np.maximum(d, 1e-12 * max(d.max(), 1.0))
        accepted = False
        while True:
            it += 1
            try:
                delta = np.linalg.solve(A + lam * np.diag(d), -g)
            except np.linalg.LinAlgError:
                delta = np.linalg.lstsq(A + lam * np.diag(d), -g, rcond=None)[0]
            x_new = prob.project(x + delta)
            step = np.linalg.norm(x_new - x)
            if step < opts.step_tol:
                status, converged = "step", True
                break
            f_new, r_new = prob.cost(x_new)
            if f_new < f:
                x, f, r = x_new, f_new, r_new
                lam = max(lam / 10.0, 1e-15)
                accepted = True
                break
            lam *= 10.0
            if lam > opts.lambda_max:
                status = "stall"
                break
            if it >= opts.max_iter:
                break
        if not accepted:
            break
        Jm = prob.jacobian(x)
    Jf = prob.jacobian(x)
    sv = np.linalg.svd(Jf, compute_uv=False)
    # rank deficient when fewer than n_params singular values clear the tolerance
    scale = max(sv.max(), 1.0) if sv.size else 1.0
    low_rank = bool(np.count_nonzero(sv > opts.low_rank_tol * scale) < Jf.shape[1])
    # compare start and end with the same objective so monotonicity holds exactly
    init_pose = model.vector_to_pose(_wrap_params(model, x_init))
    f0 = objective(model, init_pose, frame, weights)
    pose = model.vector_to_pose(_wrap_params(model, x))
    residual = objective(model, pose, frame, weights)
    if residual > f0:
        x, pose, residual = x_init, init_pose, f0
    virt = model.forward_kinematics(pose).marker_positions
    errs = {}
    for i, name in enumerate(model.marker_names):
        errs[name] = float(np.linalg.norm(virt[i] - exp[i])) if w[i] > 0 else float("nan")
    if not converged:
        log.debug("IK frame t=%s stopped without convergence (%s)", frame.time, status)
    result = IkResult(
        pose=pose,
        residual=residual,
        iterations=it,
        converged=converged,
        marker_errors=errs,
        low_rank=low_rank,
        status=status,
        initial_residual=f0,
    )
    return (result, x) if _return_raw else result


def solve_sequence(
    model: KinematicModel,
    seq: MarkerSequence,
    weights: Mapping[str, float],
    opts: IkOptions | None = None,
    init: Pose | None = None,
) -> list[IkResult]:
    """Warm-started IK over a marker sequence; frame 0 starts from ``init`` (rest pose by default)."""
    if len(seq) == 0:
        raise ValueError("marker sequence is empty")
    results = []
    prev = init or model.rest_pose()
    for t in range(len(seq)):
        frame = seq.frame(t)
        try:
            res, x = solve_frame(model, frame, weights, prev, opts, _return_raw=True)
            # warm start from the unwrapped solution keeps trajectories continuous
            prev = model.vector_to_pose(x)
        except UnsolvableFrame as exc:
            log.warning("frame %d unsolvable: %s", t, exc)
            res = IkResult(prev.copy(), float("nan"), 0, False, status="unsolvable")
        results.append(res)
    return results


def results_to_angleset(model: KinematicModel, results: Sequence[IkResult], times=None) -> rotmath.AngleSet:
    angles = np.array([r.pose.angles for r in results])
    return rotmath.AngleSet(model.joints_order, angles, times, model.convention)
