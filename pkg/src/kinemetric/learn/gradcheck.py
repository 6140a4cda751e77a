"""Central finite-difference oracle for the network's reverse pass."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import rotrep
from .network import KinematicNet


@dataclass
class GradCheckReport:
    max_rel_error: dict = field(default_factory=dict)
    n_failed: dict = field(default_factory=dict)
    max_abs_error: dict = field(default_factory=dict)
    n_checked: int = 0
    # entries whose difference exceeded the absolute floor, i.e. were judged on relative error
    n_relative: int = 0

    @property
    def ok(self) -> bool:
        return not any(self.n_failed.values())

    @property
    def worst(self) -> float:
        return max(self.max_rel_error.values(), default=0.0)


def _record(report, name, analytic, numeric, rtol, atol):
    err = _rel_error(analytic, numeric, atol)
    report.max_rel_error[name] = float(err.max())
    report.max_abs_error[name] = float(np.abs(analytic - numeric).max())
    report.n_failed[name] = int(np.count_nonzero(err > rtol))
    report.n_checked += analytic.size
    report.n_relative += int(np.count_nonzero(np.abs(analytic - numeric) > atol))


def _rel_error(analytic, numeric, atol):
    diff = np.abs(analytic - numeric)
    scale = np.maximum(np.abs(analytic), np.abs(numeric))
    # entries inside the absolute floor count as exact
    return np.where(diff <= atol, 0.0, diff / np.where(scale > 0, scale, 1.0))


def batch_loss(net, views, targets, mode):
    r = net.forward(views)[0]
    return rotrep.loss(r, targets, mode, net.config.kind, net.config.convention)


def check_gradients(
    net: KinematicNet,
    views,
    targets,
    mode: str,
    h: float = 1e-6,
    rtol: float = 1e-6,
    atol: float = 1e-8,
    chunk: int = 256,
) -> GradCheckReport:
    """Compare analytic gradients of every parameter and input entry with central differences.

    Input perturbations are evaluated as one large batch, which is only valid
    while samples do not interact (batch norm disabled or in eval mode).
    """
    views = np.asarray(views, dtype=float)
    r, cache = net.forward(views)
    lv = rotrep.loss(r, targets, mode, net.config.kind, net.config.convention, with_grad=True)
    grads, dviews = net.backward(cache, lv.grad)
    report = GradCheckReport()

    for name, value in net.params.items():
        numeric = np.empty_like(value)
        flat = value.reshape(-1)
        out = numeric.reshape(-1)
        for i in range(flat.size):
            old = flat[i]
            flat[i] = old + h
            fp = batch_loss(net, views, targets, mode).loss
            flat[i] = old - h
            fm = batch_loss(net, views, targets, mode).loss
            flat[i] = old
            out[i] = (fp - fm) / (2 * h)
        _record(report, name, grads[name], numeric, rtol, atol)

    N = len(views)
    numeric = np.empty_like(views)
    per_sample_shape = views.shape[1:]
    n_entries = int(np.prod(per_sample_shape))
    for s in range(N):
        base = views[s].reshape(-1)
        tgt = np.asarray(targets)[s]
        for start in range(0, n_entries, chunk):
            idx = np.arange(start, min(start + chunk, n_entries))
            batch = np.repeat(base[None], 2 * len(idx), axis=0)
            batch[np.arange(len(idx)), idx] += h
            batch[len(idx) + np.arange(len(idx)), idx] -= h
            rb = net.forward(batch.reshape((-1,) + per_sample_shape))[0]
            ps = rotrep.loss(rb, np.repeat(tgt[None], len(batch), axis=0), mode,
                             net.config.kind, net.config.convention).per_sample
            numeric[s].reshape(-1)[idx] = (ps[: len(idx)] - ps[len(idx):]) / (2 * h * N)
    _record(report, "views", dviews, numeric, rtol, atol)
    return report
