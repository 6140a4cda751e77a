"""Joint angles from IK on joint positions versus direct regression.

Rows of the report:

* ``IK-markers``: marker-based IK on the full marker set (sanity floor)
* ``IK-GT``: IK driven only by ground-truth joint centres
* ``IK-PR``: the same with Gaussian noise on the joint centres, standing in
  for predicted 3D joint positions
* ``Direct``: the trained volumetric regressor
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field, replace

import numpy as np

from . import iksolve, rotmath
from .errors import InvalidArgument
from .kinmodel import KinematicModel, MarkerAttachment, MarkerSequence

REPORT_JOINTS = ("R.Hip", "R.Knee", "R.Shoulder", "R.Elbow", "L.Hip", "L.Knee", "L.Shoulder", "L.Elbow")
REPORT_COLUMNS = tuple(j.replace(".", " ") for j in REPORT_JOINTS) + ("Avg",)
DEFAULT_NOISE_MM = 18.0


@dataclass
class CompareReport:
    rows: dict = field(default_factory=dict)
    series: dict = field(default_factory=dict)
    noise_mm: float = DEFAULT_NOISE_MM

    @property
    def columns(self) -> tuple[str, ...]:
        return REPORT_COLUMNS

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(("Method",) + REPORT_COLUMNS)
        for name, row in self.rows.items():
            w.writerow([name] + ["" if not np.isfinite(row[c]) else f"{row[c]:.4f}" for c in REPORT_COLUMNS])
        return buf.getvalue()

    def to_text(self) -> str:
        width = max(len(c) for c in REPORT_COLUMNS + tuple(self.rows)) + 1
        lines = ["Method".ljust(12) + "".join(c.rjust(width) for c in REPORT_COLUMNS)]
        for name, row in self.rows.items():
            cells = ["-" if not np.isfinite(row[c]) else f"{row[c]:.2f}" for c in REPORT_COLUMNS]
            lines.append(name.ljust(12) + "".join(c.rjust(width) for c in cells))
        return "\n".join(lines)


def joint_center_model(model: KinematicModel) -> KinematicModel:
    """Copy of ``model`` whose only markers are joint centres and segment end points."""
    marks = []
    for s in model.segments:
        marks.append(MarkerAttachment(s.joint_name, s.name, np.zeros(3)))
        if s.tip is not None and not model.children(s.name):
            marks.append(MarkerAttachment(f"{s.joint_name}.End", s.name, s.tip.copy()))
    return replace(model, markers=tuple(marks), scale_pairs={})


def _row(pred: rotmath.AngleSet, gt: rotmath.AngleSet) -> dict:
    per = rotmath.mpjae_per_joint(pred, gt)
    row = {}
    for j, col in zip(REPORT_JOINTS, REPORT_COLUMNS):
        row[col] = per.get(j, float("nan"))
    vals = [v for v in (row[c] for c in REPORT_COLUMNS[:-1]) if np.isfinite(v)]
    row["Avg"] = float(np.mean(vals)) if vals else float("nan")
    return row


def ik_on_positions(model: KinematicModel, targets: MarkerSequence, opts=None) -> rotmath.AngleSet:
    weights = {n: 1.0 for n in targets.names}
    results = iksolve.solve_sequence(model, targets, weights, opts)
    return iksolve.results_to_angleset(model, results, targets.times)


def compare_ik_vs_direct(
    data,
    net=None,
    config=None,
    noise_mm: float = DEFAULT_NOISE_MM,
    seed: int = 0,
    ik_opts: iksolve.IkOptions | None = None,
) -> CompareReport:
    """Per-joint MPJAE for the IK paths and the direct regressor.

    ``data`` is a synthetic dataset with a model, markers and ground-truth
    angles for every model joint; ``net``/``config`` are a trained regressor
    and its training configuration.
    """
    if net is None or config is None:
        raise InvalidArgument("the direct path needs a trained network (pass a checkpoint)")
    if data.model is None or data.full_angles is None or data.markers is None:
        raise InvalidArgument("dataset needs its skeleton, markers and full ground truth")
    from .learn.trainer import predict_angles

    model = data.model
    gt = data.full_angles
    report = CompareReport(noise_mm=noise_mm)

    marker_ik = iksolve.solve_sequence(model, data.markers, iksolve.default_weights(model), ik_opts)
    marker_angles = iksolve.results_to_angleset(model, marker_ik, gt.times)

    jc_model = joint_center_model(model)
    _, clean = jc_model.forward_kinematics_batch(data.roots, gt.angles)
    rng = np.random.default_rng(seed)
    noisy = clean + rng.normal(0.0, noise_mm, clean.shape)
    ik_gt = ik_on_positions(jc_model, MarkerSequence(jc_model.marker_names, clean, gt.times), ik_opts)
    ik_pr = ik_on_positions(jc_model, MarkerSequence(jc_model.marker_names, noisy, gt.times), ik_opts)

    direct = predict_angles(net, data, config)
    report.rows["IK-markers"] = _row(marker_angles, gt)
    report.rows["IK-GT"] = _row(ik_gt, gt)
    report.rows["IK-PR"] = _row(ik_pr, gt)
    report.rows["Direct"] = _row(direct, gt.select(direct.joints))
    report.series = {
        "ground_truth": gt,
        "ik_markers": marker_angles,
        "ik_gt": ik_gt,
        "ik_pr": ik_pr,
        "direct": direct,
    }
    return report
