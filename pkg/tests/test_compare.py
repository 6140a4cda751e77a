import csv
import io

import numpy as np
import pytest

from kinemetric import compare
from kinemetric.errors import InvalidArgument
from kinemetric.learn import TrainConfig, train
from kinemetric.synth import SynthSpec, generate

CFG = TrainConfig(epochs=3, anneal_epoch=2, B=8, hidden=32, batch_size=8)


@pytest.fixture(scope="module")
def setup():
    data = generate(SynthSpec(duration_s=0.3, seed=8, joints=("R.Hip", "R.Knee", "L.Hip", "L.Knee")))
    net = train(data, CFG).net
    return data, net


@pytest.fixture(scope="module")
def report(setup):
    data, net = setup
    return compare.compare_ik_vs_direct(data, net, CFG, noise_mm=18.0, seed=0)


def test_nine_column_layout(report):
    assert compare.REPORT_COLUMNS == (
        "R Hip", "R Knee", "R Shoulder", "R Elbow", "L Hip", "L Knee", "L Shoulder", "L Elbow", "Avg",
    )
    rows = list(csv.reader(io.StringIO(report.to_csv())))
    assert rows[0] == ["Method"] + list(compare.REPORT_COLUMNS)
    assert [r[0] for r in rows[1:]] == ["IK-markers", "IK-GT", "IK-PR", "Direct"]
    assert all(len(r) == 10 for r in rows)
    # the regressor only predicts the joints it was trained on
    direct = rows[4]
    assert direct[3] == "" and direct[1] != ""
    assert len(report.to_text().splitlines()) == 5


def test_noise_free_paths_are_exact(report):
    for name in ("IK-markers", "IK-GT"):
        assert report.rows[name]["Avg"] < 0.1


def test_injected_noise_increases_ik_error(report):
    gt, pr = report.rows["IK-GT"], report.rows["IK-PR"]
    for col in compare.REPORT_COLUMNS:
        assert pr[col] > gt[col], col


def test_more_noise_gives_larger_error(setup):
    data, net = setup
    avg = [
        compare.compare_ik_vs_direct(data, net, CFG, noise_mm=n, seed=0).rows["IK-PR"]["Avg"]
        for n in (0.0, 5.0, 30.0)
    ]
    assert avg[0] < 0.1
    assert avg[0] < avg[1] < avg[2]


def test_direct_row_matches_series(report):
    s = report.series
    direct, gt = s["direct"], s["ground_truth"].select(s["direct"].joints)
    from kinemetric.rotmath import mpjae_per_joint

    per = mpjae_per_joint(direct, gt)
    assert report.rows["Direct"]["R Hip"] == per["R.Hip"]
    assert report.rows["Direct"]["Avg"] == pytest.approx(np.mean(list(per.values())))


def test_missing_network_raises(setup):
    data, _ = setup
    with pytest.raises(InvalidArgument):
        compare.compare_ik_vs_direct(data, None, CFG)


def test_joint_center_model_markers(setup):
    data, _ = setup
    jc = compare.joint_center_model(data.model)
    assert "R.Knee" in jc.marker_names and "Neck.End" in jc.marker_names and "R.Wrist.End" in jc.marker_names
    fk = jc.forward_kinematics(jc.rest_pose())
    assert np.array_equal(fk.markers["R.Knee"], fk.joint_positions[jc.segment_names.index("r_tibia")])
