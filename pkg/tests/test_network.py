import numpy as np
import pytest

from kinemetric import rotmath
from kinemetric.errors import DegenerateRepresentation, InvalidArgument, ShapeMismatch
from kinemetric.learn import KinematicNet, NetConfig, loss, map_to_so3
from kinemetric.learn import network, rotrep
from kinemetric.learn.gradcheck import check_gradients

from oracles import encode_loop, euler_matrix, loss_loop, random_rotation, regress_oracle, target_rep

KINDS = ("euler", "quat", "6d")


def random_matrices(rng, shape):
    return np.array([random_rotation(rng) for _ in range(int(np.prod(shape)))]).reshape(shape + (3, 3))


def random_reps(rng, kind, shape):
    return rotrep.from_matrix(random_matrices(rng, shape), kind)


# -- encoder -----------------------------------------------------------------
def test_encode_zero_weights_gives_zero_features():
    net = KinematicNet(NetConfig(J=2, B=8, hidden=8))
    for k in net.encoder_names:
        net.params[k][...] = 0.0
    vol = np.random.default_rng(0).normal(size=(3, 8, 8, 8, 2))
    feat = network.encode(net, vol)
    assert feat.shape == (3, 2, 2, 2, 2)
    assert np.array_equal(feat, np.zeros_like(feat))


def test_encode_centre_tap_on_constant_volume():
    net = KinematicNet(NetConfig(J=1, B=4, hidden=8))
    w = net.params["encoder.0.weight"]
    w[...] = 0.0
    w[1, 1, 1, 0, 0] = 2.0
    vol = np.full((1, 4, 4, 4, 1), 1.5)
    assert np.allclose(network.encode(net, vol), 3.0, atol=0)


def test_encode_matches_loop_oracle():
    net = KinematicNet(NetConfig(J=2, B=8, hidden=8), seed=3)
    rng = np.random.default_rng(1)
    for k in net.encoder_names:
        if k.endswith("bias"):
            net.params[k][...] = rng.normal(size=net.params[k].shape) * 0.1
    vol = rng.normal(size=(2, 8, 8, 8, 2))
    got = network.encode(net, vol)
    for n in range(2):
        ref = encode_loop(net.params, net.config.n_blocks, vol[n])
        assert np.abs(got[n] - ref).max() < 1e-10


def test_encode_shape_check():
    net = KinematicNet(NetConfig(J=2, B=8, hidden=8))
    with pytest.raises(ShapeMismatch):
        network.encode(net, np.zeros((1, 4, 4, 4, 2)))


# -- regressor ---------------------------------------------------------------
def test_regress_zero_head_returns_bias():
    for kind in KINDS:
        net = KinematicNet(NetConfig(J=3, B=4, kind=kind, hidden=16), seed=1)
        net.params["regressor.head.weight"][...] = 0.0
        r = network.regress(net, np.random.default_rng(2).normal(size=(5, 2, 2, 2, 3)))
        ident = rotrep.from_matrix(np.eye(3), kind)
        assert np.allclose(r, ident, atol=0)


def test_regress_skip_connection_is_identity_when_blocks_vanish():
    net = KinematicNet(NetConfig(J=2, B=4, kind="6d", hidden=16, batchnorm=False), seed=2)
    for name in net.params:
        if ".block" in name:
            net.params[name][...] = 0.0
    f = np.random.default_rng(3).normal(size=(4, 2, 2, 2, 2))
    p = net.params
    h = f.reshape(4, -1) @ p["regressor.input.weight"] + p["regressor.input.bias"]
    ref = (h @ p["regressor.head.weight"] + p["regressor.head.bias"]).reshape(4, 2, 6)
    assert np.allclose(network.regress(net, f), ref, atol=1e-12)


@pytest.mark.parametrize("kind", KINDS)
@pytest.mark.parametrize("batchnorm", [True, False])
def test_regress_matches_oracle(kind, batchnorm):
    net = KinematicNet(NetConfig(J=2, B=4, kind=kind, hidden=12, batchnorm=batchnorm), seed=4)
    rng = np.random.default_rng(5)
    for name in net.buffers:
        net.buffers[name][...] = rng.uniform(0.5, 1.5, net.buffers[name].shape)
    f = rng.normal(size=(3, 2, 2, 2, 2))
    got = network.regress(net, f)
    scale = network.EULER_OUTPUT_SCALE if kind == "euler" else 1.0
    for n in range(3):
        ref = regress_oracle(net.params, net.buffers, f[n], batchnorm, scale)
        assert np.abs(got[n].reshape(-1) - ref).max() < 1e-10


def test_net_config_validation():
    with pytest.raises(InvalidArgument):
        NetConfig(J=2, B=6)
    with pytest.raises(InvalidArgument):
        NetConfig(J=0)
    with pytest.raises(InvalidArgument):
        NetConfig(J=2, kind="axis_angle")
    assert NetConfig(J=2, B=8).n_blocks == 2


# -- representation mapping ------------------------------------------------------
@pytest.mark.parametrize("kind", KINDS)
def test_map_to_so3_matches_rotmath(kind):
    rng = np.random.default_rng(6)
    r = random_reps(rng, kind, (10, 3))
    expect = {"euler": rotmath.euler_to_matrix, "quat": rotmath.quat_to_matrix, "6d": rotmath.sixd_to_matrix}[kind](r)
    assert np.array_equal(map_to_so3(r, kind), expect)


def test_map_to_so3_quat_antipodal_and_errors():
    rng = np.random.default_rng(7)
    q = rng.normal(size=(20, 4))
    assert np.array_equal(map_to_so3(q, "quat"), map_to_so3(-q, "quat"))
    with pytest.raises(DegenerateRepresentation):
        map_to_so3(np.zeros(4), "quat")
    with pytest.raises(ShapeMismatch):
        map_to_so3(np.zeros(5), "quat")


# -- loss --------------------------------------------------------------------
@pytest.mark.parametrize("kind", KINDS)
@pytest.mark.parametrize("mode", ["direct", "so3"])
def test_loss_zero_at_equality(kind, mode):
    rng = np.random.default_rng(8)
    Y = random_matrices(rng, (4, 3))
    r = rotrep.from_matrix(Y, kind)
    assert loss(r, Y, mode, kind).loss == pytest.approx(0.0, abs=1e-20)


def test_loss_half_turn_about_z_is_eight():
    Y = rotmath.euler_to_matrix([0, 0, 180.0])[None, None]
    for kind in KINDS:
        ident = rotrep.from_matrix(np.eye(3), kind)[None, None]
        assert loss(ident, Y, "so3", kind).loss == pytest.approx(8.0, abs=1e-12)


@pytest.mark.parametrize("kind", KINDS)
@pytest.mark.parametrize("mode", ["direct", "so3"])
@pytest.mark.parametrize("align", [True, False])
def test_loss_matches_loop_oracle(kind, mode, align):
    rng = np.random.default_rng(9)
    Y = random_matrices(rng, (5, 3))
    pred = random_reps(rng, kind, (5, 3)) + rng.normal(size=(5, 3, rotrep.rep_dim(kind))) * 0.1
    got = loss(pred, Y, mode, kind, align=align).loss
    ref = loss_loop(pred, Y, mode, kind, align)
    assert abs(got - ref) < 1e-12 * max(1.0, ref)


def test_target_rep_oracle_agrees_with_from_matrix():
    rng = np.random.default_rng(10)
    for Y in random_matrices(rng, (50,)):
        for kind in KINDS:
            assert np.allclose(rotrep.from_matrix(Y, kind), target_rep(Y, kind), atol=1e-9)


def test_frobenius_geodesic_identity():
    rng = np.random.default_rng(11)
    A = random_matrices(rng, (200,))
    B = random_matrices(rng, (200,))
    theta = np.deg2rad(rotmath.geodesic_deg(A, B))
    lhs = np.sum((A - B) ** 2, axis=(-2, -1))
    assert np.abs(lhs - 4 * (1 - np.cos(theta))).max() < 1e-9


def test_quaternion_loss_sign_invariance():
    rng = np.random.default_rng(12)
    Y = random_matrices(rng, (6, 2))
    q = rng.normal(size=(6, 2, 4))
    for mode in ("direct", "so3"):
        assert loss(q, Y, mode, "quat").loss == pytest.approx(loss(-q, Y, mode, "quat").loss, rel=1e-12)


def test_euler_direct_alignment_removes_wrap():
    pred = np.array([[[179.0, 0.0, 0.0]]])
    target = np.array([[[-179.0, 0.0, 0.0]]])
    assert loss(pred, target, "direct", "euler").loss == pytest.approx(4.0)
    assert loss(pred, target, "direct", "euler", align=False).loss == pytest.approx(358.0**2)


def test_loss_shape_and_mode_errors():
    with pytest.raises(ShapeMismatch):
        loss(np.zeros((2, 3, 6)), np.zeros((2, 2, 3, 3)), "so3", "6d")
    with pytest.raises(InvalidArgument):
        loss(np.zeros((1, 1, 6)), np.zeros((1, 1, 6)), "geodesic", "6d")
    with pytest.raises(DegenerateRepresentation):
        loss(np.zeros((1, 1, 6)), np.eye(3)[None, None], "so3", "6d")


def test_degenerate_samples_skipped_when_requested():
    pred = np.array([[[1.0, 0, 0, 0, 1, 0]], [[0.0, 0, 0, 0, 0, 0]]])
    Y = np.repeat(rotmath.euler_to_matrix([0, 0, 90.0])[None, None], 2, axis=0)
    lv = loss(pred, Y, "so3", "6d", with_grad=True, skip_degenerate=True)
    assert lv.skipped.tolist() == [False, True]
    assert lv.loss == pytest.approx(loss(pred[:1], Y[:1], "so3", "6d").loss)
    assert np.array_equal(lv.grad[1], np.zeros((1, 6)))


@pytest.mark.parametrize("kind", KINDS)
@pytest.mark.parametrize("mode", ["direct", "so3"])
def test_loss_gradient_matches_fd(kind, mode):
    rng = np.random.default_rng(13)
    Y = random_matrices(rng, (3, 2))
    pred = random_reps(rng, kind, (3, 2)) + rng.normal(size=(3, 2, rotrep.rep_dim(kind))) * 0.2
    g = loss(pred, Y, mode, kind, with_grad=True).grad
    h = 1e-6
    num = np.zeros_like(pred)
    for idx in np.ndindex(pred.shape):
        p = pred.copy()
        p[idx] += h
        fp = loss(p, Y, mode, kind).loss
        p[idx] -= 2 * h
        fm = loss(p, Y, mode, kind).loss
        num[idx] = (fp - fm) / (2 * h)
    assert np.abs(g - num).max() < 1e-6 * max(1.0, np.abs(num).max())


# -- network gradients ---------------------------------------------------------
def test_zero_loss_batch_gives_zero_gradients():
    net = KinematicNet(NetConfig(J=2, B=4, kind="6d", hidden=8, batchnorm=False), seed=0)
    net.params["regressor.head.weight"][...] = 0.0
    views = np.random.default_rng(14).normal(size=(3, 2, 4, 4, 4, 2))
    r, cache = net.forward(views)
    Y = map_to_so3(r, "6d")
    lv = loss(r, Y, "so3", "6d", with_grad=True)
    assert lv.loss == 0.0
    grads, dviews = net.backward(cache, lv.grad)
    assert all(not np.any(g) for g in grads.values())
    assert not np.any(dviews)


def test_network_gradients_6d_slice():
    net = KinematicNet(NetConfig(J=2, B=4, kind="6d", hidden=6, batchnorm=False), seed=1)
    rng = np.random.default_rng(15)
    views = rng.normal(size=(2, 2, 4, 4, 4, 2))
    Y = random_matrices(rng, (2, 2))
    for mode in ("direct", "so3"):
        rep = check_gradients(net, views, Y if mode == "so3" else rotrep.from_matrix(Y, "6d"), mode)
        assert rep.ok, rep.max_rel_error


def test_nonfinite_gradient_raises():
    net = KinematicNet(NetConfig(J=1, B=4, kind="6d", hidden=4, batchnorm=False))
    views = np.zeros((1, 1, 4, 4, 4, 1))
    r, cache = net.forward(views)
    with pytest.raises(network.NonFiniteGradient):
        net.backward(cache, np.full_like(r, np.nan))


def test_euler_output_in_degrees_near_identity():
    net = KinematicNet(NetConfig(J=1, B=4, kind="euler", hidden=8), seed=0)
    r = net.predict(np.random.default_rng(16).normal(size=(4, 2, 4, 4, 4, 1)))
    # initial predictions are close to the identity in degree units
    assert np.abs(r).max() < 5.0
    assert np.allclose(map_to_so3(r, "euler")[0, 0], euler_matrix(r[0, 0]), atol=1e-14)
