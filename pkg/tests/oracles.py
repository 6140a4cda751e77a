"""Independent reference implementations used by the tests.

Everything here is written with scalar loops or textbook formulas and shares
no code with the package beyond numpy.
"""
import math

import numpy as np


def rot_axis(axis, deg):
    c, s = math.cos(math.radians(deg)), math.sin(math.radians(deg))
    if axis == "x":
        return np.array([[1, 0, 0], [0, c, -s], [0, s, c]])
    if axis == "y":
        return np.array([[c, 0, s], [0, 1, 0], [-s, 0, c]])
    return np.array([[c, -s, 0], [s, c, 0], [0, 0, 1]])


def euler_matrix(e, order="XYZ", intrinsic=True):
    """Product of elementary rotations; ``e`` is stored per axis (x, y, z)."""
    per_axis = {"x": e[0], "y": e[1], "z": e[2]}
    axes = [a.lower() for a in order]
    if not intrinsic:
        axes = axes[::-1]
    m = np.eye(3)
    for a in axes:
        m = m @ rot_axis(a, per_axis[a])
    return m


def quat_matrix(q):
    w, x, y, z = np.asarray(q, float) / np.linalg.norm(q)
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


def gram_schmidt(r):
    a1, a2 = np.asarray(r[:3], float), np.asarray(r[3:], float)
    b1 = a1 / math.sqrt(sum(v * v for v in a1))
    d = sum(p * q for p, q in zip(b1, a2))
    u = a2 - d * b1
    b2 = u / math.sqrt(sum(v * v for v in u))
    b3 = np.array([b1[1] * b2[2] - b1[2] * b2[1], b1[2] * b2[0] - b1[0] * b2[2], b1[0] * b2[1] - b1[1] * b2[0]])
    return np.column_stack([b1, b2, b3])


def random_rotation(rng):
    q = rng.normal(size=4)
    return quat_matrix(q)


def wrap180(d):
    """Into (-180, 180]."""
    while d > 180:
        d -= 360
    while d <= -180:
        d += 360
    return d


def mpjae_loop(pred, gt):
    T, J, _ = pred.shape
    total = 0.0
    for t in range(T):
        s = 0.0
        for j in range(J):
            for k in range(3):
                s += abs(wrap180(pred[t, j, k] - gt[t, j, k]))
        total += s / (3 * J)
    return total / T


def softmax_fuse_loop(stack):
    """Per-scalar softmax-weighted sum over the leading view axis."""
    C = stack.shape[0]
    flat = stack.reshape(C, -1)
    out = np.empty(flat.shape[1])
    weights = np.empty_like(flat)
    for i in range(flat.shape[1]):
        v = [flat[c, i] for c in range(C)]
        m = max(v)
        e = [math.exp(x - m) for x in v]
        s = sum(e)
        out[i] = sum(ec / s * x for ec, x in zip(e, v))
        for c in range(C):
            weights[c, i] = e[c] / s
    return out.reshape(stack.shape[1:]), weights.reshape(stack.shape)


def conv3d_loop(x, w, b):
    """Naive zero-padded 3x3x3 convolution, channels-last, one sample ``(D, H, W, Cin)``."""
    D, H, W, Cin = x.shape
    Cout = w.shape[-1]
    out = np.zeros((D, H, W, Cout))
    for d in range(D):
        for h in range(H):
            for q in range(W):
                for a in range(3):
                    for c in range(3):
                        for e in range(3):
                            dd, hh, qq = d + a - 1, h + c - 1, q + e - 1
                            if 0 <= dd < D and 0 <= hh < H and 0 <= qq < W:
                                out[d, h, q] += x[dd, hh, qq] @ w[a, c, e]
                out[d, h, q] += b
    return out


def avgpool_loop(x):
    D, H, W, C = x.shape
    out = np.zeros((D // 2, H // 2, W // 2, C))
    for d in range(D // 2):
        for h in range(H // 2):
            for q in range(W // 2):
                out[d, h, q] = x[2 * d:2 * d + 2, 2 * h:2 * h + 2, 2 * q:2 * q + 2].reshape(-1, C).mean(axis=0)
    return out


def encode_loop(params, n_blocks, volume):
    x = volume
    for i in range(n_blocks):
        x = conv3d_loop(x, params[f"encoder.{i}.weight"], params[f"encoder.{i}.bias"])
        x = np.maximum(x, 0.0)
        x = avgpool_loop(x)
    return x


def regress_oracle(params, buffers, features, batchnorm, scale=1.0, eps=1e-5):
    """Eval-mode regressor as a chain of explicit matrix products."""
    def fc(v, name):
        return np.array([sum(v[i] * params[name + ".weight"][i, o] for i in range(len(v)))
                         for o in range(params[name + ".weight"].shape[1])]) + params[name + ".bias"]

    def bn(v, name):
        if not batchnorm:
            return v
        mu = buffers[name + ".running_mean"]
        var = buffers[name + ".running_var"]
        return params[name + ".gamma"] * (v - mu) / np.sqrt(var + eps) + params[name + ".beta"]

    h = fc(features.reshape(-1), "regressor.input")
    for b in range(2):
        pre = f"regressor.block{b}"
        z = np.maximum(bn(fc(h, pre + ".fc1"), pre + ".bn1"), 0.0)
        z = np.maximum(bn(fc(z, pre + ".fc2"), pre + ".bn2"), 0.0)
        h = h + z
    return fc(h, "regressor.head") * scale


def loss_loop(pred, target_mats, mode, kind, align=True):
    """Scalar-loop supervision loss; targets are rotation matrices ``(N, J, 3, 3)``."""
    N, J, D = pred.shape
    total = 0.0
    for n in range(N):
        s = 0.0
        for j in range(J):
            Y = target_mats[n, j]
            r = pred[n, j]
            if mode == "so3":
                if kind == "euler":
                    Yh = euler_matrix(r)
                elif kind == "quat":
                    Yh = quat_matrix(r)
                else:
                    Yh = gram_schmidt(r)
                s += sum((Yh[a, b] - Y[a, b]) ** 2 for a in range(3) for b in range(3))
            else:
                t = target_rep(Y, kind)
                if kind == "euler" and align:
                    t = [r[k] + wrap180(t[k] - r[k]) for k in range(3)]
                if kind == "quat" and align and sum(r[k] * t[k] for k in range(4)) < 0:
                    t = [-v for v in t]
                s += sum((r[k] - t[k]) ** 2 for k in range(D))
        total += s / J
    return total / N


def target_rep(Y, kind):
    """Canonical representation of ``Y`` by textbook formulas."""
    if kind == "6d":
        return [Y[0, 0], Y[1, 0], Y[2, 0], Y[0, 1], Y[1, 1], Y[2, 1]]
    if kind == "quat":
        w = 0.5 * math.sqrt(max(0.0, 1 + Y[0, 0] + Y[1, 1] + Y[2, 2]))
        if w > 1e-3:
            q = [w, (Y[2, 1] - Y[1, 2]) / (4 * w), (Y[0, 2] - Y[2, 0]) / (4 * w), (Y[1, 0] - Y[0, 1]) / (4 * w)]
        else:
            # fall back to a numerically safe eigen-solution
            K = np.array([
                [Y[0, 0] - Y[1, 1] - Y[2, 2], Y[1, 0] + Y[0, 1], Y[2, 0] + Y[0, 2], Y[2, 1] - Y[1, 2]],
                [Y[1, 0] + Y[0, 1], Y[1, 1] - Y[0, 0] - Y[2, 2], Y[2, 1] + Y[1, 2], Y[0, 2] - Y[2, 0]],
                [Y[2, 0] + Y[0, 2], Y[2, 1] + Y[1, 2], Y[2, 2] - Y[0, 0] - Y[1, 1], Y[1, 0] - Y[0, 1]],
                [Y[2, 1] - Y[1, 2], Y[0, 2] - Y[2, 0], Y[1, 0] - Y[0, 1], Y[0, 0] + Y[1, 1] + Y[2, 2]],
            ]) / 3.0
            vals, vecs = np.linalg.eigh(K)
            x, y, z, w = vecs[:, -1]
            q = [w, x, y, z] if w >= 0 else [-w, -x, -y, -z]
        return q
    # XYZ intrinsic: R = Rx Ry Rz, R[0,2] = sin(y)
    y = math.degrees(math.asin(max(-1.0, min(1.0, Y[0, 2]))))
    x = math.degrees(math.atan2(-Y[1, 2], Y[2, 2]))
    z = math.degrees(math.atan2(-Y[0, 1], Y[0, 0]))
    return [x, y, z]


def ik_objective_loop(marker_pos_model, marker_pos_exp, weights):
    total = 0.0
    for name, w in weights.items():
        d = marker_pos_exp[name] - marker_pos_model[name]
        total += w * (d[0] ** 2 + d[1] ** 2 + d[2] ** 2)
    return total
