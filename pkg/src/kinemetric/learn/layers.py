"""Forward/backward pairs for the layers of the regressor.

Each ``*_forward`` returns ``(out, cache)`` and the matching ``*_backward``
takes ``(grad_out, cache)``. Volumes are channels-last: ``(N, D, H, W, C)``.
"""
import numpy as np


def conv3d_forward(x, w, b):
    """3x3x3 convolution with unit stride and zero padding of one voxel.

    ``w`` is ``(3, 3, 3, Cin, Cout)``.
    """
    N, D, H, W, _ = x.shape
    xp = np.pad(x, ((0, 0), (1, 1), (1, 1), (1, 1), (0, 0)))
    out = np.empty((N, D, H, W, w.shape[-1]))
    out[...] = b
    for a in range(3):
        for c in range(3):
            for e in range(3):
                out += xp[:, a:a + D, c:c + H, e:e + W, :] @ w[a, c, e]
    return out, (xp, w)


def conv3d_backward(dout, cache):
    xp, w = cache
    N, D, H, W, _ = dout.shape
    dw = np.empty_like(w)
    dxp = np.zeros_like(xp)
    flat_out = dout.reshape(-1, dout.shape[-1])
    for a in range(3):
        for c in range(3):
            for e in range(3):
                window = xp[:, a:a + D, c:c + H, e:e + W, :]
                dw[a, c, e] = window.reshape(-1, window.shape[-1]).T @ flat_out
                dxp[:, a:a + D, c:c + H, e:e + W, :] += dout @ w[a, c, e].T
    db = flat_out.sum(axis=0)
    return dxp[:, 1:-1, 1:-1, 1:-1, :], dw, db


def relu_forward(x):
    return np.maximum(x, 0.0), x > 0


def relu_backward(dout, mask):
    return dout * mask


def avgpool2_forward(x):
    N, D, H, W, C = x.shape
    out = x.reshape(N, D // 2, 2, H // 2, 2, W // 2, 2, C).mean(axis=(2, 4, 6))
    return out, x.shape


def avgpool2_backward(dout, shape):
    N, D, H, W, C = shape
    g = np.broadcast_to(dout[:, :, None, :, None, :, None, :] / 8.0, (N, D // 2, 2, H // 2, 2, W // 2, 2, C))
    return g.reshape(shape)


def linear_forward(x, w, b):
    """``x @ w + b`` with ``w`` shaped ``(in, out)``."""
    return x @ w + b, (x, w)


def linear_backward(dout, cache):
    x, w = cache
    return dout @ w.T, x.T @ dout, dout.sum(axis=0)


def batchnorm_forward(x, gamma, beta, running_mean, running_var, train, momentum=0.1, eps=1e-5):
    """Batch normalisation over the leading axis.

    In training mode the batch statistics are used and the running buffers
    are updated in place; in eval mode the running buffers are used.
    """
    if train:
        mu = x.mean(axis=0)
        var = x.var(axis=0)
        n = x.shape[0]
        running_mean *= 1.0 - momentum
        running_mean += momentum * mu
        unbiased = var * n / (n - 1) if n > 1 else var
        running_var *= 1.0 - momentum
        running_var += momentum * unbiased
    else:
        mu, var = running_mean, running_var
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x - mu) * inv
    return gamma * xhat + beta, (xhat, inv, gamma, train)


def batchnorm_backward(dout, cache):
    xhat, inv, gamma, train = cache
    dgamma = (dout * xhat).sum(axis=0)
    dbeta = dout.sum(axis=0)
    dxhat = dout * gamma
    if train:
        n = dout.shape[0]
        dx = inv / n * (n * dxhat - dxhat.sum(axis=0) - xhat * (dxhat * xhat).sum(axis=0))
    else:
        dx = dxhat * inv
    return dx, dgamma, dbeta
