"""Volumetric joint-angle regressor with a hand-written reverse pass.

Forward graph, per batch of view volumes ``(N, C, B, B, B, J)``::

    softmax fusion -> [conv3x3x3 -> ReLU -> avgpool2] x n_blocks -> flatten
    -> linear -> 2 x residual(linear -> BN -> ReLU -> linear -> BN -> ReLU)
    -> linear head -> r (N, J, D)

``backward`` returns gradients for every parameter and for the input views.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from .. import geomcam, rotmath
from ..errors import InvalidArgument, KinemetricError, ShapeMismatch
from . import layers as L
from .rotrep import canonical_kind, rep_dim

# Euler heads emit radians-scale numbers; the representation is in degrees.
EULER_OUTPUT_SCALE = 180.0 / math.pi
N_RESIDUAL_BLOCKS = 2


class NonFiniteGradient(KinemetricError, FloatingPointError):
    def __init__(self, layer):
        self.layer = layer
        super().__init__(f"non-finite gradient in {layer}")


@dataclass
class NetConfig:
    J: int
    B: int = 16
    kind: str = "6d"
    hidden: int = 256
    batchnorm: bool = True
    convention: str = rotmath.DEFAULT_CONVENTION

    def __post_init__(self):
        self.kind = canonical_kind(self.kind)
        if self.J < 1:
            raise InvalidArgument("J must be positive")
        n = math.log2(self.B) - 1 if self.B > 0 else -1
        if n < 1 or n != int(n):
            raise InvalidArgument(f"B must be a power of two >= 4, got {self.B}")

    @property
    def n_blocks(self) -> int:
        return int(math.log2(self.B)) - 1

    @property
    def D(self) -> int:
        return rep_dim(self.kind)


class KinematicNet:
    def __init__(self, config: NetConfig, seed: int = 0, params=None, buffers=None):
        self.config = config
        if params is None:
            params, buffers = _init_params(config, np.random.default_rng(seed))
        self.params = params
        self.buffers = buffers if buffers is not None else _init_buffers(config)

    # -- bookkeeping -------------------------------------------------------
    @property
    def encoder_names(self) -> list[str]:
        return [k for k in self.params if k.startswith("encoder.")]

    def copy(self) -> "KinematicNet":
        return KinematicNet(
            self.config,
            params={k: v.copy() for k, v in self.params.items()},
            buffers={k: v.copy() for k, v in self.buffers.items()},
        )

    def n_parameters(self) -> int:
        return int(sum(v.size for v in self.params.values()))

    # -- forward -----------------------------------------------------------
    def encode(self, volume, train=False):
        """``(N, B, B, B, J)`` fused volume to ``(N, 2, 2, 2, J)`` features."""
        cfg = self.config
        x = np.asarray(volume, dtype=float)
        if x.ndim == 4:
            x = x[None]
        if x.shape[1:] != (cfg.B, cfg.B, cfg.B, cfg.J):
            raise ShapeMismatch(f"volume must be (N, {cfg.B}, {cfg.B}, {cfg.B}, {cfg.J}), got {x.shape}")
        caches = []
        for i in range(cfg.n_blocks):
            x, c_conv = L.conv3d_forward(x, self.params[f"encoder.{i}.weight"], self.params[f"encoder.{i}.bias"])
            x, c_relu = L.relu_forward(x)
            x, c_pool = L.avgpool2_forward(x)
            caches.append((c_conv, c_relu, c_pool))
        return x, caches

    def regress(self, features, train=False):
        """``(N, 2, 2, 2, J)`` features to representations ``(N, J, D)``."""
        cfg = self.config
        f = np.asarray(features, dtype=float)
        if f.ndim == 4:
            f = f[None]
        if f.shape[1:] != (2, 2, 2, cfg.J):
            raise ShapeMismatch(f"features must be (N, 2, 2, 2, {cfg.J}), got {f.shape}")
        p = self.params
        h, c_in = L.linear_forward(f.reshape(len(f), -1), p["regressor.input.weight"], p["regressor.input.bias"])
        blocks = []
        for b in range(N_RESIDUAL_BLOCKS):
            pre = f"regressor.block{b}"
            z, c1 = L.linear_forward(h, p[f"{pre}.fc1.weight"], p[f"{pre}.fc1.bias"])
            z, n1 = self._bn(z, f"{pre}.bn1", train)
            z, r1 = L.relu_forward(z)
            z, c2 = L.linear_forward(z, p[f"{pre}.fc2.weight"], p[f"{pre}.fc2.bias"])
            z, n2 = self._bn(z, f"{pre}.bn2", train)
            z, r2 = L.relu_forward(z)
            h = h + z
            blocks.append((c1, n1, r1, c2, n2, r2))
        out, c_head = L.linear_forward(h, p["regressor.head.weight"], p["regressor.head.bias"])
        out = out * self._scale
        return out.reshape(len(f), cfg.J, cfg.D), (c_in, blocks, c_head)

    def _bn(self, z, name, train):
        if not self.config.batchnorm:
            return z, None
        return L.batchnorm_forward(
            z,
            self.params[f"{name}.gamma"],
            self.params[f"{name}.beta"],
            self.buffers[f"{name}.running_mean"],
            self.buffers[f"{name}.running_var"],
            train,
        )

    @property
    def _scale(self):
        return EULER_OUTPUT_SCALE if self.config.kind == "euler" else 1.0

    def forward(self, views, train=False):
        """Views ``(N, C, B, B, B, J)`` to representations; returns ``(r, cache)``."""
        views = np.asarray(views, dtype=float)
        if views.ndim == 5:
            views = views[None]
        if views.ndim != 6:
            raise ShapeMismatch(f"views must be (N, C, B, B, B, J), got {views.shape}")
        stack = np.moveaxis(views, 1, 0)
        fused, weights, _ = geomcam._softmax_fuse(stack)
        feat, enc_cache = self.encode(fused, train)
        r, reg_cache = self.regress(feat, train)
        return r, (stack, fused, weights, enc_cache, reg_cache)

    def predict(self, views, batch_size=64):
        out = [self.forward(views[i:i + batch_size])[0] for i in range(0, len(views), batch_size)]
        return np.concatenate(out) if out else np.zeros((0, self.config.J, self.config.D))

    # -- backward ----------------------------------------------------------
    def backward(self, cache, dr):
        """Gradients of a scalar loss given ``dL/dr``; returns ``(grads, dviews)``."""
        stack, fused, weights, enc_cache, (c_in, blocks, c_head) = cache
        grads = {}
        dout = np.asarray(dr, dtype=float).reshape(len(dr), -1) * self._scale
        dh, grads["regressor.head.weight"], grads["regressor.head.bias"] = L.linear_backward(dout, c_head)
        for b in reversed(range(N_RESIDUAL_BLOCKS)):
            pre = f"regressor.block{b}"
            c1, n1, r1, c2, n2, r2 = blocks[b]
            dz = L.relu_backward(dh, r2)
            dz = self._bn_backward(dz, n2, f"{pre}.bn2", grads)
            dz, grads[f"{pre}.fc2.weight"], grads[f"{pre}.fc2.bias"] = L.linear_backward(dz, c2)
            dz = L.relu_backward(dz, r1)
            dz = self._bn_backward(dz, n1, f"{pre}.bn1", grads)
            dz, grads[f"{pre}.fc1.weight"], grads[f"{pre}.fc1.bias"] = L.linear_backward(dz, c1)
            dh = dh + dz
        df, grads["regressor.input.weight"], grads["regressor.input.bias"] = L.linear_backward(dh, c_in)
        dx = df.reshape((len(df), 2, 2, 2, self.config.J))
        for i in reversed(range(self.config.n_blocks)):
            c_conv, c_relu, c_pool = enc_cache[i]
            dx = L.avgpool2_backward(dx, c_pool)
            dx = L.relu_backward(dx, c_relu)
            dx, grads[f"encoder.{i}.weight"], grads[f"encoder.{i}.bias"] = L.conv3d_backward(dx, c_conv)
        dstack = geomcam.aggregate_backward(stack, fused, weights, dx)
        for name, g in grads.items():
            if not np.all(np.isfinite(g)):
                raise NonFiniteGradient(name)
        if not np.all(np.isfinite(dstack)):
            raise NonFiniteGradient("aggregation")
        return {k: grads[k] for k in self.params}, np.moveaxis(dstack, 0, 1)

    def _bn_backward(self, dz, cache, name, grads):
        if cache is None:
            return dz
        dz, grads[f"{name}.gamma"], grads[f"{name}.beta"] = L.batchnorm_backward(dz, cache)
        return dz

    def config_dict(self) -> dict:
        return asdict(self.config)


def _init_params(cfg: NetConfig, rng):
    J, h, D = cfg.J, cfg.hidden, cfg.D
    p = {}
    for i in range(cfg.n_blocks):
        p[f"encoder.{i}.weight"] = rng.normal(0.0, math.sqrt(2.0 / (27 * J)), (3, 3, 3, J, J))
        p[f"encoder.{i}.bias"] = np.zeros(J)
    p["regressor.input.weight"] = rng.normal(0.0, math.sqrt(2.0 / (8 * J)), (8 * J, h))
    p["regressor.input.bias"] = np.zeros(h)
    for b in range(N_RESIDUAL_BLOCKS):
        pre = f"regressor.block{b}"
        for k in (1, 2):
            p[f"{pre}.fc{k}.weight"] = rng.normal(0.0, math.sqrt(2.0 / h), (h, h))
            p[f"{pre}.fc{k}.bias"] = np.zeros(h)
            if cfg.batchnorm:
                p[f"{pre}.bn{k}.gamma"] = np.ones(h)
                p[f"{pre}.bn{k}.beta"] = np.zeros(h)
    p["regressor.head.weight"] = rng.normal(0.0, 0.01 / math.sqrt(h), (h, J * D))
    # start from the identity rotation for every joint
    ident = {"euler": [0.0, 0.0, 0.0], "quat": [1.0, 0.0, 0.0, 0.0], "6d": [1.0, 0.0, 0.0, 0.0, 1.0, 0.0]}[cfg.kind]
    p["regressor.head.bias"] = np.tile(ident, J).astype(float)
    return p, _init_buffers(cfg)


def _init_buffers(cfg: NetConfig):
    buf = {}
    if cfg.batchnorm:
        for b in range(N_RESIDUAL_BLOCKS):
            for k in (1, 2):
                buf[f"regressor.block{b}.bn{k}.running_mean"] = np.zeros(cfg.hidden)
                buf[f"regressor.block{b}.bn{k}.running_var"] = np.ones(cfg.hidden)
    return buf


def encode(net: KinematicNet, volume):
    return net.encode(volume)[0]


def regress(net: KinematicNet, features):
    return net.regress(features)[0]
