"""Training loop, evaluation, checkpoints and the ablation matrix."""
from __future__ import annotations

import csv
import io
import json
import logging
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from .. import rotmath
from ..errors import InvalidArgument, ParseError
from . import rotrep
from .network import KinematicNet, NetConfig, NonFiniteGradient

log = logging.getLogger(__name__)

KINDS = ("euler", "quat", "6d")
MODES = ("direct", "so3")
ROOT_MODES = ("global", "local")
RESOLUTIONS = (16, 32, 64)
METRIC_FIELDS = ("epoch", "loss", "mpjae_train", "mpjae_val", "lr")


@dataclass
class TrainConfig:
    kind: str = "6d"
    supervision: str = "direct"
    lr: float = 1e-3
    anneal_factor: float = 0.1
    anneal_epoch: int = 12
    epochs: int = 15
    batch_size: int = 32
    seed: int = 0
    root_mode: str = "local"
    B: int = 16
    side_mm: float = 2500.0
    hidden: int = 256
    batchnorm: bool = True
    freeze_encoder: bool = False

    def __post_init__(self):
        self.kind = rotrep.canonical_kind(self.kind)
        if self.supervision not in MODES:
            raise InvalidArgument(f"supervision must be one of {MODES}")
        if self.root_mode not in ROOT_MODES:
            raise InvalidArgument(f"root_mode must be one of {ROOT_MODES}")
        if self.epochs < 1 or self.batch_size < 1:
            raise InvalidArgument("epochs and batch_size must be positive")
        if not self.anneal_epoch < self.epochs:
            raise InvalidArgument("anneal_epoch must be smaller than epochs")
        if self.lr < 0:
            raise InvalidArgument("learning rate must be nonnegative")

    def net_config(self, J: int, convention: str = rotmath.DEFAULT_CONVENTION) -> NetConfig:
        return NetConfig(J, self.B, self.kind, self.hidden, self.batchnorm, convention)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in known})


def learning_rate(config: TrainConfig, epoch: int) -> float:
    """Step schedule; ``epoch`` is 1-based and the factor applies from ``anneal_epoch`` on."""
    return config.lr * (config.anneal_factor if epoch >= config.anneal_epoch else 1.0)


class Adam:
    def __init__(self, params: dict, beta1=0.9, beta2=0.999, eps=1e-8):
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params: dict, grads: dict, lr: float, frozen=()):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1**self.t
        c2 = 1.0 - b2**self.t
        for name, p in params.items():
            if name in frozen:
                continue
            g = grads[name]
            self.m[name] = b1 * self.m[name] + (1 - b1) * g
            self.v[name] = b2 * self.v[name] + (1 - b2) * g * g
            p -= lr * (self.m[name] / c1) / (np.sqrt(self.v[name] / c2) + self.eps)


@dataclass
class TrainResult:
    net: KinematicNet
    config: TrainConfig
    metrics: list = field(default_factory=list)
    status: str = "ok"
    message: str = ""

    @property
    def final(self) -> dict:
        return self.metrics[-1] if self.metrics else {}


def _inputs(data, config: TrainConfig):
    return data.views(config.B, config.side_mm, config.root_mode)


def _targets(data, config: TrainConfig):
    if config.supervision == "so3":
        return data.matrices()
    return data.targets(config.kind)


def evaluate(net: KinematicNet, data, config: TrainConfig, batch_size: int = 64) -> float:
    """MPJAE (degrees) of the network's predictions on ``data``."""
    r = net.predict(_inputs(data, config), batch_size)
    pred = rotrep.predicted_euler(r, net.config.kind, net.config.convention)
    gt = rotmath.matrix_to_euler(data.matrices(), data.convention)
    return rotmath.mpjae(pred, gt)


def predict_angles(net: KinematicNet, data, config: TrainConfig, batch_size: int = 64) -> rotmath.AngleSet:
    r = net.predict(_inputs(data, config), batch_size)
    pred = rotrep.predicted_euler(r, net.config.kind, net.config.convention)
    return rotmath.AngleSet(data.joints, pred, data.angles.times, net.config.convention)


def train(data, config: TrainConfig, val=None, net: KinematicNet | None = None) -> TrainResult:
    """Fit a regressor with Adam on ``data``; metrics are recorded per epoch.

    Shuffling and initialisation are seeded from ``config.seed``. If the loss
    or a gradient becomes non-finite, training stops and the parameters from
    the last completed epoch are returned with ``status="diverged"``.
    """
    if len(data) == 0:
        raise InvalidArgument("training set is empty")
    X = _inputs(data, config)
    Y = _targets(data, config)
    if net is None:
        net = KinematicNet(config.net_config(data.J, data.convention), seed=config.seed)
    elif net.config.kind != config.kind or net.config.B != config.B:
        raise InvalidArgument("network does not match the training configuration")
    frozen = set(net.encoder_names) if config.freeze_encoder else set()
    opt = Adam(net.params)
    shuffle = np.random.default_rng([config.seed, 1])
    result = TrainResult(net, config)
    good = net.copy()
    n = len(data)
    for epoch in range(1, config.epochs + 1):
        lr = learning_rate(config, epoch)
        order = shuffle.permutation(n)
        total = 0.0
        try:
            for start in range(0, n, config.batch_size):
                idx = order[start:start + config.batch_size]
                r, cache = net.forward(X[idx], train=True)
                lv = rotrep.loss(
                    r, Y[idx], config.supervision, config.kind, net.config.convention,
                    with_grad=True, skip_degenerate=True,
                )
                if not np.isfinite(lv.loss):
                    raise NonFiniteGradient("loss")
                grads, _ = net.backward(cache, lv.grad)
                opt.step(net.params, grads, lr, frozen)
                total += lv.loss * len(idx)
        except NonFiniteGradient as exc:
            log.error("training diverged at epoch %d (%s); keeping the last good parameters", epoch, exc.layer)
            net.params, net.buffers = good.params, good.buffers
            result.status, result.message = "diverged", f"epoch {epoch}: non-finite values in {exc.layer}"
            break
        row = {
            "epoch": epoch,
            "loss": total / n,
            "mpjae_train": evaluate(net, data, config),
            "mpjae_val": evaluate(net, val, config) if val is not None else float("nan"),
            "lr": lr,
        }
        result.metrics.append(row)
        log.info("epoch %d loss %.6g train %.4f val %.4f lr %g", epoch, row["loss"], row["mpjae_train"], row["mpjae_val"], lr)
        good = net.copy()
    return result


def metrics_csv(metrics) -> str:
    buf = io.StringIO()
    buf.write(",".join(METRIC_FIELDS) + "\n")
    for row in metrics:
        buf.write(",".join(repr(row[k]) if k != "epoch" else str(row[k]) for k in METRIC_FIELDS) + "\n")
    return buf.getvalue()


# -- checkpoints -----------------------------------------------------------
def save_checkpoint(path, net: KinematicNet, config: TrainConfig, joints=None):
    doc = {
        "format": "kinemetric.checkpoint",
        "version": 1,
        "seed": config.seed,
        "train_config": asdict(config),
        "net_config": asdict(net.config),
        "joints": list(joints) if joints is not None else None,
        "params": [{"name": k, "shape": list(v.shape), "values": v.ravel().tolist()} for k, v in net.params.items()],
        "buffers": [{"name": k, "shape": list(v.shape), "values": v.ravel().tolist()} for k, v in net.buffers.items()],
    }
    Path(path).write_text(json.dumps(doc) + "\n")


def load_checkpoint(path):
    """Returns ``(net, train_config, joints)``."""
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ParseError(path, exc.lineno, None, exc.msg) from None
    except OSError as exc:
        raise ParseError(path, message=exc.strerror or str(exc)) from None
    if doc.get("format") != "kinemetric.checkpoint":
        raise ParseError(path, field="format", message="not a checkpoint file")

    def tensors(key):
        out = {}
        for i, t in enumerate(doc.get(key, [])):
            try:
                out[t["name"]] = np.array(t["values"], dtype=float).reshape(t["shape"])
            except (KeyError, ValueError, TypeError) as exc:
                raise ParseError(path, field=f"{key}[{i}]", message=str(exc)) from None
        return out

    try:
        net_cfg = NetConfig(**doc["net_config"])
        cfg = TrainConfig.from_dict(doc["train_config"])
    except (KeyError, TypeError, InvalidArgument) as exc:
        raise ParseError(path, field="config", message=str(exc)) from None
    params = tensors("params")
    expected = KinematicNet(net_cfg, seed=0)
    for name, v in expected.params.items():
        if name not in params or params[name].shape != v.shape:
            raise ParseError(path, field=f"params.{name}", message="missing or misshapen tensor")
    net = KinematicNet(net_cfg, params=params, buffers=tensors("buffers"))
    return net, cfg, doc.get("joints")


# -- ablation ----------------------------------------------------------------
def ablation_matrix(
    data,
    base: TrainConfig,
    val=None,
    kinds=KINDS,
    modes=MODES,
    root_modes=ROOT_MODES,
    resolutions=RESOLUTIONS,
) -> list[dict]:
    """Train one model per cell and record its final MPJAE.

    Every cell uses ``base.seed``. The score is measured on ``val`` when
    given, otherwise on the training data.
    """
    rows = []
    for B in resolutions:
        for root in root_modes:
            for kind in kinds:
                for mode in modes:
                    cfg = replace(base, kind=kind, supervision=mode, root_mode=root, B=B)
                    res = train(data, cfg, val)
                    score = evaluate(res.net, val if val is not None else data, cfg)
                    rows.append({
                        "kind": kind, "supervision": mode, "root_mode": root, "B": B,
                        "mpjae": score, "status": res.status,
                    })
    return rows


_KIND_LABEL = {"euler": "Euler", "quat": "Quaternion", "6d": "6D"}
_MODE_LABEL = {"direct": "Direct", "so3": "SO(3)"}


def ablation_csv(rows) -> str:
    """Wide layout: one row per representation, one column per (root, B, supervision)."""
    cols = []
    for r in rows:
        key = (r["root_mode"], r["B"], r["supervision"])
        if key not in cols:
            cols.append(key)
    kinds = []
    for r in rows:
        if r["kind"] not in kinds:
            kinds.append(r["kind"])
    table = {(r["kind"], r["root_mode"], r["B"], r["supervision"]): r["mpjae"] for r in rows}
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["representation"] + [f"{root.capitalize()} B={B} {_MODE_LABEL[m]}" for root, B, m in cols])
    for k in kinds:
        w.writerow([_KIND_LABEL[k]] + [f"{table[(k,) + c]:.4f}" if (k,) + c in table else "" for c in cols])
    return buf.getvalue()


def loss_along_path(pred, targets, mode: str, kind: str, convention=rotmath.DEFAULT_CONVENTION, align=True):
    """Loss of a fixed prediction ``(J, D)`` against each target ``(J, 3, 3)`` on a path."""
    pred = np.asarray(pred, dtype=float)
    return np.array([
        rotrep.loss(pred[None], np.asarray(t)[None], mode, kind, convention, align=align).loss for t in targets
    ])
