"""Losses, backpropagation, optimizers and the checkpointing training loop."""

from __future__ import annotations

import csv
import enum
import math
import time
from dataclasses import dataclass, field, replace

import numpy as np

from . import _kernels
from ._kernels import _pure
from .errors import GradientOverflowError
from .network import Network
from .seeding import make_rng


class LossKind(str, enum.Enum):
    MSE = "mse"
    MSLE = "msle"

    @property
    def code(self) -> int:
        return _pure.MSE if self is LossKind.MSE else _pure.MSLE

    @classmethod
    def parse(cls, value) -> "LossKind":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).strip().lower())
        except ValueError:
            raise ValueError(f"unknown loss {value!r}") from None


class OptimizerKind(str, enum.Enum):
    RMSPROP = "rmsprop"
    ADAM = "adam"
    NADAM = "nadam"

    @property
    def code(self) -> int:
        return {"rmsprop": _pure.RMSPROP, "adam": _pure.ADAM, "nadam": _pure.NADAM}[self.value]

    @classmethod
    def parse(cls, value) -> "OptimizerKind":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).strip().lower())
        except ValueError:
            raise ValueError(f"unknown optimizer {value!r}") from None


@dataclass(frozen=True)
class Optimizer:
    """An optimizer kind with its hyperparameters.

    ``rho`` is used by RMSprop only, ``beta1``/``beta2`` by Adam and Nadam.
    """

    kind: OptimizerKind = OptimizerKind.RMSPROP
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    rho: float = 0.9
    epsilon: float = 1e-7

    def __post_init__(self):
        object.__setattr__(self, "kind", OptimizerKind.parse(self.kind))
        if not self.learning_rate >= 0:
            raise ValueError("learning_rate must be non-negative")
        for name in ("beta1", "beta2", "rho"):
            if not 0 < getattr(self, name) < 1:
                raise ValueError(f"{name} must lie in (0, 1)")
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")

    def to_dict(self) -> dict:
        return {
            "kind": self.kind.value,
            "learning_rate": self.learning_rate,
            "beta1": self.beta1,
            "beta2": self.beta2,
            "rho": self.rho,
            "epsilon": self.epsilon,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Optimizer":
        return cls(**d)


@dataclass
class OptimizerState:
    """Moment accumulators mirroring the parameter list, and the step count."""

    m: list[np.ndarray]
    v: list[np.ndarray]
    t: int = 0

    @classmethod
    def zeros_like(cls, params) -> "OptimizerState":
        return cls([np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params], 0)


@dataclass(frozen=True)
class TrainConfig:
    loss: LossKind = LossKind.MSLE
    optimizer: Optimizer = Optimizer()
    epochs: int = 300_000
    batch_size: int = 32
    checkpoint_metric: str = "validation_loss"
    divergence_factor: float = 1e6
    divergence_patience: int = 10
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "loss", LossKind.parse(self.loss))
        if isinstance(self.optimizer, (str, OptimizerKind)):
            object.__setattr__(self, "optimizer", Optimizer(OptimizerKind.parse(self.optimizer)))
        if int(self.epochs) < 1:
            raise ValueError("epochs must be >= 1")
        if int(self.batch_size) < 1:
            raise ValueError("batch_size must be >= 1")
        if self.checkpoint_metric not in ("validation_loss", "training_loss"):
            raise ValueError(f"unknown checkpoint_metric {self.checkpoint_metric!r}")
        if int(self.divergence_patience) < 1:
            raise ValueError("divergence_patience must be >= 1")

    def to_dict(self) -> dict:
        return {
            "loss": self.loss.value,
            "optimizer": self.optimizer.to_dict(),
            "epochs": self.epochs,
            "batch_size": self.batch_size,
            "checkpoint_metric": self.checkpoint_metric,
            "divergence_factor": self.divergence_factor,
            "divergence_patience": self.divergence_patience,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        d["optimizer"] = Optimizer.from_dict(d["optimizer"])
        return cls(**d)

    def with_seed(self, seed: int) -> "TrainConfig":
        return replace(self, seed=seed)


@dataclass
class TrainingHistory:
    train_loss: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)
    best_epoch: int = 0
    wall_time: float = 0.0
    converged: bool = True
    failure: str | None = None
    initial_loss: float = math.nan

    def __len__(self):
        return len(self.train_loss)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["epoch", "train_loss", "val_loss"])
            for i, (tr, va) in enumerate(zip(self.train_loss, self.val_loss), start=1):
                w.writerow([i, repr(tr), repr(va)])


# ---------------------------------------------------------------------------
# losses

def _check_pair(y_true, y_pred):
    y_true = np.asarray(y_true, dtype=np.float64).reshape(-1)
    y_pred = np.asarray(y_pred, dtype=np.float64).reshape(-1)
    if y_true.shape != y_pred.shape:
        raise ValueError(f"length mismatch: {y_true.shape[0]} vs {y_pred.shape[0]}")
    if y_true.size == 0:
        raise ValueError("empty input")
    if not (np.isfinite(y_true).all() and np.isfinite(y_pred).all()):
        raise ValueError("non-finite input")
    return y_true, y_pred


def compute_loss(kind, y_true, y_pred) -> float:
    """Mean squared error or mean squared log error (natural log).

    For MSLE, predictions are clamped at zero before ``log(1 + p)``.
    """
    y_true, y_pred = _check_pair(y_true, y_pred)
    return _pure.loss_value(LossKind.parse(kind).code, y_true, y_pred)


def loss_gradient(kind, y_true, y_pred) -> np.ndarray:
    """Derivative of :func:`compute_loss` with respect to each prediction."""
    y_true, y_pred = _check_pair(y_true, y_pred)
    return _pure.loss_grad(LossKind.parse(kind).code, y_true, y_pred)


def backprop(net: Network, X, y, kind, backend=None):
    """Batch loss gradients as ``(grad_weights, grad_biases)`` lists."""
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    if X.ndim != 2 or X.shape[0] == 0 or X.shape[0] != y.shape[0]:
        raise ValueError("batch must be a nonempty matrix with one target per row")
    kern = _kernels.get_backend(backend)
    with np.errstate(all="ignore"):
        _, grads = kern.gradients(net.params(), net.act_codes(), X, y, LossKind.parse(kind).code)
    if not all(np.isfinite(g).all() for g in grads):
        raise GradientOverflowError("gradient overflow")
    return grads[0::2], grads[1::2]


def optimizer_step(opt: Optimizer, state: OptimizerState, params, grads) -> None:
    """Apply one update to ``params`` in place and advance ``state.t``."""
    if not (len(params) == len(grads) == len(state.m) == len(state.v)):
        raise ValueError("params, grads and optimizer state must have equal length")
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if not (p.shape == np.shape(g) == m.shape == v.shape):
            raise ValueError("shape mismatch between params, grads and state")
    state.t += 1
    for p, g, m, v in zip(params, grads, state.m, state.v):
        _pure.update(opt.kind.code, p, np.asarray(g, dtype=np.float64), m, v, state.t,
                     opt.learning_rate, opt.beta1, opt.beta2, opt.rho, opt.epsilon)


# ---------------------------------------------------------------------------
# training loop

def _eval(kern, net, X, y, code):
    """Full-split loss and whether the effective predictions are all equal."""
    with np.errstate(all="ignore"):
        p = kern.predict(net.params(), net.act_codes(), X)
        if not np.isfinite(p).all():
            return math.inf, False
        if code == LossKind.MSLE.code:
            p = np.maximum(p, 0.0)
        return _pure.loss_value(code, y, p), bool(np.all(p == p[0]))


def _eval_loss(kern, net, X, y, code):
    return _eval(kern, net, X, y, code)[0]


def train(net: Network, train_split, val_split, cfg: TrainConfig, backend=None, callback=None):
    """Train a copy of ``net`` and return ``(best_network, history)``.

    ``train_split`` and ``val_split`` are ``(X, y)`` pairs with X already
    scaled.  After every epoch the full-split training and validation losses
    are recorded and the network with the lowest ``cfg.checkpoint_metric``
    is kept.  A run is marked non-converged (and stopped) when a loss or a
    parameter becomes non-finite, or when the training loss stays above
    ``divergence_factor`` times the pre-training loss for
    ``divergence_patience`` consecutive epochs.  The same patience applies
    to collapse: a network whose (clamped) training predictions are exactly
    equal across distinct inputs gets no gradient into its hidden layers, or
    none at all under MSLE, and cannot recover.
    """
    X_tr, y_tr = (np.ascontiguousarray(a, dtype=np.float64) for a in train_split)
    X_va, y_va = (np.ascontiguousarray(a, dtype=np.float64) for a in val_split)
    y_tr, y_va = y_tr.reshape(-1), y_va.reshape(-1)
    if len(y_tr) == 0 or len(y_va) == 0:
        raise ValueError("training and validation splits must be nonempty")
    kern = _kernels.get_backend(backend)
    code = cfg.loss.code
    opt = cfg.optimizer
    work = net.copy()
    params = work.params()
    state = OptimizerState.zeros_like(params)
    acts = work.act_codes()
    rng = make_rng(cfg.seed)
    batch = min(int(cfg.batch_size), len(y_tr))
    use_val = cfg.checkpoint_metric == "validation_loss"

    history = TrainingHistory()
    history.initial_loss = _eval_loss(kern, work, X_tr, y_tr, code)
    best = work.copy()
    best_metric = math.inf
    blowup = collapsed = 0
    distinct = len(np.unique(X_tr, axis=0)) > 1
    t0 = time.perf_counter()
    for epoch in range(1, int(cfg.epochs) + 1):
        perm = rng.permutation(len(y_tr))
        with np.errstate(all="ignore"):
            state.t, _ = kern.train_epoch(
                params, state.m, state.v, state.t, acts, X_tr, y_tr, perm, batch, code,
                opt.kind.code, opt.learning_rate, opt.beta1, opt.beta2, opt.rho, opt.epsilon,
            )
        tr, flat = _eval(kern, work, X_tr, y_tr, code)
        va = _eval_loss(kern, work, X_va, y_va, code)
        history.train_loss.append(tr)
        history.val_loss.append(va)
        if callback is not None:
            callback(epoch, tr, va)
        if not (math.isfinite(tr) and math.isfinite(va) and work.is_finite()):
            history.converged = False
            history.failure = f"non-finite loss at epoch {epoch}"
            break
        if history.initial_loss > 0 and tr > cfg.divergence_factor * history.initial_loss:
            blowup += 1
            if blowup >= cfg.divergence_patience:
                history.converged = False
                history.failure = f"loss diverged (x{cfg.divergence_factor:g}) at epoch {epoch}"
                break
        else:
            blowup = 0
        collapsed = collapsed + 1 if flat and distinct else 0
        if collapsed >= cfg.divergence_patience:
            history.converged = False
            history.failure = f"network collapsed to a constant output at epoch {epoch}"
            break
        metric = va if use_val else tr
        if metric < best_metric:
            best_metric = metric
            history.best_epoch = epoch
            for dst, src in zip(best.params(), params):
                dst[...] = src
    history.wall_time = time.perf_counter() - t0
    return best, history
