"""Feedforward regression network: 3 inputs, dense hidden layers, 1 output."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from ._kernels import _pure
from .errors import NumericalOverflowError
from .seeding import make_rng


class Activation(str, enum.Enum):
    RELU = "relu"
    LINEAR = "linear"
    SIGMOID = "sigmoid"
    TANH = "tanh"

    @property
    def code(self) -> int:
        return _ACT_CODES[self]

    @classmethod
    def parse(cls, value) -> "Activation":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).strip().lower())
        except ValueError:
            raise ValueError(f"unknown activation {value!r}") from None

    def __call__(self, z):
        return _pure.activate(np.asarray(z, dtype=np.float64), self.code)

    def derivative(self, z):
        z = np.asarray(z, dtype=np.float64)
        return _pure.activation_derivative(z, self(z), self.code)


_ACT_CODES = {
    Activation.RELU: _pure.RELU,
    Activation.LINEAR: _pure.LINEAR,
    Activation.SIGMOID: _pure.SIGMOID,
    Activation.TANH: _pure.TANH,
}


@dataclass(frozen=True)
class NetworkConfig:
    n_hidden_layers: int = 2
    neurons_per_hidden: int = 200
    hidden_activation: Activation = Activation.RELU
    output_activation: Activation = Activation.LINEAR
    n_inputs: int = 3
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "hidden_activation", Activation.parse(self.hidden_activation))
        object.__setattr__(self, "output_activation", Activation.parse(self.output_activation))
        for name in ("n_hidden_layers", "neurons_per_hidden", "n_inputs"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} must be a positive integer")

    def layer_sizes(self) -> list[int]:
        return [self.n_inputs] + [self.neurons_per_hidden] * self.n_hidden_layers + [1]

    def n_parameters(self) -> int:
        s = self.layer_sizes()
        return sum((a + 1) * b for a, b in zip(s[:-1], s[1:]))

    def to_dict(self) -> dict:
        return {
            "n_inputs": self.n_inputs,
            "n_hidden_layers": self.n_hidden_layers,
            "neurons_per_hidden": self.neurons_per_hidden,
            "hidden_activation": self.hidden_activation.value,
            "output_activation": self.output_activation.value,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "NetworkConfig":
        return cls(
            n_hidden_layers=int(d["n_hidden_layers"]),
            neurons_per_hidden=int(d["neurons_per_hidden"]),
            hidden_activation=d["hidden_activation"],
            output_activation=d.get("output_activation", "linear"),
            n_inputs=int(d.get("n_inputs", 3)),
            seed=int(d.get("seed", 0)),
        )


@dataclass
class Network:
    """Weights ``W[l]`` of shape (fan_out, fan_in), biases ``b[l]``."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]
    activations: list[Activation]
    config: NetworkConfig | None = field(default=None, compare=False)

    def __post_init__(self):
        self.activations = [Activation.parse(a) for a in self.activations]
        self.check_shapes()

    def check_shapes(self) -> None:
        if not (len(self.weights) == len(self.biases) == len(self.activations) >= 1):
            raise ValueError("one weight matrix, bias vector and activation per layer")
        for i, (W, b) in enumerate(zip(self.weights, self.biases)):
            if W.ndim != 2 or b.shape != (W.shape[0],):
                raise ValueError(f"layer {i}: bias shape {b.shape} vs weights {W.shape}")
            if i and W.shape[1] != self.weights[i - 1].shape[0]:
                raise ValueError(f"layer {i}: fan-in {W.shape[1]} does not chain")
        if self.weights[-1].shape[0] != 1:
            raise ValueError("output layer must have one unit")

    @property
    def n_inputs(self) -> int:
        return self.weights[0].shape[1]

    def params(self) -> list[np.ndarray]:
        """Parameter arrays interleaved as ``[W1, b1, W2, b2, ...]`` (no copy)."""
        out = []
        for W, b in zip(self.weights, self.biases):
            out += [W, b]
        return out

    def act_codes(self) -> list[int]:
        return [a.code for a in self.activations]

    def copy(self) -> "Network":
        return Network(
            [W.copy() for W in self.weights],
            [b.copy() for b in self.biases],
            list(self.activations),
            self.config,
        )

    def is_finite(self) -> bool:
        return all(np.isfinite(p).all() for p in self.params())

    def to_dict(self) -> dict:
        return {
            "layers": [
                {
                    "activation": a.value,
                    "shape": list(W.shape),
                    "weights": W.ravel().tolist(),
                    "bias": b.tolist(),
                }
                for W, b, a in zip(self.weights, self.biases, self.activations)
            ]
        }

    @classmethod
    def from_dict(cls, d: dict, config: NetworkConfig | None = None) -> "Network":
        Ws, bs, acts = [], [], []
        for layer in d["layers"]:
            shape = tuple(layer["shape"])
            Ws.append(np.array(layer["weights"], dtype=np.float64).reshape(shape))
            bs.append(np.array(layer["bias"], dtype=np.float64))
            acts.append(layer["activation"])
        return cls(Ws, bs, acts, config)


def init_network(cfg: NetworkConfig) -> Network:
    """Glorot-uniform weights and zero biases, drawn from ``cfg.seed``."""
    rng = make_rng(cfg.seed)
    sizes = cfg.layer_sizes()
    Ws, bs = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        limit = math.sqrt(6.0 / (fan_in + fan_out))
        Ws.append(rng.uniform(-limit, limit, size=(fan_out, fan_in)))
        bs.append(np.zeros(fan_out))
    acts = [cfg.hidden_activation] * cfg.n_hidden_layers + [cfg.output_activation]
    return Network(Ws, bs, acts, cfg)


def forward(net: Network, x):
    """Evaluate one input vector.

    Returns ``(prediction, zs, activations)`` where ``zs[l]`` is the
    pre-activation of layer ``l`` and ``activations[0]`` is ``x`` itself.
    """
    a = np.asarray(x, dtype=np.float64).reshape(-1)
    if a.shape != (net.n_inputs,):
        raise ValueError(f"expected {net.n_inputs} inputs, got {a.shape[0]}")
    if not np.isfinite(a).all():
        raise ValueError("input must be finite")
    zs, acts = [], [a]
    with np.errstate(over="ignore", invalid="ignore"):
        for W, b, act in zip(net.weights, net.biases, net.activations):
            z = W @ a + b
            a = act(z)
            if not (np.isfinite(z).all() and np.isfinite(a).all()):
                raise NumericalOverflowError("numerical overflow in forward pass")
            zs.append(z)
            acts.append(a)
    return float(a[0]), zs, acts


def forward_batch(net: Network, X, backend=None) -> np.ndarray:
    """Row-wise :func:`forward` through the active kernel backend."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X.reshape(1, -1)
    if X.shape[1] != net.n_inputs:
        raise ValueError(f"expected {net.n_inputs} input columns, got {X.shape[1]}")
    if X.shape[0] == 0:
        return np.empty(0)
    kern = _kernels.get_backend(backend)
    with np.errstate(over="ignore", invalid="ignore"):
        out = kern.predict(net.params(), net.act_codes(), X)
    if not np.isfinite(out).all():
        raise NumericalOverflowError("numerical overflow in forward pass")
    return out
