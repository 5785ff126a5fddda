"""Self-describing JSON model files.

A model file bundles the network, the input scaler fitted on its training
split, the raw training inputs (used for extrapolation flags and coverage
masks) and a free-form provenance block.  Floats are written with
``repr``, the shortest decimal string that reads back to the same double,
so a save/load round trip is bit-exact.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

import numpy as np

from . import __version__
from .dataset import ScalerParams
from .errors import DataError
from .network import Network, NetworkConfig

FORMAT = "acfatigue-model"
FORMAT_VERSION = 1


@dataclass
class Model:
    network: Network
    scaler: ScalerParams
    training_inputs: np.ndarray = field(default_factory=lambda: np.empty((0, 3)))
    provenance: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        cfg = self.network.config
        return {
            "format": FORMAT,
            "format_version": FORMAT_VERSION,
            "tool_version": __version__,
            "network_config": cfg.to_dict() if cfg is not None else None,
            "network": self.network.to_dict(),
            "scaler": self.scaler.to_dict(),
            "training_inputs": np.asarray(self.training_inputs).tolist(),
            "provenance": self.provenance,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Model":
        if d.get("format") != FORMAT:
            raise DataError("not an acfatigue model file")
        cfg = d.get("network_config")
        cfg = NetworkConfig.from_dict(cfg) if cfg else None
        inputs = np.array(d.get("training_inputs", []), dtype=np.float64).reshape(-1, 3)
        return cls(
            Network.from_dict(d["network"], cfg),
            ScalerParams.from_dict(d["scaler"]),
            inputs,
            d.get("provenance", {}),
        )

    def content_hash(self) -> str:
        text = json.dumps(self.to_dict()["network"], sort_keys=True)
        return hashlib.sha256(text.encode("utf-8")).hexdigest()


def save_model(path, model: Model) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(model.to_dict(), fh, indent=1, allow_nan=True)
        fh.write("\n")


def load_model(path) -> Model:
    try:
        with open(path, encoding="utf-8") as fh:
            d = json.load(fh)
        return Model.from_dict(d)
    except (OSError, ValueError, KeyError, TypeError) as exc:
        if isinstance(exc, DataError):
            raise
        raise DataError(f"corrupt or unreadable model file {path}: {exc}") from exc


def as_model(model) -> Model:
    return model if isinstance(model, Model) else load_model(model)
