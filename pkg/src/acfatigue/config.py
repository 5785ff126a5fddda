"""INI run configuration with strict key checking.

Every section and key is optional; missing values take the defaults listed
in ``DEFAULTS``.  Unknown sections or keys are an error.  List values are
comma separated.
"""

from __future__ import annotations

import configparser
import os
from dataclasses import dataclass

from .dataset import FilterConfig
from .errors import ConfigError
from .network import NetworkConfig
from .search import GridSpec
from .training import Optimizer, TrainConfig

DEFAULTS: dict[str, dict[str, str]] = {
    "run": {"seed": "0", "out": "runs/default", "workers": "1"},
    "data": {"path": ""},
    "filter": {
        "nf_lower_bound": "2000",
        "nf_upper_bound": "2000000",
        "z_threshold": "3.0",
        "bounds_mode": "fixed",
        "lower_percentile": "3",
        "upper_percentile": "90",
        "iterate_z": "true",
        "check_conditions": "true",
    },
    "network": {
        "n_hidden_layers": "2",
        "neurons_per_hidden": "200",
        "hidden_activation": "relu",
        "output_activation": "linear",
    },
    "train": {
        "loss": "msle",
        "optimizer": "rmsprop",
        "learning_rate": "0.001",
        "beta1": "0.9",
        "beta2": "0.999",
        "rho": "0.9",
        "epsilon": "1e-07",
        "epochs": "300000",
        "batch_size": "32",
        "checkpoint_metric": "validation_loss",
        "divergence_factor": "1e6",
        "divergence_patience": "10",
        "fold": "0",
    },
    "cv": {"folds": "4"},
    "grid": {
        "losses": "mse, msle",
        "optimizers": "adam, nadam, rmsprop",
        "activations": "relu, linear, sigmoid",
        "n_hidden": "1, 2, 3, 4",
        "neurons": "10, 50, 100, 150, 200",
        "epochs": "10000",
        "folds": "4",
    },
    "pdp": {"strains": "200, 400", "resolution": "50", "radius": "0.1"},
}


def _list(text: str) -> list[str]:
    return [t.strip() for t in text.split(",") if t.strip()]


@dataclass
class RunConfig:
    seed: int
    out: str
    workers: int
    dataset: str
    filter: FilterConfig
    network: NetworkConfig
    train: TrainConfig
    train_fold: int
    folds: int
    grid: GridSpec
    pdp_strains: list[float]
    pdp_resolution: int
    pdp_radius: float
    raw: dict

    def dump(self, path) -> None:
        """Write the fully resolved configuration, defaults included."""
        cp = configparser.ConfigParser(interpolation=None)
        for section, values in self.raw.items():
            cp[section] = values
        with open(path, "w", encoding="utf-8") as fh:
            cp.write(fh)


def load_config(path=None, overrides: dict[str, str] | None = None) -> RunConfig:
    """Read ``path`` (optional) and apply ``{"section.key": value}`` overrides."""
    raw = {s: dict(v) for s, v in DEFAULTS.items()}
    if path is not None:
        if not os.path.exists(path):
            raise ConfigError(f"config file not found: {path}")
        cp = configparser.ConfigParser(interpolation=None)
        try:
            cp.read(path, encoding="utf-8")
        except configparser.Error as exc:
            raise ConfigError(f"{path}: {exc}") from exc
        for section in cp.sections():
            if section not in raw:
                raise ConfigError(f"{path}: unknown section [{section}]")
            for key, value in cp[section].items():
                if key not in raw[section]:
                    raise ConfigError(f"{path}: unknown key {key!r} in [{section}]")
                raw[section][key] = value
    for dotted, value in (overrides or {}).items():
        section, _, key = dotted.partition(".")
        if section not in raw or key not in raw[section]:
            raise ConfigError(f"unknown setting {dotted!r}")
        raw[section][key] = str(value)
    return _resolve(raw)


def _resolve(raw: dict) -> RunConfig:
    try:
        run, f, n, t, g, p = (raw[s] for s in ("run", "filter", "network", "train", "grid", "pdp"))
        seed = int(run["seed"])
        flt = FilterConfig(
            nf_lower_bound=float(f["nf_lower_bound"]),
            nf_upper_bound=float(f["nf_upper_bound"]),
            z_threshold=float(f["z_threshold"]),
            bounds_mode=f["bounds_mode"].strip(),
            lower_percentile=float(f["lower_percentile"]),
            upper_percentile=float(f["upper_percentile"]),
            iterate_z=_bool(f["iterate_z"]),
            check_conditions=_bool(f["check_conditions"]),
        )
        net = NetworkConfig(
            n_hidden_layers=int(n["n_hidden_layers"]),
            neurons_per_hidden=int(n["neurons_per_hidden"]),
            hidden_activation=n["hidden_activation"],
            output_activation=n["output_activation"],
            seed=seed,
        )
        opt = Optimizer(
            kind=t["optimizer"],
            learning_rate=float(t["learning_rate"]),
            beta1=float(t["beta1"]),
            beta2=float(t["beta2"]),
            rho=float(t["rho"]),
            epsilon=float(t["epsilon"]),
        )
        tr = TrainConfig(
            loss=t["loss"],
            optimizer=opt,
            epochs=int(t["epochs"]),
            batch_size=int(t["batch_size"]),
            checkpoint_metric=t["checkpoint_metric"].strip(),
            divergence_factor=float(t["divergence_factor"]),
            divergence_patience=int(t["divergence_patience"]),
            seed=seed,
        )
        grid = GridSpec(
            losses=tuple(_list(g["losses"])),
            optimizers=tuple(_list(g["optimizers"])),
            activations=tuple(_list(g["activations"])),
            n_hidden=tuple(int(v) for v in _list(g["n_hidden"])),
            neurons=tuple(int(v) for v in _list(g["neurons"])),
            epochs=int(g["epochs"]),
            folds=int(g["folds"]),
            seed=seed,
            batch_size=tr.batch_size,
            base_optimizer=opt,
            checkpoint_metric=tr.checkpoint_metric,
        )
        cfg = RunConfig(
            seed=seed,
            out=run["out"],
            workers=int(run["workers"]),
            dataset=raw["data"]["path"],
            filter=flt,
            network=net,
            train=tr,
            train_fold=int(t["fold"]),
            folds=int(raw["cv"]["folds"]),
            grid=grid,
            pdp_strains=[float(v) for v in _list(p["strains"])],
            pdp_resolution=int(p["resolution"]),
            pdp_radius=float(p["radius"]),
            raw=raw,
        )
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    if cfg.workers < 1:
        raise ConfigError("workers must be >= 1")
    if cfg.folds < 2:
        raise ConfigError("cv folds must be >= 2")
    if not 0 <= cfg.train_fold < cfg.folds:
        raise ConfigError("train fold must lie in [0, folds)")
    return cfg


def _bool(text: str) -> bool:
    v = text.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"not a boolean: {text!r}")
