"""Exhaustive hyperparameter grid with a resumable JSON-lines results store."""

from __future__ import annotations

import csv
import hashlib
import itertools
import json
import logging
import os
import time
from concurrent.futures import ProcessPoolExecutor, as_completed
from dataclasses import dataclass, field, replace
from typing import Sequence

from .dataset import Sample
from .errors import ConfigError
from .evaluation import cross_validate
from .network import Activation, NetworkConfig
from .seeding import derive_seed
from .training import LossKind, Optimizer, OptimizerKind, TrainConfig

log = logging.getLogger(__name__)

AXES = ("loss", "optimizer", "activation", "n_hidden", "neurons")


@dataclass(frozen=True)
class GridSpec:
    losses: tuple = (LossKind.MSE, LossKind.MSLE)
    optimizers: tuple = (OptimizerKind.ADAM, OptimizerKind.NADAM, OptimizerKind.RMSPROP)
    activations: tuple = (Activation.RELU, Activation.LINEAR, Activation.SIGMOID)
    n_hidden: tuple = (1, 2, 3, 4)
    neurons: tuple = (10, 50, 100, 150, 200)
    epochs: int = 300_000
    folds: int = 4
    seed: int = 0
    batch_size: int = 32
    base_optimizer: Optimizer = Optimizer()
    checkpoint_metric: str = "validation_loss"

    def __post_init__(self):
        object.__setattr__(self, "losses", tuple(LossKind.parse(v) for v in self.losses))
        object.__setattr__(self, "optimizers", tuple(OptimizerKind.parse(v) for v in self.optimizers))
        object.__setattr__(self, "activations", tuple(Activation.parse(v) for v in self.activations))
        object.__setattr__(self, "n_hidden", tuple(int(v) for v in self.n_hidden))
        object.__setattr__(self, "neurons", tuple(int(v) for v in self.neurons))
        for axis in ("losses", "optimizers", "activations", "n_hidden", "neurons"):
            values = getattr(self, axis)
            if not values:
                raise ConfigError(f"grid axis {axis} is empty")
            if len(set(values)) != len(values):
                raise ConfigError(f"grid axis {axis} has duplicate values")
        if self.epochs < 1 or self.folds < 2:
            raise ConfigError("grid needs epochs >= 1 and folds >= 2")

    def size(self) -> int:
        return (len(self.losses) * len(self.optimizers) * len(self.activations)
                * len(self.n_hidden) * len(self.neurons))


@dataclass(frozen=True)
class GridPoint:
    index: int
    network: NetworkConfig
    train: TrainConfig

    def axes(self) -> dict:
        return {
            "loss": self.train.loss.value,
            "optimizer": self.train.optimizer.kind.value,
            "activation": self.network.hidden_activation.value,
            "n_hidden": self.network.n_hidden_layers,
            "neurons": self.network.neurons_per_hidden,
        }

    def describe(self) -> dict:
        return {
            "network": {k: v for k, v in self.network.to_dict().items() if k != "seed"},
            "train": {k: v for k, v in self.train.to_dict().items() if k != "seed"},
        }


def config_hash(point: GridPoint, spec: GridSpec) -> str:
    """Stable identity of a grid point: its configuration, folds and root seed."""
    payload = dict(point.describe(), folds=spec.folds, seed=spec.seed)
    text = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(text.encode("utf-8")).hexdigest()[:16]


def enumerate_grid(spec: GridSpec) -> list[GridPoint]:
    """Cartesian product of the grid axes, in axis order (loss varies slowest)."""
    points = []
    for i, (loss, opt, act, nh, nn) in enumerate(itertools.product(
            spec.losses, spec.optimizers, spec.activations, spec.n_hidden, spec.neurons)):
        net = NetworkConfig(n_hidden_layers=nh, neurons_per_hidden=nn, hidden_activation=act)
        tr = TrainConfig(
            loss=loss,
            optimizer=replace(spec.base_optimizer, kind=opt),
            epochs=spec.epochs,
            batch_size=spec.batch_size,
            checkpoint_metric=spec.checkpoint_metric,
        )
        points.append(GridPoint(i, net, tr))
    return points


@dataclass
class GridResult:
    records: list[dict]
    ranking: list[dict] = field(default_factory=list)

    def __post_init__(self):
        if not self.ranking:
            self.ranking = rank_records(self.records)

    def write_ranking(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["rank", "config_hash", *AXES, "mean_r2", "n_converged", "n_parameters"])
            for r, rec in enumerate(self.ranking, start=1):
                w.writerow([r, rec["config_hash"], *(rec["axes"][a] for a in AXES),
                            repr(rec["mean_r2"]), rec["n_converged"], rec["n_parameters"]])


def rank_records(records: Sequence[dict]) -> list[dict]:
    """Scored records by mean R² descending; ties by size, then grid order."""
    scored = [r for r in records if r.get("mean_r2") is not None]
    return sorted(scored, key=lambda r: (-r["mean_r2"], r["n_parameters"], r["index"]))


def _run_point(samples, point: GridPoint, spec: GridSpec, backend):
    h = config_hash(point, spec)
    seed = derive_seed(spec.seed, "config", h)
    t0 = time.perf_counter()
    rec = {
        "config_hash": h,
        "index": point.index,
        "axes": point.axes(),
        "config": point.describe(),
        "n_parameters": point.network.n_parameters(),
        "seed": seed,
        "split_seed": spec.seed,
        "epochs": spec.epochs,
        "folds": spec.folds,
    }
    try:
        rep = cross_validate(samples, point.network, point.train, spec.folds, seed,
                             backend=backend, keep_models=False, split_seed=spec.seed)
    except Exception as exc:  # recorded, a failing config must not stop the grid
        rec.update(fold_r2=[], mean_r2=None, n_converged=0, error=f"{type(exc).__name__}: {exc}")
    else:
        rec.update(
            fold_r2=[f.r_squared for f in rep.folds],
            best_epochs=[f.best_epoch for f in rep.folds],
            mean_r2=rep.mean_r_squared,
            pooled_r2=rep.pooled_r_squared,
            n_converged=rep.n_converged,
            error=None,
        )
    rec["wall_time"] = time.perf_counter() - t0
    return rec


def load_store(path) -> list[dict]:
    """Read a results store; a truncated last line (crash mid-write) is ignored."""
    if not os.path.exists(path):
        return []
    records = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            try:
                records.append(json.loads(line))
            except json.JSONDecodeError:
                log.warning("skipping unreadable record in %s", path)
    return records


def run_grid(samples: Sequence[Sample], spec: GridSpec, store_path, workers: int = 1,
             backend=None, progress=None) -> GridResult:
    """Cross-validate every grid point, appending one record per point to ``store_path``.

    Points whose hash is already in the store are skipped, so an interrupted
    run resumes where it stopped.  Records are written by this process only,
    in completion order; the ranking does not depend on that order.
    """
    samples = list(samples)
    points = enumerate_grid(spec)
    done = {r["config_hash"]: r for r in load_store(store_path)}
    todo = [p for p in points if config_hash(p, spec) not in done]
    log.info("grid: %d points, %d already in store", len(points), len(points) - len(todo))
    d = os.path.dirname(os.path.abspath(store_path))
    os.makedirs(d, exist_ok=True)

    with open(store_path, "a", encoding="utf-8") as store:
        def emit(rec):
            store.write(json.dumps(rec, sort_keys=True) + "\n")
            store.flush()
            done[rec["config_hash"]] = rec
            if progress is not None:
                progress(rec)

        if workers <= 1:
            for p in todo:
                emit(_run_point(samples, p, spec, backend))
        else:
            with ProcessPoolExecutor(max_workers=workers) as pool:
                futures = [pool.submit(_run_point, samples, p, spec, backend) for p in todo]
                for fut in as_completed(futures):
                    emit(fut.result())

    wanted = {config_hash(p, spec) for p in points}
    records = sorted((r for h, r in done.items() if h in wanted), key=lambda r: r["index"])
    return GridResult(records)


def slice_report(result: GridResult, vary: str, fix: dict) -> list[tuple]:
    """Rows ``(axis_value, mean_r2, n_converged)`` along ``vary`` at the point ``fix``."""
    if vary not in AXES:
        raise ConfigError(f"unknown axis {vary!r}; choose from {AXES}")
    missing = set(AXES) - {vary} - set(fix)
    if missing:
        raise ConfigError(f"fixed point must specify {sorted(missing)}")
    norm = {k: _norm(k, v) for k, v in fix.items() if k != vary}
    rows = [
        (rec["axes"][vary], rec.get("mean_r2"), rec.get("n_converged", 0))
        for rec in result.records
        if all(rec["axes"][k] == v for k, v in norm.items())
    ]
    if not rows:
        raise ConfigError(f"fixed point {norm} is not in the grid")
    return rows


def _norm(axis, value):
    if axis in ("n_hidden", "neurons"):
        return int(value)
    return str(value.value if hasattr(value, "value") else value).lower()


def write_slice_csv(path, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["axis_value", "mean_r2", "n_converged"])
        for value, mean, n in rows:
            w.writerow([value, "" if mean is None else repr(mean), n])
