"""Coefficient of determination, k-fold cross-validation and prediction."""

from __future__ import annotations

import csv
import json
import math
import os
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from . import __version__
from .checkpoint import Model, as_model
from .dataset import Sample, as_arrays, dataset_hash, fit_scaler, kfold_split, transform
from .errors import DataError
from .network import NetworkConfig, forward_batch, init_network
from .seeding import derive_seed
from .training import TrainConfig, TrainingHistory, train


def r_squared(y_true, y_pred) -> float:
    """``1 - SS_res / SS_tot``."""
    y_true = np.asarray(y_true, dtype=np.float64).reshape(-1)
    y_pred = np.asarray(y_pred, dtype=np.float64).reshape(-1)
    if y_true.shape != y_pred.shape or y_true.size == 0:
        raise ValueError("y_true and y_pred must have the same nonzero length")
    ss_tot = float(np.sum((y_true - y_true.mean()) ** 2))
    if ss_tot == 0:
        raise ValueError("degenerate target variance")
    ss_res = float(np.sum((y_true - y_pred) ** 2))
    return 1.0 - ss_res / ss_tot


def predict(model, inputs, backend=None):
    """Predict fatigue life for rows of ``(binder, voids, strain)``.

    ``model`` is a :class:`Model` or a path to a model file.  Returns
    ``(predictions, extrapolated)``: predictions are clamped at zero and
    ``extrapolated[i]`` is true when any input of row ``i`` lies outside
    the range seen in training.
    """
    model = as_model(model)
    X = np.asarray(inputs, dtype=np.float64)
    if X.size == 0:
        return np.empty(0), np.empty(0, dtype=bool)
    if X.ndim == 1:
        X = X.reshape(1, -1)
    if X.ndim != 2 or X.shape[1] != 3:
        raise DataError(f"expected 3 inputs per row, got shape {X.shape}")
    if not np.isfinite(X).all():
        raise DataError("inputs must be finite")
    raw = forward_batch(model.network, transform(X, model.scaler), backend=backend)
    lo, hi = np.array(model.scaler.mins), np.array(model.scaler.maxs)
    extrapolated = ((X < lo) | (X > hi)).any(axis=1)
    return np.maximum(raw, 0.0), extrapolated


@dataclass
class FoldResult:
    fold_index: int
    r_squared: float | None
    best_epoch: int
    converged: bool
    y_true: np.ndarray = field(repr=False)
    y_pred: np.ndarray = field(repr=False)
    sample_index: np.ndarray = field(repr=False)
    failure: str | None = None
    wall_time: float = 0.0
    model: Model | None = field(default=None, repr=False, compare=False)
    history: TrainingHistory | None = field(default=None, repr=False, compare=False)


@dataclass
class CvReport:
    folds: list[FoldResult]
    mean_r_squared: float | None
    pooled_r_squared: float | None
    in_sample_r_squared: float | None
    n_converged: int
    seed: int
    flag: str | None = None
    metadata: dict = field(default_factory=dict)

    def fold_r2_records(self) -> list[dict]:
        return [
            {
                "fold": f.fold_index,
                "r_squared": f.r_squared,
                "best_epoch": f.best_epoch,
                "converged": f.converged,
            }
            for f in self.folds
        ]

    def to_dict(self) -> dict:
        return {
            "mean_r_squared": self.mean_r_squared,
            "pooled_r_squared": self.pooled_r_squared,
            "in_sample_r_squared": self.in_sample_r_squared,
            "n_folds": len(self.folds),
            "n_converged": self.n_converged,
            "flag": self.flag,
            "seed": self.seed,
            "folds": [
                dict(rec, n_test=int(f.y_true.size), failure=f.failure, wall_time=f.wall_time)
                for rec, f in zip(self.fold_r2_records(), self.folds)
            ],
            "metadata": self.metadata,
        }


def _safe_r2(y_true, y_pred):
    if len(y_true) < 2:
        return None
    try:
        return r_squared(y_true, y_pred)
    except ValueError:
        return None


def cross_validate(
    samples: Sequence[Sample],
    net_cfg: NetworkConfig,
    train_cfg: TrainConfig,
    n_folds: int = 4,
    seed: int = 0,
    backend=None,
    keep_models: bool = True,
    split_seed: int | None = None,
) -> CvReport:
    """Shuffled k-fold cross-validation of one configuration.

    Fold ``k`` trains on the other folds (scaler fitted there only),
    checkpoints against fold ``k`` and predicts it.  Seeds: the fold split
    uses ``split_seed`` (default ``seed``); network init and batch shuffling
    of fold ``k`` use ``derive_seed(seed, "init", k)`` and
    ``derive_seed(seed, "shuffle", k)``.
    Per-fold R² is ``None`` for folds that did not converge or hold fewer
    than two samples.  The mean R² averages the converged folds; the pooled
    R² is computed over the out-of-fold predictions of converged folds.
    """
    samples = list(samples)
    if n_folds < 2:
        raise DataError("n_folds must be at least 2")
    X_raw, y = as_arrays(samples)
    split_seed = seed if split_seed is None else split_seed
    folds = kfold_split(len(samples), n_folds, split_seed)
    data_hash = dataset_hash(samples)
    results: list[FoldResult] = []
    for k in range(n_folds):
        tr_idx, te_idx = folds.train_indices(k), folds.test_indices(k)
        scaler = fit_scaler(X_raw[tr_idx])
        X_tr, X_te = transform(X_raw[tr_idx], scaler), transform(X_raw[te_idx], scaler)
        ncfg = replace(net_cfg, seed=derive_seed(seed, "init", k))
        tcfg = train_cfg.with_seed(derive_seed(seed, "shuffle", k))
        best, hist = train(init_network(ncfg), (X_tr, y[tr_idx]), (X_te, y[te_idx]), tcfg,
                           backend=backend)
        model = Model(
            best,
            scaler,
            X_raw[tr_idx],
            {
                "train_config": tcfg.to_dict(),
                "network_config": ncfg.to_dict(),
                "dataset_hash": data_hash,
                "fold": k,
                "n_folds": n_folds,
                "cv_seed": seed,
                "split_seed": split_seed,
                "best_epoch": hist.best_epoch,
                "converged": hist.converged,
                "tool_version": __version__,
            },
        )
        try:
            pred, _ = predict(model, X_raw[te_idx], backend=backend)
        except ArithmeticError:
            pred = np.full(te_idx.size, np.nan)
            hist.converged = False
            hist.failure = hist.failure or "non-finite prediction"
        r2 = _safe_r2(y[te_idx], pred) if hist.converged else None
        results.append(
            FoldResult(k, r2, hist.best_epoch, hist.converged, y[te_idx], pred, te_idx,
                       hist.failure, hist.wall_time,
                       model if keep_models else None, hist if keep_models else None)
        )

    conv = [f for f in results if f.converged]
    scored = [f.r_squared for f in conv if f.r_squared is not None]
    mean_r2 = float(np.mean(scored)) if scored else None
    pooled = in_sample = None
    flag = None
    if conv:
        pooled = _safe_r2(np.concatenate([f.y_true for f in conv]),
                          np.concatenate([f.y_pred for f in conv]))
        if keep_models:
            vals = []
            for f in conv:
                p, _ = predict(f.model, X_raw, backend=backend)
                vals.append(_safe_r2(y, p))
            vals = [v for v in vals if v is not None]
            in_sample = float(np.mean(vals)) if vals else None
    else:
        flag = "no converged folds"
    return CvReport(
        results, mean_r2, pooled, in_sample, len(conv), seed, flag,
        {
            "network_config": {k: v for k, v in net_cfg.to_dict().items() if k != "seed"},
            "train_config": {k: v for k, v in train_cfg.to_dict().items() if k != "seed"},
            "dataset_hash": data_hash,
            "n_samples": len(samples),
            "tool_version": __version__,
        },
    )


def _fmt(x) -> str:
    return "" if x is None else repr(float(x))


def write_cv_outputs(report: CvReport, out_dir) -> None:
    """Write ``cv_report.json``, ``fold_r2.csv`` and ``true_vs_pred.csv``.

    ``fold_r2.csv`` holds no timing data so identical runs give identical
    bytes.
    """
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "cv_report.json"), "w", encoding="utf-8") as fh:
        json.dump(report.to_dict(), fh, indent=2, allow_nan=True)
        fh.write("\n")
    with open(os.path.join(out_dir, "fold_r2.csv"), "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["fold", "r_squared", "best_epoch", "converged"])
        for rec in report.fold_r2_records():
            w.writerow([rec["fold"], _fmt(rec["r_squared"]), rec["best_epoch"],
                        int(rec["converged"])])
    with open(os.path.join(out_dir, "true_vs_pred.csv"), "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["fold", "true_nf", "pred_nf"])
        for f in report.folds:
            for t, p in zip(f.y_true, f.y_pred):
                w.writerow([f.fold_index, repr(float(t)), repr(float(p))])


def summarize(report: CvReport) -> str:
    def show(x):
        return "n/a" if x is None or (isinstance(x, float) and math.isnan(x)) else f"{x:.4f}"

    lines = [f"fold {f.fold_index}: R2={show(f.r_squared)} best_epoch={f.best_epoch}"
             f"{'' if f.converged else ' NOT CONVERGED'}" for f in report.folds]
    lines.append(f"mean R2 over {report.n_converged}/{len(report.folds)} converged folds: "
                 f"{show(report.mean_r_squared)}")
    lines.append(f"pooled out-of-fold R2: {show(report.pooled_r_squared)}")
    return "\n".join(lines)
