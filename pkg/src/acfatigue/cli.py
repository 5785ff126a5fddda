"""Command-line entry point: ``acfatigue {prepare,train,cv,grid,pdp,predict}``.

Exit status: 0 success, 2 configuration error, 3 data error,
4 training did not converge.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from collections import Counter
from dataclasses import replace

import numpy as np

from . import __version__, _kernels
from .analysis import partial_dependence, qualitative_trends, write_surface
from .checkpoint import Model, load_model, save_model
from .config import RunConfig, load_config
from .dataset import (
    as_arrays,
    dataset_hash,
    filter_outliers,
    fit_scaler,
    kfold_split,
    load_csv,
    transform,
    write_csv,
)
from .errors import ConfigError, DataError
from .evaluation import cross_validate, predict, summarize, write_cv_outputs
from .network import init_network
from .search import AXES, run_grid, slice_report, write_slice_csv
from .seeding import derive_seed
from .training import train

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NONCONVERGED = 0, 2, 3, 4

log = logging.getLogger("acfatigue")


def _provenance(cfg: RunConfig, command: str, samples=None, **extra) -> dict:
    prov = {
        "command": command,
        "tool_version": __version__,
        "backend": _kernels.backend_name,
        "seed": cfg.seed,
        "dataset": cfg.dataset,
    }
    if samples is not None:
        prov["dataset_hash"] = dataset_hash(samples)
        prov["n_samples"] = len(samples)
    prov.update(extra)
    return prov


def _start(cfg: RunConfig) -> str:
    out = cfg.out
    os.makedirs(out, exist_ok=True)
    cfg.dump(os.path.join(out, "resolved_config.ini"))
    return out


def _write_json(path, obj) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, allow_nan=True)
        fh.write("\n")


def _filtered(cfg: RunConfig):
    if not cfg.dataset:
        raise ConfigError("no dataset path: set [data] path or pass --data")
    retained, _ = filter_outliers(load_csv(cfg.dataset), cfg.filter)
    return retained


def cmd_prepare(cfg: RunConfig, args) -> int:
    if not cfg.dataset:
        raise ConfigError("no dataset path: set [data] path or pass --data")
    samples = load_csv(cfg.dataset)
    retained, rejected = filter_outliers(samples, cfg.filter)
    out = _start(cfg)
    write_csv(os.path.join(out, "retained.csv"), retained)
    write_csv(os.path.join(out, "rejected.csv"), [s for s, _ in rejected],
              [r for _, r in rejected])
    summary = {
        "n_input": len(samples),
        "n_retained": len(retained),
        "n_rejected": len(rejected),
        "rejected_by_reason": dict(sorted(Counter(r for _, r in rejected).items())),
        "provenance": _provenance(cfg, "prepare", samples),
    }
    _write_json(os.path.join(out, "filter_summary.json"), summary)
    print(f"retained {len(retained)} of {len(samples)} samples -> {out}")
    return EXIT_OK


def cmd_train(cfg: RunConfig, args) -> int:
    samples = _filtered(cfg)
    X_raw, y = as_arrays(samples)
    k = cfg.train_fold
    folds = kfold_split(len(samples), cfg.folds, cfg.seed)
    tr, va = folds.train_indices(k), folds.test_indices(k)
    scaler = fit_scaler(X_raw[tr])
    net_cfg = replace(cfg.network, seed=derive_seed(cfg.seed, "init", k))
    train_cfg = cfg.train.with_seed(derive_seed(cfg.seed, "shuffle", k))
    out = _start(cfg)
    best, hist = train(init_network(net_cfg), (transform(X_raw[tr], scaler), y[tr]),
                       (transform(X_raw[va], scaler), y[va]), train_cfg)
    prov = _provenance(
        cfg, "train", samples,
        network_config=net_cfg.to_dict(),
        train_config=train_cfg.to_dict(),
        validation_fold=k,
        n_folds=cfg.folds,
        best_epoch=hist.best_epoch,
        converged=hist.converged,
        failure=hist.failure,
        epochs_run=len(hist),
    )
    save_model(os.path.join(out, "model.json"), Model(best, scaler, X_raw[tr], prov))
    hist.write_csv(os.path.join(out, "history.csv"))
    print(f"best epoch {hist.best_epoch}/{len(hist)}; converged={hist.converged} -> {out}")
    return EXIT_OK if hist.converged else EXIT_NONCONVERGED


def cmd_cv(cfg: RunConfig, args) -> int:
    samples = _filtered(cfg)
    out = _start(cfg)
    report = cross_validate(samples, cfg.network, cfg.train, cfg.folds, cfg.seed)
    report.metadata["provenance"] = _provenance(cfg, "cv", samples)
    write_cv_outputs(report, out)
    if args.save_models:
        for f in report.folds:
            save_model(os.path.join(out, f"model_fold{f.fold_index}.json"), f.model)
    print(summarize(report))
    return EXIT_OK if report.n_converged else EXIT_NONCONVERGED


def _parse_slice(text: str) -> tuple[str, dict]:
    parts = dict(p.split("=", 1) for p in text.split())
    vary = parts.pop("vary", None)
    if vary is None:
        raise ConfigError(f"slice {text!r} lacks vary=<axis>")
    return vary, parts


def cmd_grid(cfg: RunConfig, args) -> int:
    samples = _filtered(cfg)
    out = _start(cfg)
    _write_json(os.path.join(out, "grid_meta.json"), _provenance(
        cfg, "grid", samples, epochs_per_run=cfg.grid.epochs,
        reduced_epoch_budget=cfg.grid.epochs < 300_000, n_configurations=cfg.grid.size()))

    def progress(rec):
        log.info("%s %s mean_r2=%s", rec["config_hash"], rec["axes"], rec.get("mean_r2"))

    result = run_grid(samples, cfg.grid, os.path.join(out, "grid_results.jsonl"),
                      workers=cfg.workers, progress=progress)
    result.write_ranking(os.path.join(out, "ranking.csv"))
    for text in args.slice or []:
        vary, fix = _parse_slice(text)
        rows = slice_report(result, vary, fix)
        name = "_".join([f"slice_{vary}"] + [f"{k}-{fix[k]}" for k in AXES if k in fix])
        write_slice_csv(os.path.join(out, f"{name}.csv"), rows)
    if result.ranking:
        top = result.ranking[0]
        print(f"best: {top['axes']} mean R2 = {top['mean_r2']:.4f}")
    print(f"{len(result.ranking)} of {len(result.records)} configurations ranked -> {out}")
    return EXIT_OK


def cmd_pdp(cfg: RunConfig, args) -> int:
    if not args.model:
        raise ConfigError("pdp needs --model")
    model = load_model(args.model)
    out = _start(cfg)
    for strain in cfg.pdp_strains:
        surf = partial_dependence(model, strain, cfg.pdp_resolution, cfg.pdp_radius)
        paths = write_surface(surf, out)
        try:
            tr = qualitative_trends(surf)
            print(f"strain {strain:g}: spearman(binder)={tr['spearman_binder']:+.3f} "
                  f"spearman(voids)={tr['spearman_voids']:+.3f} -> {paths['surface']}")
        except ValueError as exc:
            print(f"strain {strain:g}: {exc} -> {paths['surface']}")
    _write_json(os.path.join(out, "pdp_provenance.json"),
                _provenance(cfg, "pdp", model=os.path.abspath(args.model),
                            model_provenance=model.provenance))
    return EXIT_OK


def cmd_predict(cfg: RunConfig, args) -> int:
    if not args.model or not args.input:
        raise ConfigError("predict needs --model and --input")
    model = load_model(args.model)
    cols = ("binder_content", "air_voids", "strain_microstrain")
    rows = []
    with open(args.input, newline="", encoding="utf-8-sig") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not set(cols) <= set(reader.fieldnames):
            raise DataError(f"{args.input}: header must contain {list(cols)}")
        for i, rec in enumerate(reader, start=1):
            try:
                rows.append([float(rec[c]) for c in cols])
            except (TypeError, ValueError):
                raise DataError(f"{args.input}: bad number at row {i}") from None
    X = np.array(rows, dtype=np.float64).reshape(-1, 3)
    pred, extrap = predict(model, X)
    out = args.output or os.path.join(cfg.out, "predictions.csv")
    os.makedirs(os.path.dirname(os.path.abspath(out)), exist_ok=True)
    with open(out, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([*cols, "pred_nf", "extrapolated"])
        for x, p, e in zip(X, pred, extrap):
            w.writerow([*(repr(float(v)) for v in x), repr(float(p)), int(e)])
    print(f"{len(X)} predictions ({int(extrap.sum())} extrapolated) -> {out}")
    return EXIT_OK


COMMANDS = {
    "prepare": cmd_prepare,
    "train": cmd_train,
    "cv": cmd_cv,
    "grid": cmd_grid,
    "pdp": cmd_pdp,
    "predict": cmd_predict,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="INI run configuration")
    common.add_argument("--seed", type=int, help="root seed (overrides [run] seed)")
    common.add_argument("--out", help="output directory (overrides [run] out)")
    common.add_argument("--workers", type=int, help="parallel grid workers")
    common.add_argument("--data", help="dataset CSV (overrides [data] path)")
    common.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                        help="override any config value; repeatable")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(
        prog="acfatigue", description="Fatigue-life regression for asphalt concrete mixtures.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("prepare", parents=[common], help="filter the dataset")
    sub.add_parser("train", parents=[common], help="train one configuration on one fold")
    p = sub.add_parser("cv", parents=[common], help="k-fold cross-validation")
    p.add_argument("--save-models", action="store_true", help="write one model file per fold")
    p = sub.add_parser("grid", parents=[common], help="hyperparameter grid search")
    p.add_argument("--slice", action="append",
                   help='e.g. "vary=n_hidden loss=mse optimizer=rmsprop activation=relu neurons=100"')
    p = sub.add_parser("pdp", parents=[common], help="partial-dependence surfaces")
    p.add_argument("--model", help="model file")
    p = sub.add_parser("predict", parents=[common], help="predict fatigue life")
    p.add_argument("--model", help="model file")
    p.add_argument("--input", help="CSV with binder_content,air_voids,strain_microstrain")
    p.add_argument("--output", help="output CSV (default <out>/predictions.csv)")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        overrides = {}
        for item in args.set:
            key, sep, value = item.partition("=")
            if not sep:
                raise ConfigError(f"--set expects SECTION.KEY=VALUE, got {item!r}")
            overrides[key.strip()] = value.strip()
        for flag, key in (("seed", "run.seed"), ("out", "run.out"),
                          ("workers", "run.workers"), ("data", "data.path")):
            if getattr(args, flag) is not None:
                overrides[key] = str(getattr(args, flag))
        cfg = load_config(args.config, overrides)
        return COMMANDS[args.command](cfg, args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
