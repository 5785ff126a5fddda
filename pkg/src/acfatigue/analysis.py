"""Partial-dependence surfaces over binder content and air voids.

A surface conditions on one strain level and evaluates the model on a
regular (binder, voids) grid spanning the training data.  Cells farther
than ``radius`` (in min-max scaled units) from every training point are
marked as not covered, i.e. extrapolated.
"""

from __future__ import annotations

import csv
import json
import os
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .checkpoint import as_model
from .errors import DataError
from .evaluation import predict


@dataclass
class PdpSurface:
    strain_level: float
    binder_axis: np.ndarray
    voids_axis: np.ndarray
    predictions: np.ndarray  # [binder index, voids index]
    coverage: np.ndarray
    data_points: np.ndarray = field(repr=False)
    radius: float = 0.1
    model_hash: str = ""

    def rows(self):
        for i, b in enumerate(self.binder_axis):
            for j, v in enumerate(self.voids_axis):
                yield float(b), float(v), float(self.predictions[i, j]), bool(self.coverage[i, j])


def coverage_mask(grid_points, data_points, radius: float) -> np.ndarray:
    """True where a data point lies within ``radius`` (inclusive) of the cell.

    ``grid_points`` has shape (..., 2) and ``data_points`` (m, 2), both in
    scaled units.  The result has shape ``grid_points.shape[:-1]``.
    """
    if not radius > 0:
        raise ValueError("radius must be positive")
    grid = np.asarray(grid_points, dtype=np.float64)
    data = np.asarray(data_points, dtype=np.float64).reshape(-1, 2)
    if data.shape[0] == 0:
        return np.zeros(grid.shape[:-1], dtype=bool)
    flat = grid.reshape(-1, 2)
    d2 = ((flat[:, None, :] - data[None, :, :]) ** 2).sum(axis=-1)
    return (d2.min(axis=1) <= radius * radius).reshape(grid.shape[:-1])


def partial_dependence(model, strain_level: float, resolution: int = 50,
                       radius: float = 0.1, backend=None) -> PdpSurface:
    model = as_model(model)
    if resolution < 1:
        raise ValueError("resolution must be a positive integer")
    lo, hi = model.scaler.mins, model.scaler.maxs
    if not lo[2] <= strain_level <= hi[2]:
        raise DataError(
            f"strain extrapolation refused: {strain_level} outside [{lo[2]}, {hi[2]}]"
        )
    binder = np.linspace(lo[0], hi[0], resolution)
    voids = np.linspace(lo[1], hi[1], resolution)
    B, V = np.meshgrid(binder, voids, indexing="ij")
    inputs = np.column_stack([B.ravel(), V.ravel(), np.full(B.size, float(strain_level))])
    pred, _ = predict(model, inputs, backend=backend)

    def scale(col, vals):
        span = hi[col] - lo[col]
        return (vals - lo[col]) / span if span > 0 else np.zeros_like(vals)

    grid_scaled = np.stack([scale(0, B), scale(1, V)], axis=-1)
    pts = model.training_inputs[:, :2] if model.training_inputs.size else np.empty((0, 2))
    pts_scaled = np.column_stack([scale(0, pts[:, 0]), scale(1, pts[:, 1])])
    cov = coverage_mask(grid_scaled, pts_scaled, radius)
    return PdpSurface(float(strain_level), binder, voids, pred.reshape(B.shape), cov,
                      pts.copy(), radius, model.content_hash())


def _spearman(a, b) -> float:
    if np.ptp(a) == 0 or np.ptp(b) == 0:
        return 0.0  # all-tied ranks carry no ordering
    return float(stats.spearmanr(a, b).statistic)


def qualitative_trends(surface: PdpSurface) -> dict:
    """Rank correlations of the prediction with binder and voids over covered cells."""
    mask = surface.coverage
    if mask.sum() < 3:
        raise ValueError("trend undefined: fewer than 3 covered cells")
    B, V = np.meshgrid(surface.binder_axis, surface.voids_axis, indexing="ij")
    p = surface.predictions[mask]
    b, v = B[mask], V[mask]
    imax, imin = int(np.argmax(p)), int(np.argmin(p))
    return {
        "strain_level": surface.strain_level,
        "n_covered": int(mask.sum()),
        "spearman_binder": _spearman(b, p),
        "spearman_voids": _spearman(v, p),
        "argmax": {"binder": float(b[imax]), "voids": float(v[imax]), "pred_nf": float(p[imax])},
        "argmin": {"binder": float(b[imin]), "voids": float(v[imin]), "pred_nf": float(p[imin])},
    }


def write_surface(surface: PdpSurface, out_dir, stem: str | None = None) -> dict:
    """Write the long-format surface CSV, its JSON header and the data points."""
    os.makedirs(out_dir, exist_ok=True)
    stem = stem or f"pdp_strain_{surface.strain_level:g}"
    paths = {
        "surface": os.path.join(out_dir, f"{stem}.csv"),
        "header": os.path.join(out_dir, f"{stem}.json"),
        "points": os.path.join(out_dir, f"{stem}_points.csv"),
    }
    with open(paths["surface"], "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["binder", "voids", "pred_nf", "covered"])
        for b, v, p, c in surface.rows():
            w.writerow([repr(b), repr(v), repr(p), int(c)])
    with open(paths["points"], "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["binder", "voids"])
        for b, v in surface.data_points:
            w.writerow([repr(float(b)), repr(float(v))])
    header = {
        "strain_level": surface.strain_level,
        "resolution": [len(surface.binder_axis), len(surface.voids_axis)],
        "radius": surface.radius,
        "model_hash": surface.model_hash,
        "n_covered": int(surface.coverage.sum()),
    }
    try:
        header["trends"] = qualitative_trends(surface)
    except ValueError as exc:
        header["trends"] = {"error": str(exc)}
    with open(paths["header"], "w", encoding="utf-8") as fh:
        json.dump(header, fh, indent=2)
        fh.write("\n")
    return paths
