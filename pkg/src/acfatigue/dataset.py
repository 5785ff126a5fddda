"""Fatigue-test records: CSV ingestion, outlier filtering, scaling and folds."""

from __future__ import annotations

import csv
import hashlib
import math
import os
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import DataError
from .seeding import make_rng

CSV_COLUMNS = (
    "binder_content",
    "air_voids",
    "strain_microstrain",
    "temperature_c",
    "frequency_hz",
    "fatigue_life_cycles",
    "source",
)
FEATURES = ("binder_content", "air_voids", "strain")
Z_VARIABLES = ("binder_content", "air_voids", "strain", "fatigue_life")

MODELING_TEMPERATURES_C = (20.0, 21.1)
MODELING_FREQUENCY_HZ = 10.0

# |z| values within this relative distance of the threshold count as equal to it
_Z_TIE_RTOL = 1e-12


@dataclass(frozen=True)
class Sample:
    binder_content: float
    air_voids: float
    strain: float
    temperature: float
    frequency: float
    fatigue_life: float
    source_id: str = ""

    def features(self) -> tuple[float, float, float]:
        return (self.binder_content, self.air_voids, self.strain)


@dataclass(frozen=True)
class FilterConfig:
    """Settings of the two-stage outlier filter.

    ``bounds_mode="fixed"`` applies ``nf_lower_bound``/``nf_upper_bound`` as
    given.  ``bounds_mode="percentile"`` replaces them with the
    ``lower_percentile``/``upper_percentile`` percentiles of the fatigue life
    of the input.  ``iterate_z`` repeats the Z-score stage until no sample is
    removed.
    """

    nf_lower_bound: float = 2e3
    nf_upper_bound: float = 2e6
    z_threshold: float = 3.0
    bounds_mode: str = "fixed"
    lower_percentile: float = 3.0
    upper_percentile: float = 90.0
    iterate_z: bool = True
    check_conditions: bool = True

    def __post_init__(self):
        if not (self.nf_lower_bound >= 0 and self.nf_lower_bound < self.nf_upper_bound):
            raise DataError("filter bounds must satisfy 0 <= lower < upper")
        if not self.z_threshold > 0:
            raise DataError("z_threshold must be positive")
        if self.bounds_mode not in ("fixed", "percentile"):
            raise DataError(f"unknown bounds_mode {self.bounds_mode!r}")
        if not 0 <= self.lower_percentile < self.upper_percentile <= 100:
            raise DataError("percentiles must satisfy 0 <= lower < upper <= 100")


@dataclass(frozen=True)
class ScalerParams:
    mins: tuple[float, float, float]
    maxs: tuple[float, float, float]

    def __post_init__(self):
        if any(hi < lo for lo, hi in zip(self.mins, self.maxs)):
            raise DataError("scaler max must be >= min for every feature")

    def to_dict(self) -> dict:
        return {"features": list(FEATURES), "min": list(self.mins), "max": list(self.maxs)}

    @classmethod
    def from_dict(cls, d: dict) -> "ScalerParams":
        return cls(tuple(float(v) for v in d["min"]), tuple(float(v) for v in d["max"]))


@dataclass(frozen=True)
class FoldAssignment:
    n_folds: int
    seed: int
    assignment: np.ndarray = field(repr=False)

    def test_indices(self, fold: int) -> np.ndarray:
        return np.flatnonzero(self.assignment == fold)

    def train_indices(self, fold: int) -> np.ndarray:
        return np.flatnonzero(self.assignment != fold)

    def sizes(self) -> list[int]:
        return np.bincount(self.assignment, minlength=self.n_folds).tolist()


# ---------------------------------------------------------------------------
# ingestion

def _parse_temperature(text: str) -> float:
    t = text.strip()
    low = t.lower()
    for suffix in ("°f", "degf", "f"):
        if low.endswith(suffix):
            fahrenheit = float(t[: len(t) - len(suffix)])
            return round((fahrenheit - 32.0) * 5.0 / 9.0, 1)
    for suffix in ("°c", "degc", "c"):
        if low.endswith(suffix):
            return float(t[: len(t) - len(suffix)])
    return float(t)


def _check_sample(s: Sample, row: int) -> None:
    if not (0 < s.binder_content < 100):
        raise DataError(f"binder_content out of range at row {row}")
    if not (0 <= s.air_voids < 100):
        raise DataError(f"air_voids out of range at row {row}")
    if not s.strain > 0:
        raise DataError(f"non-positive strain at row {row}")
    if not s.fatigue_life > 0:
        raise DataError(f"non-positive fatigue life at row {row}")


def load_csv(path) -> list[Sample]:
    """Read samples from a dataset CSV.

    Row numbers in error messages count data rows from 1 (the header is not
    counted).  Floats are parsed with :func:`float`, which is independent of
    the process locale.
    """
    if not os.path.exists(path):
        raise DataError(f"dataset file not found: {path}")
    with open(path, newline="", encoding="utf-8-sig") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError(f"{path}: empty file, expected header") from None
        if tuple(header) != CSV_COLUMNS:
            raise DataError(f"{path}: header {header} does not match {list(CSV_COLUMNS)}")
        samples = []
        for row_no, row in enumerate(reader, start=1):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(CSV_COLUMNS):
                raise DataError(
                    f"{path}: row {row_no} has {len(row)} columns, expected {len(CSV_COLUMNS)}"
                )
            values = []
            for col, cell in zip(CSV_COLUMNS[:6], row[:6]):
                try:
                    v = _parse_temperature(cell) if col == "temperature_c" else float(cell)
                except ValueError:
                    raise DataError(
                        f"{path}: cannot parse {cell!r} at row {row_no}, column {col}"
                    ) from None
                if not math.isfinite(v):
                    raise DataError(f"{path}: non-finite value at row {row_no}, column {col}")
                values.append(v)
            s = Sample(*values, source_id=row[6].strip())
            _check_sample(s, row_no)
            samples.append(s)
    return samples


def write_csv(path, samples: Iterable[Sample], reasons: Sequence[str] | None = None) -> None:
    """Write samples in the input schema; an extra ``reason`` column if given."""
    header = list(CSV_COLUMNS) + (["reason"] if reasons is not None else [])
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for i, s in enumerate(samples):
            row = [repr(s.binder_content), repr(s.air_voids), repr(s.strain),
                   repr(s.temperature), repr(s.frequency), repr(s.fatigue_life), s.source_id]
            if reasons is not None:
                row.append(reasons[i])
            w.writerow(row)


def dataset_hash(samples: Sequence[Sample]) -> str:
    """SHA-256 over the canonical text form of the samples."""
    h = hashlib.sha256()
    for s in samples:
        h.update(
            f"{s.binder_content!r},{s.air_voids!r},{s.strain!r},{s.temperature!r},"
            f"{s.frequency!r},{s.fatigue_life!r},{s.source_id}\n".encode("utf-8")
        )
    return h.hexdigest()


def as_arrays(samples: Sequence[Sample]) -> tuple[np.ndarray, np.ndarray]:
    """Raw feature matrix (binder, voids, strain) and target vector."""
    X = np.array([s.features() for s in samples], dtype=np.float64).reshape(-1, 3)
    y = np.array([s.fatigue_life for s in samples], dtype=np.float64)
    return X, y


# ---------------------------------------------------------------------------
# filtering

def _zscores(values: np.ndarray) -> np.ndarray | None:
    std = values.std()  # population (ddof=0)
    if std == 0 or not np.isfinite(std):
        return None
    return np.abs(values - values.mean()) / std


def filter_outliers(samples: Sequence[Sample], cfg: FilterConfig = FilterConfig()):
    """Remove off-condition samples, fatigue-life outliers and Z-score outliers.

    Returns ``(retained, rejected)`` where ``rejected`` is a list of
    ``(sample, reason)`` pairs.  Retained samples keep their input order.
    """
    if not samples:
        raise DataError("no samples to filter")
    rejected: list[tuple[Sample, str]] = []
    survivors: list[Sample] = []

    for s in samples:
        if cfg.check_conditions:
            if not any(math.isclose(s.temperature, t, abs_tol=1e-9) for t in MODELING_TEMPERATURES_C):
                rejected.append((s, "conditions: temperature"))
                continue
            if not math.isclose(s.frequency, MODELING_FREQUENCY_HZ, abs_tol=1e-9):
                rejected.append((s, "conditions: frequency"))
                continue
        survivors.append(s)

    lower, upper = cfg.nf_lower_bound, cfg.nf_upper_bound
    if cfg.bounds_mode == "percentile" and survivors:
        nf = np.array([s.fatigue_life for s in survivors])
        lower, upper = np.percentile(nf, [cfg.lower_percentile, cfg.upper_percentile])

    stage1 = []
    for s in survivors:
        if s.fatigue_life < lower:
            rejected.append((s, "bounds: fatigue_life below lower bound"))
        elif s.fatigue_life > upper:
            rejected.append((s, "bounds: fatigue_life above upper bound"))
        else:
            stage1.append(s)

    current = stage1
    while current:
        columns = {
            "binder_content": np.array([s.binder_content for s in current]),
            "air_voids": np.array([s.air_voids for s in current]),
            "strain": np.array([s.strain for s in current]),
            "fatigue_life": np.array([s.fatigue_life for s in current]),
        }
        limit = cfg.z_threshold * (1 + _Z_TIE_RTOL)
        reason_of: dict[int, str] = {}
        for var in Z_VARIABLES:
            z = _zscores(columns[var])
            if z is None:
                continue
            for i in np.flatnonzero(z > limit):
                reason_of.setdefault(int(i), f"zscore: {var}")
        if not reason_of:
            break
        rejected.extend((current[i], r) for i, r in sorted(reason_of.items()))
        current = [s for i, s in enumerate(current) if i not in reason_of]
        if not cfg.iterate_z:
            break

    if not current:
        raise DataError("empty dataset after filtering")
    return current, rejected


# ---------------------------------------------------------------------------
# scaling and folds

def fit_scaler(train: Sequence[Sample] | np.ndarray) -> ScalerParams:
    X = train if isinstance(train, np.ndarray) else as_arrays(train)[0]
    if len(X) == 0:
        raise DataError("cannot fit scaler on an empty training set")
    return ScalerParams(tuple(X.min(axis=0).tolist()), tuple(X.max(axis=0).tolist()))


def transform(samples: Sequence[Sample] | np.ndarray, params: ScalerParams) -> np.ndarray:
    """Min-max scale the three model inputs; values are not clipped."""
    X = samples if isinstance(samples, np.ndarray) else as_arrays(samples)[0]
    X = np.asarray(X, dtype=np.float64).reshape(-1, 3)
    lo = np.array(params.mins)
    span = np.array(params.maxs) - lo
    safe = np.where(span > 0, span, 1.0)
    return np.where(span > 0, (X - lo) / safe, 0.0)


def inverse_transform(Xs: np.ndarray, params: ScalerParams) -> np.ndarray:
    lo = np.array(params.mins)
    return np.asarray(Xs) * (np.array(params.maxs) - lo) + lo


def kfold_split(n_samples: int, n_folds: int, seed: int) -> FoldAssignment:
    """Shuffle ``range(n_samples)`` and cut it into contiguous folds.

    The first ``n_samples % n_folds`` folds receive one extra sample.
    """
    if n_folds < 2:
        raise DataError("n_folds must be at least 2")
    if n_folds > n_samples:
        raise DataError(f"n_folds={n_folds} exceeds n_samples={n_samples}")
    order = make_rng(seed).permutation(n_samples)
    base, extra = divmod(n_samples, n_folds)
    assignment = np.empty(n_samples, dtype=np.int64)
    start = 0
    for k in range(n_folds):
        size = base + (1 if k < extra else 0)
        assignment[order[start:start + size]] = k
        start += size
    return FoldAssignment(n_folds, seed, assignment)
