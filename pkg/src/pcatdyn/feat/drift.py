"""Per-scan feature vectors and their percent drift relative to P1."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from ..tac import PeakInfo
from ..volgrid import LabelMask, VolumeGrid
from .firstorder import HANDCRAFTED_NAMES, handcrafted
from .radiomics import RADIOMICS_NAMES, radiomics8

FEATURE_NAMES = HANDCRAFTED_NAMES + RADIOMICS_NAMES
STABLE_PERCENT = 10.0
PLOT_CLIP = 30.0
UNDEFINED_EPS = 1e-9


@dataclass(frozen=True, eq=False)
class FeatureVector:
    names: tuple
    values: np.ndarray  # nan marks undefined
    time_index: int

    def __post_init__(self):
        if tuple(self.names) != FEATURE_NAMES:
            raise ValueError("feature names must be the fixed 21-name set")

    @property
    def undefined(self) -> frozenset:
        return frozenset(n for n, x in zip(self.names, self.values) if not math.isfinite(x))

    def as_dict(self) -> dict[str, float]:
        return dict(zip(self.names, (float(x) for x in self.values)))


def extract(v: VolumeGrid, pcat: LabelMask, code: int, time_index: int = 0) -> FeatureVector:
    f = handcrafted(v, pcat, code)
    f.update(radiomics8(v, pcat, code))
    return FeatureVector(FEATURE_NAMES, np.array([f[n] for n in FEATURE_NAMES], np.float64), time_index)


@dataclass(frozen=True, eq=False)
class FeatureDriftTable:
    names: tuple
    scans: np.ndarray  # scan indices in the table
    percent: np.ndarray  # (n_features, n_scans), nan where undefined
    defined: np.ndarray  # per feature
    max_abs: np.ndarray  # per feature, nan if undefined
    stable: np.ndarray  # per feature, False if undefined

    @property
    def stable_fraction(self) -> float:
        n = int(self.defined.sum())
        return float(self.stable.sum()) / n if n else math.nan

    def stable_names(self) -> list[str]:
        return [n for n, s in zip(self.names, self.stable) if s]


def drift_table(features: Sequence[FeatureVector], peaks: PeakInfo, span: int = 4) -> FeatureDriftTable:
    """Percent change vs P1 for scans Pa-span..Pa+span (clipped to the series)."""
    if len(features) < 2:
        raise ValueError("drift needs features at >= 2 scans")
    by_scan = {f.time_index: f for f in features}
    if peaks.p1_index not in by_scan:
        raise ValueError("features at P1 are required")
    scans = [k for k in range(peaks.pa_index - span, peaks.pa_index + span + 1) if k in by_scan]
    base = by_scan[peaks.p1_index].values
    pct = np.full((len(FEATURE_NAMES), len(scans)), np.nan)
    ok_base = np.isfinite(base) & (np.abs(base) >= UNDEFINED_EPS)
    for j, k in enumerate(scans):
        fk = by_scan[k].values
        with np.errstate(invalid="ignore", divide="ignore"):
            pct[:, j] = np.where(ok_base & np.isfinite(fk), 100.0 * (fk - base) / np.abs(base), np.nan)
    defined = np.all(np.isfinite(pct), axis=1) & ok_base
    max_abs = np.where(defined, np.max(np.abs(np.nan_to_num(pct)), axis=1), np.nan)
    stable = defined & (np.nan_to_num(max_abs, nan=np.inf) < STABLE_PERCENT)
    return FeatureDriftTable(FEATURE_NAMES, np.asarray(scans), pct, defined, max_abs, stable)


def _fmt(x) -> str:
    return repr(float(x)) if math.isfinite(x) else "undefined"


def write_features_csv(features: Sequence[FeatureVector], times, path) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["scan", "time_s", *FEATURE_NAMES])
        for f in features:
            w.writerow([f.time_index, repr(float(times[f.time_index])), *(_fmt(x) for x in f.values)])
    return path


def write_drift_csv(t: FeatureDriftTable, path, clip: float | None = None) -> Path:
    """Drift table; ``clip`` bounds values for the plot-ready copy only."""
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["feature", *(f"scan_{k}" for k in t.scans), "max_abs_percent", "stable"])
        for i, name in enumerate(t.names):
            row = t.percent[i]
            if clip is not None:
                row = np.clip(row, -clip, clip)
            w.writerow([name, *(_fmt(x) for x in row), _fmt(t.max_abs[i]), int(t.stable[i]) if t.defined[i] else "undefined"])
        w.writerow(["stable_fraction", *([""] * len(t.scans)), _fmt(t.stable_fraction), ""])
    return path
