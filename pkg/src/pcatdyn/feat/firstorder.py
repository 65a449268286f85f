"""Discretization and hand-crafted histogram/area features."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..volgrid import LabelMask, VolumeGrid, check_geometry, label_name

NBINS = 16
HU_RANGES = ((-190.0, -110.0, False), (-110.0, -70.0, False), (-70.0, -30.0, True))  # (lo, hi, hi inclusive)

HANDCRAFTED_NAMES = (
    "mean",
    "std",
    "skewness",
    "kurtosis",
    "entropy",
    "fraction_-190_-110",
    "fraction_-110_-70",
    "fraction_-70_-30",
    "voxel_count",
    "volume_cm3",
    "axial_area_mean",
    "axial_area_std",
    "axial_area_max",
)


@dataclass(frozen=True, eq=False)
class DiscretizedRoi:
    values: np.ndarray
    nbins: int
    edges: np.ndarray  # nbins + 1 edges over [min, max]
    bins: np.ndarray  # 1..nbins per voxel
    degenerate: bool  # constant ROI, everything in bin 1


def discretize(values, nbins: int = NBINS) -> DiscretizedRoi:
    """Equal-width bins over [min, max]; the maximum falls in the last bin."""
    v = np.asarray(values, np.float64).ravel()
    if v.size == 0:
        raise ValueError("cannot discretize an empty ROI")
    if nbins < 2:
        raise ValueError("bin count must be >= 2")
    lo, hi = float(v.min()), float(v.max())
    if hi == lo:
        return DiscretizedRoi(v, nbins, np.full(nbins + 1, lo), np.ones(v.size, np.int64), True)
    b = np.floor((v - lo) * nbins / (hi - lo)).astype(np.int64) + 1
    b = np.minimum(b, nbins)
    edges = lo + (hi - lo) * np.arange(nbins + 1) / nbins
    return DiscretizedRoi(v, nbins, edges, b, False)


def moments(values) -> tuple[float, float, float, float]:
    """Mean, population std, skewness m3/m2^1.5 and Pearson kurtosis m4/m2^2 (nan if constant)."""
    v = np.asarray(values, np.float64)
    mu = float(v.mean())
    d = v - mu
    m2 = float(np.mean(d * d))
    if m2 == 0 or v.min() == v.max():
        return mu, 0.0, math.nan, math.nan
    m3 = float(np.mean(d**3))
    m4 = float(np.mean(d**4))
    return mu, math.sqrt(m2), m3 / m2**1.5, m4 / (m2 * m2)


def entropy(d: DiscretizedRoi) -> float:
    p = np.bincount(d.bins, minlength=d.nbins + 1)[1:] / d.bins.size
    p = p[p > 0]
    return float(-np.sum(p * np.log2(p))) + 0.0


def _region(v: VolumeGrid, mask: LabelMask, code: int) -> np.ndarray:
    check_geometry(v.geometry, mask.geometry)
    sel = mask.labels == code
    if not sel.any():
        raise ValueError(f"empty ROI: label {label_name(code)} has no voxels")
    return sel


def handcrafted(v: VolumeGrid, pcat: LabelMask, code: int) -> dict[str, float]:
    """Thirteen histogram and axial-area features; undefined moments are nan."""
    sel = _region(v, pcat, code)
    vals = v.values[sel].astype(np.float64)
    mu, sd, sk, ku = moments(vals)
    out = {"mean": mu, "std": sd, "skewness": sk, "kurtosis": ku, "entropy": entropy(discretize(vals))}
    for (lo, hi, incl), name in zip(HU_RANGES, HANDCRAFTED_NAMES[5:8]):
        inside = (vals >= lo) & ((vals <= hi) if incl else (vals < hi))
        out[name] = float(np.count_nonzero(inside)) / vals.size
    sx, sy, _ = v.geometry.spacing
    out["voxel_count"] = float(vals.size)
    out["volume_cm3"] = vals.size * v.geometry.voxel_volume_mm3 / 1000.0
    per_slice = np.count_nonzero(sel, axis=(1, 2))
    areas = per_slice[per_slice > 0] * sx * sy
    out["axial_area_mean"] = float(areas.mean())
    out["axial_area_std"] = float(areas.std())
    out["axial_area_max"] = float(areas.max())
    return out
