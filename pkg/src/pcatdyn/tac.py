"""Time-attenuation curves, landmark scans and enhancement analytics."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .roi import EXTENDED_FAT_WINDOW, FAT_WINDOW
from .volgrid import DynamicSeries, LabelMask, check_geometry, label_name

FIXED = "fixed"
PER_SCAN = "per-scan"
POLICIES = (FIXED, PER_SCAN)


@dataclass(frozen=True, eq=False)
class TimeAttenuationCurve:
    times_s: np.ndarray
    mean_hu: np.ndarray
    std_hu: np.ndarray
    voxel_count: np.ndarray
    label: int
    policy: str = FIXED

    def __post_init__(self):
        n = len(self.times_s)
        if not (len(self.mean_hu) == len(self.std_hu) == len(self.voxel_count) == n):
            raise ValueError("TAC arrays must have equal length")
        if self.policy not in POLICIES:
            raise ValueError(f"unknown membership policy {self.policy!r}")
        if self.policy == FIXED and np.any(np.asarray(self.voxel_count) <= 0):
            raise ValueError("fixed-membership TAC needs a nonempty region at every scan")

    def __len__(self):
        return len(self.times_s)

    @property
    def name(self) -> str:
        return label_name(self.label)

    def delta(self) -> np.ndarray:
        """HU change relative to the first scan."""
        return self.mean_hu - self.mean_hu[0]


@dataclass(frozen=True)
class PeakInfo:
    p1_index: int
    pa_index: int
    ppcat_index: int
    p1_time: float
    pa_time: float
    ppcat_time: float


@dataclass(frozen=True, eq=False)
class EnhancementSummary:
    label: int
    delta_hu: np.ndarray  # per scan, relative to P1
    offset_delta_hu: dict  # k -> mean(Pa + k) - mean(Pa)
    delta_at_ppcat: float
    peak_delta_hu: float
    time_to_peak_s: float


@dataclass(frozen=True, eq=False)
class VolumeCurve:
    times_s: np.ndarray
    windows: tuple
    volume_cm3: np.ndarray  # (n_windows, n_scans)
    percent_change: np.ndarray  # (n_windows, n_scans)
    counts: np.ndarray

    def peak_loss_percent(self) -> np.ndarray:
        """Largest volume loss (positive percent) per window."""
        return 0.0 - np.min(self.percent_change, axis=1)


@dataclass(frozen=True, eq=False)
class ProxDistComparison:
    proximal: EnhancementSummary
    distal: EnhancementSummary
    peak_delta_difference: float  # distal - proximal
    time_to_peak_difference: float  # distal - proximal


def _stats(values: np.ndarray) -> tuple[float, float]:
    v = values.astype(np.float64)
    m = float(np.mean(v))
    return m, float(np.sqrt(np.mean((v - m) ** 2)))


def compute_tac(
    s: DynamicSeries,
    region: LabelMask,
    code: int,
    policy: str = FIXED,
    window: tuple[float, float] | None = None,
    reference: int = 0,
) -> TimeAttenuationCurve:
    """Mean/std HU of a region at every scan.

    ``fixed`` uses one voxel set, optionally fat-gated at scan ``reference``;
    ``per-scan`` re-applies ``window`` at each scan.
    """
    check_geometry(s.geometry, region.geometry)
    if policy not in POLICIES:
        raise ValueError(f"unknown membership policy {policy!r}")
    base = region.labels == code
    nt = len(s)
    mean = np.empty(nt)
    std = np.empty(nt)
    count = np.empty(nt, np.int64)
    if policy == FIXED:
        sel = base
        if window is not None:
            ref = s.data[reference]
            sel = base & (ref >= window[0]) & (ref <= window[1])
        if not sel.any():
            raise ValueError(f"empty region: label {label_name(code)} has no voxels")
        for k in range(nt):
            mean[k], std[k] = _stats(s.data[k][sel])
            count[k] = int(np.count_nonzero(sel))
    else:
        for k in range(nt):
            sel = base
            if window is not None:
                sel = base & (s.data[k] >= window[0]) & (s.data[k] <= window[1])
            if not sel.any():
                raise ValueError(f"empty region: label {label_name(code)} has no voxels at scan {k}")
            mean[k], std[k] = _stats(s.data[k][sel])
            count[k] = int(np.count_nonzero(sel))
    return TimeAttenuationCurve(s.times_s.copy(), mean, std, count, code, policy)


def find_peaks(aorta_tac: TimeAttenuationCurve, pcat_tac: TimeAttenuationCurve) -> PeakInfo:
    """P1 is the first scan; Pa and Ppcat are argmax of the mean curves (earliest on ties)."""
    if len(aorta_tac) == 0 or len(pcat_tac) == 0:
        raise ValueError("curves must be nonempty")
    pa = int(np.argmax(aorta_tac.mean_hu))
    pp = int(np.argmax(pcat_tac.mean_hu))
    t = pcat_tac.times_s
    return PeakInfo(0, pa, pp, float(t[0]), float(aorta_tac.times_s[pa]), float(t[pp]))


def enhancement_summary(tac: TimeAttenuationCurve, peaks: PeakInfo, offsets: Sequence[int] = (1,)) -> EnhancementSummary:
    n = len(tac)
    delta = tac.mean_hu - tac.mean_hu[0]
    delta[0] = 0.0
    off = {}
    for k in offsets:
        for kk in (-abs(k), abs(k)):
            idx = peaks.pa_index + kk
            if not 0 <= idx < n:
                raise ValueError(f"offset Pa{kk:+d} (scan {idx}) is outside the series")
            off[kk] = float(tac.mean_hu[idx] - tac.mean_hu[peaks.pa_index])
    ipk = int(np.argmax(tac.mean_hu))
    return EnhancementSummary(
        label=tac.label,
        delta_hu=delta,
        offset_delta_hu=off,
        delta_at_ppcat=float(delta[peaks.ppcat_index]),
        peak_delta_hu=float(delta[ipk]),
        time_to_peak_s=float(tac.times_s[ipk] - tac.times_s[0]),
    )


def apparent_volume_curve(
    s: DynamicSeries,
    disks: LabelMask,
    windows: Sequence[tuple[float, float]] = (FAT_WINDOW, EXTENDED_FAT_WINDOW),
) -> VolumeCurve:
    """Volume of disk voxels inside each HU window, per scan (always per-scan membership)."""
    check_geometry(s.geometry, disks.geometry)
    sel = disks.any()
    if not sel.any():
        raise ValueError("disk mask is empty")
    vals = s.data[:, sel]
    windows = tuple(tuple(float(x) for x in w) for w in windows)
    counts = np.array([[np.count_nonzero((vals[k] >= lo) & (vals[k] <= hi)) for k in range(len(s))] for lo, hi in windows])
    if np.any(counts[:, 0] == 0):
        raise ValueError("zero voxels inside a window at P1")
    vol = counts * s.geometry.voxel_volume_mm3 / 1000.0
    pct = 100.0 * (counts - counts[:, :1]) / counts[:, :1]
    return VolumeCurve(s.times_s.copy(), windows, vol, pct, counts)


def compare_prox_dist(
    s: DynamicSeries,
    prox_mask: LabelMask,
    dist_mask: LabelMask,
    prox_code: int,
    dist_code: int,
    peaks: PeakInfo,
    policy: str = FIXED,
    window: tuple[float, float] | None = None,
    reference: int = 0,
) -> ProxDistComparison:
    if not (prox_mask.labels == prox_code).any() or not (dist_mask.labels == dist_code).any():
        raise ValueError("empty mask: proximal and distal regions must both be nonempty")
    tp = compute_tac(s, prox_mask, prox_code, policy, window, reference)
    td = compute_tac(s, dist_mask, dist_code, policy, window, reference)
    sp = enhancement_summary(tp, peaks, offsets=())
    sd = enhancement_summary(td, peaks, offsets=())
    return ProxDistComparison(
        sp,
        sd,
        sd.peak_delta_hu - sp.peak_delta_hu,
        sd.time_to_peak_s - sp.time_to_peak_s,
    )


def _fmt(x) -> str:
    return repr(float(x))


def write_tac_csv(tacs: Sequence[TimeAttenuationCurve], path) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["region", "policy", "scan", "time_s", "mean_hu", "std_hu", "n", "delta_hu"])
        for t in tacs:
            d = t.delta()
            for k in range(len(t)):
                w.writerow([t.name, t.policy, k, _fmt(t.times_s[k]), _fmt(t.mean_hu[k]), _fmt(t.std_hu[k]), int(t.voxel_count[k]), _fmt(d[k])])
    return path


def write_volume_csv(vc: VolumeCurve, path) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["window_lo", "window_hi", "scan", "time_s", "count", "volume_cm3", "percent_change"])
        for i, (lo, hi) in enumerate(vc.windows):
            for k in range(len(vc.times_s)):
                w.writerow([_fmt(lo), _fmt(hi), k, _fmt(vc.times_s[k]), int(vc.counts[i, k]), _fmt(vc.volume_cm3[i, k]), _fmt(vc.percent_change[i, k])])
    return path
