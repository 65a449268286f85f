"""Synthetic dynamic cardiac CT perfusion phantoms with programmed ground truth.

Arterial input is a gamma-variate bolus.  Tissue enhancement follows a
single-compartment uptake model

    c(t) = (mbf * density / 6000) * int_0^t amp_scale * aif(tau - delay) * exp(-k (t - tau)) dtau

with ``k`` the optional washout rate (0 by default, i.e. pure uptake).
With ``k = 0`` the peak slope of ``c`` is exactly
``mbf * density / 6000 * amp_scale * A``, which is what maximum-slope flow
estimation inverts.
"""

from __future__ import annotations

import configparser
import csv
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence, Union

import numpy as np
from scipy.signal import lfilter

from .roi import Centerline
from .volgrid import (
    DynamicSeries,
    Geometry,
    Label,
    LabelMask,
    label_name,
    parse_label,
    write_mask,
    write_series,
)

FINE_DT = 0.1
VASCULAR_LABELS = frozenset({Label.AORTA, Label.LUMEN_LAD, Label.LUMEN_RCA})
DENSITY_MYO = 1.05
DENSITY_FAT = 0.92


@dataclass(frozen=True)
class AifParams:
    amplitude: float
    t0: float
    tp: float
    alpha: float = 3.0

    def __post_init__(self):
        if not self.amplitude > 0:
            raise ValueError("AIF amplitude must be > 0")
        if not self.tp > 0:
            raise ValueError("AIF time-to-peak must be > 0")
        if not self.alpha > 0:
            raise ValueError("AIF alpha must be > 0")
        if not self.t0 >= 0:
            raise ValueError("AIF arrival t0 must be >= 0")

    @property
    def peak_time(self) -> float:
        return self.t0 + self.tp


def gamma_variate(t, p: AifParams):
    """Bolus enhancement above baseline; 0 up to ``t0``, peak ``A`` at ``t0 + tp``."""
    t = np.asarray(t, dtype=np.float64)
    x = np.maximum(t - p.t0, 0.0) / p.tp
    with np.errstate(divide="ignore", invalid="ignore"):
        out = p.amplitude * x**p.alpha * np.exp(p.alpha * (1.0 - x))
    out = np.where(t > p.t0, out, 0.0)
    return out if out.ndim else float(out)


def _fine_grid(t_end: float) -> np.ndarray:
    n = int(math.ceil(round(t_end / FINE_DT, 9))) + 1
    return np.arange(n, dtype=np.float64) / round(1.0 / FINE_DT)


def tissue_curve(mbf, density, aif: AifParams, delay_s=0.0, amp_scale=1.0, times=(), washout_per_s=0.0):
    """Tissue enhancement (HU above baseline) sampled at ``times``.

    Trapezoidal integration on a 0.1 s grid starting at t = 0, linearly
    interpolated to the requested times.
    """
    times = np.asarray(times, dtype=np.float64)
    if times.size == 0:
        return np.zeros(0)
    if np.any(times < 0):
        raise ValueError("times must be >= 0")
    grid = _fine_grid(float(times.max()))
    c = _uptake_on_grid(mbf, density, aif, delay_s, amp_scale, grid, washout_per_s)
    return np.interp(times, grid, c)


def _uptake_on_grid(mbf, density, aif, delay_s, amp_scale, grid, washout_per_s=0.0):
    k1 = mbf * density / 6000.0
    a = amp_scale * gamma_variate(grid - delay_s, aif)
    if k1 == 0:
        return np.zeros_like(grid)
    dt = grid[1] - grid[0] if grid.size > 1 else FINE_DT
    if washout_per_s == 0:
        c = np.empty_like(grid)
        c[0] = 0.0
        np.cumsum((a[1:] + a[:-1]) * (dt / 2), out=c[1:])
        return k1 * c
    # c_i = e c_{i-1} + dt/2 (e a_{i-1} + a_i), e = exp(-k dt)
    e = math.exp(-washout_per_s * dt)
    c = lfilter([dt / 2, e * dt / 2], [1.0, -e], a)
    c = c - (dt / 2) * a[0] * e ** np.arange(grid.size)  # start at c(0) = 0
    return k1 * c


def vascular_curve(aif: AifParams, delay_s=0.0, amp_scale=1.0, times=()):
    return amp_scale * np.asarray(gamma_variate(np.asarray(times, float) - delay_s, aif), float)


# ---------------------------------------------------------------------------
# Geometry primitives
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Box:
    """Axis-aligned box, half-open ``[lo, hi)`` in mm on each axis."""

    lo: tuple[float, float, float]
    hi: tuple[float, float, float]

    def __post_init__(self):
        if any(h <= l for l, h in zip(self.lo, self.hi)):
            raise ValueError(f"box must have hi > lo on every axis, got {self.lo} {self.hi}")

    def rasterize(self, geom: Geometry) -> np.ndarray:
        x, y, z = geom.axis_coords()
        inside = [(c >= l) & (c < h) for c, l, h in zip((x, y, z), self.lo, self.hi)]
        return inside[2][:, None, None] & inside[1][None, :, None] & inside[0][None, None, :]

    def bounds(self):
        return np.asarray(self.lo, float), np.asarray(self.hi, float)


@dataclass(frozen=True)
class Cylinder:
    """Solid cylinder parallel to one coordinate axis."""

    axis: str
    center: tuple[float, float]
    radius: float
    extent: tuple[float, float]

    def __post_init__(self):
        if self.axis not in ("x", "y", "z"):
            raise ValueError("cylinder axis must be x, y or z")
        if not self.radius > 0 or not self.extent[1] > self.extent[0]:
            raise ValueError("cylinder needs radius > 0 and a non-empty extent")

    def as_tube(self) -> "Tube":
        ax = "xyz".index(self.axis)
        others = [i for i in range(3) if i != ax]
        p0 = [0.0, 0.0, 0.0]
        p1 = [0.0, 0.0, 0.0]
        for i, c in zip(others, self.center):
            p0[i] = p1[i] = float(c)
        p0[ax], p1[ax] = self.extent
        return Tube(tuple(p0), tuple(p1), 0.0, self.radius)

    def rasterize(self, geom):
        return self.as_tube().rasterize(geom)

    def bounds(self):
        return self.as_tube().bounds()


@dataclass(frozen=True)
class Tube:
    """Straight tube segment from ``p0`` to ``p1``.

    Membership: axial parameter in ``[0, L)`` and radial distance in
    ``[inner_radius, outer_radius)``.  ``inner_radius = 0`` gives a solid rod.
    """

    p0: tuple[float, float, float]
    p1: tuple[float, float, float]
    inner_radius: float
    outer_radius: float

    def __post_init__(self):
        if not 0 <= self.inner_radius < self.outer_radius:
            raise ValueError("tube needs 0 <= inner_radius < outer_radius")
        if self.length <= 0:
            raise ValueError("tube endpoints must differ")

    @property
    def length(self) -> float:
        return float(np.linalg.norm(np.subtract(self.p1, self.p0)))

    @property
    def direction(self) -> np.ndarray:
        d = np.subtract(self.p1, self.p0).astype(float)
        return d / np.linalg.norm(d)

    def rasterize(self, geom: Geometry) -> np.ndarray:
        x, y, z = geom.axis_coords()
        X = x[None, None, :] - self.p0[0]
        Y = y[None, :, None] - self.p0[1]
        Z = z[:, None, None] - self.p0[2]
        u = self.direction
        t = X * u[0] + Y * u[1] + Z * u[2]
        r2 = X**2 + Y**2 + Z**2 - t**2
        r2 = np.maximum(r2, 0.0)
        return (t >= 0) & (t < self.length) & (r2 >= self.inner_radius**2) & (r2 < self.outer_radius**2)

    def bounds(self):
        u = self.direction
        pad = self.outer_radius * np.sqrt(np.clip(1.0 - u**2, 0.0, None))
        a, b = np.asarray(self.p0, float), np.asarray(self.p1, float)
        return np.minimum(a, b) - pad, np.maximum(a, b) + pad

    def centerline(self, step: float) -> Centerline:
        n = max(int(math.ceil(self.length / step)), 1) + 1
        s = np.linspace(0.0, self.length, n)
        pts = np.asarray(self.p0, float)[None, :] + s[:, None] * self.direction[None, :]
        return Centerline(pts)


Primitive = Union[Box, Cylinder, Tube]


# ---------------------------------------------------------------------------
# Specs
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CompartmentSpec:
    label: int
    geometry: Primitive
    baseline_hu: float
    mbf: float = 0.0
    density: float = DENSITY_FAT
    delay_s: float = 0.0
    amp_scale: float = 1.0
    washout_per_s: float = 0.0
    # Optional heterogeneous baseline: values evenly spread over [lo, hi],
    # randomly placed over the compartment's voxels.
    baseline_range: tuple[float, float] | None = None

    def __post_init__(self):
        object.__setattr__(self, "label", parse_label(self.label))
        if self.label == Label.BG:
            raise ValueError("compartments cannot use the background label")
        if self.mbf < 0:
            raise ValueError("mbf must be >= 0")
        if not self.density > 0:
            raise ValueError("density must be > 0")
        if not 0 < self.amp_scale <= 1:
            raise ValueError("amp_scale must lie in (0, 1]")
        if self.washout_per_s < 0:
            raise ValueError("washout_per_s must be >= 0")
        if self.delay_s < 0:
            raise ValueError("delay_s must be >= 0")
        if self.baseline_range is not None and not self.baseline_range[0] <= self.baseline_range[1]:
            raise ValueError("baseline_range must be (lo, hi) with lo <= hi")

    @property
    def vascular(self) -> bool:
        return self.label in VASCULAR_LABELS

    def curve(self, aif: AifParams, times) -> np.ndarray:
        if self.vascular:
            return vascular_curve(aif, self.delay_s, self.amp_scale, times)
        return tissue_curve(self.mbf, self.density, aif, self.delay_s, self.amp_scale, times, self.washout_per_s)


@dataclass(frozen=True)
class PhantomSpec:
    dims: tuple[int, int, int]
    spacing: tuple[float, float, float]
    aif: AifParams
    compartments: tuple[CompartmentSpec, ...]
    n_scans: int = 11
    interval_s: float = 2.0
    noise_sigma: float = 0.0
    rng_seed: int = 0
    background_hu: float = 0.0
    origin: tuple[float, float, float] | None = None

    def __post_init__(self):
        object.__setattr__(self, "compartments", tuple(self.compartments))
        if self.n_scans < 2:
            raise ValueError("a phantom needs at least 2 scans")
        if not self.interval_s > 0:
            raise ValueError("scan interval must be > 0")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be >= 0")
        labels = [c.label for c in self.compartments]
        if len(set(labels)) != len(labels):
            raise ValueError("each compartment label may appear only once")

    @property
    def geometry(self) -> Geometry:
        origin = self.origin
        if origin is None:
            origin = tuple(s / 2 for s in self.spacing)
        return Geometry(self.dims, self.spacing, origin)

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.n_scans, dtype=np.float64) * self.interval_s

    def compartment(self, label) -> CompartmentSpec:
        code = parse_label(label)
        for c in self.compartments:
            if c.label == code:
                return c
        raise KeyError(label_name(code))


@dataclass(frozen=True)
class CompartmentTruth:
    label: int
    mbf: float
    density: float
    baseline_hu: float
    curve: np.ndarray  # enhancement above baseline at scan times
    time_to_peak_s: float
    voxel_count: int


@dataclass(frozen=True)
class GroundTruth:
    times_s: np.ndarray
    aif_curve: np.ndarray
    compartments: dict[int, CompartmentTruth]
    mask: LabelMask
    centerlines: dict[int, Centerline] = field(default_factory=dict)

    def __getitem__(self, label) -> CompartmentTruth:
        return self.compartments[parse_label(label)]


# ---------------------------------------------------------------------------
# Simulation
# ---------------------------------------------------------------------------


def _check_bounds(c: CompartmentSpec, geom: Geometry) -> None:
    lo, hi = geom.extent_mm()
    blo, bhi = c.geometry.bounds()
    tol = 1e-9
    if np.any(blo < lo - tol) or np.any(bhi > hi + tol):
        raise ValueError(
            f"compartment {label_name(c.label)} geometry {blo.tolist()}..{bhi.tolist()} "
            f"lies outside grid bounds {lo.tolist()}..{hi.tolist()}"
        )


def build_mask(spec: PhantomSpec) -> LabelMask:
    """Rasterize compartments; overlapping compartments are rejected."""
    geom = spec.geometry
    lab = np.zeros(geom.shape, np.uint8)
    for c in spec.compartments:
        _check_bounds(c, geom)
        inside = c.geometry.rasterize(geom)
        if not inside.any():
            raise ValueError(f"compartment {label_name(c.label)} contains no voxel centres")
        clash = lab[inside]
        if np.any(clash != 0):
            other = label_name(int(clash[clash != 0][0]))
            raise ValueError(f"compartments {other} and {label_name(c.label)} overlap")
        lab[inside] = c.label
    return LabelMask(geom, lab)


def _true_time_to_peak(c: CompartmentSpec, aif: AifParams, t_end: float) -> float:
    grid = _fine_grid(t_end)
    curve = c.curve(aif, grid)
    return float(grid[int(np.argmax(curve))])


def simulate(spec: PhantomSpec):
    """Generate ``(series, mask, centerlines, truth)`` for ``spec``.

    Deterministic for a fixed spec: baseline placement and noise are drawn
    from one generator seeded with ``rng_seed`` in fixed voxel order.
    """
    geom = spec.geometry
    mask = build_mask(spec)
    times = spec.times
    rng = np.random.default_rng(spec.rng_seed)

    baseline = np.full(geom.shape, spec.background_hu, dtype=np.float64)
    enh = np.zeros((256, times.size))
    truths = {}
    for c in spec.compartments:
        sel = mask.labels == c.label
        n = int(np.count_nonzero(sel))
        if c.baseline_range is None:
            baseline[sel] = c.baseline_hu
        else:
            lo, hi = c.baseline_range
            vals = lo + (np.arange(n) + 0.5) / n * (hi - lo)
            baseline[sel] = rng.permutation(vals)
        curve = c.curve(spec.aif, times)
        enh[c.label] = curve
        truths[c.label] = CompartmentTruth(
            label=c.label,
            mbf=c.mbf,
            density=c.density,
            baseline_hu=c.baseline_hu if c.baseline_range is None else float(np.mean(c.baseline_range)),
            curve=curve,
            time_to_peak_s=_true_time_to_peak(c, spec.aif, float(times[-1])),
            voxel_count=n,
        )

    data = np.empty((times.size,) + geom.shape, dtype=np.float32)
    lab = mask.labels
    for k in range(times.size):
        vol = baseline + enh[lab, k]
        if spec.noise_sigma > 0:
            vol += spec.noise_sigma * rng.standard_normal(geom.shape)
        data[k] = vol
    series = DynamicSeries(geom, data, times)

    step = min(geom.spacing) / 2
    centerlines = {
        c.label: c.geometry.centerline(step)
        for c in spec.compartments
        if isinstance(c.geometry, Tube) and c.label in VASCULAR_LABELS
    }
    truth = GroundTruth(
        times_s=times,
        aif_curve=vascular_curve(spec.aif, times=times),
        compartments=truths,
        mask=mask,
        centerlines=centerlines,
    )
    return series, mask, centerlines, truth


def scale_mbf_for_peak(c: CompartmentSpec, aif: AifParams, times, target_delta_hu: float) -> float:
    """Flow that makes the sampled peak enhancement equal ``target_delta_hu``.

    Uses linearity of the uptake model in mbf.
    """
    unit = replace(c, mbf=1.0).curve(aif, times)
    return target_delta_hu / float(np.max(unit))


# ---------------------------------------------------------------------------
# Presets
# ---------------------------------------------------------------------------

PAPER_FOV_MM = (48.0, 48.0, 40.0)
PAPER_MBF_MYO = 324.0
PAPER_MBF_PCAT = 75.0
PAPER_PCAT_BASELINE = -75.0
PAPER_PCAT_DELTA = 22.0
STENOSIS_PEAKS = (16.1, 12.3)
LAD_XY = (30.0, 24.0)
LAD_RADIUS = 2.0
BASE_AIF = AifParams(amplitude=1.0, t0=2.0, tp=8.0, alpha=3.0)


def _layout(fov_z: float, pcat_outer: float = 5.0) -> list[CompartmentSpec]:
    z = fov_z
    lad0, lad1 = (*LAD_XY, 0.0), (*LAD_XY, z)
    return [
        CompartmentSpec(Label.AORTA, Tube((9.0, 9.0, 0.0), (9.0, 9.0, z), 0.0, 6.0), 40.0),
        CompartmentSpec(Label.PAAT, Tube((9.0, 9.0, 4.0), (9.0, 9.0, z - 4.0), 6.0, 9.0), -66.0, mbf=3.0),
        CompartmentSpec(Label.LUMEN_LAD, Tube(lad0, lad1, 0.0, LAD_RADIUS), 40.0),
        CompartmentSpec(Label.PCAT, Tube(lad0, lad1, LAD_RADIUS, pcat_outer), PAPER_PCAT_BASELINE, mbf=PAPER_MBF_PCAT),
        CompartmentSpec(Label.EAT, Box((35.0, 4.0, 0.0), (41.0, 44.0, z - 4.0)), -85.0, mbf=15.0),
        CompartmentSpec(
            Label.MYO, Box((41.0, 4.0, 2.0), (47.0, 44.0, z - 2.0)), 40.0, mbf=PAPER_MBF_MYO, density=DENSITY_MYO
        ),
        CompartmentSpec(Label.PAT, Box((2.0, 22.0, 10.0), (20.0, 32.0, z - 10.0)), -90.0, mbf=2.0),
        CompartmentSpec(Label.SUB, Box((2.0, 38.0, 5.0), (28.0, 46.0, z - 5.0)), -100.0, mbf=1.0),
    ]


def _grid(dims) -> tuple[tuple[int, int, int], tuple[float, float, float]]:
    dims = tuple(int(d) for d in dims)
    return dims, tuple(f / n for f, n in zip(PAPER_FOV_MM, dims))


def paper_aif(n_scans: int = 11, interval_s: float = 2.0) -> AifParams:
    """AIF whose amplitude makes the paper-preset PCAT peak exactly +22 HU."""
    times = np.arange(n_scans) * interval_s
    unit = tissue_curve(PAPER_MBF_PCAT, DENSITY_FAT, BASE_AIF, times=times)
    return replace(BASE_AIF, amplitude=PAPER_PCAT_DELTA / float(unit.max()))


def paper_preset(dims=(96, 96, 40), noise_sigma: float = 0.0, rng_seed: int = 0) -> PhantomSpec:
    """MYO 324 / PCAT 75 mL/100g-min, PCAT -75 HU rising to -53 HU."""
    dims, spacing = _grid(dims)
    return PhantomSpec(
        dims=dims,
        spacing=spacing,
        aif=paper_aif(),
        compartments=tuple(_layout(PAPER_FOV_MM[2])),
        noise_sigma=noise_sigma,
        rng_seed=rng_seed,
    )


def flat_preset(dims=(96, 96, 40), noise_sigma: float = 0.0, rng_seed: int = 0) -> PhantomSpec:
    """Paper layout with every flow set to zero."""
    spec = paper_preset(dims, noise_sigma, rng_seed)
    comps = tuple(replace(c, mbf=0.0) if not c.vascular else c for c in spec.compartments)
    return replace(spec, compartments=comps)


def volume_preset(dims=(96, 96, 40), noise_sigma: float = 0.0, rng_seed: int = 0) -> PhantomSpec:
    """PCAT baseline spread uniformly on [-190, -30] with a +22 HU peak shift.

    The PCAT tube is kept inside the axial disk so the disk's fat voxels are
    exactly the programmed PCAT voxels.
    """
    spec = paper_preset(dims, noise_sigma, rng_seed)
    comps = []
    for c in _layout(PAPER_FOV_MM[2], pcat_outer=3.6):
        if c.label == Label.PCAT:
            c = replace(c, baseline_range=(-190.0, -30.0), baseline_hu=-110.0)
        comps.append(c)
    return replace(spec, compartments=tuple(comps))


STENOSIS_WASHOUT = 0.15
STENOSIS_DELAY = 2.0
STENOSIS_SPLIT_MM = 20.0


def stenosis_preset(dims=(96, 96, 40), noise_sigma: float = 0.0, rng_seed: int = 0) -> PhantomSpec:
    """Proximal/distal PCAT along the LAD with a delayed, damped distal supply.

    Both segments wash out so their enhancement peaks inside the acquisition;
    flows are set so the sampled peaks are 16.1 HU (proximal) and 12.3 HU
    (distal).
    """
    dims, spacing = _grid(dims)
    aif = paper_aif()
    times = np.arange(11) * 2.0
    z = PAPER_FOV_MM[2]
    x, y = LAD_XY
    s = STENOSIS_SPLIT_MM
    prox = CompartmentSpec(
        Label.PCAT_PROX,
        Tube((x, y, 0.0), (x, y, s), LAD_RADIUS, 5.0),
        PAPER_PCAT_BASELINE,
        washout_per_s=STENOSIS_WASHOUT,
    )
    prox = replace(prox, mbf=scale_mbf_for_peak(prox, aif, times, STENOSIS_PEAKS[0]))
    dist = CompartmentSpec(
        Label.PCAT_DIST,
        Tube((x, y, s), (x, y, z), LAD_RADIUS, 5.0),
        PAPER_PCAT_BASELINE,
        mbf=prox.mbf,
        delay_s=STENOSIS_DELAY,
        amp_scale=STENOSIS_PEAKS[1] / STENOSIS_PEAKS[0],
        washout_per_s=STENOSIS_WASHOUT,
    )
    comps = [c for c in _layout(z) if c.label != Label.PCAT] + [prox, dist]
    return PhantomSpec(dims, spacing, aif, tuple(comps), noise_sigma=noise_sigma, rng_seed=rng_seed)


PRESETS = {
    "paper": paper_preset,
    "flat": flat_preset,
    "volume": volume_preset,
    "stenosis": stenosis_preset,
}


def preset(name: str, **kwargs) -> PhantomSpec:
    try:
        return PRESETS[name](**kwargs)
    except KeyError:
        raise ValueError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None


# ---------------------------------------------------------------------------
# Spec files and outputs
# ---------------------------------------------------------------------------


def _nums(text: str, n: int | None = None, cast=float) -> tuple:
    vals = tuple(cast(v) for v in text.replace(",", " ").split())
    if n is not None and len(vals) != n:
        raise ValueError(f"expected {n} numbers, got {text!r}")
    return vals


def _fmt(x) -> str:
    return repr(float(x))


def _geometry_to_items(g: Primitive) -> dict[str, str]:
    if isinstance(g, Box):
        return {"geometry": "box", "lo": " ".join(map(_fmt, g.lo)), "hi": " ".join(map(_fmt, g.hi))}
    if isinstance(g, Cylinder):
        return {
            "geometry": "cylinder",
            "axis": g.axis,
            "center": " ".join(map(_fmt, g.center)),
            "radius": _fmt(g.radius),
            "extent": " ".join(map(_fmt, g.extent)),
        }
    return {
        "geometry": "tube",
        "p0": " ".join(map(_fmt, g.p0)),
        "p1": " ".join(map(_fmt, g.p1)),
        "inner_radius": _fmt(g.inner_radius),
        "outer_radius": _fmt(g.outer_radius),
    }


def _geometry_from_items(sec) -> Primitive:
    kind = sec.get("geometry", "").strip().lower()
    if kind == "box":
        return Box(_nums(sec["lo"], 3), _nums(sec["hi"], 3))
    if kind == "cylinder":
        return Cylinder(sec["axis"].strip(), _nums(sec["center"], 2), float(sec["radius"]), _nums(sec["extent"], 2))
    if kind == "tube":
        return Tube(
            _nums(sec["p0"], 3),
            _nums(sec["p1"], 3),
            float(sec.get("inner_radius", "0")),
            float(sec["outer_radius"]),
        )
    raise ValueError(f"unknown geometry {kind!r}; expected box, cylinder or tube")


def spec_to_ini(spec: PhantomSpec) -> str:
    cp = configparser.ConfigParser(interpolation=None)
    grid = {"dims": " ".join(map(str, spec.dims)), "spacing": " ".join(map(_fmt, spec.spacing))}
    if spec.origin is not None:
        grid["origin"] = " ".join(map(_fmt, spec.origin))
    cp["grid"] = grid
    cp["aif"] = {k: _fmt(getattr(spec.aif, k)) for k in ("amplitude", "t0", "tp", "alpha")}
    cp["scans"] = {"count": str(spec.n_scans), "interval_s": _fmt(spec.interval_s)}
    cp["noise"] = {"sigma": _fmt(spec.noise_sigma), "seed": str(spec.rng_seed)}
    cp["background"] = {"hu": _fmt(spec.background_hu)}
    for c in spec.compartments:
        items = {"label": label_name(c.label), "baseline_hu": _fmt(c.baseline_hu), "mbf": _fmt(c.mbf)}
        items.update(
            density=_fmt(c.density),
            delay_s=_fmt(c.delay_s),
            amp_scale=_fmt(c.amp_scale),
            washout_per_s=_fmt(c.washout_per_s),
        )
        if c.baseline_range is not None:
            items["baseline_range"] = " ".join(map(_fmt, c.baseline_range))
        items.update(_geometry_to_items(c.geometry))
        cp[f"compartment {label_name(c.label).lower()}"] = items
    import io

    buf = io.StringIO()
    cp.write(buf)
    return buf.getvalue()


def spec_from_ini(text: str) -> PhantomSpec:
    cp = configparser.ConfigParser(interpolation=None)
    cp.read_string(text)
    for sec in ("grid", "aif", "scans"):
        if not cp.has_section(sec):
            raise ValueError(f"phantom spec is missing section [{sec}]")
    g = cp["grid"]
    a = cp["aif"]
    comps = []
    for name in cp.sections():
        if not name.startswith("compartment"):
            continue
        sec = cp[name]
        rng = sec.get("baseline_range")
        comps.append(
            CompartmentSpec(
                label=sec.get("label", name.split(None, 1)[-1]),
                geometry=_geometry_from_items(sec),
                baseline_hu=float(sec["baseline_hu"]),
                mbf=float(sec.get("mbf", "0")),
                density=float(sec.get("density", str(DENSITY_FAT))),
                delay_s=float(sec.get("delay_s", "0")),
                amp_scale=float(sec.get("amp_scale", "1")),
                washout_per_s=float(sec.get("washout_per_s", "0")),
                baseline_range=_nums(rng, 2) if rng else None,
            )
        )
    noise = cp["noise"] if cp.has_section("noise") else {}
    return PhantomSpec(
        dims=_nums(g["dims"], 3, int),
        spacing=_nums(g["spacing"], 3),
        origin=_nums(g["origin"], 3) if "origin" in g else None,
        aif=AifParams(float(a["amplitude"]), float(a["t0"]), float(a["tp"]), float(a.get("alpha", "3"))),
        compartments=tuple(comps),
        n_scans=int(cp["scans"]["count"]),
        interval_s=float(cp["scans"].get("interval_s", "2")),
        noise_sigma=float(noise.get("sigma", "0")),
        rng_seed=int(noise.get("seed", "0")),
        background_hu=float(cp["background"]["hu"]) if cp.has_section("background") else 0.0,
    )


def read_spec(path) -> PhantomSpec:
    return spec_from_ini(Path(path).read_text())


def write_outputs(out_dir, series, mask, centerlines, truth: GroundTruth, spec: PhantomSpec | None = None) -> dict[str, Path]:
    """Write series, mask, centerlines and ground-truth tables into ``out_dir``."""
    from .roi import write_centerline

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    files = {"series": write_series(series, out / "series")}
    files["mask"] = write_mask(mask, out / "mask")
    for code, cl in sorted(centerlines.items()):
        files[f"centerline_{label_name(code).lower()}"] = write_centerline(
            cl, out / f"centerline_{label_name(code).lower()}.csv"
        )
    gt = out / "ground_truth.csv"
    with gt.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["label", "mbf_ml_100g_min", "density_g_ml", "baseline_hu", "time_to_peak_s", "voxel_count"])
        for code, t in sorted(truth.compartments.items()):
            w.writerow([label_name(code), _fmt(t.mbf), _fmt(t.density), _fmt(t.baseline_hu), _fmt(t.time_to_peak_s), t.voxel_count])
    files["ground_truth"] = gt
    curves = out / "ground_truth_curves.csv"
    codes = sorted(truth.compartments)
    with curves.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["time_s", "AIF"] + [label_name(c) for c in codes])
        for k, t in enumerate(truth.times_s):
            w.writerow([_fmt(t), _fmt(truth.aif_curve[k])] + [_fmt(truth.compartments[c].curve[k]) for c in codes])
    files["ground_truth_curves"] = curves
    if spec is not None:
        p = out / "phantom.ini"
        p.write_text(spec_to_ini(spec))
        files["spec"] = p
    return files
