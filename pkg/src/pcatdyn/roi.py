"""PCAT region geometry around coronary centerlines.

Disk and ring membership use in-plane (axial) distance to the centerline
point(s) lying on each slice; remote-EAT uses full 3D distance.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.spatial import cKDTree

from .volgrid import Geometry, Label, LabelMask, VolumeGrid, check_geometry, ring_code

log = logging.getLogger(__name__)

FAT_WINDOW = (-190.0, -30.0)
EXTENDED_FAT_WINDOW = (-190.0, -10.0)
LUMEN_CODES = (Label.LUMEN_LAD, Label.LUMEN_RCA, Label.AORTA)


@dataclass(frozen=True, eq=False)
class Centerline:
    points: np.ndarray  # (N, 3) x, y, z in mm
    arclength: np.ndarray = field(init=False)

    def __post_init__(self):
        pts = np.array(self.points, dtype=np.float64).reshape(-1, 3)
        if pts.shape[0] < 2:
            raise ValueError("a centerline needs at least 2 points")
        seg = np.linalg.norm(np.diff(pts, axis=0), axis=1)
        if np.any(seg <= 0):
            raise ValueError("centerline arclength must be strictly increasing (repeated point)")
        s = np.concatenate([[0.0], np.cumsum(seg)])
        pts.setflags(write=False)
        s.setflags(write=False)
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "arclength", s)

    @property
    def length(self) -> float:
        return float(self.arclength[-1])

    def check_spacing(self, geom: Geometry) -> None:
        limit = 2 * min(geom.spacing)
        gap = float(np.max(np.diff(self.arclength)))
        if gap > limit + 1e-9:
            raise ValueError(
                f"centerline point spacing {gap:.3f} mm exceeds 2*min(voxel spacing) = {limit:.3f} mm; resample it"
            )

    def resample(self, step: float) -> "Centerline":
        n = max(int(np.ceil(self.length / step)), 1) + 1
        s = np.linspace(0.0, self.length, n)
        return Centerline(np.column_stack([np.interp(s, self.arclength, self.points[:, i]) for i in range(3)]))

    def translated(self, offset) -> "Centerline":
        return Centerline(self.points + np.asarray(offset, float)[None, :])


@dataclass(frozen=True)
class PcatRegionSpec:
    diameter_factor: float = 2.0
    length_mm: float = 40.0
    fat_window: tuple[float, float] = FAT_WINDOW
    extended_window: tuple[float, float] = EXTENDED_FAT_WINDOW
    membership_reference: int = 0

    def __post_init__(self):
        for w in (self.fat_window, self.extended_window):
            if not w[0] < w[1]:
                raise ValueError(f"window {w} must have lo < hi")
        if not self.diameter_factor > 1:
            raise ValueError("diameter_factor must be > 1")
        if not self.length_mm > 0:
            raise ValueError("length_mm must be > 0")


@dataclass(frozen=True, eq=False)
class VesselGeometry:
    slices: np.ndarray  # z indices of axial slices used
    area_mm2: np.ndarray
    d_eff_mm: np.ndarray
    median_d_eff_mm: float
    length_mm: float


@dataclass(frozen=True)
class RegionPartition:
    """Rings ``(inner, outer)`` as multiples of the median effective diameter.

    A ring covers in-plane distances ``(inner*d/2, outer*d/2]``.  With
    ``inner_disk`` the area inside the first ring becomes its own region.
    Region ``k`` is labelled ``ring_code(k)``.
    """

    rings: tuple[tuple[float, float], ...]
    inner_disk: bool = True
    s_star_mm: float | None = None

    def __post_init__(self):
        rings = tuple((float(a), float(b)) for a, b in self.rings)
        object.__setattr__(self, "rings", rings)
        if not rings:
            raise ValueError("partition needs at least one ring")
        prev = 0.0
        for a, b in rings:
            if a < 0 or b <= a:
                raise ValueError(f"ring ({a}, {b}) must satisfy 0 <= inner < outer")
            if a < prev:
                raise ValueError(f"overlapping factors: ring ({a}, {b}) starts inside previous ring ending at {prev}")
            prev = b

    def radii(self, median_d: float) -> list[tuple[float, float]]:
        out = []
        if self.inner_disk and self.rings[0][0] > 0:
            out.append((0.0, self.rings[0][0] * median_d / 2))
        out.extend((a * median_d / 2, b * median_d / 2) for a, b in self.rings)
        return out


def slice_index(geom: Geometry, z_mm) -> np.ndarray:
    return np.floor((np.asarray(z_mm, float) - geom.origin[2]) / geom.spacing[2] + 0.5).astype(np.int64)


def slice_points(cl: Centerline, geom: Geometry, length_mm: float) -> dict[int, np.ndarray]:
    """In-plane (x, y) centerline points per axial slice within ``length_mm``."""
    keep = cl.arclength <= length_mm + 1e-9
    pts = cl.points[keep]
    k = slice_index(geom, pts[:, 2])
    inside = (k >= 0) & (k < geom.dims[2])
    out: dict[int, list] = {}
    for kk, p in zip(k[inside], pts[inside]):
        out.setdefault(int(kk), []).append(p[:2])
    return {kk: np.unique(np.asarray(v), axis=0) for kk, v in sorted(out.items())}


def _inplane_distance(geom: Geometry, xy: np.ndarray) -> np.ndarray:
    x, y, _ = geom.axis_coords()
    d2 = np.full((geom.dims[1], geom.dims[0]), np.inf)
    for px, py in xy:
        d2 = np.minimum(d2, (x[None, :] - px) ** 2 + (y[:, None] - py) ** 2)
    return np.sqrt(d2)


def _lumen_voxels(lumen: LabelMask) -> np.ndarray:
    return np.isin(lumen.labels, [int(c) for c in LUMEN_CODES])


def effective_diameter(lumen: LabelMask, cl: Centerline, code: int = Label.LUMEN_LAD, length_mm: float = 40.0) -> VesselGeometry:
    """Per-slice lumen area and effective diameter over the first ``length_mm``."""
    geom = lumen.geometry
    cl.check_spacing(geom)
    sx, sy, _ = geom.spacing
    slices, areas = [], []
    for k in slice_points(cl, geom, length_mm):
        n = int(np.count_nonzero(lumen.labels[k] == code))
        if n:
            slices.append(k)
            areas.append(n * sx * sy)
    if not areas:
        raise ValueError("no lumen voxels along the centerline in range")
    areas = np.asarray(areas)
    d = 2.0 * np.sqrt(areas / np.pi)
    return VesselGeometry(np.asarray(slices), areas, d, float(np.median(d)), length_mm)


def axial_disk_mask(
    cl: Centerline,
    vessel: VesselGeometry,
    spec: PcatRegionSpec,
    lumen: LabelMask,
    code: int = Label.PCAT,
) -> LabelMask:
    """Disk of diameter ``diameter_factor * median d_eff`` on each crossed slice, lumen removed."""
    geom = lumen.geometry
    cl.check_spacing(geom)
    r = spec.diameter_factor * vessel.median_d_eff_mm / 2
    out = np.zeros(geom.shape, bool)
    for k, xy in slice_points(cl, geom, spec.length_mm).items():
        out[k] = _inplane_distance(geom, xy) <= r
    out &= ~_lumen_voxels(lumen)
    return LabelMask.from_bool(geom, out, code)


def fat_select(v: VolumeGrid, disks: LabelMask, window=FAT_WINDOW, code: int = Label.PCAT) -> LabelMask:
    """Disk voxels whose HU lies in the closed interval ``window``."""
    check_geometry(v.geometry, disks.geometry)
    lo, hi = window
    sel = disks.any() & (v.values >= lo) & (v.values <= hi)
    return LabelMask.from_bool(disks.geometry, sel, code)


def annular_partition(
    cl: Centerline,
    vessel: VesselGeometry,
    part: RegionPartition,
    lumen: LabelMask,
    length_mm: float = 40.0,
) -> LabelMask:
    geom = lumen.geometry
    cl.check_spacing(geom)
    radii = part.radii(vessel.median_d_eff_mm)
    lab = np.zeros(geom.shape, np.uint8)
    for k, xy in slice_points(cl, geom, length_mm).items():
        d = _inplane_distance(geom, xy)
        sl = lab[k]
        for idx, (r0, r1) in enumerate(radii):
            ring = (d <= r1) & ((d > r0) if r0 > 0 else True)
            sl[ring & (sl == 0)] = ring_code(idx)
    lab[_lumen_voxels(lumen)] = 0
    return LabelMask(geom, lab)


def remote_eat(
    eat: LabelMask,
    centerlines: Sequence[Centerline],
    vessels: Sequence[VesselGeometry],
    exclusion_factor: float = 3.0,
    code: int = Label.EAT,
) -> tuple[LabelMask, bool]:
    """EAT voxels farther than ``exclusion_factor * median d_eff`` from every centerline.

    Returns the mask and a flag that is True when the result is empty.
    """
    geom = eat.geometry
    idx = np.argwhere(eat.labels == code)
    if idx.size == 0:
        raise ValueError("EAT mask is empty")
    xyz = geom.physical_coords(idx)
    keep = np.ones(len(idx), bool)
    for cl, v in zip(centerlines, vessels, strict=True):
        dist, _ = cKDTree(cl.points).query(xyz)
        keep &= dist > exclusion_factor * v.median_d_eff_mm
    lab = np.zeros(geom.shape, np.uint8)
    sel = idx[keep]
    lab[sel[:, 0], sel[:, 1], sel[:, 2]] = Label.EAT_REMOTE
    empty = not keep.any()
    if empty:
        log.warning("remote EAT is empty at exclusion factor %g", exclusion_factor)
    return LabelMask(geom, lab), empty


def split_prox_dist(pcat: LabelMask, cl: Centerline, s_star: float, code: int = Label.PCAT) -> LabelMask:
    """Label PCAT voxels proximal/distal by the arclength of their nearest centerline point."""
    if not 0 < s_star < cl.length:
        raise ValueError(f"s_star {s_star} mm outside (0, {cl.length:.3f}) mm")
    geom = pcat.geometry
    idx = np.argwhere(pcat.labels == code)
    lab = np.zeros(geom.shape, np.uint8)
    if idx.size:
        _, nearest = cKDTree(cl.points).query(geom.physical_coords(idx))
        prox = cl.arclength[nearest] < s_star
        lab[idx[:, 0], idx[:, 1], idx[:, 2]] = np.where(prox, Label.PCAT_PROX, Label.PCAT_DIST)
    return LabelMask(geom, lab)


def write_centerline(cl: Centerline, path) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["x_mm", "y_mm", "z_mm"])
        for p in cl.points:
            w.writerow([repr(float(c)) for c in p])
    return path


def read_centerline(path) -> Centerline:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"missing centerline file {path}")
    with path.open(newline="") as fh:
        rows = [r for r in csv.reader(fh) if r and not r[0].startswith("#")]
    if not rows or [c.strip() for c in rows[0]] != ["x_mm", "y_mm", "z_mm"]:
        raise ValueError(f"{path}: expected header 'x_mm,y_mm,z_mm'")
    return Centerline(np.asarray([[float(c) for c in r] for r in rows[1:]]))


def write_geometry_csv(vessel: VesselGeometry, geom: Geometry, path) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["slice", "z_mm", "area_mm2", "d_eff_mm"])
        for k, a, d in zip(vessel.slices, vessel.area_mm2, vessel.d_eff_mm):
            w.writerow([int(k), repr(geom.origin[2] + k * geom.spacing[2]), repr(float(a)), repr(float(d))])
        w.writerow(["median", "", "", repr(vessel.median_d_eff_mm)])
    return path
