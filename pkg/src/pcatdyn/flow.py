"""Supervoxel clustering and maximum-slope blood-flow estimation."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass
from pathlib import Path

import numba
import numpy as np

from .tac import TimeAttenuationCurve
from .volgrid import DynamicSeries, Geometry, LabelMask, NumericDegeneracy, VolumeGrid, check_geometry, label_name

log = logging.getLogger(__name__)

# 26-neighbourhood offsets (dz, dy, dx)
_NB26 = np.array(
    [(dz, dy, dx) for dz in (-1, 0, 1) for dy in (-1, 0, 1) for dx in (-1, 0, 1) if (dz, dy, dx) != (0, 0, 0)],
    np.int64,
)


@dataclass(frozen=True)
class SlicParams:
    size: int = 125  # target voxels per supervoxel
    compactness: float = 10.0  # HU
    iterations: int = 10

    def __post_init__(self):
        if self.size < 1:
            raise ValueError("supervoxel size must be >= 1")
        if not self.compactness > 0:
            raise ValueError("compactness must be > 0")
        if self.iterations < 0:
            raise ValueError("iterations must be >= 0")


@dataclass(frozen=True, eq=False)
class SupervoxelSet:
    geometry: Geometry
    labels: np.ndarray  # (nz, ny, nx) int32, -1 outside the region
    voxels: list  # per supervoxel (n_i, 3) zyx indices, raster order
    centroids_mm: np.ndarray  # (K, 3) x, y, z
    region_code: int
    params: SlicParams

    def __len__(self):
        return len(self.voxels)

    @property
    def counts(self) -> np.ndarray:
        return np.array([len(v) for v in self.voxels], np.int64)

    def mean_tacs(self, s: DynamicSeries) -> np.ndarray:
        """(K, nt) mean HU per supervoxel and scan."""
        check_geometry(self.geometry, s.geometry)
        out = np.empty((len(self), len(s)))
        for i, v in enumerate(self.voxels):
            out[i] = s.data[:, v[:, 0], v[:, 1], v[:, 2]].astype(np.float64).mean(axis=1)
        return out


@dataclass(frozen=True)
class FlowParams:
    density: float = 0.92  # g/mL
    derivative: str = "central"
    aif_code: int = 2  # aorta
    clamp_negative: bool = True

    def __post_init__(self):
        if not self.density > 0:
            raise ValueError("density must be > 0")
        if self.derivative != "central":
            raise ValueError(f"unsupported derivative method {self.derivative!r}")


@dataclass(frozen=True, eq=False)
class FlowMap:
    region_code: int
    mbf: np.ndarray  # per supervoxel, mL/100g/min
    clamped: np.ndarray  # per supervoxel bool
    density: float
    supervoxels: SupervoxelSet

    @property
    def mean(self) -> float:
        return float(np.mean(self.mbf))

    @property
    def median(self) -> float:
        return float(np.median(self.mbf))

    def volume(self) -> VolumeGrid:
        """Voxelwise flow map (0 outside the region)."""
        out = np.zeros(self.supervoxels.geometry.shape, np.float32)
        for v, f in zip(self.supervoxels.voxels, self.mbf):
            out[v[:, 0], v[:, 1], v[:, 2]] = f
        return VolumeGrid(self.supervoxels.geometry, out)


# ---------------------------------------------------------------------------
# SLIC
# ---------------------------------------------------------------------------


@numba.njit(cache=True)
def _slic_iterate(vals, inmask, centers, spacing, S, m, iters, win):
    """k-means style refinement; ``centers`` rows are (z_mm, y_mm, x_mm, hu)."""
    nz, ny, nx = vals.shape
    K = centers.shape[0]
    lab = np.full(vals.shape, -1, np.int64)
    dist = np.empty(vals.shape)
    wz, wy, wx = win
    sz, sy, sx = spacing
    scale = (m / S) ** 2
    for _ in range(max(iters, 1)):
        dist[:] = np.inf
        lab[:] = -1
        for k in range(K):
            cz, cy, cx, ch = centers[k, 0], centers[k, 1], centers[k, 2], centers[k, 3]
            iz, iy, ix = int(round(cz / sz)), int(round(cy / sy)), int(round(cx / sx))
            for z in range(max(iz - wz, 0), min(iz + wz + 1, nz)):
                dz2 = (z * sz - cz) ** 2
                for y in range(max(iy - wy, 0), min(iy + wy + 1, ny)):
                    dy2 = (y * sy - cy) ** 2
                    for x in range(max(ix - wx, 0), min(ix + wx + 1, nx)):
                        if not inmask[z, y, x]:
                            continue
                        dh = vals[z, y, x] - ch
                        d = dh * dh + (dz2 + dy2 + (x * sx - cx) ** 2) * scale
                        if d < dist[z, y, x]:
                            dist[z, y, x] = d
                            lab[z, y, x] = k
        acc = np.zeros((K, 5))
        for z in range(nz):
            for y in range(ny):
                for x in range(nx):
                    k = lab[z, y, x]
                    if k >= 0:
                        acc[k, 0] += z * sz
                        acc[k, 1] += y * sy
                        acc[k, 2] += x * sx
                        acc[k, 3] += vals[z, y, x]
                        acc[k, 4] += 1.0
        moved = 0.0
        for k in range(K):
            if acc[k, 4] > 0:
                for j in range(4):
                    nv = acc[k, j] / acc[k, 4]
                    if j < 3:
                        moved = max(moved, abs(nv - centers[k, j]))
                    centers[k, j] = nv
        if moved == 0.0:
            break
    return lab


@numba.njit(cache=True)
def _components(lab, inmask, nb):
    """26-connected components of equal-label voxels; ids assigned in raster order."""
    nz, ny, nx = lab.shape
    comp = np.full(lab.shape, -1, np.int64)
    stack = np.empty((inmask.sum(), 3), np.int64)
    sizes = []
    clabel = []
    n = 0
    for z in range(nz):
        for y in range(ny):
            for x in range(nx):
                if not inmask[z, y, x] or comp[z, y, x] >= 0:
                    continue
                L = lab[z, y, x]
                comp[z, y, x] = n
                top = 0
                stack[0] = (z, y, x)
                top = 1
                size = 0
                while top > 0:
                    top -= 1
                    cz, cy, cx = stack[top]
                    size += 1
                    for j in range(nb.shape[0]):
                        qz, qy, qx = cz + nb[j, 0], cy + nb[j, 1], cx + nb[j, 2]
                        if 0 <= qz < nz and 0 <= qy < ny and 0 <= qx < nx:
                            if inmask[qz, qy, qx] and comp[qz, qy, qx] < 0 and lab[qz, qy, qx] == L:
                                comp[qz, qy, qx] = n
                                stack[top] = (qz, qy, qx)
                                top += 1
                sizes.append(size)
                clabel.append(L)
                n += 1
    return comp, np.array(sizes, np.int64), np.array(clabel, np.int64)


@numba.njit(cache=True)
def _comp_stats(comp, vals, ncomp, spacing):
    acc = np.zeros((ncomp, 5))
    nz, ny, nx = comp.shape
    for z in range(nz):
        for y in range(ny):
            for x in range(nx):
                c = comp[z, y, x]
                if c >= 0:
                    acc[c, 0] += z * spacing[0]
                    acc[c, 1] += y * spacing[1]
                    acc[c, 2] += x * spacing[2]
                    acc[c, 3] += vals[z, y, x]
                    acc[c, 4] += 1.0
    for c in range(ncomp):
        for j in range(4):
            acc[c, j] /= acc[c, 4]
    return acc


@numba.njit(cache=True)
def _adjacent(comp, nb, is_orphan):
    """Pairs (orphan component, touching component)."""
    nz, ny, nx = comp.shape
    out = []
    for z in range(nz):
        for y in range(ny):
            for x in range(nx):
                c = comp[z, y, x]
                if c < 0 or not is_orphan[c]:
                    continue
                for j in range(nb.shape[0]):
                    qz, qy, qx = z + nb[j, 0], y + nb[j, 1], x + nb[j, 2]
                    if 0 <= qz < nz and 0 <= qy < ny and 0 <= qx < nx:
                        d = comp[qz, qy, qx]
                        if d >= 0 and d != c:
                            out.append((c, d))
    return out


def _enforce_connectivity(lab, inmask, vals, spacing, S, m):
    """Keep the largest component of each label; merge the rest into an adjacent supervoxel.

    The receiving supervoxel is the adjacent one with the smallest SLIC
    distance between centroids (ties: lowest id).  Islands of the region
    touching nothing become supervoxels of their own.
    """
    comp, sizes, clabel = _components(lab, inmask, _NB26)
    ncomp = len(sizes)
    stats = _comp_stats(comp, vals, ncomp, np.asarray(spacing, np.float64))
    owner = np.full(ncomp, -1, np.int64)  # final supervoxel of each component
    best: dict[int, int] = {}
    for c in range(ncomp):
        L = int(clabel[c])
        if L < 0:
            continue
        if L not in best or sizes[c] > sizes[best[L]]:
            best[L] = c
    for L, c in best.items():
        owner[c] = L
    sv_pos = {}
    for L, c in best.items():
        sv_pos[L] = stats[c]
    scale = (m / S) ** 2
    orphan = owner < 0
    if orphan.any():
        pairs = _adjacent(comp, _NB26, orphan)
        touch: dict[int, set] = {}
        for a, b in pairs:
            touch.setdefault(int(a), set()).add(int(b))
        next_label = (max(best) + 1) if best else 0
        changed = True
        while changed:
            changed = False
            for c in np.flatnonzero(owner < 0):
                cands = sorted({int(owner[d]) for d in touch.get(int(c), ()) if owner[d] >= 0})
                if not cands:
                    continue
                sc = stats[c]

                def dist(L):
                    p = sv_pos[L]
                    return (sc[3] - p[3]) ** 2 + ((sc[0] - p[0]) ** 2 + (sc[1] - p[1]) ** 2 + (sc[2] - p[2]) ** 2) * scale

                owner[c] = min(cands, key=lambda L: (dist(L), L))
                changed = True
            if not changed:
                rest = np.flatnonzero(owner < 0)
                if rest.size:
                    # isolated piece: seeds a new supervoxel, then neighbours may join it
                    c = int(rest[0])
                    owner[c] = next_label
                    sv_pos[next_label] = stats[c]
                    next_label += 1
                    changed = True
    out = np.full(lab.shape, -1, np.int64)
    out[inmask] = owner[comp[inmask]]
    return out


def _seed_centers(idx: np.ndarray, vals: np.ndarray, spacing, S: float) -> np.ndarray:
    """One seed per S-mm grid cell of the region bounding box (cell mean position and HU)."""
    pos = idx * np.asarray(spacing)[None, :]
    cell = np.floor((pos - pos.min(axis=0)) / S + 1e-9).astype(np.int64)
    keys, inv = np.unique(cell, axis=0, return_inverse=True)
    inv = inv.ravel()
    K = len(keys)
    cnt = np.bincount(inv, minlength=K).astype(float)
    cen = np.empty((K, 4))
    for j in range(3):
        cen[:, j] = np.bincount(inv, weights=pos[:, j], minlength=K) / cnt
    cen[:, 3] = np.bincount(inv, weights=vals, minlength=K) / cnt
    return cen


def slic_cluster(v: VolumeGrid, mask: LabelMask, code: int, p: SlicParams = SlicParams()) -> SupervoxelSet:
    """SLIC supervoxels of the voxels labelled ``code``.

    Distance is ``sqrt(dHU^2 + (d/S)^2 m^2)`` with ``S = size^(1/3) * mean spacing``.
    """
    check_geometry(v.geometry, mask.geometry)
    sel = mask.labels == code
    n = int(np.count_nonzero(sel))
    if n == 0:
        raise ValueError(f"empty region: label {label_name(code)} has no voxels")
    # work inside the bounding box
    nzi = np.argwhere(sel)
    lo, hi = nzi.min(axis=0), nzi.max(axis=0) + 1
    box = tuple(slice(a, b) for a, b in zip(lo, hi))
    inmask = np.ascontiguousarray(sel[box])
    vals = np.ascontiguousarray(v.values[box], dtype=np.float64)
    sx, sy, sz = v.geometry.spacing
    spacing = (sz, sy, sx)
    S = p.size ** (1.0 / 3.0) * float(np.mean(v.geometry.spacing))
    if n <= p.size:
        lab = np.where(inmask, 0, -1).astype(np.int64)
    else:
        idx = np.argwhere(inmask)
        cen = _seed_centers(idx, vals[inmask], spacing, S)
        win = tuple(int(math.ceil(2 * S / s)) for s in spacing)
        lab = _slic_iterate(vals, inmask, cen, np.asarray(spacing), S, p.compactness, p.iterations, win)
    lab = _enforce_connectivity(lab, inmask, vals, spacing, S, p.compactness)
    # relabel by first voxel in raster order
    flat = lab[inmask]
    uniq, first = np.unique(flat, return_index=True)
    lut = np.full(int(uniq.max()) + 1, -1, np.int32)
    lut[uniq[np.argsort(first, kind="stable")]] = np.arange(len(uniq), dtype=np.int32)
    full = np.full(v.geometry.shape, -1, np.int32)
    sub = np.full(lab.shape, -1, np.int32)
    sub[inmask] = lut[flat]
    full[box] = sub
    idx_all = np.argwhere(full >= 0)
    ids = full[idx_all[:, 0], idx_all[:, 1], idx_all[:, 2]]
    order = np.argsort(ids, kind="stable")
    splits = np.cumsum(np.bincount(ids, minlength=len(uniq)))[:-1]
    voxels = np.split(idx_all[order], splits)
    cents = np.array([v.geometry.physical_coords(vx).mean(axis=0) for vx in voxels])
    return SupervoxelSet(v.geometry, full, voxels, cents, int(code), p)


# ---------------------------------------------------------------------------
# Flow
# ---------------------------------------------------------------------------


def max_slope(curve, times) -> float:
    """Largest finite-difference slope: central inside, one-sided at the ends."""
    y = np.asarray(curve, np.float64)
    t = np.asarray(times, np.float64)
    if y.shape != t.shape or y.ndim != 1:
        raise ValueError("curve and times must be 1-D of equal length")
    if y.size < 3:
        raise ValueError("max_slope needs at least 3 samples")
    g = np.empty_like(y)
    g[1:-1] = (y[2:] - y[:-2]) / (t[2:] - t[:-2])
    g[0] = (y[1] - y[0]) / (t[1] - t[0])
    g[-1] = (y[-1] - y[-2]) / (t[-1] - t[-2])
    return float(np.max(g))


def mbf_from_curves(tissue, aif, times, density: float) -> float:
    """Unclamped maximum-slope flow in mL/100g/min."""
    tissue = np.asarray(tissue, np.float64)
    aif = np.asarray(aif, np.float64)
    peak = float(np.max(aif - aif[0]))
    if not peak > 0:
        raise NumericDegeneracy("AIF peak enhancement must be > 0")
    return 6000.0 * max_slope(tissue - tissue[0], times) / (density * peak)


def estimate_flow(s: DynamicSeries, sv: SupervoxelSet, aif: TimeAttenuationCurve, p: FlowParams = FlowParams()) -> FlowMap:
    check_geometry(s.geometry, sv.geometry)
    if len(aif) != len(s):
        raise ValueError("AIF and series lengths differ")
    tacs = sv.mean_tacs(s)
    mbf = np.array([mbf_from_curves(c, aif.mean_hu, s.times_s, p.density) for c in tacs])
    clamped = mbf < 0
    if p.clamp_negative and clamped.any():
        log.warning("%d supervoxel(s) with negative slope clamped to 0", int(clamped.sum()))
        mbf = np.where(clamped, 0.0, mbf)
    return FlowMap(sv.region_code, mbf, clamped, p.density, sv)


def write_flow_csv(maps, path) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["region", "id", "x_mm", "y_mm", "z_mm", "n", "mbf", "clamped"])
        for fm in maps:
            sv = fm.supervoxels
            for i in range(len(sv)):
                c = sv.centroids_mm[i]
                w.writerow(
                    [label_name(fm.region_code), i, repr(float(c[0])), repr(float(c[1])), repr(float(c[2])), len(sv.voxels[i]), repr(float(fm.mbf[i])), int(fm.clamped[i])]
                )
    return path


def write_flow_summary(maps, path) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["region", "n_supervoxels", "mean_mbf", "median_mbf", "density", "n_clamped"])
        for fm in maps:
            w.writerow([label_name(fm.region_code), len(fm.mbf), repr(fm.mean), repr(fm.median), repr(fm.density), int(fm.clamped.sum())])
    return path
