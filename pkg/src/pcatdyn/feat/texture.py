"""GLCM, GLDM and GLSZM matrices on 16-bin indices, restricted to the ROI."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .firstorder import DiscretizedRoi

# 13 unique offsets (dz, dy, dx): first nonzero component positive
DIRECTIONS = tuple(
    (dz, dy, dx)
    for dz in (-1, 0, 1)
    for dy in (-1, 0, 1)
    for dx in (-1, 0, 1)
    if (dz, dy, dx) > (0, 0, 0)
)
_CUBE = np.ones((3, 3, 3), bool)


@dataclass(frozen=True, eq=False)
class TextureMatrices:
    glcm: np.ndarray  # (Ng, Ng) symmetric, sums to 1 (mean of per-direction normalized matrices)
    gldm: np.ndarray  # (Ng, 27) counts, column j is dependence j + 1
    glszm: np.ndarray  # (Ng, max zone size) counts, column j is size j + 1
    nbins: int


def bin_volume(sel: np.ndarray, d: DiscretizedRoi) -> np.ndarray:
    """Scatter ROI bin indices back into a volume shaped like ``sel`` (0 outside)."""
    out = np.zeros(sel.shape, np.int64)
    out[sel] = d.bins
    return out


def _shifted(p: np.ndarray, off) -> np.ndarray:
    nz, ny, nx = (s - 2 for s in p.shape)
    dz, dy, dx = off
    return p[1 + dz : 1 + dz + nz, 1 + dy : 1 + dy + ny, 1 + dx : 1 + dx + nx]


def glcm(b: np.ndarray, ng: int) -> np.ndarray:
    p = np.pad(b, 1)
    a = b.ravel()
    mats = []
    for off in DIRECTIONS:
        c = _shifted(p, off).ravel()
        ok = (a > 0) & (c > 0)
        m = np.bincount((a[ok] - 1) * ng + (c[ok] - 1), minlength=ng * ng).reshape(ng, ng).astype(np.float64)
        m = m + m.T
        s = m.sum()
        if s > 0:
            mats.append(m / s)
    if not mats:
        return np.zeros((ng, ng))
    return np.mean(mats, axis=0)


def gldm(b: np.ndarray, ng: int) -> np.ndarray:
    """Dependence = 1 + count of 26-neighbours with the same bin (tolerance 0)."""
    p = np.pad(b, 1)
    dep = np.ones(b.shape, np.int64)
    for dz in (-1, 0, 1):
        for dy in (-1, 0, 1):
            for dx in (-1, 0, 1):
                if (dz, dy, dx) != (0, 0, 0):
                    dep += _shifted(p, (dz, dy, dx)) == b
    sel = b > 0
    return np.bincount((b[sel] - 1) * 27 + (dep[sel] - 1), minlength=ng * 27).reshape(ng, 27).astype(np.float64)


def glszm(b: np.ndarray, ng: int) -> np.ndarray:
    sizes_by_level = []
    for g in range(1, ng + 1):
        lab, n = ndimage.label(b == g, structure=_CUBE)
        sizes_by_level.append(np.bincount(lab.ravel())[1:] if n else np.zeros(0, np.int64))
    smax = max((int(s.max()) for s in sizes_by_level if s.size), default=0)
    m = np.zeros((ng, max(smax, 1)))
    for g, s in enumerate(sizes_by_level):
        if s.size:
            m[g] += np.bincount(s - 1, minlength=m.shape[1])
    return m


def texture_matrices(sel: np.ndarray, d: DiscretizedRoi) -> TextureMatrices:
    b = bin_volume(sel, d)
    return TextureMatrices(glcm(b, d.nbins), gldm(b, d.nbins), glszm(b, d.nbins), d.nbins)


def idmn(p: np.ndarray, ng: int) -> float:
    """sum p(i,j) / (1 + (i-j)^2 / Ng^2) over a normalized matrix, 1-based i and j."""
    s = p.sum()
    if not s > 0:
        return math.nan
    i = np.arange(1, p.shape[0] + 1)[:, None]
    j = np.arange(1, p.shape[1] + 1)[None, :]
    return float(np.sum((p / s) / (1.0 + (i - j) ** 2 / ng**2)))


def column_nonuniformity(p: np.ndarray) -> float:
    """sum_j (sum_i P(i,j))^2 / N^2."""
    n = p.sum()
    if not n > 0:
        return math.nan
    return float(np.sum(p.sum(axis=0) ** 2) / n**2)


def texture_features(d: DiscretizedRoi, mats: TextureMatrices) -> dict[str, float]:
    ng = d.nbins
    return {
        "glcm_idmn": idmn(mats.glcm, ng),
        "gldm_idmn": idmn(mats.gldm, ng),
        "gldm_dnn": column_nonuniformity(mats.gldm),
        "glszm_sznn": column_nonuniformity(mats.glszm),
    }
