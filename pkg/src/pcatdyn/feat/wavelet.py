"""Single-level stationary 3D Haar decomposition."""

from __future__ import annotations

import itertools

import numpy as np

from ..volgrid import VolumeGrid

SUBBANDS = tuple("".join(c) for c in itertools.product("LH", repeat=3))  # letters in x, y, z order
SCALE = 2.0**-1.5  # (1/sqrt2)^3, applied once after the three passes


def _haar(a: np.ndarray, axis: int, high: bool) -> np.ndarray:
    """Unnormalized pass a[i] +/- a[i+1] with the last sample replicated."""
    nxt = np.take(a, np.r_[1 : a.shape[axis], a.shape[axis] - 1], axis=axis)
    return a - nxt if high else a + nxt


def haar_swt3(values: np.ndarray) -> dict[str, np.ndarray]:
    """Undecimated subbands of a ``(nz, ny, nx)`` block, filtering x, then y, then z.

    Filters are L = (1, 1)/sqrt2 and H = (1, -1)/sqrt2.  The sums are
    formed unscaled (exact in float64 for float32 input) and scaled once,
    so subbands that vanish analytically come out as exact zeros.  A
    constant block maps to ``LLL = c * 2**1.5`` and zero elsewhere.
    """
    a = np.asarray(values, np.float64)
    if min(a.shape) < 2:
        raise ValueError("wavelet block needs every dimension >= 2")
    out = {}
    for name in SUBBANDS:
        b = a
        for letter, axis in zip(name, (2, 1, 0)):
            b = _haar(b, axis, letter == "H")
        out[name] = b * SCALE
    return out


def roi_bbox(sel: np.ndarray, margin: int = 1) -> tuple[slice, slice, slice]:
    """Bounding box of ``sel`` grown by ``margin`` and to at least 2 voxels per axis."""
    idx = np.argwhere(sel)
    if idx.size == 0:
        raise ValueError("empty ROI")
    out = []
    for lo, hi, n in zip(idx.min(axis=0) - margin, idx.max(axis=0) + 1 + margin, sel.shape):
        lo, hi = max(int(lo), 0), min(int(hi), n)
        if hi - lo < 2:
            if n < 2:
                raise ValueError("volume too thin for a wavelet block")
            lo, hi = (lo, lo + 2) if lo + 2 <= n else (n - 2, n)
        out.append(slice(lo, hi))
    return tuple(out)


def wavelet3d(v: VolumeGrid, bbox=None) -> dict[str, np.ndarray]:
    """Subbands of ``v`` restricted to ``bbox`` (zyx slices); full volume when None."""
    block = v.values if bbox is None else v.values[bbox]
    return haar_swt3(block)
