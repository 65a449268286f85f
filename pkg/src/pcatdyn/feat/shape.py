"""Principal-axis shape descriptors."""

from __future__ import annotations

import math

import numpy as np

from ..volgrid import LabelMask, label_name

EIG_FLOOR = 1e-12  # eigenvalues below this fraction of the largest are rounding noise


def shape_from_points(xyz: np.ndarray) -> tuple[float, float]:
    """(elongation, flatness) from the covariance eigenvalues of physical points.

    Only a zero largest eigenvalue (a single point) is undefined; flat or
    linear sets give values at or near 0.
    """
    xyz = np.asarray(xyz, np.float64)
    if len(xyz) == 0:
        raise ValueError("empty ROI")
    c = xyz - xyz.mean(axis=0)
    cov = c.T @ c / len(xyz)
    lam = np.linalg.eigvalsh(cov)[::-1]
    if lam[0] <= 0:
        return math.nan, math.nan
    lam = np.where(lam <= EIG_FLOOR * lam[0], 0.0, lam)
    return math.sqrt(lam[1] / lam[0]), math.sqrt(lam[2] / lam[0])


def shape_features(pcat: LabelMask, code: int) -> tuple[float, float]:
    idx = np.argwhere(pcat.labels == code)
    if idx.size == 0:
        raise ValueError(f"empty ROI: label {label_name(code)} has no voxels")
    return shape_from_points(pcat.geometry.physical_coords(idx))
