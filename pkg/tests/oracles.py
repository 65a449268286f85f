"""Brute-force reference implementations used only by the tests.

Written loop-by-loop without calling into the package so that each check
compares two independent routes.
"""

from __future__ import annotations

import math
from collections import Counter
from fractions import Fraction

import numpy as np
from scipy import integrate

R2 = 1.0 / math.sqrt(2.0)


# --- curves -------------------------------------------------------------


def gamma_variate(t, A, t0, tp, alpha):
    if t <= t0:
        return 0.0
    u = (t - t0) / tp
    return A * u**alpha * math.exp(alpha * (1.0 - u))


def uptake_quad(t, K, A, t0, tp, alpha, delay=0.0, amp=1.0, k=0.0):
    """K * int_0^t amp * gv(tau - delay) * exp(-k (t - tau)) dtau by adaptive quadrature."""
    if t <= 0:
        return 0.0
    f = lambda tau: amp * gamma_variate(tau - delay, A, t0, tp, alpha) * math.exp(-k * (t - tau))  # noqa: E731
    val, _ = integrate.quad(f, 0.0, t, limit=200, points=[t0 + delay, t0 + delay + tp] if t > t0 + delay else None)
    return K * val


def max_slope(y, t):
    best = -math.inf
    n = len(y)
    for i in range(n):
        if i == 0:
            g = (y[1] - y[0]) / (t[1] - t[0])
        elif i == n - 1:
            g = (y[-1] - y[-2]) / (t[-1] - t[-2])
        else:
            g = (y[i + 1] - y[i - 1]) / (t[i + 1] - t[i - 1])
        best = max(best, g)
    return best


# --- first order ------------------------------------------------------------


def bins16(values, nbins=16):
    """Bin by exact rational comparison against the edges lo + k (hi - lo) / n."""
    vals = [v if isinstance(v, Fraction) else Fraction(float(v)) for v in values]
    lo, hi = min(vals), max(vals)
    if lo == hi:
        return [1] * len(vals)
    out = []
    for v in vals:
        b = 1
        for k in range(1, nbins):
            if v >= lo + (hi - lo) * k / nbins:
                b = k + 1
        out.append(b)
    return out


def moments(values):
    n = len(values)
    mu = sum(values) / n
    m2 = sum((v - mu) ** 2 for v in values) / n
    m3 = sum((v - mu) ** 3 for v in values) / n
    m4 = sum((v - mu) ** 4 for v in values) / n
    if min(values) == max(values):
        return mu, 0.0, math.nan, math.nan
    return mu, math.sqrt(m2), m3 / m2**1.5, m4 / m2**2


def entropy(bins):
    n = len(bins)
    return -sum((c / n) * math.log2(c / n) for c in Counter(bins).values()) + 0.0


def handcrafted(vol, sel, spacing):
    """vol, sel as (nz, ny, nx); spacing (sx, sy, sz)."""
    nz, ny, nx = vol.shape
    vals, per_slice = [], {}
    for z in range(nz):
        for y in range(ny):
            for x in range(nx):
                if sel[z, y, x]:
                    vals.append(float(vol[z, y, x]))
                    per_slice[z] = per_slice.get(z, 0) + 1
    mu, sd, sk, ku = moments(vals)
    n = len(vals)
    sx, sy, sz = spacing
    areas = [c * sx * sy for _, c in sorted(per_slice.items())]
    am = sum(areas) / len(areas)
    return {
        "mean": mu,
        "std": sd,
        "skewness": sk,
        "kurtosis": ku,
        "entropy": entropy(bins16(vals)),
        "fraction_-190_-110": sum(1 for v in vals if -190 <= v < -110) / n,
        "fraction_-110_-70": sum(1 for v in vals if -110 <= v < -70) / n,
        "fraction_-70_-30": sum(1 for v in vals if -70 <= v <= -30) / n,
        "voxel_count": float(n),
        "volume_cm3": n * sx * sy * sz / 1000.0,
        "axial_area_mean": am,
        "axial_area_std": math.sqrt(sum((a - am) ** 2 for a in areas) / len(areas)),
        "axial_area_max": max(areas),
    }


# --- shape ------------------------------------------------------------------


def shape(points):
    """Principal axes from the SVD of centred coordinates."""
    p = np.asarray(points, float)
    c = p - p.mean(axis=0)
    s = np.linalg.svd(c, compute_uv=False)
    lam = np.zeros(3)
    lam[: len(s)] = s**2 / len(p)
    lam = np.sort(lam)[::-1]
    if lam[0] <= 0:
        return math.nan, math.nan
    return math.sqrt(max(lam[1], 0) / lam[0]), math.sqrt(max(lam[2], 0) / lam[0])


# --- wavelet ----------------------------------------------------------------


def haar_direct(block, name, exact=False):
    """One subband by explicit 8-tap convolution with clamped indices; name letters are x, y, z.

    With exact=True the unscaled tap sums are returned as Fractions; the
    common (1/sqrt2)^3 factor does not change binning, so texture on
    subbands can be computed without rounding.
    """
    nz, ny, nx = block.shape
    taps = {"L": (1, 1), "H": (1, -1)}
    fx, fy, fz = (taps[c] for c in name)
    out = np.zeros(block.shape, dtype=object if exact else float)
    for z in range(nz):
        for y in range(ny):
            for x in range(nx):
                acc = Fraction(0)
                for a in (0, 1):
                    for b in (0, 1):
                        for c in (0, 1):
                            zz, yy, xx = min(z + a, nz - 1), min(y + b, ny - 1), min(x + c, nx - 1)
                            acc += fz[a] * fy[b] * fx[c] * Fraction(float(block[zz, yy, xx]))
                out[z, y, x] = acc if exact else float(acc) * R2**3
    return out


def bbox(sel, margin=1):
    idx = np.argwhere(sel)
    out = []
    for ax in range(3):
        lo = max(int(idx[:, ax].min()) - margin, 0)
        hi = min(int(idx[:, ax].max()) + 1 + margin, sel.shape[ax])
        if hi - lo < 2:
            lo, hi = (lo, lo + 2) if lo + 2 <= sel.shape[ax] else (sel.shape[ax] - 2, sel.shape[ax])
        out.append(slice(lo, hi))
    return tuple(out)


# --- texture ----------------------------------------------------------------


def _neighbours26():
    return [(a, b, c) for a in (-1, 0, 1) for b in (-1, 0, 1) for c in (-1, 0, 1) if (a, b, c) != (0, 0, 0)]


def _bin_dict(sel, values):
    """{(z, y, x): bin} over the ROI."""
    coords = [tuple(int(i) for i in c) for c in np.argwhere(sel)]
    b = bins16([values[c] for c in coords])
    return dict(zip(coords, b))


def glcm_idmn(sel, values, ng=16):
    B = _bin_dict(sel, values)
    seen = set()
    mats = []
    for d in _neighbours26():
        neg = tuple(-x for x in d)
        if neg in seen:
            continue
        seen.add(d)
        P = [[0.0] * ng for _ in range(ng)]
        for (z, y, x), i in B.items():
            for dd in (d, neg):
                q = (z + dd[0], y + dd[1], x + dd[2])
                if q in B:
                    P[i - 1][B[q] - 1] += 1
        tot = sum(map(sum, P))
        if tot:
            mats.append([[v / tot for v in row] for row in P])
    if not mats:
        return math.nan
    val = 0.0
    for i in range(ng):
        for j in range(ng):
            p = sum(m[i][j] for m in mats) / len(mats)
            val += p / (1 + (i - j) ** 2 / ng**2)
    return val


def gldm(sel, values, ng=16):
    B = _bin_dict(sel, values)
    M = [[0] * 27 for _ in range(ng)]
    for (z, y, x), i in B.items():
        dep = 1
        for d in _neighbours26():
            if B.get((z + d[0], y + d[1], x + d[2])) == i:
                dep += 1
        M[i - 1][dep - 1] += 1
    return M


def gldm_idmn(sel, values, ng=16):
    M = gldm(sel, values, ng)
    n = sum(map(sum, M))
    return sum(M[i][j] / n / (1 + ((i + 1) - (j + 1)) ** 2 / ng**2) for i in range(ng) for j in range(27))


def gldm_dnn(sel, values, ng=16):
    M = gldm(sel, values, ng)
    n = sum(map(sum, M))
    return sum(sum(M[i][j] for i in range(ng)) ** 2 for j in range(27)) / n**2


def zones(sel, values):
    """Zone sizes per bin by explicit flood fill over 26-neighbours."""
    B = _bin_dict(sel, values)
    seen = set()
    out = []
    for start in sorted(B):
        if start in seen:
            continue
        g = B[start]
        queue = [start]
        seen.add(start)
        size = 0
        while queue:
            p = queue.pop()
            size += 1
            for d in _neighbours26():
                q = (p[0] + d[0], p[1] + d[1], p[2] + d[2])
                if q not in seen and B.get(q) == g:
                    seen.add(q)
                    queue.append(q)
        out.append((g, size))
    return out


def sznn(sel, values):
    z = zones(sel, values)
    counts = Counter(s for _, s in z)
    return sum(c * c for c in counts.values()) / len(z) ** 2


# --- radiomics bundle ---------------------------------------------------------


def radiomics8(vol, sel, spacing):
    sx, sy, sz = spacing
    idx = np.argwhere(sel)
    pts = [(x * sx, y * sy, z * sz) for z, y, x in idx]
    el, fl = shape(pts)
    box = bbox(sel)
    blk = np.asarray(vol[box], float)
    bs = sel[box]
    llh = haar_direct(blk, "LLH")
    lhl = haar_direct(blk, "LHL")
    lll = haar_direct(blk, "LLL", exact=True)
    hhh = haar_direct(blk, "HHH", exact=True)
    return {
        "original-shape-Elongation": el,
        "original-shape-Flatness": fl,
        "wavelet-LLH-firstorder-Mean": float(np.mean([llh[tuple(c)] for c in np.argwhere(bs)])),
        "wavelet-LHL-firstorder-Kurtosis": moments([lhl[tuple(c)] for c in np.argwhere(bs)])[3],
        "wavelet-LLL-gldm-Idmn": gldm_idmn(bs, lll),
        "wavelet-HHH-glszm-SizeZoneNonUniformityNormalized": sznn(bs, hhh),
        "original-glcm-Idmn": glcm_idmn(sel, vol),
        "original-gldm-DependenceNonUniformityNormalized": gldm_dnn(sel, vol),
    }


def close(a, b, rel=1e-9):
    if math.isnan(a) or math.isnan(b):
        return math.isnan(a) and math.isnan(b)
    return abs(a - b) <= rel * max(1.0, abs(a), abs(b))


# --- bilateral filter -----------------------------------------------------------


def bilateral_voxel(data, times, spacing, t, z, y, x, ss, st, sr, rs, rt):
    """One output sample of the spatio-temporal bilateral filter, clamp-to-edge, exact exp."""
    nt, nz, ny, nx = data.shape
    sx, sy, sz = spacing
    c = float(data[t, z, y, x])
    num = den = 0.0
    for dt in range(-rt, rt + 1):
        tt = t + dt
        if tt < 0:
            tval = times[0] - (times[1] - times[0]) * (-tt)
        elif tt >= nt:
            tval = times[-1] + (times[-1] - times[-2]) * (tt - nt + 1)
        else:
            tval = times[tt]
        ti = min(max(tt, 0), nt - 1)
        for dz in range(-rs, rs + 1):
            for dy in range(-rs, rs + 1):
                for dx in range(-rs, rs + 1):
                    v = float(data[ti, min(max(z + dz, 0), nz - 1), min(max(y + dy, 0), ny - 1), min(max(x + dx, 0), nx - 1)])
                    d2 = (dx * sx) ** 2 + (dy * sy) ** 2 + (dz * sz) ** 2
                    w = math.exp(-d2 / (2 * ss**2)) * math.exp(-((tval - times[t]) ** 2) / (2 * st**2)) * math.exp(-((v - c) ** 2) / (2 * sr**2))
                    num += w * v
                    den += w
    return num / den
