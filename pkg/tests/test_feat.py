import math

import numpy as np
import pytest
from scipy import stats

from pcatdyn import roi
from pcatdyn.feat import FEATURE_NAMES, drift_table, extract, haar_swt3
from pcatdyn.feat import drift as driftmod
from pcatdyn.feat.firstorder import discretize, entropy, handcrafted, moments
from pcatdyn.feat.shape import shape_from_points
from pcatdyn.feat.texture import bin_volume, column_nonuniformity, glcm, gldm, glszm, idmn
from pcatdyn.feat.wavelet import roi_bbox
from pcatdyn.tac import PeakInfo
from pcatdyn.volgrid import Geometry, Label, LabelMask, VolumeGrid


def test_discretize_edges():
    d = discretize(np.arange(17.0))
    assert d.bins.tolist() == list(range(1, 17)) + [16]
    assert not d.degenerate
    c = discretize([3.0, 3.0, 3.0])
    assert c.degenerate and c.bins.tolist() == [1, 1, 1]
    with pytest.raises(ValueError, match="empty"):
        discretize([])


def test_discretize_edge_values_open_upward():
    # a value on an interior edge belongs to the upper bin
    d = discretize([0.0, 0.1, 1.6])
    assert d.bins.tolist() == [1, 2, 16]


def test_moments_against_scipy():
    v = np.random.default_rng(0).gamma(2.0, 10.0, 500)
    mu, sd, sk, ku = moments(v)
    assert mu == pytest.approx(np.mean(v)) and sd == pytest.approx(np.std(v))
    assert sk == pytest.approx(stats.skew(v), rel=1e-10)
    assert ku == pytest.approx(stats.kurtosis(v, fisher=False), rel=1e-10)
    assert math.isnan(moments([2.0, 2.0])[3])


def test_entropy_bounds():
    assert entropy(discretize(np.arange(16.0))) == pytest.approx(4.0)
    assert entropy(discretize([1.0, 1.0])) == 0.0


def test_handcrafted_small_roi():
    g = Geometry((2, 2, 2), (0.5, 0.5, 2.0))
    vals = np.array([-150.0, -100.0, -50.0, -30.0, -120.0, -80.0, -40.0, 0.0]).reshape(g.shape)
    sel = np.ones(g.shape, bool)
    sel[1, 1, 1] = False
    f = handcrafted(VolumeGrid(g, vals), LabelMask.from_bool(g, sel, Label.PCAT), Label.PCAT)
    assert f["voxel_count"] == 7 and f["volume_cm3"] == pytest.approx(7 * 0.5 / 1000)
    assert f["fraction_-190_-110"] == pytest.approx(2 / 7)
    assert f["fraction_-110_-70"] == pytest.approx(2 / 7)
    assert f["fraction_-70_-30"] == pytest.approx(3 / 7)  # -30 is inclusive
    assert f["axial_area_mean"] == pytest.approx((4 + 3) / 2 * 0.25)
    assert f["axial_area_max"] == pytest.approx(1.0)
    assert f["axial_area_std"] == pytest.approx(0.125)


def test_shape_descriptors():
    line = np.column_stack([np.arange(10.0), np.zeros(10), np.zeros(10)])
    assert shape_from_points(line) == (0.0, 0.0)
    g = np.stack(np.meshgrid(np.arange(8.0), np.arange(4.0), np.arange(2.0), indexing="ij"), -1).reshape(-1, 3)
    el, fl = shape_from_points(g)
    # axis variances (n^2 - 1)/12 for n = 8, 4, 2
    assert el == pytest.approx(math.sqrt(15 / 63)) and fl == pytest.approx(math.sqrt(3 / 63))
    assert all(math.isnan(x) for x in shape_from_points(np.array([[1.0, 2.0, 3.0]])))


def test_haar_constant_and_ramp():
    b = haar_swt3(np.full((3, 4, 5), 2.0))
    assert b["LLL"] == pytest.approx(np.full((3, 4, 5), 2.0 * 2**1.5))
    for name in b:
        if name != "LLL":
            assert np.all(b[name] == 0.0)
    ramp = np.broadcast_to(np.arange(5.0), (3, 4, 5))
    h = haar_swt3(ramp)["HLL"]  # high-pass along x
    assert np.allclose(h[..., :-1], -math.sqrt(2)) and np.all(h[..., -1] == 0)
    with pytest.raises(ValueError, match=">= 2"):
        haar_swt3(np.zeros((1, 3, 3)))


def test_roi_bbox():
    sel = np.zeros((5, 6, 7), bool)
    sel[2, 3, 6] = True
    assert roi_bbox(sel) == (slice(1, 4), slice(2, 5), slice(5, 7))
    assert roi_bbox(sel, margin=0) == (slice(2, 4), slice(3, 5), slice(5, 7))


def _two_voxels():
    sel = np.zeros((1, 1, 2), bool)
    sel[:] = True
    return sel, discretize([-100.0, -50.0])


def test_texture_two_voxels_by_hand():
    sel, d = _two_voxels()
    b = bin_volume(sel, d)
    assert b.ravel().tolist() == [1, 16]
    p = glcm(b, 16)
    assert p[0, 15] == p[15, 0] == 0.5 and p.sum() == pytest.approx(1.0)
    assert idmn(p, 16) == pytest.approx(256 / 481)
    m = gldm(b, 16)
    assert m[0, 0] == 1 and m[15, 0] == 1 and m.sum() == 2
    assert idmn(m, 16) == pytest.approx((1 + 256 / 481) / 2)
    assert column_nonuniformity(m) == 1.0
    z = glszm(b, 16)
    assert z.shape == (16, 1) and z.sum() == 2 and column_nonuniformity(z) == 1.0


def test_glszm_zone_sizes():
    b = np.zeros((1, 3, 3), np.int64)
    b[0] = [[1, 1, 2], [2, 1, 2], [3, 3, 1]]
    z = glszm(b, 4)
    # level 1: one diagonal-connected zone of 4; level 2: zones of 1 and 2; level 3: one zone of 2
    assert z[0, 3] == 1 and z[1, 0] == 1 and z[1, 1] == 1 and z[2, 1] == 1
    assert column_nonuniformity(z) == pytest.approx((1 + 4 + 1) / 16)


def test_extract_on_phantom(paper_sim):
    s, m, cls, _ = paper_sim
    cl = cls[Label.LUMEN_LAD]
    disks = roi.axial_disk_mask(cl, roi.effective_diameter(m, cl), roi.PcatRegionSpec(), m)
    fv = extract(s.volume(0), roi.fat_select(s.volume(0), disks), Label.PCAT, 0)
    assert fv.names == FEATURE_NAMES and len(fv.values) == 21
    d = fv.as_dict()
    assert d["mean"] == pytest.approx(-75.0) and d["std"] == pytest.approx(0.0, abs=1e-4)
    # a constant ROI has undefined higher moments
    assert {"skewness", "kurtosis"} <= fv.undefined


def _fv(values, k):
    return driftmod.FeatureVector(FEATURE_NAMES, np.asarray(values, float), k)


def test_drift_table():
    n = len(FEATURE_NAMES)
    base = np.ones(n)
    base[1] = 0.0  # zero baseline: undefined
    base[2] = np.nan
    later = base.copy()
    later[0] = 1.05
    later[3] = 1.5
    t = drift_table([_fv(base, 0), _fv(later, 1), _fv(base, 2)], PeakInfo(0, 1, 1, 0.0, 2.0, 2.0))
    assert t.scans.tolist() == [0, 1, 2]
    assert t.percent[0].tolist() == pytest.approx([0.0, 5.0, 0.0])
    assert t.max_abs[3] == pytest.approx(50.0)
    assert not t.defined[1] and not t.defined[2]
    assert t.stable[0] and not t.stable[3]
    assert t.stable_fraction == pytest.approx((n - 3) / (n - 2))


def test_drift_csv_clip(tmp_path):
    n = len(FEATURE_NAMES)
    a, b = np.ones(n), np.ones(n)
    b[0] = 2.0
    t = drift_table([_fv(a, 0), _fv(b, 1)], PeakInfo(0, 1, 1, 0.0, 2.0, 2.0))
    driftmod.write_drift_csv(t, tmp_path / "d.csv", clip=30.0)
    row = (tmp_path / "d.csv").read_text().splitlines()[1].split(",")
    assert row[0] == "mean" and row[2] == "30.0" and row[3] == "100.0"
