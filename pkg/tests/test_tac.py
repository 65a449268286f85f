import numpy as np
import pytest

from pcatdyn import roi, tac
from pcatdyn.volgrid import DynamicSeries, Geometry, Label, LabelMask


def _toy():
    g = Geometry((3, 1, 1), (1, 1, 1))
    data = np.array([[-100, -60, -35], [-90, -40, -20], [-95, -50, -25]], float).reshape(3, 1, 1, 3)
    s = DynamicSeries(g, data, [0.0, 2.0, 4.0])
    m = LabelMask.from_bool(g, np.ones(g.shape, bool), Label.PCAT)
    return s, m


def test_fixed_vs_per_scan_membership():
    s, m = _toy()
    fixed = tac.compute_tac(s, m, Label.PCAT, tac.FIXED, roi.FAT_WINDOW, reference=0)
    per = tac.compute_tac(s, m, Label.PCAT, tac.PER_SCAN, roi.FAT_WINDOW)
    np.testing.assert_allclose(fixed.mean_hu, [-65.0, -50.0, -56.666666666666664])
    assert fixed.voxel_count.tolist() == [3, 3, 3]
    np.testing.assert_allclose(per.mean_hu, [-65.0, -65.0, -72.5])  # -20 leaves, -25 leaves
    assert per.voxel_count.tolist() == [3, 2, 2]
    np.testing.assert_allclose(fixed.delta(), [0.0, 15.0, 8.333333333333336])


def test_empty_region_errors():
    s, m = _toy()
    with pytest.raises(ValueError, match="empty region"):
        tac.compute_tac(s, m, Label.EAT)
    with pytest.raises(ValueError, match="scan"):
        tac.compute_tac(s, m, Label.PCAT, tac.PER_SCAN, (-1000.0, -99.0))
    with pytest.raises(ValueError, match="policy"):
        tac.compute_tac(s, m, Label.PCAT, "sometimes")


def _curve(values, label=Label.AORTA):
    n = len(values)
    return tac.TimeAttenuationCurve(np.arange(n) * 2.0, np.asarray(values, float), np.zeros(n), np.ones(n, int), label)


def test_find_peaks_earliest_tie():
    a = _curve([0, 5, 9, 9, 3])
    p = _curve([0, 1, 2, 4, 4], Label.PCAT)
    pk = tac.find_peaks(a, p)
    assert (pk.p1_index, pk.pa_index, pk.ppcat_index) == (0, 2, 3)
    assert pk.pa_time == 4.0 and pk.ppcat_time == 6.0


def test_enhancement_summary_offsets():
    a = _curve([0, 5, 9, 7, 3])
    p = _curve([10, 11, 13, 16, 12], Label.PCAT)
    pk = tac.find_peaks(a, p)
    e = tac.enhancement_summary(p, pk, offsets=(1,))
    assert e.offset_delta_hu == {-1: -2.0, 1: 3.0}
    assert e.delta_at_ppcat == 6.0 and e.peak_delta_hu == 6.0 and e.time_to_peak_s == 6.0
    edge = tac.find_peaks(_curve([0, 1, 2, 3, 9]), p)
    with pytest.raises(ValueError, match="outside the series"):
        tac.enhancement_summary(p, edge, offsets=(1,))


def test_apparent_volume_curve():
    s, m = _toy()
    vc = tac.apparent_volume_curve(s, m)
    assert vc.counts.tolist() == [[3, 2, 2], [3, 3, 3]]
    np.testing.assert_allclose(vc.percent_change[0], [0.0, -100 / 3, -100 / 3])
    np.testing.assert_allclose(vc.peak_loss_percent(), [100 / 3, 0.0])
    assert vc.volume_cm3[0, 0] == pytest.approx(0.003)


def test_prox_dist_requires_both():
    s, m = _toy()
    pk = tac.PeakInfo(0, 1, 1, 0.0, 2.0, 2.0)
    with pytest.raises(ValueError, match="empty mask"):
        tac.compare_prox_dist(s, m, m, Label.PCAT_PROX, Label.PCAT_DIST, pk)


def test_csv_writers(tmp_path):
    s, m = _toy()
    t = tac.compute_tac(s, m, Label.PCAT)
    tac.write_tac_csv([t], tmp_path / "t.csv")
    rows = (tmp_path / "t.csv").read_text().splitlines()
    assert rows[0] == "region,policy,scan,time_s,mean_hu,std_hu,n,delta_hu"
    assert rows[2].startswith("PCAT,fixed,1,2.0,-50.0,")
    tac.write_volume_csv(tac.apparent_volume_curve(s, m), tmp_path / "v.csv")
    assert len((tmp_path / "v.csv").read_text().splitlines()) == 1 + 2 * 3
