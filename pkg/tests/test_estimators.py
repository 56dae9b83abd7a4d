"""Click-table and peak-area estimators."""

import numpy as np
import pytest

from qngpairs.estimators import (ClickCounts, NoHeraldsError, g2_from_peaks,
                                 hbt_counts, pair_click_stats, photon_stats,
                                 prep_efficiency)
from qngpairs.timetags import ROLE_BITS, PeakAreas, PulseClickTable


def table_from_patterns(patterns: dict, n_pulses: int) -> PulseClickTable:
    idx = np.array(sorted(patterns), dtype=np.int64)
    pat = np.array([patterns[k] for k in sorted(patterns)], dtype=np.uint8)
    return PulseClickTable(n_pulses=n_pulses, window_ps=1000.0,
                           pulse_index=idx, pattern=pat)


X1, X2, XX1, XX2 = (ROLE_BITS[r] for r in ("x1", "x2", "xx1", "xx2"))


class TestHbtCounts:
    def test_definition(self):
        # X1 clicks in pulses {1,2}, X2 in {2}, N=10
        table = table_from_patterns({1: X1, 2: X1 | X2}, 10)
        c = hbt_counts(table)
        assert (c.r1a, c.r1b, c.r2, c.n) == (2, 1, 1, 10)
        assert not c.heralded

    def test_heralded_restriction(self):
        table = table_from_patterns({0: X1 | XX1, 1: X1, 2: XX2,
                                     3: X1 | X2 | XX1}, 10)
        c = hbt_counts(table, herald="xx")
        assert c.n == 3          # pulses 0, 2, 3 have an XX click
        assert (c.r1a, c.r1b, c.r2) == (2, 1, 1)
        assert c.heralded

    def test_no_heralds_raises(self):
        table = table_from_patterns({1: X1}, 10)
        with pytest.raises(NoHeraldsError):
            hbt_counts(table, herald="xx")

    def test_missing_roles_rejected(self):
        table = table_from_patterns({1: X1}, 10)
        table.roles = ("x1",)
        with pytest.raises(ValueError):
            hbt_counts(table)


class TestPhotonStats:
    def test_pure_singles(self):
        stats = photon_stats(ClickCounts(r1a=500, r1b=500, r2=0, n=1000))
        assert stats.p1 == pytest.approx(1.0)
        assert stats.p2plus == 0.0
        assert stats.p0 == pytest.approx(0.0)

    def test_balanced_correction(self):
        stats = photon_stats(ClickCounts(r1a=1, r1b=1, r2=1, n=10 ** 6),
                             bs_ratio=0.5)
        assert stats.p2plus == pytest.approx(2e-6, rel=1e-12)
        assert not stats.unbalanced_correction

    def test_unbalanced_correction(self):
        stats = photon_stats(ClickCounts(r1a=1, r1b=1, r2=1, n=10 ** 6),
                             bs_ratio=0.6)
        assert stats.p2plus == pytest.approx(1.0 / (10 ** 6 * 0.48), rel=1e-12)
        assert stats.p2plus == pytest.approx(2.083e-6, rel=1e-3)

    def test_relabel_invariance(self):
        a = photon_stats(ClickCounts(r1a=120, r1b=80, r2=3, n=10 ** 5),
                         bs_ratio=0.3)
        b = photon_stats(ClickCounts(r1a=80, r1b=120, r2=3, n=10 ** 5),
                         bs_ratio=0.7)
        assert a.p1 == b.p1
        assert a.p2plus == pytest.approx(b.p2plus, rel=1e-12)

    def test_degenerate_ratio_rejected(self):
        with pytest.raises(ValueError):
            photon_stats(ClickCounts(r1a=1, r1b=1, r2=0, n=10), bs_ratio=1.0)

    def test_unbalanced_flag_threshold(self):
        # 2R(1-R) at R=0.55 is 0.495, only 1% off balanced: no flag
        ok = photon_stats(ClickCounts(r1a=1, r1b=1, r2=1, n=10 ** 4),
                          bs_ratio=0.55)
        assert not ok.unbalanced_correction

    def test_sigma_scaling(self):
        small = photon_stats(ClickCounts(r1a=100, r1b=100, r2=4, n=10 ** 4))
        big = photon_stats(ClickCounts(r1a=10_000, r1b=10_000, r2=400, n=10 ** 6))
        assert big.sigma_p1 == pytest.approx(small.sigma_p1 / 10, rel=1e-9)
        assert big.sigma_p2plus == pytest.approx(small.sigma_p2plus / 10,
                                                 rel=1e-9)


class TestG2FromPeaks:
    def test_ratio_definition(self):
        peaks = PeakAreas(zero_peak_counts=10,
                          side_peak_counts=[(k, 10_000) for k in
                                            (-2, -1, 1, 2)],
                          window_ps=2000.0)
        res = g2_from_peaks(peaks)
        assert res.value == pytest.approx(1e-3, rel=1e-12)

    def test_zero_peak_upper_bound(self):
        peaks = PeakAreas(zero_peak_counts=0,
                          side_peak_counts=[(-1, 5000), (1, 5000)],
                          window_ps=2000.0)
        res = g2_from_peaks(peaks)
        assert res.value == 0.0
        assert res.upper_bound_90 == pytest.approx(2.303 / 5000, rel=1e-9)

    def test_needs_two_side_peaks(self):
        with pytest.raises(ValueError):
            g2_from_peaks(PeakAreas(zero_peak_counts=1,
                                    side_peak_counts=[(1, 10)],
                                    window_ps=100.0))

    def test_flat_poisson_histogram_near_one(self):
        rng = np.random.default_rng(0)
        sides = [(k, int(rng.poisson(10_000))) for k in (-3, -2, -1, 1, 2, 3)]
        zero = int(rng.poisson(10_000))
        res = g2_from_peaks(PeakAreas(zero, sides, 2000.0))
        assert abs(res.value - 1.0) < 3 * res.sigma


class TestPrepEfficiency:
    def test_ratio_definition(self):
        peaks = PeakAreas(zero_peak_counts=10_000,
                          side_peak_counts=[(k, 8470) for k in (-2, -1, 1, 2)],
                          window_ps=2000.0)
        res = prep_efficiency(peaks)
        assert res.value == pytest.approx(0.847, rel=1e-12)

    def test_unity_when_equal(self):
        peaks = PeakAreas(zero_peak_counts=500,
                          side_peak_counts=[(-1, 500), (1, 500)],
                          window_ps=2000.0)
        assert prep_efficiency(peaks).value == pytest.approx(1.0)

    def test_empty_zero_peak_rejected(self):
        with pytest.raises(ValueError):
            prep_efficiency(PeakAreas(0, [(1, 10)], 100.0))


class TestPairClickStats:
    def test_single_cross_pair_every_pulse(self):
        # X1 and XX1 click in every pulse: only 1 of 4 cross pairs fires
        table = table_from_patterns({k: X1 | XX1 for k in range(10)}, 10)
        st = pair_click_stats(table)
        assert st.ps == pytest.approx(0.25)
        assert st.pe == 0.0

    def test_same_arm_every_pulse(self):
        table = table_from_patterns({k: X1 | X2 for k in range(10)}, 10)
        st = pair_click_stats(table)
        assert st.ps == 0.0
        assert st.pe == pytest.approx(0.5)   # X arm 1, XX arm 0, mean
        assert st.pe_x == pytest.approx(1.0)
        assert st.pe_xx == 0.0

    def test_all_detectors_every_pulse(self):
        table = table_from_patterns({k: X1 | X2 | XX1 | XX2 for k in range(7)}, 7)
        st = pair_click_stats(table)
        assert st.ps == pytest.approx(1.0)
        assert st.pe == pytest.approx(1.0)

    def test_sigma_counts(self):
        table = table_from_patterns({0: X1 | XX1, 1: X2 | XX2}, 100)
        st = pair_click_stats(table)
        assert st.ps == pytest.approx(2 / 400)
        assert st.sigma_ps == pytest.approx(np.sqrt(2) / 400)

    def test_missing_roles_rejected(self):
        table = table_from_patterns({0: X1}, 10)
        table.roles = ("x1", "x2")
        with pytest.raises(ValueError):
            pair_click_stats(table)


class TestClickCountsValidation:
    def test_r2_bounded(self):
        with pytest.raises(ValueError):
            ClickCounts(r1a=1, r1b=5, r2=3, n=10)

    def test_counts_bounded_by_trials(self):
        with pytest.raises(ValueError):
            ClickCounts(r1a=11, r1b=0, r2=0, n=10)
