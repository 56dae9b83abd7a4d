"""Source simulation: determinism, physics sanity, attenuation."""

import numpy as np
import pytest

from qngpairs.polarization import (CHSH_SETTINGS, MeasurementSetting,
                                   chsh_from_counts)
from qngpairs.photon_number import DetectionChainParams
from qngpairs.simulate import (CHUNK_PULSES, ChannelConfig, DetectorParams,
                               QdSourceConfig, SpdcSourceConfig,
                               attenuate_stream, pulse_area_from_power_ratio,
                               rabi_preparation_probability, simulate_qd,
                               simulate_spdc)
from qngpairs.timetags import ROLE_BITS, fold_pulses
from qngpairs import estimators, timetags


def ideal_chain(**kw):
    kw.setdefault("efficiency", 1.0)
    return ChannelConfig.uniform(**kw)


class TestRabi:
    def test_pi_pulse(self):
        assert rabi_preparation_probability(np.pi) == pytest.approx(1.0)

    def test_zero_area(self):
        assert rabi_preparation_probability(0.0) == 0.0

    def test_half_pi(self):
        assert rabi_preparation_probability(np.pi / 2) == pytest.approx(0.5)

    def test_damping(self):
        p = rabi_preparation_probability(np.pi, damping=0.1)
        assert p == pytest.approx(np.exp(-0.1 * np.pi), rel=1e-12)

    def test_power_ratio_mapping(self):
        assert pulse_area_from_power_ratio(1.0) == pytest.approx(np.pi)
        assert pulse_area_from_power_ratio(0.25) == pytest.approx(np.pi / 2)

    def test_negative_rejected(self):
        with pytest.raises(ValueError):
            rabi_preparation_probability(-0.1)


class TestDeterminism:
    def test_same_seed_bit_identical(self):
        src = QdSourceConfig(prep_prob=0.5, pulse_area_rad=None, eps_x=0.01)
        chain = ideal_chain(efficiency=0.3, jitter_sigma_ps=25.0,
                            dark_rate_hz=100.0)
        a = simulate_qd(src, chain, 50_000, seed=42)
        b = simulate_qd(src, chain, 50_000, seed=42)
        assert np.array_equal(a.channels, b.channels)
        assert np.array_equal(a.times, b.times)

    def test_different_seed_differs(self):
        src = QdSourceConfig(prep_prob=0.5, pulse_area_rad=None)
        chain = ideal_chain(efficiency=0.3)
        a = simulate_qd(src, chain, 20_000, seed=1)
        b = simulate_qd(src, chain, 20_000, seed=2)
        assert not (a.times.size == b.times.size
                    and np.array_equal(a.times, b.times))

    def test_threads_bit_identical_across_chunks(self):
        n = CHUNK_PULSES + 12_345   # force a chunk boundary
        src = QdSourceConfig(prep_prob=0.1, pulse_area_rad=None, eps_x=1e-3)
        chain = ideal_chain(efficiency=0.2, jitter_sigma_ps=30.0,
                            dark_rate_hz=50.0)
        a = simulate_qd(src, chain, n, seed=7, threads=1)
        b = simulate_qd(src, chain, n, seed=7, threads=3)
        assert np.array_equal(a.channels, b.channels)
        assert np.array_equal(a.times, b.times)

    def test_spdc_threads_bit_identical(self):
        src = SpdcSourceConfig(mu=0.2, modes=3)
        chain = ideal_chain(efficiency=0.4)
        a = simulate_spdc(src, chain, CHUNK_PULSES + 999, seed=3, threads=1)
        b = simulate_spdc(src, chain, CHUNK_PULSES + 999, seed=3, threads=2)
        assert np.array_equal(a.times, b.times)
        assert np.array_equal(a.channels, b.channels)


class TestQdPhysics:
    def test_zero_efficiency_only_sync(self):
        src = QdSourceConfig()   # pi pulse, prep 1
        chain = ideal_chain(efficiency=0.0)
        stream = simulate_qd(src, chain, 5_000, seed=0)
        sync_ch = chain.channel_ids["sync"]
        assert np.all(stream.channels == sync_ch)
        assert stream.times.size == 5_000

    def test_implicit_sync_empty(self):
        src = QdSourceConfig()
        chain = ideal_chain(efficiency=0.0, implicit_sync=True)
        stream = simulate_qd(src, chain, 5_000, seed=0)
        assert stream.times.size == 0

    def test_sync_divider(self):
        src = QdSourceConfig()
        chain = ideal_chain(efficiency=0.0, sync_divider=8)
        stream = simulate_qd(src, chain, 64, seed=0)
        assert stream.times.size == 8

    def test_ideal_cascade_one_pair_per_pulse(self):
        src = QdSourceConfig()   # prep 1, no extras
        chain = ideal_chain(efficiency=1.0, implicit_sync=True)
        n = 2_000
        stream = simulate_qd(src, chain, n, seed=1)
        x_ch = (chain.channel_ids["x1"], chain.channel_ids["x2"])
        xx_ch = (chain.channel_ids["xx1"], chain.channel_ids["xx2"])
        is_x = np.isin(stream.channels, x_ch)
        is_xx = np.isin(stream.channels, xx_ch)
        assert is_x.sum() == n and is_xx.sum() == n
        # cascade ordering: each pulse's X tag later than its XX tag (no jitter)
        period = stream.header.period_ps
        k_x = np.rint(stream.times[is_x] / period).astype(int)
        k_xx = np.rint(stream.times[is_xx] / period).astype(int)
        tx = np.full(n, -1.0)
        txx = np.full(n, -1.0)
        tx[k_x] = stream.times[is_x] - k_x * period
        txx[k_xx] = stream.times[is_xx] - k_xx * period
        # strict ordering up to the 1 ps integer rounding of tag times
        assert np.all(tx >= txx)
        assert np.mean(tx > txx) > 0.99

    def test_dead_time_enforced(self):
        src = QdSourceConfig(eps_x=0.5)   # frequent double hits on the X arm
        det = DetectorParams(efficiency=1.0, dead_time_ps=50_000.0)
        chain = ChannelConfig(detectors={r: det for r in ("x1", "x2", "xx1", "xx2")},
                              implicit_sync=True)
        stream = simulate_qd(src, chain, 20_000, seed=2)
        for ch in set(chain.channel_ids[r] for r in ("x1", "x2", "xx1", "xx2")):
            t = stream.times[stream.channels == ch]
            if t.size > 1:
                assert np.min(np.diff(t)) >= 50_000

    def test_blinking_stationary_fraction(self):
        src = QdSourceConfig(blink_on_prob=0.6, blink_switch_prob=0.05)
        chain = ideal_chain(efficiency=1.0, implicit_sync=True)
        n = 200_000
        stream = simulate_qd(src, chain, n, seed=3)
        x_ch = (chain.channel_ids["x1"], chain.channel_ids["x2"])
        n_on = int(np.isin(stream.channels, x_ch).sum())
        # effective sample count of the telegraph is n * switch_prob
        sigma = np.sqrt(0.6 * 0.4 / (n * 0.05))
        assert abs(n_on / n - 0.6) < 3 * sigma

    def test_jitter_ordering_violations_match_gaussian_tail(self):
        # X lags XX by Exp(tau_x); equal per-channel jitter sigma widens the
        # difference by N(0, sigma*sqrt(2)); the violation rate is the
        # quadrature average of the Gaussian tail over the exponential delay
        from scipy.integrate import quad
        from scipy.stats import norm
        sigma, tau = 60.0, 230.0
        src = QdSourceConfig(tau_x_ps=tau)
        chain = ideal_chain(efficiency=1.0, jitter_sigma_ps=sigma,
                            implicit_sync=True)
        n = 100_000
        stream = simulate_qd(src, chain, n, seed=12)
        period = stream.header.period_ps
        x_sel = np.isin(stream.channels, (chain.channel_ids["x1"],
                                          chain.channel_ids["x2"]))
        k = np.rint(stream.times / period).astype(np.int64)
        tx = np.zeros(n)
        txx = np.zeros(n)
        tx[k[x_sel]] = stream.times[x_sel] - k[x_sel] * period
        txx[k[~x_sel]] = stream.times[~x_sel] - k[~x_sel] * period
        frac = np.mean(tx < txx)
        expect = quad(lambda d: norm.cdf(-d / (sigma * np.sqrt(2)))
                      * np.exp(-d / tau) / tau, 0, 50 * sigma)[0]
        assert abs(frac - expect) < 3 * np.sqrt(expect * (1 - expect) / n)

    def test_pure_source_has_no_same_arm_coincidences(self):
        src = QdSourceConfig()   # prep 1, eps 0, dark 0
        chain = ideal_chain(efficiency=0.8, implicit_sync=True)
        stream = simulate_qd(src, chain, 50_000, seed=4)
        table = fold_pulses(stream, 4_000.0)
        assert table.count_mask(ROLE_BITS["x1"] | ROLE_BITS["x2"]) == 0
        assert table.count_mask(ROLE_BITS["xx1"] | ROLE_BITS["xx2"]) == 0


class TestSpdc:
    def test_mu_zero_only_sync(self):
        src = SpdcSourceConfig(mu=0.0)
        chain = ideal_chain(efficiency=1.0)
        stream = simulate_spdc(src, chain, 1_000, seed=0)
        assert np.all(stream.channels == chain.channel_ids["sync"])

    def test_thermal_multiplicity_ratio(self):
        # P(n>=2 | n>=1) for a single thermal mode is mu/(1+mu)
        mu = 0.05
        src = SpdcSourceConfig(mu=mu, modes=1)
        chain = ideal_chain(efficiency=1.0, implicit_sync=True)
        n = 200_000
        stream = simulate_spdc(src, chain, n, seed=5)
        x_sel = np.isin(stream.channels, (chain.channel_ids["x1"],
                                          chain.channel_ids["x2"]))
        period = stream.header.period_ps
        k = np.rint(stream.times[x_sel] / period).astype(np.int64)
        mult = np.bincount(np.bincount(k, minlength=n))
        n_ge1 = mult[1:].sum()
        n_ge2 = mult[2:].sum()
        ratio = n_ge2 / n_ge1
        expect = mu / (1 + mu)
        sigma = np.sqrt(expect * (1 - expect) / n_ge1)
        assert abs(ratio - expect) < 3 * sigma

    def test_gaussian_source_below_threshold_3sigma(self):
        from qngpairs.criteria import pair_threshold_exact
        from qngpairs.photon_number import (detected_pair_click_probs,
                                            tmsv_distribution)
        src = SpdcSourceConfig(mu=0.1, modes=1)
        chain = ideal_chain(efficiency=0.25, implicit_sync=True)
        stream = simulate_spdc(src, chain, 300_000, seed=6)
        table = fold_pulses(stream, 4_000.0)
        stats = estimators.pair_click_stats(table)
        # measured point stays on the Gaussian side of the boundary
        assert stats.ps <= pair_threshold_exact(stats.pe) + 3 * stats.sigma_ps
        # and matches the enumeration oracle
        oracle = detected_pair_click_probs(tmsv_distribution(0.1),
                                           chain.to_chain_params())
        assert abs(stats.ps - oracle.ps) < 3 * max(stats.sigma_ps, 1e-9)
        assert abs(stats.pe - oracle.pe) < 3 * max(stats.sigma_pe, 1e-9)


class TestAttenuation:
    def _stream(self, seed=7):
        src = QdSourceConfig(prep_prob=0.8, pulse_area_rad=None, eps_x=0.05,
                             eps_xx=0.05)
        chain = ideal_chain(efficiency=0.5, implicit_sync=True)
        return simulate_qd(src, chain, 100_000, seed=seed)

    def test_t1_identity(self):
        s = self._stream()
        out = attenuate_stream(s, 1.0, seed=0)
        assert np.array_equal(out.times, s.times)
        assert np.array_equal(out.channels, s.channels)

    def test_t0_removes_photons(self):
        s = self._stream()
        out = attenuate_stream(s, 0.0, seed=0)
        assert out.times.size == 0   # implicit sync, so nothing survives

    def test_out_of_range_rejected(self):
        with pytest.raises(ValueError):
            attenuate_stream(self._stream(), 1.5, seed=0)

    def test_half_transmission_quarters_coincidences(self):
        s = self._stream()
        thinned = attenuate_stream(s, 0.5, seed=1)
        t_full = fold_pulses(s, 4_000.0)
        t_half = fold_pulses(thinned, 4_000.0)
        full = estimators.pair_click_stats(t_full)
        half = estimators.pair_click_stats(t_half)
        assert abs(half.ps - full.ps / 4) < 3 * np.hypot(half.sigma_ps,
                                                         full.sigma_ps / 4)
        assert abs(half.pe - full.pe / 4) < 3 * np.hypot(half.sigma_pe,
                                                         full.sigma_pe / 4)

    def test_subset_of_roles(self):
        s = self._stream()
        out = attenuate_stream(s, 0.0, seed=2, roles=("x1",))
        x1 = s.header.channels["x1"]
        assert np.count_nonzero(out.channels == x1) == 0
        x2 = s.header.channels["x2"]
        assert np.count_nonzero(out.channels == x2) == \
            np.count_nonzero(s.channels == x2)


class TestPolarizationRouting:
    def test_analyzer_chsh_end_to_end(self):
        # four runs with the analyzer pairs of the CHSH settings; the click
        # pattern (which detector fired per arm) encodes the outcomes
        counts = np.zeros((4, 4))
        for i, (a, b) in enumerate(CHSH_SETTINGS):
            src = QdSourceConfig()
            chain = ChannelConfig.uniform(
                efficiency=1.0, implicit_sync=True,
                analyzer_x=MeasurementSetting(a),
                analyzer_xx=MeasurementSetting(b))
            stream = simulate_qd(src, chain, 30_000, seed=100 + i)
            table = fold_pulses(stream, 4_000.0)
            for j, (bx, bxx) in enumerate([("x1", "xx1"), ("x1", "xx2"),
                                           ("x2", "xx1"), ("x2", "xx2")]):
                mask = ROLE_BITS[bx] | ROLE_BITS[bxx]
                counts[i, j] = table.count_mask(mask)
        res = chsh_from_counts(counts)
        assert abs(res.s_value - 2 * np.sqrt(2)) < 4 * res.sigma_s

    def test_fss_dephasing_washes_out_x_correlation(self):
        x = MeasurementSetting(np.array([1.0, 0.0, 0.0]))
        counts = {}
        for fss in (0.0, 40.0):   # 40 ueV precesses many turns over 230 ps
            src = QdSourceConfig(fss_ueV=fss)
            chain = ChannelConfig.uniform(efficiency=1.0, implicit_sync=True,
                                          analyzer_x=x, analyzer_xx=x)
            stream = simulate_qd(src, chain, 40_000, seed=11)
            table = fold_pulses(stream, 4_000.0)
            same = (table.count_mask(ROLE_BITS["x1"] | ROLE_BITS["xx1"])
                    + table.count_mask(ROLE_BITS["x2"] | ROLE_BITS["xx2"]))
            counts[fss] = same / table.n_pulses
        assert counts[0.0] > 0.99          # phi+ perfectly x-correlated
        assert 0.35 < counts[40.0] < 0.65  # dephased toward uncorrelated


class TestHeraldedStatistics:
    def test_heralded_multiphoton_below_unheralded_scaled(self):
        # heralded P2+ cannot exceed unheralded P2+ over the heralding
        # efficiency (statistical sanity ordering, 3 sigma slack)
        src = QdSourceConfig(prep_prob=0.8, pulse_area_rad=None,
                             eps_x=0.02, eps_xx=0.02)
        chain = ideal_chain(efficiency=0.5, implicit_sync=True)
        stream = simulate_qd(src, chain, 400_000, seed=13)
        table = fold_pulses(stream, 4_000.0)
        unher = estimators.photon_stats(estimators.hbt_counts(table))
        her_counts = estimators.hbt_counts(table, herald="xx")
        her = estimators.photon_stats(her_counts)
        herald_eff = her_counts.n / table.n_pulses
        slack = 3 * (her.sigma_p2plus + unher.sigma_p2plus / herald_eff)
        assert her.p2plus <= unher.p2plus / herald_eff + slack


class TestConfigValidation:
    def test_bad_probability(self):
        with pytest.raises(ValueError):
            QdSourceConfig(eps_x=1.5)

    def test_bad_bs_ratio(self):
        with pytest.raises(ValueError):
            ChannelConfig.uniform(bs_ratio_x=1.2)

    def test_single_analyzer_rejected(self):
        with pytest.raises(ValueError):
            ChannelConfig.uniform(
                analyzer_x=MeasurementSetting(np.array([0.0, 0.0, 1.0])))

    def test_prep_requires_some_drive(self):
        with pytest.raises(ValueError):
            QdSourceConfig(pulse_area_rad=None)

    def test_chain_params_mapping(self):
        chain = ChannelConfig.uniform(efficiency=0.4, bs_ratio_x=0.6)
        cp = chain.to_chain_params()
        assert cp.eta_x == pytest.approx(0.4)
        assert cp.bs_ratio_x == pytest.approx(0.6)
        assert isinstance(cp, DetectionChainParams)
