"""CHSH, tomography, fidelity and Born sampling."""

import numpy as np
import pytest

from qngpairs.polarization import (CHSH_SETTINGS, OUTCOME_ORDER, PHI_PLUS,
                                   DensityMatrix, InvalidStateError,
                                   MeasurementSetting, TomographyCounts,
                                   born_probabilities, chsh_expectation,
                                   chsh_from_counts, fidelity,
                                   sample_pair_outcomes,
                                   sample_polarization_pair,
                                   simulate_tomography_counts,
                                   standard_tomography_settings,
                                   tomography_reconstruct)

SQRT2 = np.sqrt(2.0)
Z = MeasurementSetting(np.array([0.0, 0.0, 1.0]))
Y = MeasurementSetting(np.array([0.0, 1.0, 0.0]))


def random_physical_rho(rng) -> DensityMatrix:
    g = rng.normal(size=(4, 4)) + 1j * rng.normal(size=(4, 4))
    m = g @ g.conj().T
    return DensityMatrix(m / np.trace(m).real)


class TestDensityMatrix:
    def test_bell_state_valid(self):
        rho = DensityMatrix.bell_phi_plus()
        assert np.trace(rho.matrix).real == pytest.approx(1.0)

    def test_non_hermitian_rejected(self):
        m = np.eye(4, dtype=complex) / 4
        m[0, 1] = 0.1
        with pytest.raises(InvalidStateError):
            DensityMatrix(m)

    def test_negative_eigenvalue_rejected(self):
        m = np.diag([0.6, 0.5, -0.05, -0.05]).astype(complex)
        with pytest.raises(InvalidStateError):
            DensityMatrix(m)

    def test_trace_rejected(self):
        with pytest.raises(InvalidStateError):
            DensityMatrix(np.eye(4, dtype=complex))

    def test_pair_phase_pi_gives_phi_minus(self):
        rho = DensityMatrix.bell_phi_plus().with_pair_phase(np.pi)
        phi_minus = (np.array([1, 0, 0, -1], complex)) / SQRT2
        assert fidelity(rho, phi_minus) == pytest.approx(1.0, abs=1e-12)


class TestChshExpectation:
    def test_bell_state_tsirelson(self):
        s = chsh_expectation(DensityMatrix.bell_phi_plus()).s_value
        assert s == pytest.approx(2 * SQRT2, abs=1e-12)

    def test_werner_linear(self):
        s = chsh_expectation(DensityMatrix.werner(0.8)).s_value
        assert s == pytest.approx(2 * SQRT2 * 0.8, abs=1e-12)

    def test_product_state(self):
        rho = DensityMatrix.from_pure(np.array([1, 0, 0, 0], complex))
        s = chsh_expectation(rho).s_value
        assert s == pytest.approx(SQRT2, abs=1e-12)


def _counts_from_probs(probs_by_setting, shots):
    return np.array([[p * shots for p in row] for row in probs_by_setting])


class TestChshFromCounts:
    def test_ideal_bell_probabilities(self):
        rho = DensityMatrix.bell_phi_plus()
        rows = []
        for a, b in CHSH_SETTINGS:
            rows.append(born_probabilities(rho, MeasurementSetting(a),
                                           MeasurementSetting(b)))
        res = chsh_from_counts(_counts_from_probs(rows, 10 ** 6))
        assert res.s_value == pytest.approx(2 * SQRT2, abs=1e-9)

    def test_uncorrelated(self):
        res = chsh_from_counts(np.full((4, 4), 250.0))
        assert res.s_value == 0.0

    def test_zero_total_rejected(self):
        c = np.full((4, 4), 10.0)
        c[2] = 0.0
        with pytest.raises(ValueError):
            chsh_from_counts(c)

    def test_sampled_werner_within_3_sigma(self):
        rng = np.random.default_rng(11)
        rho = DensityMatrix.werner(0.8)
        shots = 10 ** 6
        counts = np.zeros((4, 4))
        for i, (a, b) in enumerate(CHSH_SETTINGS):
            p = born_probabilities(rho, MeasurementSetting(a),
                                   MeasurementSetting(b))
            counts[i] = rng.multinomial(shots, p)
        res = chsh_from_counts(counts)
        truth = chsh_expectation(rho).s_value
        assert abs(res.s_value - truth) < 3 * res.sigma_s

    def test_label_swap_flips_one_correlator(self):
        rng = np.random.default_rng(12)
        counts = rng.integers(100, 1000, size=(4, 4)).astype(float)
        base = chsh_from_counts(counts)
        # swap outcome labels of the first analyzer in setting 2:
        # (+,+)<->(-,+) and (+,-)<->(-,-)
        swapped = counts.copy()
        swapped[2] = counts[2][[2, 3, 0, 1]]
        res = chsh_from_counts(swapped)
        assert res.correlators[2] == pytest.approx(-base.correlators[2], rel=1e-12)
        for k in (0, 1, 3):
            assert res.correlators[k] == pytest.approx(base.correlators[k],
                                                       rel=1e-12)


class TestFidelity:
    def test_bell_self(self):
        assert fidelity(DensityMatrix.bell_phi_plus(), PHI_PLUS) == \
            pytest.approx(1.0, abs=1e-12)

    def test_maximally_mixed(self):
        rho = DensityMatrix(np.eye(4, dtype=complex) / 4)
        assert fidelity(rho, PHI_PLUS) == pytest.approx(0.25, abs=1e-12)

    def test_werner_closed_form(self):
        assert fidelity(DensityMatrix.werner(0.8787), PHI_PLUS) == \
            pytest.approx((1 + 3 * 0.8787) / 4, abs=1e-12)
        assert fidelity(DensityMatrix.werner(0.8787), PHI_PLUS) == \
            pytest.approx(0.909, abs=1e-4)

    def test_global_phase_invariance(self):
        rho = DensityMatrix.werner(0.7)
        assert fidelity(rho, PHI_PLUS * np.exp(1j * 1.234)) == \
            pytest.approx(fidelity(rho, PHI_PLUS), abs=1e-12)

    def test_unnormalized_target_rejected(self):
        with pytest.raises(ValueError):
            fidelity(DensityMatrix.bell_phi_plus(), 2.0 * PHI_PLUS)


class TestBornSampling:
    def test_product_state_deterministic(self):
        rho = DensityMatrix.from_pure(np.array([1, 0, 0, 0], complex))
        rng = np.random.default_rng(0)
        for _ in range(32):
            assert sample_polarization_pair(rho, Z, Z, rng) == (1, 1)

    def test_bell_zz_perfectly_correlated(self):
        rho = DensityMatrix.bell_phi_plus()
        rng = np.random.default_rng(1)
        a, b = sample_pair_outcomes(rho, Z, Z, 5000, rng)
        assert np.all(a == b)

    def test_bell_zy_uncorrelated_3sigma(self):
        rho = DensityMatrix.bell_phi_plus()
        rng = np.random.default_rng(2)
        n = 10 ** 6
        a, b = sample_pair_outcomes(rho, Z, Y, n, rng)
        corr = np.mean(a.astype(float) * b.astype(float))
        assert abs(corr) < 3 / np.sqrt(n)

    def test_phase_array_flips_x_correlation(self):
        rho = DensityMatrix.bell_phi_plus()
        x = MeasurementSetting(np.array([1.0, 0.0, 0.0]))
        rng = np.random.default_rng(3)
        a, b = sample_pair_outcomes(rho, x, x, 2000, rng,
                                    phases=np.zeros(2000))
        assert np.all(a == b)          # phi+ is x-correlated
        a, b = sample_pair_outcomes(rho, x, x, 2000, rng,
                                    phases=np.full(2000, np.pi))
        assert np.all(a == -b)         # phase pi turns it into phi-

    @pytest.mark.parametrize("n", [10 ** 5, 10 ** 6])
    def test_chsh_counts_converge_to_expectation(self, n):
        # counts generated by the Born sampler reproduce the exact CHSH value
        rng = np.random.default_rng(42)
        rho = DensityMatrix.werner(0.9)
        counts = np.zeros((4, 4))
        for i, (a, b) in enumerate(CHSH_SETTINGS):
            sa, sb = sample_pair_outcomes(rho, MeasurementSetting(a),
                                          MeasurementSetting(b), n, rng)
            for j, (oa, ob) in enumerate(OUTCOME_ORDER):
                counts[i, j] = np.count_nonzero((sa == oa) & (sb == ob))
        res = chsh_from_counts(counts)
        truth = chsh_expectation(rho).s_value
        assert abs(res.s_value - truth) < 3 * res.sigma_s

    def test_batch_matches_born_probabilities(self):
        rng = np.random.default_rng(4)
        rho = random_physical_rho(rng)
        n = 200_000
        a, b = sample_pair_outcomes(rho, Z, Y, n, rng)
        probs = born_probabilities(rho, Z, Y)
        for k, (sa, sb) in enumerate(OUTCOME_ORDER):
            freq = np.mean((a == sa) & (b == sb))
            assert abs(freq - probs[k]) < 4 * np.sqrt(probs[k] / n + 1e-12)


class TestTomography:
    def test_noiseless_bell_roundtrip(self):
        rho = DensityMatrix.bell_phi_plus()
        rng = np.random.default_rng(0)
        data = simulate_tomography_counts(rho, 10 ** 6, rng, poisson=False)
        rec = tomography_reconstruct(data)
        assert fidelity(rec, PHI_PLUS) >= 0.9999

    def test_poisson_roundtrip_random_state(self):
        rng = np.random.default_rng(5)
        rho = random_physical_rho(rng)
        data = simulate_tomography_counts(rho, 10 ** 6, rng)
        rec = tomography_reconstruct(data)
        overlap = np.trace(rec.matrix @ rho.matrix).real
        purity = np.trace(rho.matrix @ rho.matrix).real
        assert overlap / purity > 0.99
        # physicality invariants
        assert np.min(np.linalg.eigvalsh(rec.matrix)) >= -1e-9
        assert np.trace(rec.matrix).real == pytest.approx(1.0, abs=1e-9)

    def test_maximally_mixed_roundtrip(self):
        rng = np.random.default_rng(6)
        rho = DensityMatrix(np.eye(4, dtype=complex) / 4)
        data = simulate_tomography_counts(rho, 10 ** 6, rng)
        # all settings equally likely for the maximally mixed state
        assert np.allclose(data.counts / data.shots, 0.25, atol=0.01)
        rec = tomography_reconstruct(data)
        assert np.allclose(np.linalg.eigvalsh(rec.matrix), 0.25, atol=0.01)

    def test_adversarial_counts_stay_physical(self):
        rng = np.random.default_rng(7)
        settings = standard_tomography_settings()
        counts = rng.integers(0, 50, size=16).astype(float)
        data = TomographyCounts(settings=settings, counts=counts,
                                shots=np.full(16, 50.0))
        rec = tomography_reconstruct(data)
        assert np.min(np.linalg.eigvalsh(rec.matrix)) >= -1e-9
        assert np.trace(rec.matrix).real == pytest.approx(1.0, abs=1e-9)
        assert np.max(np.abs(rec.matrix - rec.matrix.conj().T)) < 1e-9

    def test_all_zero_counts_rejected(self):
        data = TomographyCounts(settings=standard_tomography_settings(),
                                counts=np.zeros(16), shots=np.full(16, 10.0))
        with pytest.raises(ValueError):
            tomography_reconstruct(data)

    def test_incomplete_settings_rejected(self):
        settings = [("H", "H")] * 16
        data = TomographyCounts(settings=settings, counts=np.full(16, 5.0),
                                shots=np.full(16, 10.0))
        with pytest.raises(ValueError):
            tomography_reconstruct(data)
