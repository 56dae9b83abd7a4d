"""Two-qubit polarization machinery: density matrices, CHSH, tomography.

Conventions: basis order |HH>, |HV>, |VH>, |VV> with H = |0>, V = |1>;
H/V are the eigenstates of sigma_z.  Measurement settings are Bloch
directions; outcome +1 projects onto (I + n.sigma)/2.  The CHSH bases are
z and y on the X side and (z -+ y)/sqrt(2) on the XX side, with the sign
combination fixed so the ideal (|HH> + |VV>)/sqrt(2) state scores +2 sqrt 2.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize

SIGMA_X = np.array([[0, 1], [1, 0]], dtype=complex)
SIGMA_Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
SIGMA_Z = np.array([[1, 0], [0, -1]], dtype=complex)
_PAULI = {"x": SIGMA_X, "y": SIGMA_Y, "z": SIGMA_Z}

H_KET = np.array([1.0, 0.0], dtype=complex)
V_KET = np.array([0.0, 1.0], dtype=complex)
D_KET = (H_KET + V_KET) / np.sqrt(2.0)
R_KET = (H_KET + 1j * V_KET) / np.sqrt(2.0)
TOMO_KETS = {"H": H_KET, "V": V_KET, "D": D_KET, "R": R_KET}
TOMO_LABELS = ("H", "V", "D", "R")

PHI_PLUS = np.kron(H_KET, H_KET) + np.kron(V_KET, V_KET)
PHI_PLUS = PHI_PLUS / np.linalg.norm(PHI_PLUS)

_SQRT2 = np.sqrt(2.0)
# (X setting, XX setting) Bloch vectors for the four CHSH correlators, in the
# order E00, E01, E10, E11 entering S = E00 + E01 + E10 - E11.
CHSH_SETTINGS = (
    (np.array([0.0, 0.0, 1.0]), np.array([0.0, -1.0, 1.0]) / _SQRT2),
    (np.array([0.0, 0.0, 1.0]), np.array([0.0, 1.0, 1.0]) / _SQRT2),
    (np.array([0.0, 1.0, 0.0]), np.array([0.0, -1.0, 1.0]) / _SQRT2),
    (np.array([0.0, 1.0, 0.0]), np.array([0.0, 1.0, 1.0]) / _SQRT2),
)


class InvalidStateError(ValueError):
    pass


@dataclass
class DensityMatrix:
    """4x4 two-qubit density matrix, validated on construction."""

    matrix: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=complex)
        if m.shape != (4, 4):
            raise InvalidStateError("density matrix must be 4x4")
        if np.max(np.abs(m - m.conj().T)) > 1e-9:
            raise InvalidStateError("density matrix not Hermitian")
        if abs(np.trace(m).real - 1.0) > 1e-9 or abs(np.trace(m).imag) > 1e-9:
            raise InvalidStateError("trace must be 1")
        if np.min(np.linalg.eigvalsh((m + m.conj().T) / 2)) < -1e-9:
            raise InvalidStateError("negative eigenvalue")
        self.matrix = m

    @classmethod
    def from_pure(cls, ket: np.ndarray) -> "DensityMatrix":
        ket = np.asarray(ket, dtype=complex)
        ket = ket / np.linalg.norm(ket)
        return cls(np.outer(ket, ket.conj()))

    @classmethod
    def bell_phi_plus(cls) -> "DensityMatrix":
        return cls.from_pure(PHI_PLUS)

    @classmethod
    def werner(cls, p: float) -> "DensityMatrix":
        if not 0.0 <= p <= 1.0:
            raise ValueError("p must be in [0, 1]")
        return cls(p * np.outer(PHI_PLUS, PHI_PLUS.conj()) + (1 - p) * np.eye(4) / 4)

    def with_pair_phase(self, phi: float) -> "DensityMatrix":
        """Phase rotation of the HH--VV coherence: |VV> amplitude gains e^{i phi}."""
        m = self.matrix.copy()
        m[0, 3] *= np.exp(-1j * phi)
        m[3, 0] *= np.exp(1j * phi)
        m[1, 3] *= np.exp(-1j * phi)
        m[3, 1] *= np.exp(1j * phi)
        m[2, 3] *= np.exp(-1j * phi)
        m[3, 2] *= np.exp(1j * phi)
        return DensityMatrix(m)


@dataclass(frozen=True)
class MeasurementSetting:
    """Analyzer basis as a Bloch direction (unit 3-vector)."""

    bloch: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.bloch, dtype=float)
        if v.shape != (3,):
            raise ValueError("Bloch vector must have 3 components")
        if abs(np.linalg.norm(v) - 1.0) > 1e-9:
            raise ValueError("Bloch vector must be unit norm")
        object.__setattr__(self, "bloch", v)

    def operator(self) -> np.ndarray:
        v = self.bloch
        return v[0] * SIGMA_X + v[1] * SIGMA_Y + v[2] * SIGMA_Z

    def projector(self, outcome: int) -> np.ndarray:
        if outcome not in (+1, -1):
            raise ValueError("outcome must be +1 or -1")
        return (np.eye(2, dtype=complex) + outcome * self.operator()) / 2.0


@dataclass(frozen=True)
class ChshResult:
    s_value: float
    sigma_s: float
    correlators: tuple
    correlator_sigmas: tuple


@dataclass
class TomographyCounts:
    """Coincidence counts for the 16 projector settings {H,V,D,R} x {H,V,D,R}.

    settings[k] = (label_x, label_xx); counts[k] observed coincidences;
    shots[k] the per-setting normalization (total trials).
    """

    settings: list
    counts: np.ndarray
    shots: np.ndarray

    def __post_init__(self):
        self.counts = np.asarray(self.counts, dtype=float)
        self.shots = np.asarray(self.shots, dtype=float)
        if len(self.settings) != len(self.counts) or len(self.counts) != len(self.shots):
            raise ValueError("settings, counts, shots length mismatch")
        if np.any(self.counts < 0) or np.any(self.shots <= 0):
            raise ValueError("counts must be >= 0 and shots > 0")
        for a, b in self.settings:
            if a not in TOMO_KETS or b not in TOMO_KETS:
                raise ValueError(f"unknown setting label ({a}, {b})")


def standard_tomography_settings() -> list:
    return [(a, b) for a in TOMO_LABELS for b in TOMO_LABELS]


def _setting_projector(label_a: str, label_b: str) -> np.ndarray:
    ket = np.kron(TOMO_KETS[label_a], TOMO_KETS[label_b])
    return np.outer(ket, ket.conj())


def _correlator(rho: np.ndarray, a: np.ndarray, b: np.ndarray) -> float:
    op_a = a[0] * SIGMA_X + a[1] * SIGMA_Y + a[2] * SIGMA_Z
    op_b = b[0] * SIGMA_X + b[1] * SIGMA_Y + b[2] * SIGMA_Z
    return float(np.trace(rho @ np.kron(op_a, op_b)).real)


def chsh_expectation(rho: DensityMatrix) -> ChshResult:
    """Exact CHSH value of a state under the fixed bases (sigma = 0)."""
    corrs = tuple(_correlator(rho.matrix, a, b) for a, b in CHSH_SETTINGS)
    s = corrs[0] + corrs[1] + corrs[2] - corrs[3]
    return ChshResult(s_value=float(s), sigma_s=0.0, correlators=corrs,
                      correlator_sigmas=(0.0, 0.0, 0.0, 0.0))


# outcome-combination order used for count tables: (+1,+1), (+1,-1), (-1,+1), (-1,-1)
OUTCOME_ORDER = ((+1, +1), (+1, -1), (-1, +1), (-1, -1))


def chsh_from_counts(counts: np.ndarray) -> ChshResult:
    """CHSH from a (4 settings x 4 outcome combinations) count table.

    Row order follows CHSH_SETTINGS; column order OUTCOME_ORDER.
    E = (N++ + N-- - N+- - N-+) / N per setting, multinomial error
    var(E) = (1 - E^2)/N, summed in quadrature for S.
    """
    c = np.asarray(counts, dtype=float)
    if c.shape != (4, 4):
        raise ValueError("counts must be (4 settings, 4 outcomes)")
    if np.any(c < 0):
        raise ValueError("counts must be >= 0")
    totals = c.sum(axis=1)
    if np.any(totals == 0):
        raise ValueError("zero total count in a setting")
    e = (c[:, 0] + c[:, 3] - c[:, 1] - c[:, 2]) / totals
    var = np.clip(1.0 - e ** 2, 0.0, None) / totals
    s = e[0] + e[1] + e[2] - e[3]
    return ChshResult(s_value=float(s), sigma_s=float(np.sqrt(var.sum())),
                      correlators=tuple(float(x) for x in e),
                      correlator_sigmas=tuple(float(np.sqrt(v)) for v in var))


def fidelity(rho: DensityMatrix, target: np.ndarray) -> float:
    """F = <psi| rho |psi> for a pure target state (global-phase invariant)."""
    ket = np.asarray(target, dtype=complex)
    if ket.shape != (4,):
        raise ValueError("target must be a 4-component ket")
    norm = np.linalg.norm(ket)
    if abs(norm - 1.0) > 1e-9:
        raise ValueError("target state not normalized")
    return float(np.real(ket.conj() @ rho.matrix @ ket))


def born_probabilities(rho: DensityMatrix, setting_x: MeasurementSetting,
                       setting_xx: MeasurementSetting) -> np.ndarray:
    """Joint outcome probabilities over OUTCOME_ORDER."""
    probs = np.empty(4)
    for k, (sa, sb) in enumerate(OUTCOME_ORDER):
        m = np.kron(setting_x.projector(sa), setting_xx.projector(sb))
        probs[k] = np.trace(rho.matrix @ m).real
    probs = np.clip(probs, 0.0, None)
    return probs / probs.sum()


def sample_polarization_pair(rho: DensityMatrix, setting_x: MeasurementSetting,
                             setting_xx: MeasurementSetting, rng) -> tuple:
    """Single joint outcome (+-1, +-1) sampled from the Born rule."""
    probs = born_probabilities(rho, setting_x, setting_xx)
    k = int(rng.choice(4, p=probs))
    return OUTCOME_ORDER[k]


def sample_pair_outcomes(rho: DensityMatrix, setting_x: MeasurementSetting,
                         setting_xx: MeasurementSetting, n: int, rng,
                         phases: np.ndarray | None = None) -> tuple:
    """Vectorized Born sampling of n joint outcomes.

    phases, when given, applies a per-event HH--VV coherence phase before
    sampling (see DensityMatrix.with_pair_phase); probabilities are then
    linear in cos/sin of the phase, which keeps the batch closed-form.
    Returns (a, b) int8 arrays of +-1 outcomes.
    """
    ms = [np.kron(setting_x.projector(sa), setting_xx.projector(sb))
          for sa, sb in OUTCOME_ORDER]
    rho_m = rho.matrix
    if phases is None:
        probs = np.array([np.trace(rho_m @ m).real for m in ms])
        probs = np.clip(probs, 0.0, None)
        probs = probs / probs.sum()
        cum = np.cumsum(probs)
        idx = np.searchsorted(cum, rng.random(n), side="right").clip(0, 3)
    else:
        phases = np.asarray(phases, dtype=float)
        if phases.shape != (n,):
            raise ValueError("phases must have length n")
        base = rho_m.copy()
        coh = base[3, :3].copy()          # |VV><..| row couples through e^{i phi}
        base[3, :3] = 0.0
        base[:3, 3] = 0.0
        const = np.array([np.trace(base @ m).real for m in ms])
        # Tr[rho(phi) M] = const + 2 Re(e^{i phi} sum_j rho_3j M_j3)
        z = np.array([coh @ m[:3, 3] for m in ms])
        probs = (const[None, :]
                 + 2.0 * (np.cos(phases)[:, None] * z.real[None, :]
                          - np.sin(phases)[:, None] * z.imag[None, :]))
        probs = np.clip(probs, 0.0, None)
        probs /= probs.sum(axis=1, keepdims=True)
        cum = np.cumsum(probs, axis=1)
        u = rng.random(n)
        idx = (u[:, None] > cum).sum(axis=1).clip(0, 3)
    order = np.array(OUTCOME_ORDER, dtype=np.int8)
    picked = order[idx]
    return picked[:, 0], picked[:, 1]


def _project_to_physical(m: np.ndarray) -> np.ndarray:
    """Nearest-ish physical state: clip negative eigenvalues, renormalize."""
    m = (m + m.conj().T) / 2.0
    vals, vecs = np.linalg.eigh(m)
    vals = np.clip(vals, 0.0, None)
    if vals.sum() == 0:
        return np.eye(4, dtype=complex) / 4.0
    vals /= vals.sum()
    return (vecs * vals) @ vecs.conj().T


def _cholesky_params(m: np.ndarray) -> np.ndarray:
    t = np.linalg.cholesky(m + 1e-12 * np.eye(4))
    params = np.empty(16)
    params[:4] = np.real(np.diag(t))
    idx = 4
    for r in range(4):
        for c in range(r):
            params[idx] = t[r, c].real
            params[idx + 1] = t[r, c].imag
            idx += 2
    return params


def _rho_from_params(params: np.ndarray) -> np.ndarray:
    t = np.zeros((4, 4), dtype=complex)
    t[np.diag_indices(4)] = params[:4]
    idx = 4
    for r in range(4):
        for c in range(r):
            t[r, c] = params[idx] + 1j * params[idx + 1]
            idx += 2
    m = t @ t.conj().T
    return m / np.trace(m).real


def _log_likelihood(rho_m: np.ndarray, projectors: list, counts: np.ndarray,
                    shots: np.ndarray) -> float:
    probs = np.array([np.trace(rho_m @ p).real for p in projectors])
    probs = np.clip(probs, 1e-12, None)
    return float(np.sum(counts * np.log(probs) - shots * probs))


def tomography_reconstruct(data: TomographyCounts,
                           max_iter: int = 10_000) -> DensityMatrix:
    """Linear inversion seeded maximum-likelihood state reconstruction.

    The 16 projector expectation values are inverted exactly (the standard
    settings are informationally complete), the estimate is projected onto
    the physical cone, then refined by Poisson maximum likelihood over a
    Cholesky factorization that keeps every iterate physical.  The returned
    state never has lower likelihood than the projected seed.
    """
    projectors = [_setting_projector(a, b) for a, b in data.settings]
    freqs = data.counts / data.shots
    design = np.array([p.T.flatten() for p in projectors])
    if np.linalg.matrix_rank(design) < 16:
        raise ValueError("settings are not informationally complete")
    if np.all(data.counts == 0):
        raise ValueError("all counts are zero")
    rho_lin = np.linalg.solve(design, freqs.astype(complex)).reshape(4, 4)
    seed = _project_to_physical(rho_lin)
    ll_seed = _log_likelihood(seed, projectors, data.counts, data.shots)

    def objective(params):
        return -_log_likelihood(_rho_from_params(params), projectors,
                                data.counts, data.shots)

    res = minimize(objective, _cholesky_params(seed), method="L-BFGS-B",
                   options={"maxiter": max_iter, "ftol": 1e-12, "gtol": 1e-10})
    rho_ml = _rho_from_params(res.x)
    if _log_likelihood(rho_ml, projectors, data.counts, data.shots) < ll_seed:
        rho_ml = seed
    return DensityMatrix(_project_to_physical(rho_ml))


def simulate_tomography_counts(rho: DensityMatrix, shots_per_setting: int,
                               rng, poisson: bool = True) -> TomographyCounts:
    """Synthetic count table for the standard settings (testing aid)."""
    settings = standard_tomography_settings()
    counts = np.empty(len(settings))
    for k, (a, b) in enumerate(settings):
        p = float(np.trace(rho.matrix @ _setting_projector(a, b)).real)
        p = min(max(p, 0.0), 1.0)
        if poisson:
            counts[k] = rng.poisson(shots_per_setting * p)
        else:
            counts[k] = shots_per_setting * p
    shots = np.full(len(settings), float(shots_per_setting))
    return TomographyCounts(settings=settings, counts=counts, shots=shots)
