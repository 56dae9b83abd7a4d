"""Analytic photon-number laws for pair sources and an exact detection-chain oracle.

Pair sources are described by a truncated joint photon-number law over
(n_signal, n_idler) pairs per pulse.  Squeezing-type sources are diagonal
(perfect number correlation): a single-mode squeezed pair source is thermal,

    P(n, n) = mu^n / (1 + mu)^(n+1),

and a K-mode source of total mean mu has a negative-binomial marginal that
approaches Poisson as K grows.  The detection-chain oracle maps any joint law
through binomial loss, binomial beam-splitter routing and independent dark
clicks to exact click-pattern probabilities on the four detectors
(X1, X2, XX1, XX2), with no Monte Carlo involved.  These exact probabilities
back-stop every statistical estimate produced by the simulator pipeline.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from math import lgamma, log, log1p, exp

import numpy as np

DEFAULT_TAIL_TOL = 1e-9


class TruncationError(ValueError):
    """Truncation order too small for the requested tail tolerance."""


@dataclass
class PhotonPairDistribution:
    """Joint photon-number law over (n_signal, n_idler) pairs per pulse.

    probs[n, m] is the probability of n signal and m idler photons.
    Entries are renormalized at construction; the mass removed by
    truncation is kept in ``tail_mass`` for reporting.
    """

    n_max: int
    probs: np.ndarray
    tail_mass: float = 0.0

    def __post_init__(self):
        self.probs = np.asarray(self.probs, dtype=float)
        if self.probs.shape != (self.n_max + 1, self.n_max + 1):
            raise ValueError("probs must be (n_max+1, n_max+1)")
        if np.any(self.probs < 0):
            raise ValueError("negative probability entries")
        total = float(self.probs.sum())
        if total <= 0:
            raise ValueError("distribution has no mass")
        self.probs = self.probs / total

    @property
    def is_diagonal(self) -> bool:
        off = self.probs - np.diag(np.diag(self.probs))
        return bool(np.all(off == 0))

    def marginal_signal(self) -> np.ndarray:
        return self.probs.sum(axis=1)

    def marginal_idler(self) -> np.ndarray:
        return self.probs.sum(axis=0)


@dataclass(frozen=True)
class DetectionChainParams:
    """Four-detector chain: one beam splitter and two detectors per arm.

    eta_x / eta_xx are end-to-end efficiencies of the X and XX arms,
    bs_ratio_* is the splitter transmission toward detector 1 of the arm,
    dark_prob is the per-detector per-pulse dark-click probability.
    """

    eta_x: float = 1.0
    eta_xx: float = 1.0
    bs_ratio_x: float = 0.5
    bs_ratio_xx: float = 0.5
    dark_prob: float = 0.0

    def __post_init__(self):
        for name in ("eta_x", "eta_xx", "bs_ratio_x", "bs_ratio_xx", "dark_prob"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name}={v} outside [0, 1]")


@dataclass(frozen=True)
class PairClickStats:
    """Per-pulse success / error click probabilities.

    ps is the mean coincidence probability over the four cross-arm detector
    pairs (X_i, XX_j); pe is the mean over the two same-arm detector pairs
    (X1, X2) and (XX1, XX2).  Analytic results carry sigma = 0.
    """

    ps: float
    pe: float
    sigma_ps: float = 0.0
    sigma_pe: float = 0.0
    n_pulses: int = 0
    pe_x: float | None = None
    pe_xx: float | None = None

    def __post_init__(self):
        if not (0.0 <= self.ps <= 1.0 and 0.0 <= self.pe <= 1.0):
            raise ValueError("ps, pe must be probabilities")
        if self.sigma_ps < 0 or self.sigma_pe < 0:
            raise ValueError("sigma must be >= 0")


def tmsv_distribution(mu: float, n_max: int = 20,
                      tail_tol: float = DEFAULT_TAIL_TOL) -> PhotonPairDistribution:
    """Single-mode squeezed pair source: thermal diagonal law.

    P(n, n) = mu^n / (1+mu)^(n+1); mu is the mean photon number per arm.
    Raises TruncationError when the mass beyond n_max exceeds tail_tol.
    """
    if mu < 0:
        raise ValueError("mu must be >= 0")
    if n_max < 1:
        raise ValueError("n_max must be >= 1")
    n = np.arange(n_max + 1)
    if mu == 0:
        diag = np.zeros(n_max + 1)
        diag[0] = 1.0
        tail = 0.0
    else:
        q = mu / (1.0 + mu)
        diag = np.exp(n * log(q) - log1p(mu))
        tail = q ** (n_max + 1)
        if tail > tail_tol:
            raise TruncationError(
                f"tail mass {tail:.3g} beyond n_max={n_max} exceeds {tail_tol:g}")
    probs = np.diag(diag)
    return PhotonPairDistribution(n_max=n_max, probs=probs, tail_mass=float(tail))


def multimode_distribution(mu_total: float, modes: int, n_max: int = 20,
                           tail_tol: float = DEFAULT_TAIL_TOL) -> PhotonPairDistribution:
    """K independent identical pair modes, total mean mu_total per arm.

    The per-arm marginal is negative-binomial (K thermal modes of mean
    mu_total/K each); the joint law stays diagonal since every mode is
    perfectly number-correlated between the arms.  K=1 reduces to
    tmsv_distribution; K -> inf approaches a Poisson marginal.
    """
    if mu_total < 0:
        raise ValueError("mu_total must be >= 0")
    if modes < 1:
        raise ValueError("modes must be >= 1")
    if n_max < 1:
        raise ValueError("n_max must be >= 1")
    if mu_total == 0:
        return tmsv_distribution(0.0, n_max=n_max, tail_tol=tail_tol)
    K = int(modes)
    mu_mode = mu_total / K
    q = mu_mode / (1.0 + mu_mode)
    n = np.arange(n_max + 1)
    # log NB pmf, r=K: C(n+K-1, n) (1-q)^K q^n
    logpmf = (np.array([lgamma(k + K) for k in n]) - lgamma(K)
              - np.array([lgamma(k + 1) for k in n])
              + K * log1p(-q) + n * (log(q) if q > 0 else 0.0))
    diag = np.exp(logpmf)
    tail = max(0.0, 1.0 - float(diag.sum()))
    if tail > tail_tol:
        raise TruncationError(
            f"tail mass {tail:.3g} beyond n_max={n_max} exceeds {tail_tol:g}")
    return PhotonPairDistribution(n_max=n_max, probs=np.diag(diag), tail_mass=tail)


def qd_pair_distribution(prep: float, eps_x: float = 0.0, eps_xx: float = 0.0,
                         n_max: int = 4) -> PhotonPairDistribution:
    """Per-pulse law of a cascade emitter with uncorrelated extra photons.

    With probability prep the pulse carries one photon in each arm; an extra
    uncorrelated photon is added to the X (XX) arm with probability eps_x
    (eps_xx), independently.  Used as the exact reference law for the
    cascade simulator's click statistics.
    """
    if not 0.0 <= prep <= 1.0:
        raise ValueError("prep must be in [0, 1]")
    if not (0.0 <= eps_x <= 1.0 and 0.0 <= eps_xx <= 1.0):
        raise ValueError("eps probabilities must be in [0, 1]")
    probs = np.zeros((n_max + 1, n_max + 1))
    for pair in (0, 1):
        w_pair = prep if pair else 1.0 - prep
        for ex in (0, 1):
            w_ex = eps_x if ex else 1.0 - eps_x
            for exx in (0, 1):
                w_exx = eps_xx if exx else 1.0 - eps_xx
                probs[pair + ex, pair + exx] += w_pair * w_ex * w_exx
    return PhotonPairDistribution(n_max=n_max, probs=probs, tail_mass=0.0)


# Detector order used throughout: (X1, X2, XX1, XX2).
_DETS = ("x1", "x2", "xx1", "xx2")


def _no_click_probs(dist: PhotonPairDistribution,
                    chain: DetectionChainParams) -> dict[frozenset, float]:
    """P(no click on any detector of subset S) for all 16 subsets.

    Given (n, m) photons, each X photon lands on detector X1 with probability
    eta_x * r_x and X2 with eta_x * (1 - r_x); photons are routed
    independently (classical Bernoulli splitting), dark clicks independent.
    """
    n = np.arange(dist.n_max + 1)
    px = {
        "x1": chain.eta_x * chain.bs_ratio_x,
        "x2": chain.eta_x * (1.0 - chain.bs_ratio_x),
        "xx1": chain.eta_xx * chain.bs_ratio_xx,
        "xx2": chain.eta_xx * (1.0 - chain.bs_ratio_xx),
    }
    out: dict[frozenset, float] = {}
    for r in range(5):
        for subset in itertools.combinations(_DETS, r):
            S = frozenset(subset)
            miss_x = 1.0 - sum(px[d] for d in S if d.startswith("x") and not d.startswith("xx"))
            miss_xx = 1.0 - sum(px[d] for d in S if d.startswith("xx"))
            ax = miss_x ** n            # per-signal-photon miss, n photons
            axx = miss_xx ** n
            p = float(ax @ dist.probs @ axx)
            out[S] = p * (1.0 - chain.dark_prob) ** len(S)
    return out


def click_pattern_distribution(dist: PhotonPairDistribution,
                               chain: DetectionChainParams) -> np.ndarray:
    """Exact probability of every click pattern on (X1, X2, XX1, XX2).

    Returns a (2, 2, 2, 2) array indexed by click indicators, obtained from
    the subset no-click probabilities by inclusion-exclusion.  Sums to 1.
    """
    nc = _no_click_probs(dist, chain)
    pat = np.zeros((2, 2, 2, 2))
    for bits in itertools.product((0, 1), repeat=4):
        silent = frozenset(d for d, b in zip(_DETS, bits) if not b)
        clicked = [d for d, b in zip(_DETS, bits) if b]
        # P(pattern) = sum over T subset of clicked of (-1)^|T| P(no click on silent U T)
        total = 0.0
        for r in range(len(clicked) + 1):
            for extra in itertools.combinations(clicked, r):
                total += (-1) ** r * nc[silent | frozenset(extra)]
        pat[bits] = total
    pat = np.clip(pat, 0.0, None)
    return pat / pat.sum()


def detected_pair_click_probs(dist: PhotonPairDistribution,
                              chain: DetectionChainParams) -> PairClickStats:
    """Exact success / error click probabilities of a joint law through the chain.

    ps = mean over the four cross-arm detector pairs of the per-pulse
    coincidence probability P(X_i clicks and XX_j clicks); pe = mean over the
    two arms of P(both detectors of the arm click).  Marginalizing the full
    click-pattern distribution keeps this exact for arbitrary joint laws.
    """
    nc = _no_click_probs(dist, chain)

    def coincidence(a: str, b: str) -> float:
        # inclusion-exclusion: P(a and b) = 1 - P(no a) - P(no b) + P(no a, no b)
        return 1.0 - nc[frozenset((a,))] - nc[frozenset((b,))] + nc[frozenset((a, b))]

    cross = [coincidence(a, b) for a in ("x1", "x2") for b in ("xx1", "xx2")]
    pe_x = coincidence("x1", "x2")
    pe_xx = coincidence("xx1", "xx2")
    return PairClickStats(
        ps=float(np.mean(cross)),
        pe=0.5 * (pe_x + pe_xx),
        pe_x=pe_x,
        pe_xx=pe_xx,
    )


@dataclass(frozen=True)
class HbtClickProbs:
    """Exact per-pulse single / double click probabilities of one arm."""

    p1a: float
    p1b: float
    p2: float


def detected_hbt_probs(dist: PhotonPairDistribution, chain: DetectionChainParams,
                       arm: str = "x") -> HbtClickProbs:
    """Exact single- and double-click probabilities of one arm of the chain."""
    if arm not in ("x", "xx"):
        raise ValueError("arm must be 'x' or 'xx'")
    a, b = ("x1", "x2") if arm == "x" else ("xx1", "xx2")
    nc = _no_click_probs(dist, chain)
    p1a = 1.0 - nc[frozenset((a,))]
    p1b = 1.0 - nc[frozenset((b,))]
    p2 = 1.0 - nc[frozenset((a,))] - nc[frozenset((b,))] + nc[frozenset((a, b))]
    return HbtClickProbs(p1a=p1a, p1b=p1b, p2=p2)
