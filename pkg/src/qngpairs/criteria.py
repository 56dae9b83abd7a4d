"""Quantum non-Gaussianity certification from click probabilities.

Two witnesses are implemented.  The single-photon depth quantifies how much
attenuation a source survives before its photon-number statistics re-enter
the Gaussian convex hull:

    T_sps = -10 log10( 3 P2+ / (2 P1^3) )  dB.

The pair-coincidence criterion compares the cross-arm success probability
P_s against a threshold set by the error probability P_e of same-arm double
clicks.  A state certifies non-Gaussian coincidences when

    P_s > (1/2) sqrt(P_e) + (3/8) P_e + (1/16) P_e^(3/2).

That polynomial is the small-P_e truncation of the exact boundary curve

    P_s = 2 sqrt(P_e) - 1 + (1 - sqrt(P_e))^(3/2),

which is traced exactly by an ideal bright many-mode pair source at unit
efficiency (see pair_threshold_exact).  Both forms agree to within
(3/128) P_e^2, i.e. well below 1e-12 for P_e <= 1e-6.  Under a lossy channel
of transmissivity T both probabilities scale as T^2, which yields the
coincidence depth

    T_coin = -10 log10( sqrt(P_e) / (2 P_s) )  dB

in the negligible-P_e limit, alongside an exact root-solved depth.
"""

from __future__ import annotations

from dataclasses import dataclass
from math import log10, sqrt

import numpy as np

from .photon_number import PairClickStats

_DB = 10.0 / np.log(10.0)  # dB per e-fold


class CriterionNotViolated(ValueError):
    """Depth requested for a state that does not violate the criterion."""


@dataclass(frozen=True)
class PhotonNumberStats:
    """Vacuum / single / multiphoton probabilities with counting uncertainties."""

    p0: float
    p1: float
    p2plus: float
    sigma_p1: float = 0.0
    sigma_p2plus: float = 0.0
    heralded: bool = False
    unbalanced_correction: bool = False  # splitting correction >10% off balanced

    def __post_init__(self):
        for name in ("p0", "p1", "p2plus"):
            v = getattr(self, name)
            if v < -1e-12 or v > 1.0 + 1e-12:
                raise ValueError(f"{name}={v} outside [0, 1]")
        if abs(self.p0 + self.p1 + self.p2plus - 1.0) > 1e-9:
            raise ValueError("p0 + p1 + p2plus must sum to 1")


@dataclass(frozen=True)
class SpsDepthResult:
    """Single-photon depth in dB; unbounded=True when P2+ = 0."""

    depth_db: float
    sigma_db: float
    unbounded: bool = False


@dataclass(frozen=True)
class QngPairReport:
    threshold: float
    difference: float
    significance: float
    significance_one_sided: bool = False
    t_coin_db: float | None = None
    t_coin_exact_db: float | None = None
    t_coin_sigma_db: float | None = None


def sps_depth(stats: PhotonNumberStats) -> SpsDepthResult:
    """Single-photon non-Gaussianity depth -10 log10(3 P2+ / (2 P1^3)) dB.

    Returns an unbounded marker when P2+ = 0 (criterion survives any
    attenuation).  Uncertainty by first-order propagation of sigma_p1 and
    sigma_p2plus on the log.
    """
    if stats.p1 <= 0:
        raise ValueError("p1 must be > 0 for a single-photon depth")
    if stats.p2plus < 0:
        raise ValueError("p2plus must be >= 0")
    if stats.p2plus == 0:
        return SpsDepthResult(depth_db=float("inf"), sigma_db=0.0, unbounded=True)
    depth = -10.0 * log10(3.0 * stats.p2plus / (2.0 * stats.p1 ** 3))
    sigma = _DB * sqrt((stats.sigma_p2plus / stats.p2plus) ** 2
                       + (3.0 * stats.sigma_p1 / stats.p1) ** 2)
    return SpsDepthResult(depth_db=depth, sigma_db=sigma)


def pair_threshold(pe: float) -> float:
    """Coincidence criterion threshold (1/2)sqrt(pe) + (3/8)pe + (1/16)pe^(3/2)."""
    if not 0.0 <= pe <= 1.0:
        raise ValueError("pe must be in [0, 1]")
    s = sqrt(pe)
    return 0.5 * s + 0.375 * pe + 0.0625 * pe * s


def pair_threshold_exact(pe: float) -> float:
    """Exact boundary 2 sqrt(pe) - 1 + (1 - sqrt(pe))^(3/2).

    Parent curve of pair_threshold: expanding in sqrt(pe) reproduces the
    truncated polynomial plus non-negative higher orders, so the truncated
    form understates the Gaussian-attainable success probability by at most
    (3/128) pe^2 + O(pe^(5/2)).  Property tests for Gaussian sources compare
    against this form; certification of measured data uses pair_threshold.
    """
    if not 0.0 <= pe <= 1.0:
        raise ValueError("pe must be in [0, 1]")
    s = sqrt(pe)
    return 2.0 * s - 1.0 + (1.0 - s) ** 1.5


def _threshold_slope(pe: float) -> float:
    # d/dpe of the truncated threshold; singular at pe = 0
    s = sqrt(pe)
    return 0.25 / s + 0.375 + (3.0 / 32.0) * s


def pair_violation(stats: PairClickStats) -> QngPairReport:
    """Threshold, difference and violation significance for measured (ps, pe).

    difference = ps - threshold(pe); a positive difference certifies
    non-Gaussian coincidences.  significance = difference / sigma with the
    threshold uncertainty propagated through d(threshold)/d(pe).  When
    pe = 0 with sigma_pe > 0 the slope is singular; the report then carries
    a one-sided significance using sigma_ps alone, flagged.
    """
    thr = pair_threshold(stats.pe)
    diff = stats.ps - thr
    one_sided = False
    if stats.pe == 0.0:
        if stats.sigma_pe > 0.0:
            one_sided = True
        sigma = stats.sigma_ps
    else:
        sigma = sqrt(stats.sigma_ps ** 2
                     + (_threshold_slope(stats.pe) * stats.sigma_pe) ** 2)
    significance = diff / sigma if sigma > 0 else float("inf") * np.sign(diff)
    return QngPairReport(threshold=thr, difference=diff,
                         significance=float(significance),
                         significance_one_sided=one_sided)


def _solve_exact_transmissivity(ps: float, pe: float, tol: float = 1e-12) -> float:
    """Smallest T in (0, 1] with ps T^2 = pair_threshold(pe T^2), by bisection.

    h(T) = ps T^2 - threshold(pe T^2) is positive at T=1 (criterion violated)
    and negative for small T (threshold ~ sqrt scales slower), with a single
    sign change in between.
    """
    def h(t: float) -> float:
        return ps * t * t - pair_threshold(pe * t * t)

    lo, hi = 1e-12, 1.0
    if h(hi) <= 0:
        raise CriterionNotViolated("criterion not violated at T = 1")
    if h(lo) > 0:
        return lo
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if h(mid) > 0:
            hi = mid
        else:
            lo = mid
    return 0.5 * (lo + hi)


def pair_depth(stats: PairClickStats) -> QngPairReport:
    """Coincidence depth in dB for a state currently violating the criterion.

    Approximate depth -10 log10(sqrt(pe) / (2 ps)); exact depth from the
    bisection root of ps T^2 = threshold(pe T^2).  The exact depth never
    exceeds the approximation by more than numerical tolerance when pe > 0.
    Raises CriterionNotViolated when ps <= threshold(pe).
    """
    base = pair_violation(stats)
    if base.difference <= 0:
        raise CriterionNotViolated(
            f"ps={stats.ps:g} does not exceed threshold {base.threshold:g}")
    if stats.pe == 0.0:
        return QngPairReport(
            threshold=base.threshold, difference=base.difference,
            significance=base.significance,
            significance_one_sided=base.significance_one_sided,
            t_coin_db=float("inf"), t_coin_exact_db=float("inf"),
            t_coin_sigma_db=0.0)
    approx = -10.0 * log10(sqrt(stats.pe) / (2.0 * stats.ps))
    t_crit = _solve_exact_transmissivity(stats.ps, stats.pe)
    exact = -10.0 * log10(t_crit)
    # delta-method sigma on the approximate form:
    # T = (10/ln10) [ln 2 + ln ps - (1/2) ln pe]
    sigma = _DB * sqrt((stats.sigma_ps / stats.ps) ** 2
                       + (stats.sigma_pe / (2.0 * stats.pe)) ** 2)
    return QngPairReport(
        threshold=base.threshold, difference=base.difference,
        significance=base.significance,
        significance_one_sided=base.significance_one_sided,
        t_coin_db=approx, t_coin_exact_db=exact, t_coin_sigma_db=sigma)


def depth_curve(stats: PairClickStats, t_grid) -> list[dict]:
    """Attenuation trajectory (pe T^2, ps T^2) over a transmissivity grid.

    The ps/pe ratio is invariant along the trajectory.  The point at the
    exact critical transmissivity is appended and flagged when the criterion
    is violated at T = 1.
    """
    points = []
    for t in t_grid:
        if not 0.0 < t <= 1.0:
            raise ValueError("transmissivities must be in (0, 1]")
        points.append({"t": float(t), "pe": stats.pe * t * t,
                       "ps": stats.ps * t * t, "critical": False})
    try:
        t_crit = _solve_exact_transmissivity(stats.ps, stats.pe)
    except CriterionNotViolated:
        return points
    points.append({"t": t_crit, "pe": stats.pe * t_crit ** 2,
                   "ps": stats.ps * t_crit ** 2, "critical": True})
    points.sort(key=lambda p: p["t"])
    return points
