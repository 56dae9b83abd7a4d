"""Estimators turning click tables and peak areas into physical quantities.

All estimators are raw-count ratios with Poisson (sqrt-count) uncertainties;
no loss correction or noise subtraction is applied anywhere.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from math import sqrt

import numpy as np

from .criteria import PhotonNumberStats
from .photon_number import PairClickStats
from .timetags import PulseClickTable, PeakAreas, ROLE_BITS


@dataclass(frozen=True)
class ClickCounts:
    """Single / double click counts of one splitter arm over n trials."""

    r1a: int
    r1b: int
    r2: int
    n: int
    heralded: bool = False

    def __post_init__(self):
        if min(self.r1a, self.r1b, self.r2, self.n) < 0:
            raise ValueError("counts must be >= 0")
        if self.r2 > min(self.r1a, self.r1b):
            raise ValueError("double clicks cannot exceed either single count")
        if self.n < max(self.r1a, self.r1b):
            raise ValueError("counts cannot exceed the number of trials")


@dataclass(frozen=True)
class G2Result:
    value: float
    sigma: float
    upper_bound_90: float | None = None


@dataclass(frozen=True)
class PrepEfficiencyResult:
    value: float
    sigma: float


class NoHeraldsError(ValueError):
    pass


def _require_roles(table: PulseClickTable, roles) -> None:
    missing = [r for r in roles if r not in table.roles]
    if missing:
        raise ValueError(f"click table lacks roles {missing}")


def hbt_counts(table: PulseClickTable, herald: str | None = None) -> ClickCounts:
    """Per-pulse single and double clicks of one arm's splitter.

    Unheralded (herald=None): trials are all pulses and the X arm is
    analyzed.  With herald='xx' (or 'x') the trials are restricted to pulses
    in which the heralding arm clicked, and the opposite arm is analyzed.
    """
    if herald is None:
        sig = ("x1", "x2")
        _require_roles(table, sig)
        among = None
        n = table.n_pulses
    else:
        if herald not in ("x", "xx"):
            raise ValueError("herald must be 'x' or 'xx'")
        her = ("x1", "x2") if herald == "x" else ("xx1", "xx2")
        sig = ("xx1", "xx2") if herald == "x" else ("x1", "x2")
        _require_roles(table, her + sig)
        hmask = ROLE_BITS[her[0]] | ROLE_BITS[her[1]]
        among = (table.pattern & hmask) != 0
        n = int(np.count_nonzero(among))
        if n == 0:
            raise NoHeraldsError("no heralding clicks in the table")
    r1a = table.count_mask(ROLE_BITS[sig[0]], among)
    r1b = table.count_mask(ROLE_BITS[sig[1]], among)
    r2 = table.count_mask(ROLE_BITS[sig[0]] | ROLE_BITS[sig[1]], among)
    return ClickCounts(r1a=r1a, r1b=r1b, r2=r2, n=n, heralded=herald is not None)


def photon_stats(counts: ClickCounts, bs_ratio: float = 0.5,
                 exclusive_singles: bool = False) -> PhotonNumberStats:
    """Vacuum / single / multiphoton probabilities from splitter clicks.

    P1 = (R1A + R1B)/N (inclusive; the double-click bias is far below the
    counting error at multiphoton levels of interest, an exclusive variant
    subtracting doubles is available).  P2+ = R2 / (N * 2R(1-R)) corrects the
    double-click probability for the splitting ratio; P0 closes the sum.
    """
    if not 0.0 < bs_ratio < 1.0:
        raise ValueError("bs_ratio must be strictly inside (0, 1)")
    corr = 2.0 * bs_ratio * (1.0 - bs_ratio)
    unbalanced = abs(corr - 0.5) / 0.5 > 0.1
    singles = counts.r1a + counts.r1b
    if exclusive_singles:
        singles -= 2 * counts.r2
    p1 = singles / counts.n
    p2 = counts.r2 / (counts.n * corr)
    if p2 > 0.01:
        warnings.warn("P2+ above 1%: neglected higher-order splitting terms "
                      "may matter", stacklevel=2)
    return PhotonNumberStats(
        p0=1.0 - p1 - p2, p1=p1, p2plus=p2,
        sigma_p1=sqrt(max(singles, 0)) / counts.n,
        sigma_p2plus=sqrt(counts.r2) / (counts.n * corr),
        heralded=counts.heralded,
        unbalanced_correction=unbalanced)


def g2_from_peaks(peaks: PeakAreas) -> G2Result:
    """Zero-peak to mean-side-peak area ratio with Poisson errors.

    A zero-count numerator reports value 0 with a one-sided 90% upper bound
    (2.303 expected counts) instead of a symmetric sigma.
    """
    if len(peaks.side_peak_counts) < 2:
        raise ValueError("need at least two side peaks")
    side_total = sum(c for _, c in peaks.side_peak_counts)
    if side_total == 0:
        raise ValueError("side peaks are empty")
    side_mean = side_total / len(peaks.side_peak_counts)
    zero = peaks.zero_peak_counts
    if zero == 0:
        return G2Result(value=0.0, sigma=0.0, upper_bound_90=2.303 / side_mean)
    g2 = zero / side_mean
    sigma = g2 * sqrt(1.0 / zero + 1.0 / side_total)
    return G2Result(value=g2, sigma=sigma)


def prep_efficiency(peaks: PeakAreas) -> PrepEfficiencyResult:
    """Mean side-peak to zero-peak ratio of the cross-arm correlation.

    Side peaks collect accidental pulse-to-pulse coincidences proportional to
    the squared emission probability, the zero peak collects true cascade
    coincidences proportional to it; their ratio estimates the per-pulse
    preparation probability.
    """
    if peaks.zero_peak_counts == 0:
        raise ValueError("zero-time peak is empty")
    if not peaks.side_peak_counts:
        raise ValueError("no side peaks")
    side_total = sum(c for _, c in peaks.side_peak_counts)
    side_mean = side_total / len(peaks.side_peak_counts)
    value = side_mean / peaks.zero_peak_counts
    if side_total == 0:
        return PrepEfficiencyResult(value=0.0, sigma=0.0)
    sigma = value * sqrt(1.0 / side_total + 1.0 / peaks.zero_peak_counts)
    return PrepEfficiencyResult(value=value, sigma=sigma)


def pair_click_stats(table: PulseClickTable) -> PairClickStats:
    """Success / error probabilities from per-pulse click patterns.

    ps is the mean per-pulse coincidence probability over the four cross-arm
    detector pairs (X_i, XX_j); pe the mean over the same-arm pairs (X1, X2)
    and (XX1, XX2).  Matches the analytic detected_pair_click_probs oracle.
    """
    _require_roles(table, ("x1", "x2", "xx1", "xx2"))
    n = table.n_pulses
    cross = 0
    for a in ("x1", "x2"):
        for b in ("xx1", "xx2"):
            cross += table.count_mask(ROLE_BITS[a] | ROLE_BITS[b])
    e_x = table.count_mask(ROLE_BITS["x1"] | ROLE_BITS["x2"])
    e_xx = table.count_mask(ROLE_BITS["xx1"] | ROLE_BITS["xx2"])
    return PairClickStats(
        ps=cross / (4 * n),
        pe=(e_x + e_xx) / (2 * n),
        sigma_ps=sqrt(cross) / (4 * n),
        sigma_pe=sqrt(e_x + e_xx) / (2 * n),
        n_pulses=n,
        pe_x=e_x / n,
        pe_xx=e_xx / n)
