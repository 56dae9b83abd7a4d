"""Monte Carlo time-tag generation for pulsed pair sources.

Two source models share one detection chain: a cascade emitter producing at
most one photon pair per pulse (with preparation probability, telegraph
blinking, uncorrelated extra photons and an optional splitting-phase
precession of the pair state), and a squeezing-type source drawing the pair
number per pulse from the photon_number laws.

Determinism contract: pulses are generated in fixed chunks of CHUNK_PULSES;
chunk i consumes an independent generator seeded from (seed, i), so the
output stream is bit-identical for a given (config, n_pulses, seed)
regardless of the number of worker threads.  The blinking telegraph restarts
from its stationary law at each chunk boundary, which preserves the on-state
fraction and the two-parameter bunching envelope at lags far below the chunk
length.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from math import pi, sqrt, exp, sin

import numpy as np

from .polarization import DensityMatrix, MeasurementSetting, sample_pair_outcomes
from .photon_number import DetectionChainParams
from .timetags import Stream, StreamHeader, PHOTON_ROLES

CHUNK_PULSES = 1 << 20

# hbar in microelectronvolt-picoseconds: phase = splitting_ueV * t_ps / HBAR_UEV_PS
HBAR_UEV_PS = 658.2119569

DEFAULT_CHANNEL_IDS = {"sync": 0, "x1": 1, "x2": 2, "xx1": 3, "xx2": 4}


@dataclass(frozen=True)
class DetectorParams:
    efficiency: float = 1.0
    dark_rate_hz: float = 0.0
    jitter_sigma_ps: float = 0.0
    dead_time_ps: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.efficiency <= 1.0:
            raise ValueError("efficiency must be in [0, 1]")
        if self.dark_rate_hz < 0 or self.jitter_sigma_ps < 0 or self.dead_time_ps < 0:
            raise ValueError("rates and times must be >= 0")


@dataclass
class ChannelConfig:
    """Detection chain: per-detector parameters, per-arm splitters, channel ids.

    With analyzers unset each arm splits photons classically with bs_ratio
    toward detector 1.  Setting analyzer_x / analyzer_xx turns the arm
    splitters into polarization analyzers: pair photons route by their
    sampled outcome (+1 to detector 1), extras route 50/50.
    """

    detectors: dict = field(default_factory=lambda: {r: DetectorParams()
                                                     for r in PHOTON_ROLES})
    bs_ratio_x: float = 0.5
    bs_ratio_xx: float = 0.5
    channel_ids: dict = field(default_factory=lambda: dict(DEFAULT_CHANNEL_IDS))
    sync_divider: int = 1
    implicit_sync: bool = False
    analyzer_x: MeasurementSetting | None = None
    analyzer_xx: MeasurementSetting | None = None

    def __post_init__(self):
        for role in PHOTON_ROLES:
            if role not in self.detectors:
                raise ValueError(f"missing detector parameters for {role}")
        if not (0.0 <= self.bs_ratio_x <= 1.0 and 0.0 <= self.bs_ratio_xx <= 1.0):
            raise ValueError("bs ratios must be in [0, 1]")
        if self.sync_divider < 1:
            raise ValueError("sync_divider must be >= 1")
        if (self.analyzer_x is None) != (self.analyzer_xx is None):
            raise ValueError("set both analyzers or neither")

    @classmethod
    def uniform(cls, efficiency: float = 1.0, dark_rate_hz: float = 0.0,
                jitter_sigma_ps: float = 0.0, dead_time_ps: float = 0.0,
                **kw) -> "ChannelConfig":
        det = DetectorParams(efficiency=efficiency, dark_rate_hz=dark_rate_hz,
                             jitter_sigma_ps=jitter_sigma_ps,
                             dead_time_ps=dead_time_ps)
        return cls(detectors={r: det for r in PHOTON_ROLES}, **kw)

    def to_chain_params(self, dark_prob: float = 0.0) -> DetectionChainParams:
        """Equivalent analytic chain (effective arm efficiency and split)."""
        ex1 = self.bs_ratio_x * self.detectors["x1"].efficiency
        ex2 = (1 - self.bs_ratio_x) * self.detectors["x2"].efficiency
        exx1 = self.bs_ratio_xx * self.detectors["xx1"].efficiency
        exx2 = (1 - self.bs_ratio_xx) * self.detectors["xx2"].efficiency
        eta_x, eta_xx = ex1 + ex2, exx1 + exx2
        return DetectionChainParams(
            eta_x=eta_x, eta_xx=eta_xx,
            bs_ratio_x=ex1 / eta_x if eta_x > 0 else 0.5,
            bs_ratio_xx=exx1 / eta_xx if eta_xx > 0 else 0.5,
            dark_prob=dark_prob)


def rabi_preparation_probability(pulse_area_rad: float, damping: float = 0.0) -> float:
    """Coherent-drive preparation probability sin^2(area/2) exp(-damping*area)."""
    if pulse_area_rad < 0 or damping < 0:
        raise ValueError("pulse area and damping must be >= 0")
    return sin(pulse_area_rad / 2.0) ** 2 * exp(-damping * pulse_area_rad)


def pulse_area_from_power_ratio(power_ratio: float) -> float:
    """Drive power relative to the full-inversion power maps to area pi*sqrt(ratio)."""
    if power_ratio < 0:
        raise ValueError("power_ratio must be >= 0")
    return pi * sqrt(power_ratio)


@dataclass
class QdSourceConfig:
    """Cascade emitter: one photon pair per prepared pulse, XX first then X."""

    rep_rate_hz: float = 75.84e6
    pulse_area_rad: float | None = pi
    power_ratio: float | None = None
    rabi_damping: float = 0.0
    prep_prob: float | None = None      # overrides the coherent-drive mapping
    tau_xx_ps: float = 120.0
    tau_x_ps: float = 230.0
    blink_on_prob: float = 1.0
    blink_switch_prob: float = 0.0
    rho: DensityMatrix | None = None    # defaults to (|HH> + |VV>)/sqrt(2)
    fss_ueV: float = 0.0
    eps_x: float = 0.0
    eps_xx: float = 0.0
    t0_ps: int = 0

    def __post_init__(self):
        if self.rep_rate_hz <= 0:
            raise ValueError("rep_rate_hz must be > 0")
        if self.tau_xx_ps <= 0 or self.tau_x_ps <= 0:
            raise ValueError("lifetimes must be > 0")
        for name in ("blink_on_prob", "blink_switch_prob", "eps_x", "eps_xx"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must be in [0, 1]")
        if self.rho is None:
            self.rho = DensityMatrix.bell_phi_plus()
        p = self.preparation_probability()
        if not 0.0 <= p <= 1.0:
            raise ValueError("preparation probability outside [0, 1]")

    def preparation_probability(self) -> float:
        if self.prep_prob is not None:
            return self.prep_prob
        if self.pulse_area_rad is not None:
            return rabi_preparation_probability(self.pulse_area_rad, self.rabi_damping)
        if self.power_ratio is not None:
            area = pulse_area_from_power_ratio(self.power_ratio)
            return rabi_preparation_probability(area, self.rabi_damping)
        raise ValueError("one of prep_prob, pulse_area_rad, power_ratio required")


@dataclass
class SpdcSourceConfig:
    """Squeezing-type pair source: stochastic pair number per pulse."""

    mu: float = 0.1
    modes: int = 1
    rep_rate_hz: float = 75.84e6
    tau_x_ps: float = 10.0
    tau_xx_ps: float = 10.0
    t0_ps: int = 0

    def __post_init__(self):
        if self.mu < 0:
            raise ValueError("mu must be >= 0")
        if self.modes < 1:
            raise ValueError("modes must be >= 1")
        if self.rep_rate_hz <= 0:
            raise ValueError("rep_rate_hz must be > 0")
        if self.tau_x_ps <= 0 or self.tau_xx_ps <= 0:
            raise ValueError("lifetimes must be > 0")


def _blink_states(rng, n: int, on_prob: float, switch_prob: float) -> np.ndarray:
    """Two-state telegraph sampled per pulse, stationary start.

    Each pulse resamples the state from Bernoulli(on_prob) with probability
    switch_prob; the stationary on-fraction is on_prob and the state
    autocorrelation decays as (1 - switch_prob)^lag.
    """
    switch = rng.random(n) < switch_prob
    vals = rng.random(n) < on_prob
    switch[0] = True  # chunk starts from the stationary law
    idx = np.where(switch, np.arange(n), 0)
    np.maximum.accumulate(idx, out=idx)
    return vals[idx]


def _route_bs(rng, n: int, bs_ratio: float, eff1: float, eff2: float):
    """Classical splitter + efficiency thinning with one uniform per photon."""
    u = rng.random(n)
    p1 = bs_ratio * eff1
    p2 = p1 + (1.0 - bs_ratio) * eff2
    return u < p1, (u >= p1) & (u < p2)


def _route_outcome(rng, outcomes: np.ndarray, eff1: float, eff2: float):
    """Analyzer routing: +1 to detector 1, -1 to detector 2, then thinning."""
    u = rng.random(outcomes.size)
    to1 = (outcomes > 0) & (u < eff1)
    to2 = (outcomes < 0) & (u < eff2)
    return to1, to2


def _min_separation_filter(times: np.ndarray, dead_ps: float) -> np.ndarray:
    """Non-paralyzable dead time: keep mask for a sorted time array."""
    keep = np.ones(times.size, dtype=bool)
    if times.size < 2 or dead_ps <= 0:
        return keep
    if np.all(np.diff(times) >= dead_ps):
        return keep
    last = times[0]
    for i in range(1, times.size):
        if times[i] - last < dead_ps:
            keep[i] = False
        else:
            last = times[i]
    return keep


class _ChunkAccumulator:
    def __init__(self):
        self.channels = []
        self.times = []

    def add(self, channel_id: int, times_ps: np.ndarray):
        if times_ps.size:
            self.channels.append(np.full(times_ps.size, channel_id, np.uint8))
            self.times.append(times_ps)

    def sorted_arrays(self):
        if not self.times:
            return np.empty(0, np.uint8), np.empty(0, np.int64)
        ch = np.concatenate(self.channels)
        t = np.round(np.concatenate(self.times)).astype(np.int64)
        np.clip(t, 0, None, out=t)
        order = np.lexsort((ch, t))
        return ch[order], t[order]


def _finalize_chunks(chunks, chain: ChannelConfig, header: StreamHeader) -> Stream:
    channels = np.concatenate([c for c, _ in chunks]) if chunks \
        else np.empty(0, np.uint8)
    times = np.concatenate([t for _, t in chunks]) if chunks \
        else np.empty(0, np.int64)
    order = np.lexsort((channels, times))
    channels, times = channels[order], times[order]
    dead = {chain.channel_ids[r]: chain.detectors[r].dead_time_ps
            for r in PHOTON_ROLES if chain.detectors[r].dead_time_ps > 0}
    if dead:
        keep = np.ones(times.size, dtype=bool)
        for ch_id, dt in dead.items():
            sel = np.flatnonzero(channels == ch_id)
            keep[sel] = _min_separation_filter(times[sel], dt)
        channels, times = channels[keep], times[keep]
    return Stream(header=header, channels=channels, times=times)


def _emit_sync(acc: _ChunkAccumulator, chain: ChannelConfig, t0: float,
               period: float, k0: int, n: int):
    if chain.implicit_sync:
        return
    ks = np.arange(k0, k0 + n)
    ks = ks[ks % chain.sync_divider == 0]
    acc.add(chain.channel_ids["sync"], t0 + ks.astype(np.float64) * period)


def _emit_darks(acc: _ChunkAccumulator, chain: ChannelConfig, rng,
                span_start: float, span_ps: float):
    for role in PHOTON_ROLES:
        det = chain.detectors[role]
        if det.dark_rate_hz <= 0:
            continue
        lam = det.dark_rate_hz * span_ps * 1e-12
        n = rng.poisson(lam)
        if n:
            acc.add(chain.channel_ids[role], span_start + rng.random(n) * span_ps)


def _jitter(rng, times: np.ndarray, sigma_ps: float) -> np.ndarray:
    if sigma_ps <= 0 or times.size == 0:
        return times
    return times + rng.normal(0.0, sigma_ps, times.size)


def _qd_chunk(src: QdSourceConfig, chain: ChannelConfig, k0: int, n: int,
              seed: int, chunk_index: int):
    rng = np.random.default_rng([seed, chunk_index])
    period = 1e12 / src.rep_rate_hz
    t_pulse = src.t0_ps + (k0 + np.arange(n)).astype(np.float64) * period
    acc = _ChunkAccumulator()

    # fixed draw order: blinking, preparation, pair delays, polarization,
    # extras, routing, jitter, darks
    if src.blink_on_prob >= 1.0:
        on = np.ones(n, dtype=bool)
    else:
        on = _blink_states(rng, n, src.blink_on_prob, src.blink_switch_prob)
    prep = src.preparation_probability()
    emitted = on & (rng.random(n) < prep)
    n_emit = int(emitted.sum())

    t_xx = t_pulse[emitted] + rng.exponential(src.tau_xx_ps, n_emit)
    delay_x = rng.exponential(src.tau_x_ps, n_emit)
    t_x = t_xx + delay_x

    use_analyzers = chain.analyzer_x is not None
    if n_emit:
        setting_x = chain.analyzer_x or MeasurementSetting(np.array([0.0, 0.0, 1.0]))
        setting_xx = chain.analyzer_xx or MeasurementSetting(np.array([0.0, 0.0, 1.0]))
        phases = (src.fss_ueV * delay_x / HBAR_UEV_PS) if src.fss_ueV else None
        out_x, out_xx = sample_pair_outcomes(src.rho, setting_x, setting_xx,
                                             n_emit, rng, phases=phases)
    else:
        out_x = out_xx = np.empty(0, np.int8)

    extra_x = rng.random(n) < src.eps_x if src.eps_x > 0 else np.zeros(n, bool)
    extra_xx = rng.random(n) < src.eps_xx if src.eps_xx > 0 else np.zeros(n, bool)
    t_ex = t_pulse[extra_x] + rng.exponential(src.tau_x_ps, int(extra_x.sum()))
    t_exx = t_pulse[extra_xx] + rng.exponential(src.tau_xx_ps, int(extra_xx.sum()))

    det = chain.detectors
    if use_analyzers:
        to_x1, to_x2 = _route_outcome(rng, out_x, det["x1"].efficiency,
                                      det["x2"].efficiency)
        to_xx1, to_xx2 = _route_outcome(rng, out_xx, det["xx1"].efficiency,
                                        det["xx2"].efficiency)
        ex1, ex2 = _route_bs(rng, t_ex.size, 0.5, det["x1"].efficiency,
                             det["x2"].efficiency)
        exx1, exx2 = _route_bs(rng, t_exx.size, 0.5, det["xx1"].efficiency,
                               det["xx2"].efficiency)
    else:
        to_x1, to_x2 = _route_bs(rng, n_emit, chain.bs_ratio_x,
                                 det["x1"].efficiency, det["x2"].efficiency)
        to_xx1, to_xx2 = _route_bs(rng, n_emit, chain.bs_ratio_xx,
                                   det["xx1"].efficiency, det["xx2"].efficiency)
        ex1, ex2 = _route_bs(rng, t_ex.size, chain.bs_ratio_x,
                             det["x1"].efficiency, det["x2"].efficiency)
        exx1, exx2 = _route_bs(rng, t_exx.size, chain.bs_ratio_xx,
                               det["xx1"].efficiency, det["xx2"].efficiency)

    for role, times in (("x1", np.concatenate([t_x[to_x1], t_ex[ex1]])),
                        ("x2", np.concatenate([t_x[to_x2], t_ex[ex2]])),
                        ("xx1", np.concatenate([t_xx[to_xx1], t_exx[exx1]])),
                        ("xx2", np.concatenate([t_xx[to_xx2], t_exx[exx2]]))):
        acc.add(chain.channel_ids[role],
                _jitter(rng, times, chain.detectors[role].jitter_sigma_ps))

    _emit_darks(acc, chain, rng, t_pulse[0], n * period)
    _emit_sync(acc, chain, src.t0_ps, period, k0, n)
    return acc.sorted_arrays()


def _spdc_chunk(src: SpdcSourceConfig, chain: ChannelConfig, k0: int, n: int,
                seed: int, chunk_index: int):
    rng = np.random.default_rng([seed, chunk_index])
    period = 1e12 / src.rep_rate_hz
    t_pulse = src.t0_ps + (k0 + np.arange(n)).astype(np.float64) * period
    acc = _ChunkAccumulator()

    if src.mu == 0:
        pairs = np.zeros(n, dtype=np.int64)
    else:
        p = 1.0 / (1.0 + src.mu / src.modes)
        pairs = rng.negative_binomial(src.modes, p, n)
    base = np.repeat(t_pulse, pairs)
    n_ph = base.size
    t_x = base + rng.exponential(src.tau_x_ps, n_ph)
    t_xx = base + rng.exponential(src.tau_xx_ps, n_ph)

    det = chain.detectors
    to_x1, to_x2 = _route_bs(rng, n_ph, chain.bs_ratio_x,
                             det["x1"].efficiency, det["x2"].efficiency)
    to_xx1, to_xx2 = _route_bs(rng, n_ph, chain.bs_ratio_xx,
                               det["xx1"].efficiency, det["xx2"].efficiency)
    for role, times in (("x1", t_x[to_x1]), ("x2", t_x[to_x2]),
                        ("xx1", t_xx[to_xx1]), ("xx2", t_xx[to_xx2])):
        acc.add(chain.channel_ids[role],
                _jitter(rng, times, chain.detectors[role].jitter_sigma_ps))

    _emit_darks(acc, chain, rng, t_pulse[0], n * period)
    _emit_sync(acc, chain, src.t0_ps, period, k0, n)
    return acc.sorted_arrays()


def _run_chunks(worker, src, chain: ChannelConfig, n_pulses: int, seed: int,
                threads: int) -> Stream:
    if n_pulses < 1:
        raise ValueError("n_pulses must be >= 1")
    jobs = [(i * CHUNK_PULSES, min(CHUNK_PULSES, n_pulses - i * CHUNK_PULSES), i)
            for i in range((n_pulses + CHUNK_PULSES - 1) // CHUNK_PULSES)]
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            chunks = list(pool.map(
                lambda j: worker(src, chain, j[0], j[1], seed, j[2]), jobs))
    else:
        chunks = [worker(src, chain, k0, cnt, seed, ci) for k0, cnt, ci in jobs]
    header = StreamHeader.for_rate(
        src.rep_rate_hz, t0_ps=src.t0_ps, n_pulses=n_pulses,
        sync_divider=chain.sync_divider, implicit_sync=chain.implicit_sync,
        channels=dict(chain.channel_ids))
    return _finalize_chunks(chunks, chain, header)


def simulate_qd(src: QdSourceConfig, chain: ChannelConfig, n_pulses: int,
                seed: int, threads: int = 1) -> Stream:
    """Cascade-source time-tag stream; see module docstring for determinism."""
    return _run_chunks(_qd_chunk, src, chain, n_pulses, seed, threads)


def simulate_spdc(src: SpdcSourceConfig, chain: ChannelConfig, n_pulses: int,
                  seed: int, threads: int = 1) -> Stream:
    """Squeezing-type-source time-tag stream through the same chain."""
    return _run_chunks(_spdc_chunk, src, chain, n_pulses, seed, threads)


def attenuate_stream(stream: Stream, transmissivity: float, seed: int,
                     roles=None) -> Stream:
    """Bernoulli thinning of the selected photon channels; sync preserved.

    Tags on selected channels survive independently with probability T, so
    click probabilities scale as T per channel and coincidences as T^2.
    """
    if not 0.0 <= transmissivity <= 1.0:
        raise ValueError("transmissivity must be in [0, 1]")
    roles = tuple(roles) if roles else PHOTON_ROLES
    targets = {stream.header.channels[r] for r in roles
               if r in stream.header.channels}
    rng = np.random.default_rng([seed, 0])
    affected = np.isin(stream.channels, np.fromiter(targets, dtype=np.uint8))
    keep = np.ones(stream.times.size, dtype=bool)
    keep[affected] = rng.random(int(affected.sum())) < transmissivity
    header = _copy_header(stream.header)
    return Stream(header=header, channels=stream.channels[keep],
                  times=stream.times[keep])


def _copy_header(header: StreamHeader) -> StreamHeader:
    return StreamHeader(rep_rate_millihz=header.rep_rate_millihz,
                        t0_ps=header.t0_ps, n_pulses=header.n_pulses,
                        sync_divider=header.sync_divider,
                        implicit_sync=header.implicit_sync,
                        channels=dict(header.channels))
