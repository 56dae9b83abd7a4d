"""Command-line surface: simulate, analyze, certify, oracle, report.

Exit codes: 0 success; 2 configuration / usage error; 3 data error
(unreadable or empty inputs); 4 criterion not violated (a valid measurement
outcome, distinguishable by scripts from failures).

Run configuration files are INI documents with [source] and [chain]
sections; every key is schema-checked and unknown keys are rejected.  All
randomness derives from the single --seed value, which is echoed on stderr.
"""

from __future__ import annotations

import argparse
import configparser
import json
import os
import sys
from math import inf, isfinite

import numpy as np

from . import criteria, estimators, photon_number, polarization, timetags
from .simulate import (ChannelConfig, DetectorParams, QdSourceConfig,
                       SpdcSourceConfig, attenuate_stream,
                       rabi_preparation_probability, simulate_qd, simulate_spdc)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NOT_VIOLATED = 4

REPORT_VERSION = "v1"


class ConfigError(Exception):
    pass


class DataError(Exception):
    pass


_SOURCE_KEYS = {
    "type": str, "rep_rate_hz": float, "prep_prob": float,
    "pulse_area_rad": float, "power_ratio": float, "rabi_damping": float,
    "tau_xx_ps": float, "tau_x_ps": float, "blink_on_prob": float,
    "blink_switch_prob": float, "fss_uev": float, "eps_x": float,
    "eps_xx": float, "t0_ps": int, "werner_p": float,
    "mu": float, "modes": int,
}
_CHAIN_SCALARS = {
    "bs_ratio_x": float, "bs_ratio_xx": float, "sync_divider": int,
    "implicit_sync": bool,
}
_CHAIN_PER_DETECTOR = ("efficiency", "dark_rate_hz", "jitter_sigma_ps",
                       "dead_time_ps")
_CHAIN_CHANNEL_KEYS = tuple(f"channel_{r}" for r in
                            ("sync", "x1", "x2", "xx1", "xx2"))


def _parse_bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"not a boolean: {text!r}")


def _typed(value: str, typ):
    if typ is bool:
        return _parse_bool(value)
    try:
        return typ(value)
    except ValueError as exc:
        raise ConfigError(f"bad value {value!r}: {exc}") from None


def load_run_config(path: str):
    """Parse and validate an INI run configuration into source/chain objects."""
    parser = configparser.ConfigParser()
    read = parser.read(path)
    if not read:
        raise DataError(f"cannot read config file {path}")
    for section in parser.sections():
        if section not in ("source", "chain"):
            raise ConfigError(f"unknown section [{section}]")
    if "source" not in parser:
        raise ConfigError("missing [source] section")

    src_raw = dict(parser["source"])
    src_type = src_raw.pop("type", "qd").strip().lower()
    kwargs = {}
    for key, value in src_raw.items():
        if key not in _SOURCE_KEYS or key == "type":
            raise ConfigError(f"unknown [source] key {key!r}")
        kwargs[key] = _typed(value, _SOURCE_KEYS[key])
    werner_p = kwargs.pop("werner_p", None)
    if src_type == "qd":
        if "mu" in kwargs or "modes" in kwargs:
            raise ConfigError("mu/modes are valid only for an spdc source")
        if "fss_uev" in kwargs:
            kwargs["fss_ueV"] = kwargs.pop("fss_uev")
        if "prep_prob" in kwargs:
            kwargs.setdefault("pulse_area_rad", None)
        if werner_p is not None:
            kwargs["rho"] = polarization.DensityMatrix.werner(werner_p)
        try:
            source = QdSourceConfig(**kwargs)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad [source] config: {exc}") from None
    elif src_type == "spdc":
        allowed = {"mu", "modes", "rep_rate_hz", "tau_x_ps", "tau_xx_ps", "t0_ps"}
        bad = set(kwargs) - allowed
        if bad or werner_p is not None:
            raise ConfigError(f"keys {sorted(bad)} not valid for an spdc source")
        try:
            source = SpdcSourceConfig(**kwargs)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad [source] config: {exc}") from None
    else:
        raise ConfigError(f"unknown source type {src_type!r}")

    chain_raw = dict(parser["chain"]) if "chain" in parser else {}
    scalars = {}
    per_det = {r: {} for r in timetags.PHOTON_ROLES}
    channel_ids = dict()
    for key, value in chain_raw.items():
        if key in _CHAIN_SCALARS:
            scalars[key] = _typed(value, _CHAIN_SCALARS[key])
            continue
        if key in _CHAIN_CHANNEL_KEYS:
            channel_ids[key.removeprefix("channel_")] = _typed(value, int)
            continue
        matched = False
        for base in _CHAIN_PER_DETECTOR:
            if key == base:
                for r in timetags.PHOTON_ROLES:
                    per_det[r][base] = _typed(value, float)
                matched = True
            elif key.startswith(base + "_"):
                role = key[len(base) + 1:]
                if role not in timetags.PHOTON_ROLES:
                    raise ConfigError(f"unknown detector role in key {key!r}")
                per_det[role][base] = _typed(value, float)
                matched = True
        if not matched:
            raise ConfigError(f"unknown [chain] key {key!r}")
    detectors = {r: DetectorParams(**per_det[r]) for r in timetags.PHOTON_ROLES}
    if channel_ids:
        full = dict(ChannelConfig().channel_ids)
        full.update(channel_ids)
        scalars["channel_ids"] = full
    try:
        chain = ChannelConfig(detectors=detectors, **scalars)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad [chain] config: {exc}") from None
    return src_type, source, chain


def _default_threads(args) -> int:
    if getattr(args, "threads", None):
        return args.threads
    return int(os.environ.get("QNGPAIRS_THREADS", "1"))


def _echo_seed(seed: int) -> None:
    print(f"effective seed: {seed}", file=sys.stderr)


def _offsets_for(src, mode: str) -> dict | None:
    if mode == "zero":
        return {}
    return timetags.auto_offsets(src)


def _load_stream_arg(path: str):
    try:
        return timetags.read_all(path)
    except (OSError, timetags.StreamFormatError) as exc:
        raise DataError(f"cannot read stream {path}: {exc}") from None


def cmd_simulate(args) -> int:
    src_type, source, chain = load_run_config(args.config)
    _echo_seed(args.seed)
    threads = _default_threads(args)
    sim = simulate_qd if src_type == "qd" else simulate_spdc
    stream = sim(source, chain, args.pulses, args.seed, threads=threads)
    timetags.write_stream(stream.header, stream, args.out)
    print(f"wrote {stream.times.size} tags over {args.pulses} pulses to {args.out}")
    return EXIT_OK


def cmd_attenuate(args) -> int:
    stream = _load_stream_arg(args.infile)
    _echo_seed(args.seed)
    roles = args.roles.split(",") if args.roles else None
    thinned = attenuate_stream(stream, args.t, args.seed, roles=roles)
    timetags.write_stream(thinned.header, thinned, args.out)
    print(f"kept {thinned.times.size}/{stream.times.size} tags at T={args.t}")
    return EXIT_OK


def _windows_ps(args) -> list:
    return [float(w) * 1000.0 for w in args.window_ns.split(",")]


def cmd_analyze_fold(args) -> int:
    stream = _load_stream_arg(args.infile)
    offsets = _offsets_for(stream, args.offsets)
    table = timetags.fold_pulses(stream, _windows_ps(args)[0], offsets=offsets)
    rows = np.column_stack([table.pulse_index, table.pattern])
    header = "pulse_index,pattern_bits"
    _write_csv(args.out, header, rows, fmt="%d")
    print(f"{table.pulse_index.size} pulses with clicks of {table.n_pulses}")
    return EXIT_OK


def cmd_analyze_correlate(args) -> int:
    stream = _load_stream_arg(args.infile)
    hist = timetags.correlation_histogram(
        stream, args.a, args.b, bin_width_ps=args.bin_ps,
        range_ps=args.range_ns * 1000.0)
    rows = np.column_stack([hist.bin_centers(), hist.counts])
    _write_csv(args.out, "delay_ps,counts", rows, fmt=("%.3f", "%d"))
    print(f"{hist.n_pairs} pairs histogrammed ({args.a} x {args.b})")
    return EXIT_OK


def cmd_analyze_sweep(args) -> int:
    stream = _load_stream_arg(args.infile)
    offsets = _offsets_for(stream, args.offsets)
    rows = timetags.window_sweep(stream, _windows_ps(args), offsets=offsets,
                                 herald=args.herald)
    if not rows:
        raise DataError("no data: empty window list")
    keys = list(rows[0].keys())
    data = [[row[k] for k in keys] for row in rows]
    _write_csv(args.out, ",".join(keys), np.asarray(data), fmt="%.6g")
    print(f"swept {len(rows)} windows")
    return EXIT_OK


def _hbt_stats_for_window(stream, window_ps, offsets, herald, bs_ratio):
    table = timetags.fold_pulses(stream, window_ps, offsets=offsets)
    counts = estimators.hbt_counts(table, herald=herald)
    stats = estimators.photon_stats(counts, bs_ratio=bs_ratio)
    return counts, stats


def cmd_analyze_hbt(args) -> int:
    stream = _load_stream_arg(args.infile)
    offsets = _offsets_for(stream, args.offsets)
    counts, stats = _hbt_stats_for_window(
        stream, _windows_ps(args)[0], offsets, args.herald, args.bs_ratio)
    out = {
        "r1a": counts.r1a, "r1b": counts.r1b, "r2": counts.r2, "n": counts.n,
        "heralded": counts.heralded,
        "p0": stats.p0, "p1": stats.p1, "p2plus": stats.p2plus,
        "sigma_p1": stats.sigma_p1, "sigma_p2plus": stats.sigma_p2plus,
        "unbalanced_correction": stats.unbalanced_correction,
    }
    _emit_json(args.out, out)
    return EXIT_OK


def cmd_analyze_pairs(args) -> int:
    stream = _load_stream_arg(args.infile)
    offsets = _offsets_for(stream, args.offsets)
    table = timetags.fold_pulses(stream, _windows_ps(args)[0], offsets=offsets)
    stats = estimators.pair_click_stats(table)
    _emit_json(args.out, {
        "ps": stats.ps, "pe": stats.pe, "sigma_ps": stats.sigma_ps,
        "sigma_pe": stats.sigma_pe, "n_pulses": stats.n_pulses,
        "pe_x": stats.pe_x, "pe_xx": stats.pe_xx,
    })
    return EXIT_OK


def _arm_channels(arm: str):
    if arm == "x":
        return "x1", "x2"
    if arm == "xx":
        return "xx1", "xx2"
    raise ConfigError("arm must be 'x' or 'xx'")


def _peak_range(period: float, n_peaks: int, bin_ps: float) -> float:
    # whole number of bins covering n_peaks + half a period of margin
    return np.ceil((n_peaks + 0.5) * period / bin_ps) * bin_ps


def cmd_analyze_g2(args) -> int:
    stream = _load_stream_arg(args.infile)
    a, b = _arm_channels(args.arm)
    period = stream.header.period_ps
    hist = timetags.correlation_histogram(
        stream, a, b, bin_width_ps=args.bin_ps,
        range_ps=_peak_range(period, args.side_peaks, args.bin_ps))
    peaks = timetags.integrate_peaks(hist, period, args.peak_window_ns * 1000.0,
                                     n_side_peaks=args.side_peaks)
    res = estimators.g2_from_peaks(peaks)
    _emit_json(args.out, {"g2": res.value, "sigma": res.sigma,
                          "upper_bound_90": res.upper_bound_90,
                          "zero_peak": peaks.zero_peak_counts,
                          "side_peaks": peaks.side_peak_counts})
    return EXIT_OK


def cmd_analyze_prep(args) -> int:
    stream = _load_stream_arg(args.infile)
    period = stream.header.period_ps
    n_peaks = max(args.far_max, args.side_peaks)
    hist = timetags.correlation_histogram(
        stream, args.a, args.b, bin_width_ps=args.bin_ps,
        range_ps=_peak_range(period, n_peaks, args.bin_ps))
    near = timetags.integrate_peaks(hist, period, args.peak_window_ns * 1000.0,
                                    n_side_peaks=args.side_peaks)
    res = estimators.prep_efficiency(near)
    out = {"prep_efficiency": res.value, "sigma": res.sigma,
           "zero_peak": near.zero_peak_counts,
           "near_side_peaks": near.side_peak_counts}
    if args.far_max > args.side_peaks:
        far = timetags.integrate_peaks(hist, period,
                                       args.peak_window_ns * 1000.0,
                                       n_side_peaks=args.far_max)
        # blinking inflates near peaks; the near/far side-peak ratio flags it
        far_only = [(k, c) for k, c in far.side_peak_counts
                    if args.far_min <= abs(k) <= args.far_max]
        far_mean = np.mean([c for _, c in far_only]) if far_only else 0.0
        near_mean = np.mean([c for _, c in near.side_peak_counts])
        out["far_side_peaks"] = far_only
        out["prep_efficiency_far"] = float(far_mean / near.zero_peak_counts) \
            if near.zero_peak_counts else None
        out["near_to_far_ratio"] = float(near_mean / far_mean) if far_mean else None
    _emit_json(args.out, out)
    return EXIT_OK


def _read_table(path, expected_columns):
    try:
        with open(path) as fh:
            header = fh.readline().strip()
            rows = [line.strip().split(",") for line in fh if line.strip()]
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from None
    cols = header.split(",")
    if cols != list(expected_columns):
        raise DataError(
            f"expected columns {','.join(expected_columns)}, found {header!r}")
    if not rows:
        raise DataError("no data rows")
    return rows


def cmd_analyze_tomography(args) -> int:
    rows = _read_table(args.counts, ("setting_x", "setting_xx", "count", "shots"))
    settings, counts, shots = [], [], []
    for r in rows:
        settings.append((r[0], r[1]))
        counts.append(float(r[2]))
        shots.append(float(r[3]))
    try:
        data = polarization.TomographyCounts(settings=settings,
                                             counts=np.array(counts),
                                             shots=np.array(shots))
        rho = polarization.tomography_reconstruct(data)
    except ValueError as exc:
        raise DataError(str(exc)) from None
    f_std = polarization.fidelity(rho, polarization.PHI_PLUS)
    m = rho.matrix
    f_opt = float(0.5 * (m[0, 0].real + m[3, 3].real) + abs(m[0, 3]))
    s = polarization.chsh_expectation(rho).s_value
    base = args.out
    _write_csv(base + ".real.csv", ",".join(f"c{j}" for j in range(4)),
               m.real, fmt="%.8f")
    _write_csv(base + ".imag.csv", ",".join(f"c{j}" for j in range(4)),
               m.imag, fmt="%.8f")
    _emit_json(base + ".json", {
        "fidelity_phi_plus": f_std, "fidelity_phase_optimized": f_opt,
        "chsh_of_reconstruction": s,
        "eigenvalues": sorted(np.linalg.eigvalsh(m).real.tolist(), reverse=True),
    })
    return EXIT_OK


def cmd_analyze_chsh(args) -> int:
    rows = _read_table(args.counts, ("setting", "outcome", "count"))
    table = np.zeros((4, 4))
    outcome_idx = {"pp": 0, "pm": 1, "mp": 2, "mm": 3}
    for r in rows:
        si = int(r[0])
        if not 0 <= si < 4 or r[1] not in outcome_idx:
            raise DataError(f"bad row {r}")
        table[si, outcome_idx[r[1]]] += float(r[2])
    try:
        res = polarization.chsh_from_counts(table)
    except ValueError as exc:
        raise DataError(str(exc)) from None
    _emit_json(args.out, {
        "s_value": res.s_value, "sigma_s": res.sigma_s,
        "correlators": list(res.correlators),
        "correlator_sigmas": list(res.correlator_sigmas),
    })
    return EXIT_OK


def _pair_stats_from_json(path) -> photon_number.PairClickStats:
    with open(path) as fh:
        d = json.load(fh)
    try:
        return photon_number.PairClickStats(
            ps=d["ps"], pe=d["pe"], sigma_ps=d.get("sigma_ps", 0.0),
            sigma_pe=d.get("sigma_pe", 0.0), n_pulses=d.get("n_pulses", 0))
    except (KeyError, ValueError) as exc:
        raise DataError(f"bad stats JSON: {exc}") from None


def _json_safe(v):
    if v is None or isfinite(v):
        return v
    return None   # unbounded depths serialize as null, flagged separately


def _pair_report_dict(stats) -> dict:
    rep = criteria.pair_violation(stats)
    out = {
        "ps": stats.ps, "pe": stats.pe, "threshold": rep.threshold,
        "difference": rep.difference, "significance": _json_safe(rep.significance),
        "significance_one_sided": rep.significance_one_sided,
        "violated": rep.difference > 0,
    }
    if rep.difference > 0:
        depth = criteria.pair_depth(stats)
        out.update({"t_coin_db": _json_safe(depth.t_coin_db),
                    "t_coin_exact_db": _json_safe(depth.t_coin_exact_db),
                    "t_coin_sigma_db": _json_safe(depth.t_coin_sigma_db),
                    "depth_unbounded": stats.pe == 0.0})
    return out


def cmd_certify_pairs(args) -> int:
    if args.stats:
        stats = _pair_stats_from_json(args.stats)
        report = _pair_report_dict(stats)
        _emit_json(args.out, report)
        _print_pair_row("stats", report)
        return EXIT_OK if report["violated"] else EXIT_NOT_VIOLATED
    stream = _load_stream_arg(args.infile)
    offsets = _offsets_for(stream, args.offsets)
    tables = timetags.fold_pulses_multi(stream, _windows_ps(args), offsets=offsets)
    rows = []
    for table in tables:
        stats = estimators.pair_click_stats(table)
        rep = _pair_report_dict(stats)
        rep["window_ns"] = table.window_ps / 1000.0
        rows.append(rep)
        _print_pair_row(f"{rep['window_ns']:.3f} ns", rep)
    violated = [r for r in rows if r["violated"]]
    best = max(violated, key=lambda r: r["significance"]) if violated else None
    _emit_json(args.out, {"windows": rows, "best": best})
    if best:
        print(f"best window: {best['window_ns']:.3f} ns "
              f"(significance {best['significance']:.1f})")
        return EXIT_OK
    return EXIT_NOT_VIOLATED


def _print_pair_row(label: str, rep: dict) -> None:
    depth = rep.get("t_coin_db")
    depth_s = f"{depth:.3f} dB" if depth is not None and isfinite(depth) else "-"
    sig = rep["significance"]
    sig_s = f"{sig:.2f}" if sig is not None else "inf"
    print(f"{label:>12}  ps={rep['ps']:.4g} pe={rep['pe']:.4g} "
          f"thr={rep['threshold']:.4g} diff={rep['difference']:+.4g} "
          f"sig={sig_s} depth={depth_s}")


def _sps_report_dict(stats: criteria.PhotonNumberStats) -> dict:
    res = criteria.sps_depth(stats)
    return {"p1": stats.p1, "p2plus": stats.p2plus,
            "depth_db": None if res.unbounded else res.depth_db,
            "sigma_db": res.sigma_db, "unbounded": res.unbounded,
            "heralded": stats.heralded}


def cmd_certify_sps(args) -> int:
    if args.stats:
        with open(args.stats) as fh:
            d = json.load(fh)
        try:
            stats = criteria.PhotonNumberStats(
                p0=d["p0"], p1=d["p1"], p2plus=d["p2plus"],
                sigma_p1=d.get("sigma_p1", 0.0),
                sigma_p2plus=d.get("sigma_p2plus", 0.0),
                heralded=d.get("heralded", False))
        except (KeyError, ValueError) as exc:
            raise DataError(f"bad stats JSON: {exc}") from None
        report = _sps_report_dict(stats)
        _emit_json(args.out, report)
        _print_sps_row("stats", report)
        return EXIT_OK
    stream = _load_stream_arg(args.infile)
    offsets = _offsets_for(stream, args.offsets)
    rows = []
    for w in _windows_ps(args):
        try:
            _, stats = _hbt_stats_for_window(stream, w, offsets, args.herald,
                                             args.bs_ratio)
            rep = _sps_report_dict(stats)
        except (ValueError, estimators.NoHeraldsError) as exc:
            rep = {"error": str(exc)}
        rep["window_ns"] = w / 1000.0
        rows.append(rep)
        _print_sps_row(f"{w / 1000.0:.3f} ns", rep)
    valid = [r for r in rows if r.get("depth_db") is not None or r.get("unbounded")]
    best = max(valid, key=lambda r: inf if r["unbounded"] else r["depth_db"]) \
        if valid else None
    _emit_json(args.out, {"windows": rows, "best": best})
    return EXIT_OK if best else EXIT_NOT_VIOLATED


def _print_sps_row(label: str, rep: dict) -> None:
    if "error" in rep:
        print(f"{label:>12}  {rep['error']}")
        return
    if rep["unbounded"]:
        print(f"{label:>12}  p1={rep['p1']:.4g} p2+={rep['p2plus']:.4g} "
              "depth=unbounded")
    else:
        print(f"{label:>12}  p1={rep['p1']:.4g} p2+={rep['p2plus']:.4g} "
              f"depth={rep['depth_db']:.2f} +- {rep['sigma_db']:.2f} dB")


def _grid_values(text: str) -> list:
    return [float(v) for v in text.split(",")]


def cmd_oracle(args) -> int:
    mus = _grid_values(args.mu)
    etas = _grid_values(args.eta)
    darks = _grid_values(args.dark)
    modes = [int(k) for k in args.modes.split(",")]
    lines = []
    for mu in mus:
        for k in modes:
            dist = photon_number.multimode_distribution(mu, k,
                                                        n_max=_auto_n_max(mu, k))
            for eta in etas:
                for dark in darks:
                    chain = photon_number.DetectionChainParams(
                        eta_x=eta, eta_xx=eta, dark_prob=dark)
                    st = photon_number.detected_pair_click_probs(dist, chain)
                    thr = criteria.pair_threshold(st.pe)
                    thr_x = criteria.pair_threshold_exact(st.pe)
                    lines.append((mu, k, eta, dark, st.ps, st.pe, thr,
                                  thr - st.ps, thr_x - st.ps))
    header = "mu,modes,eta,dark,ps,pe,threshold,margin,margin_exact"
    _write_csv(args.out, header, np.asarray(lines), fmt="%.10g")
    print(f"{len(lines)} grid points")
    return EXIT_OK


def _auto_n_max(mu: float, modes: int, tol: float = 1e-9, cap: int = 512) -> int:
    n = 20
    while n <= cap:
        try:
            photon_number.multimode_distribution(mu, modes, n_max=n, tail_tol=tol)
            return n
        except photon_number.TruncationError:
            n *= 2
    raise ConfigError(f"mu={mu} needs truncation beyond {cap}")


def _report_header(name: str, columns: str) -> str:
    return f"# qngpairs-report {name} {REPORT_VERSION}\n{columns}"


def cmd_report(args) -> int:
    if args.bundle == "pair-criterion":
        stats = _pair_stats_from_json(args.stats)
        pe_grid = np.geomspace(max(stats.pe * 1e-3, 1e-12),
                               min(stats.pe * 1e3, 1.0), 200)
        rows = [(pe, criteria.pair_threshold(pe), 0.0, 0.0, "boundary")
                for pe in pe_grid]
        rows.append((stats.pe, criteria.pair_threshold(stats.pe), stats.ps,
                     0.0, "measured"))
        try:
            curve = criteria.depth_curve(stats, np.linspace(0.05, 1.0, 96))
            for p in curve:
                rows.append((p["pe"], criteria.pair_threshold(p["pe"]), p["ps"],
                             p["t"], "critical" if p["critical"] else "trajectory"))
        except ValueError:
            pass
        body = "\n".join(f"{pe:.10g},{thr:.10g},{ps:.10g},{t:.6g},{kind}"
                         for pe, thr, ps, t, kind in rows)
        _write_text(args.out, _report_header(
            "pair-criterion", "pe,threshold,ps,t,kind") + "\n" + body + "\n")
    elif args.bundle == "click-sweep":
        stream = _load_stream_arg(args.infile)
        offsets = _offsets_for(stream, args.offsets)
        rows = timetags.window_sweep(stream, _windows_ps(args), offsets=offsets,
                                     herald=args.herald)
        if not rows:
            raise DataError("no data: empty window list")
        cols = ("window_ns,singles_per_pulse,doubles_per_pulse,"
                "n_singles,n_doubles,n_pulses")
        body_rows = []
        for r in rows:
            if args.herald:
                n = r["n_heralds"]
                singles = r["n_sig1_her"] + r["n_sig2_her"]
                doubles = r["n_sig12_her"]
            else:
                n = r["n_pulses"]
                singles = r["n_x1"] + r["n_x2"]
                doubles = r["n_x1x2"]
            if n == 0:
                raise DataError("no data: zero trials in sweep")
            body_rows.append(f"{r['window_ps'] / 1000.0:.6g},{singles / n:.10g},"
                             f"{doubles / n:.10g},{singles},{doubles},{n}")
        _write_text(args.out, _report_header("click-sweep", cols) + "\n"
                    + "\n".join(body_rows) + "\n")
    elif args.bundle == "rabi":
        ratios = np.linspace(0.0, args.max_power_ratio, args.points)
        rows = [f"{r:.8g},{rabi_preparation_probability(np.pi * np.sqrt(r), args.damping):.10g}"
                for r in ratios]
        _write_text(args.out, _report_header(
            "rabi", "power_ratio,preparation_probability") + "\n"
            + "\n".join(rows) + "\n")
    else:
        raise ConfigError(f"unknown bundle {args.bundle!r}")
    print(f"wrote report bundle {args.bundle} to {args.out}")
    return EXIT_OK


def _write_text(path, text: str) -> None:
    if path == "-":
        sys.stdout.write(text)
        return
    with open(path, "w") as fh:
        fh.write(text)


def _write_csv(path, header: str, rows, fmt="%.10g") -> None:
    if path == "-":
        fh = sys.stdout
        close = False
    else:
        fh = open(path, "w")
        close = True
    try:
        fh.write(header + "\n")
        arr = np.asarray(rows)
        if arr.size:
            np.savetxt(fh, arr, fmt=fmt, delimiter=",")
    finally:
        if close:
            fh.close()


def _emit_json(path, payload: dict) -> None:
    text = json.dumps(payload, indent=2, default=float) + "\n"
    _write_text(path, text)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="qngpairs",
                                description="pair-source simulation and "
                                "non-Gaussianity certification toolkit")
    sub = p.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="generate a time-tag stream")
    sim.add_argument("--config", required=True)
    sim.add_argument("--pulses", type=int, required=True)
    sim.add_argument("--seed", type=int, default=0)
    sim.add_argument("--threads", type=int, default=None)
    sim.add_argument("--out", required=True)
    sim.set_defaults(func=cmd_simulate)

    att = sub.add_parser("attenuate", help="thin photon channels by T")
    att.add_argument("--in", dest="infile", required=True)
    att.add_argument("--t", type=float, required=True)
    att.add_argument("--seed", type=int, default=0)
    att.add_argument("--roles", default=None,
                     help="comma list of roles (default all photon channels)")
    att.add_argument("--out", required=True)
    att.set_defaults(func=cmd_attenuate)

    an = sub.add_parser("analyze", help="stream / table analyses")
    ansub = an.add_subparsers(dest="analysis", required=True)

    def add_stream_args(sp, windows=True):
        sp.add_argument("--in", dest="infile", required=True)
        sp.add_argument("--offsets", choices=("auto", "zero"), default="auto")
        if windows:
            sp.add_argument("--window-ns", default="0.8",
                            help="comma list of coincidence windows in ns")
        sp.add_argument("--out", default="-")

    fold = ansub.add_parser("fold", help="per-pulse click table")
    add_stream_args(fold)
    fold.set_defaults(func=cmd_analyze_fold)

    corr = ansub.add_parser("correlate", help="cross-correlation histogram")
    corr.add_argument("--in", dest="infile", required=True)
    corr.add_argument("--a", required=True)
    corr.add_argument("--b", required=True)
    corr.add_argument("--bin-ps", type=float, default=100.0)
    corr.add_argument("--range-ns", type=float, default=100.0)
    corr.add_argument("--out", default="-")
    corr.set_defaults(func=cmd_analyze_correlate)

    sweep = ansub.add_parser("sweep", help="click rates vs window")
    add_stream_args(sweep)
    sweep.set_defaults(window_ns="0.12,0.16,0.28,0.8")
    sweep.add_argument("--herald", choices=("x", "xx"), default=None)
    sweep.set_defaults(func=cmd_analyze_sweep)

    hbt = ansub.add_parser("hbt", help="singles/doubles click statistics")
    add_stream_args(hbt)
    hbt.add_argument("--herald", choices=("x", "xx"), default=None)
    hbt.add_argument("--bs-ratio", type=float, default=0.5)
    hbt.set_defaults(func=cmd_analyze_hbt)

    pairs = ansub.add_parser("pairs", help="success/error pair statistics")
    add_stream_args(pairs)
    pairs.set_defaults(func=cmd_analyze_pairs)

    g2 = ansub.add_parser("g2", help="second-order correlation from peak areas")
    g2.add_argument("--in", dest="infile", required=True)
    g2.add_argument("--arm", choices=("x", "xx"), default="x")
    g2.add_argument("--bin-ps", type=float, default=100.0)
    g2.add_argument("--peak-window-ns", type=float, default=4.0)
    g2.add_argument("--side-peaks", type=int, default=5)
    g2.add_argument("--out", default="-")
    g2.set_defaults(func=cmd_analyze_g2)

    prep = ansub.add_parser("prep", help="preparation efficiency from peaks")
    prep.add_argument("--in", dest="infile", required=True)
    prep.add_argument("--a", default="x1")
    prep.add_argument("--b", default="xx1")
    prep.add_argument("--bin-ps", type=float, default=100.0)
    prep.add_argument("--peak-window-ns", type=float, default=4.0)
    prep.add_argument("--side-peaks", type=int, default=5)
    prep.add_argument("--far-min", type=int, default=20,
                      help="first far side peak of the blinking diagnostic")
    prep.add_argument("--far-max", type=int, default=40,
                      help="last far side peak of the blinking diagnostic")
    prep.add_argument("--out", default="-")
    prep.set_defaults(func=cmd_analyze_prep)

    tomo = ansub.add_parser("tomography", help="state reconstruction from counts")
    tomo.add_argument("--counts", required=True,
                      help="CSV with columns setting_x,setting_xx,count,shots")
    tomo.add_argument("--out", required=True, help="output basename")
    tomo.set_defaults(func=cmd_analyze_tomography)

    chsh = ansub.add_parser("chsh", help="CHSH value from counts")
    chsh.add_argument("--counts", required=True,
                      help="CSV with columns setting,outcome,count")
    chsh.add_argument("--out", default="-")
    chsh.set_defaults(func=cmd_analyze_chsh)

    cert = sub.add_parser("certify", help="non-Gaussianity certification")
    certsub = cert.add_subparsers(dest="mode", required=True)

    cp = certsub.add_parser("pairs", help="pair-coincidence criterion")
    cp.add_argument("--stats", default=None, help="pair stats JSON")
    cp.add_argument("--in", dest="infile", default=None)
    cp.add_argument("--offsets", choices=("auto", "zero"), default="auto")
    cp.add_argument("--window-ns", default="0.12,0.16,0.28,0.8")
    cp.add_argument("--out", default="-")
    cp.set_defaults(func=cmd_certify_pairs)

    cs = certsub.add_parser("sps", help="single-photon depth")
    cs.add_argument("--stats", default=None, help="photon stats JSON")
    cs.add_argument("--in", dest="infile", default=None)
    cs.add_argument("--offsets", choices=("auto", "zero"), default="auto")
    cs.add_argument("--window-ns", default="0.12,0.16,0.28,0.8")
    cs.add_argument("--herald", choices=("x", "xx"), default=None)
    cs.add_argument("--bs-ratio", type=float, default=0.5)
    cs.add_argument("--out", default="-")
    cs.set_defaults(func=cmd_certify_sps)

    orc = sub.add_parser("oracle", help="analytic click-probability grid")
    orc.add_argument("--mu", default="0.001,0.01,0.1,0.5,1,2")
    orc.add_argument("--modes", default="1,2,10,1000000")
    orc.add_argument("--eta", default="0.01,0.1,0.3,0.6,1.0")
    orc.add_argument("--dark", default="0,1e-6,1e-4")
    orc.add_argument("--out", default="-")
    orc.set_defaults(func=cmd_oracle)

    rep = sub.add_parser("report", help="plot-ready figure data bundles")
    rep.add_argument("bundle", choices=("pair-criterion", "click-sweep", "rabi"))
    rep.add_argument("--stats", default=None)
    rep.add_argument("--in", dest="infile", default=None)
    rep.add_argument("--offsets", choices=("auto", "zero"), default="auto")
    rep.add_argument("--window-ns", default="0.12,0.16,0.28,0.8")
    rep.add_argument("--herald", choices=("x", "xx"), default=None)
    rep.add_argument("--max-power-ratio", type=float, default=4.0)
    rep.add_argument("--points", type=int, default=101)
    rep.add_argument("--damping", type=float, default=0.0)
    rep.add_argument("--out", default="-")
    rep.set_defaults(func=cmd_report)

    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, configparser.Error) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except criteria.CriterionNotViolated as exc:
        print(f"criterion not violated: {exc}", file=sys.stderr)
        return EXIT_NOT_VIOLATED
    except (DataError, timetags.StreamFormatError, estimators.NoHeraldsError,
            FileNotFoundError, ValueError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    raise SystemExit(main())
