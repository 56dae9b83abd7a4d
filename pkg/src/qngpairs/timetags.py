"""Time-tag stream format, pulse folding and correlation histograms.

Binary format (little-endian, fixed width, documented for interoperability):

    offset  size  field
    0       4     magic "QTT1"
    4       2     version (u16) = 1
    6       2     flags (u16); bit 0 = implicit sync (no sync tags stored,
                  pulse grid derived from rep_rate and t0)
    8       8     repetition rate in millihertz (u64)
    16      8     t0: time of pulse 0 in ps (u64)
    24      8     number of pulses covered (u64)
    32      4     sync divider (u32); sync tag every this many pulses
    36      1     number of channel roles (u8)
    37      2*n   (role u8, channel u8) pairs, sorted by role id
    ...     8     tag count (u64)
    ...     9*N   records: (channel u8, time_ps u64)

Records are sorted non-decreasing in time.  Multiple tags of one channel in
one coincidence window count as one click (threshold detectors).  All
analyses stream the file in bounded-memory blocks; counting paths use
integer accumulation only.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

MAGIC = b"QTT1"
VERSION = 1
FLAG_IMPLICIT_SYNC = 0x0001

ROLE_IDS = {"sync": 0, "x1": 1, "x2": 2, "xx1": 3, "xx2": 4}
ROLE_NAMES = {v: k for k, v in ROLE_IDS.items()}
ROLE_BITS = {"x1": 1, "x2": 2, "xx1": 4, "xx2": 8}
PHOTON_ROLES = ("x1", "x2", "xx1", "xx2")

RECORD_DTYPE = np.dtype([("channel", "u1"), ("time", "<u8")])
DEFAULT_BLOCK_TAGS = 1 << 20

_HEADER_FMT = "<4sHHQQQIB"
_HEADER_SIZE = struct.calcsize(_HEADER_FMT)


class StreamFormatError(ValueError):
    """Malformed stream file: bad magic, version, ordering or channel."""


@dataclass
class StreamHeader:
    rep_rate_millihz: int
    t0_ps: int = 0
    n_pulses: int = 0
    sync_divider: int = 1
    implicit_sync: bool = False
    channels: dict = field(default_factory=dict)  # role name -> channel id
    tag_count: int = 0

    def __post_init__(self):
        if self.rep_rate_millihz <= 0:
            raise ValueError("rep_rate_millihz must be > 0")
        if self.sync_divider < 1:
            raise ValueError("sync_divider must be >= 1")
        seen = set()
        for role, ch in self.channels.items():
            if role not in ROLE_IDS:
                raise ValueError(f"unknown role {role!r}")
            if ch in seen:
                raise ValueError("channel ids must be unique across roles")
            seen.add(ch)

    @classmethod
    def for_rate(cls, rep_rate_hz: float, **kw) -> "StreamHeader":
        return cls(rep_rate_millihz=round(rep_rate_hz * 1000), **kw)

    @property
    def rep_rate_hz(self) -> float:
        return self.rep_rate_millihz / 1000.0

    @property
    def period_ps(self) -> float:
        return 1e15 / self.rep_rate_millihz

    def channel_of(self, role: str) -> int:
        if role not in self.channels:
            raise ValueError(f"role {role!r} not present in stream header")
        return self.channels[role]


@dataclass
class Stream:
    """In-memory tag stream: parallel channel / time arrays, time-sorted."""

    header: StreamHeader
    channels: np.ndarray
    times: np.ndarray

    def __post_init__(self):
        self.channels = np.asarray(self.channels, dtype=np.uint8)
        self.times = np.asarray(self.times, dtype=np.int64)
        if self.channels.shape != self.times.shape:
            raise ValueError("channels and times must have equal length")
        if self.times.size and np.any(np.diff(self.times) < 0):
            raise StreamFormatError("tag times must be non-decreasing")
        self.header.tag_count = int(self.times.size)


def _pack_header(header: StreamHeader) -> bytes:
    flags = FLAG_IMPLICIT_SYNC if header.implicit_sync else 0
    roles = sorted((ROLE_IDS[r], ch) for r, ch in header.channels.items())
    buf = struct.pack(_HEADER_FMT, MAGIC, VERSION, flags,
                      header.rep_rate_millihz, header.t0_ps, header.n_pulses,
                      header.sync_divider, len(roles))
    for rid, ch in roles:
        buf += struct.pack("<BB", rid, ch)
    buf += struct.pack("<Q", header.tag_count)
    return buf


def _read_header(fh) -> StreamHeader:
    raw = fh.read(_HEADER_SIZE)
    if len(raw) < _HEADER_SIZE:
        raise StreamFormatError("truncated header")
    magic, version, flags, rate, t0, n_pulses, divider, n_roles = \
        struct.unpack(_HEADER_FMT, raw)
    if magic != MAGIC:
        raise StreamFormatError(f"bad magic {magic!r}")
    if version != VERSION:
        raise StreamFormatError(f"unsupported version {version}")
    channels = {}
    for _ in range(n_roles):
        rid, ch = struct.unpack("<BB", fh.read(2))
        if rid not in ROLE_NAMES:
            raise StreamFormatError(f"unknown role id {rid}")
        channels[ROLE_NAMES[rid]] = ch
    (tag_count,) = struct.unpack("<Q", fh.read(8))
    return StreamHeader(rep_rate_millihz=rate, t0_ps=t0, n_pulses=n_pulses,
                        sync_divider=divider,
                        implicit_sync=bool(flags & FLAG_IMPLICIT_SYNC),
                        channels=channels, tag_count=tag_count)


def write_stream(header: StreamHeader, blocks, path) -> int:
    """Write tag blocks to path; returns the tag count.

    blocks: iterable of (channels, times) array pairs, or a single pair.
    The tag count is patched into the header after streaming the records.
    """
    if isinstance(blocks, Stream):
        blocks = [(blocks.channels, blocks.times)]
    elif isinstance(blocks, tuple) and len(blocks) == 2 \
            and isinstance(blocks[0], np.ndarray):
        blocks = [blocks]
    path = Path(path)
    count = 0
    last_t = None
    valid = set(header.channels.values())
    with open(path, "wb") as fh:
        fh.write(_pack_header(header))
        count_pos = fh.tell() - 8
        for channels, times in blocks:
            channels = np.asarray(channels, dtype=np.uint8)
            times = np.asarray(times)
            if times.size == 0:
                continue
            if np.any(times < 0):
                raise StreamFormatError("negative tag time")
            if np.any(np.diff(times) < 0) or (last_t is not None and times[0] < last_t):
                raise StreamFormatError("tag times must be non-decreasing")
            unknown = set(np.unique(channels).tolist()) - valid
            if unknown:
                raise StreamFormatError(f"channels {sorted(unknown)} not in header map")
            rec = np.empty(times.size, dtype=RECORD_DTYPE)
            rec["channel"] = channels
            rec["time"] = times.astype(np.uint64)
            fh.write(rec.tobytes())
            count += times.size
            last_t = int(times[-1])
        fh.seek(count_pos)
        fh.write(struct.pack("<Q", count))
    header.tag_count = count
    return count


def read_stream(path, block_tags: int = DEFAULT_BLOCK_TAGS):
    """Open a stream file: returns (header, block iterator).

    The iterator yields (channels, times) pairs of at most block_tags tags,
    with monotonicity and channel validation on the fly.
    """
    path = Path(path)
    fh = open(path, "rb")
    header = _read_header(fh)

    def blocks():
        valid = set(header.channels.values())
        remaining = header.tag_count
        last_t = -1
        try:
            while remaining > 0:
                n = min(block_tags, remaining)
                raw = fh.read(n * RECORD_DTYPE.itemsize)
                if len(raw) != n * RECORD_DTYPE.itemsize:
                    raise StreamFormatError("truncated record section")
                rec = np.frombuffer(raw, dtype=RECORD_DTYPE)
                times = rec["time"].astype(np.int64)
                channels = rec["channel"].copy()
                if np.any(np.diff(times) < 0) or (times.size and times[0] < last_t):
                    raise StreamFormatError("tag times must be non-decreasing")
                unknown = set(np.unique(channels).tolist()) - valid
                if unknown:
                    raise StreamFormatError(
                        f"channels {sorted(unknown)} not in header map")
                last_t = int(times[-1]) if times.size else last_t
                remaining -= n
                yield channels, times
        finally:
            fh.close()

    return header, blocks()


def read_all(path) -> Stream:
    header, blocks = read_stream(path)
    chans, times = [], []
    for c, t in blocks:
        chans.append(c)
        times.append(t)
    if chans:
        channels = np.concatenate(chans)
        tms = np.concatenate(times)
    else:
        channels = np.empty(0, dtype=np.uint8)
        tms = np.empty(0, dtype=np.int64)
    return Stream(header=header, channels=channels, times=tms)


def _as_blocks(src, block_tags: int = DEFAULT_BLOCK_TAGS):
    """Normalize Stream / path inputs to (header, block iterator)."""
    if isinstance(src, Stream):
        def one():
            if src.times.size:
                for i in range(0, src.times.size, block_tags):
                    yield src.channels[i:i + block_tags], src.times[i:i + block_tags]
        return src.header, one()
    return read_stream(src, block_tags=block_tags)


def csv_export(src, path) -> None:
    """Plain-text export: header fields as '# key=value', then channel,time_ps."""
    header, blocks = _as_blocks(src)
    with open(path, "w") as fh:
        fh.write(f"# rep_rate_millihz={header.rep_rate_millihz}\n")
        fh.write(f"# t0_ps={header.t0_ps}\n")
        fh.write(f"# n_pulses={header.n_pulses}\n")
        fh.write(f"# sync_divider={header.sync_divider}\n")
        fh.write(f"# implicit_sync={int(header.implicit_sync)}\n")
        roles = ",".join(f"{r}:{c}" for r, c in sorted(header.channels.items()))
        fh.write(f"# channels={roles}\n")
        fh.write("channel,time_ps\n")
        for channels, times in blocks:
            np.savetxt(fh, np.column_stack([channels, times]), fmt="%d", delimiter=",")


def csv_import(path) -> Stream:
    meta = {}
    n_header = 0
    with open(path) as fh:
        for line in fh:
            if not line.startswith("#"):
                break
            key, _, val = line[1:].strip().partition("=")
            meta[key.strip()] = val.strip()
            n_header += 1
    channels_map = {}
    for part in meta.get("channels", "").split(","):
        if part:
            role, _, ch = part.partition(":")
            channels_map[role] = int(ch)
    data = np.loadtxt(path, delimiter=",", skiprows=n_header + 1, ndmin=2)
    header = StreamHeader(
        rep_rate_millihz=int(meta["rep_rate_millihz"]),
        t0_ps=int(meta.get("t0_ps", 0)),
        n_pulses=int(meta.get("n_pulses", 0)),
        sync_divider=int(meta.get("sync_divider", 1)),
        implicit_sync=bool(int(meta.get("implicit_sync", 0))),
        channels=channels_map)
    if data.size == 0:
        return Stream(header, np.empty(0, np.uint8), np.empty(0, np.int64))
    return Stream(header, data[:, 0].astype(np.uint8), data[:, 1].astype(np.int64))


@dataclass
class PulseClickTable:
    """Sparse per-pulse click pattern over the four photon channels.

    pattern bit k set means the role with ROLE_BITS value 2**k clicked in
    that pulse; pulses without any click are not stored.  roles lists the
    photon roles that were actually present and folded.
    """

    n_pulses: int
    window_ps: float
    pulse_index: np.ndarray
    pattern: np.ndarray
    roles: tuple = ("x1", "x2", "xx1", "xx2")

    def count_mask(self, require: int, among: np.ndarray | None = None) -> int:
        pat = self.pattern if among is None else self.pattern[among]
        return int(np.count_nonzero((pat & require) == require))

    def role_mask(self, *roles: str) -> int:
        m = 0
        for r in roles:
            m |= ROLE_BITS[r]
        return m


@dataclass
class CorrelationHistogram:
    """Histogram of time differences (chB - chA) in [-range_ps, +range_ps)."""

    bin_width_ps: float
    range_ps: float
    counts: np.ndarray
    channel_a: str
    channel_b: str

    @property
    def n_pairs(self) -> int:
        return int(self.counts.sum())

    def bin_centers(self) -> np.ndarray:
        n = self.counts.size
        return -self.range_ps + (np.arange(n) + 0.5) * self.bin_width_ps


@dataclass
class PeakAreas:
    zero_peak_counts: int
    side_peak_counts: list  # (peak index, counts)
    window_ps: float


def _pulse_assign(times: np.ndarray, t0: float, offset: float, period: float):
    """Nearest-pulse index and residual for each tag time."""
    d = times.astype(np.float64) - t0 - offset
    k = np.rint(d / period)
    resid = d - k * period
    return k.astype(np.int64), resid


def fold_pulses_multi(src, windows_ps, offsets=None) -> list:
    """One streaming pass, one PulseClickTable per coincidence window.

    A channel clicks in pulse k when at least one of its tags falls within
    +-window/2 of t0 + k*period + offset(channel).  Offsets default to 0 and
    are normally taken from auto_offsets().
    """
    header, blocks = _as_blocks(src)
    period = header.period_ps
    windows = [float(w) for w in windows_ps]
    if any(w <= 0 for w in windows):
        raise ValueError("windows must be > 0")
    if any(w > period for w in windows):
        raise ValueError("window exceeds the pulse period (ambiguous assignment)")
    offsets = offsets or {}
    if header.n_pulses <= 0:
        raise ValueError("stream header does not declare a pulse count")

    role_by_channel = {header.channels[r]: r for r in PHOTON_ROLES
                       if r in header.channels}
    per_window = [([], []) for _ in windows]  # (key lists, bit lists)
    for channels, times in blocks:
        for ch, role in role_by_channel.items():
            sel = channels == ch
            if not np.any(sel):
                continue
            k, resid = _pulse_assign(times[sel], header.t0_ps,
                                     float(offsets.get(role, 0.0)), period)
            ok = (k >= 0) & (k < header.n_pulses)
            k, resid = k[ok], np.abs(resid[ok])
            bit = ROLE_BITS[role]
            for wi, w in enumerate(windows):
                hit = resid <= w / 2.0
                if np.any(hit):
                    per_window[wi][0].append(k[hit])
                    per_window[wi][1].append(np.full(int(hit.sum()), bit, np.uint8))

    tables = []
    folded_roles = tuple(sorted(role_by_channel.values()))
    for (keys, bits), w in zip(per_window, windows):
        if keys:
            kk = np.concatenate(keys)
            bb = np.concatenate(bits)
            order = np.argsort(kk, kind="stable")
            kk, bb = kk[order], bb[order]
            uniq, starts = np.unique(kk, return_index=True)
            pat = np.bitwise_or.reduceat(bb, starts)
        else:
            uniq = np.empty(0, dtype=np.int64)
            pat = np.empty(0, dtype=np.uint8)
        tables.append(PulseClickTable(n_pulses=int(header.n_pulses),
                                      window_ps=w, pulse_index=uniq, pattern=pat,
                                      roles=folded_roles))
    return tables


def fold_pulses(src, window_ps: float, offsets=None) -> PulseClickTable:
    return fold_pulses_multi(src, [window_ps], offsets=offsets)[0]


def auto_offsets(src, bin_ps: float = 1.0) -> dict:
    """Per-channel window offsets from the mode of the pulse-phase histogram.

    Residuals (t - t0) mod period are histogrammed per photon channel with
    bin_ps bins; the offset is the center of the most populated bin, with
    ties broken toward the earliest bin.
    """
    header, blocks = _as_blocks(src)
    period = header.period_ps
    nbins = max(1, int(np.ceil(period / bin_ps)))
    hists = {r: np.zeros(nbins, dtype=np.int64) for r in PHOTON_ROLES
             if r in header.channels}
    role_by_channel = {header.channels[r]: r for r in hists}
    for channels, times in blocks:
        for ch, role in role_by_channel.items():
            sel = channels == ch
            if not np.any(sel):
                continue
            resid = np.mod(times[sel].astype(np.float64) - header.t0_ps, period)
            idx = np.minimum((resid / bin_ps).astype(np.int64), nbins - 1)
            np.add.at(hists[role], idx, 1)
    out = {}
    for role, h in hists.items():
        mode = int(np.argmax(h))  # argmax returns the earliest maximal bin
        out[role] = (mode + 0.5) * bin_ps
    return out


def _resolve_channel(header: StreamHeader, which) -> tuple:
    if isinstance(which, str):
        return header.channel_of(which), which
    return int(which), str(which)


def correlation_histogram(src, ch_a, ch_b, bin_width_ps: float,
                          range_ps: float) -> CorrelationHistogram:
    """Histogram of pairwise differences tB - tA within +-range_ps.

    Single streaming pass with a rolling window of candidate partners, not an
    all-pairs scan; memory is bounded by the tag density within 2*range_ps.
    Self-pairs are excluded for autocorrelations (ch_a == ch_b).
    """
    if bin_width_ps <= 0 or range_ps <= 0:
        raise ValueError("bin width and range must be > 0")
    nbins = 2.0 * range_ps / bin_width_ps
    if abs(nbins - round(nbins)) > 1e-9:
        raise ValueError("bin width must divide the full range")
    nbins = int(round(nbins))
    header, blocks = _as_blocks(src)
    ca, name_a = _resolve_channel(header, ch_a)
    cb, name_b = _resolve_channel(header, ch_b)
    auto = ca == cb

    counts = np.zeros(nbins, dtype=np.int64)
    pend_a = np.empty(0, dtype=np.int64)   # A tags awaiting a complete B window
    buf_b = np.empty(0, dtype=np.int64)
    n_self = 0

    def flush(a_ready: np.ndarray, b_avail: np.ndarray):
        if a_ready.size == 0 or b_avail.size == 0:
            return
        lo = np.searchsorted(b_avail, a_ready - range_ps, side="left")
        hi = np.searchsorted(b_avail, a_ready + range_ps, side="right")
        seg = hi - lo
        total = int(seg.sum())
        if total == 0:
            return
        shift = np.cumsum(seg) - seg
        flat = np.arange(total) - np.repeat(shift, seg) + np.repeat(lo, seg)
        diffs = b_avail[flat] - np.repeat(a_ready, seg)
        idx = np.floor((diffs + range_ps) / bin_width_ps).astype(np.int64)
        ok = (idx >= 0) & (idx < nbins)
        np.add(counts, np.bincount(idx[ok], minlength=nbins), out=counts)

    for channels, times in blocks:
        a_new = times[channels == ca]
        b_new = times[channels == cb]
        if auto:
            n_self += a_new.size
        buf_b = np.concatenate([buf_b, b_new])
        pend_a = np.concatenate([pend_a, a_new])
        horizon = int(times[-1]) if times.size else None
        if horizon is None:
            continue
        ready = pend_a[pend_a + range_ps <= horizon]
        pend_a = pend_a[pend_a + range_ps > horizon]
        flush(ready, buf_b)
        if pend_a.size:
            keep_from = np.searchsorted(buf_b, pend_a[0] - range_ps, side="left")
        else:
            keep_from = np.searchsorted(buf_b, horizon - range_ps, side="left")
        buf_b = buf_b[keep_from:]
    flush(pend_a, buf_b)

    if auto and n_self:
        zero_bin = int(np.floor(range_ps / bin_width_ps))
        counts[zero_bin] -= n_self
    return CorrelationHistogram(bin_width_ps=bin_width_ps, range_ps=range_ps,
                                counts=counts, channel_a=name_a, channel_b=name_b)


def integrate_peaks(hist: CorrelationHistogram, rep_period_ps: float,
                    window_ps: float, n_side_peaks: int = 5) -> PeakAreas:
    """Sum histogram counts within +-window/2 of the 0, +-1..+-n peak centers."""
    if window_ps <= 0:
        raise ValueError("window must be > 0")
    if window_ps > rep_period_ps:
        raise ValueError("integration windows overlap (window > period)")
    if n_side_peaks < 1:
        raise ValueError("need at least one side peak")
    centers = hist.bin_centers()
    max_center = n_side_peaks * rep_period_ps + window_ps / 2.0
    if max_center > hist.range_ps:
        raise ValueError("side peaks fall outside the histogram range")
    areas = {}
    for k in range(-n_side_peaks, n_side_peaks + 1):
        c = k * rep_period_ps
        sel = np.abs(centers - c) <= window_ps / 2.0
        areas[k] = int(hist.counts[sel].sum())
    side = [(k, areas[k]) for k in sorted(areas) if k != 0]
    return PeakAreas(zero_peak_counts=areas[0], side_peak_counts=side,
                     window_ps=window_ps)


def window_sweep(src, windows_ps, offsets=None, herald: str | None = None) -> list:
    """Click rates versus coincidence window, one row per window.

    Each row carries raw per-pulse counts of singles / doubles on both arms
    and the cross-arm coincidence pattern counts needed by the estimators.
    herald restricts the X-arm statistics to pulses where the heralding arm
    clicked (and vice versa), mirroring the heralded analysis.
    """
    tables = fold_pulses_multi(src, windows_ps, offsets=offsets)
    rows = []
    for tab in tables:
        row = {"window_ps": tab.window_ps, "n_pulses": tab.n_pulses}
        for role in PHOTON_ROLES:
            row[f"n_{role}"] = tab.count_mask(ROLE_BITS[role])
        row["n_x1x2"] = tab.count_mask(ROLE_BITS["x1"] | ROLE_BITS["x2"])
        row["n_xx1xx2"] = tab.count_mask(ROLE_BITS["xx1"] | ROLE_BITS["xx2"])
        for a in ("x1", "x2"):
            for b in ("xx1", "xx2"):
                row[f"n_{a}{b}"] = tab.count_mask(ROLE_BITS[a] | ROLE_BITS[b])
        if herald:
            hb = ROLE_BITS["xx1"] | ROLE_BITS["xx2"] if herald.startswith("xx") \
                else ROLE_BITS["x1"] | ROLE_BITS["x2"]
            among = (tab.pattern & hb) != 0
            row["n_heralds"] = int(np.count_nonzero(among))
            sig = ("x1", "x2") if herald.startswith("xx") else ("xx1", "xx2")
            row["n_sig1_her"] = tab.count_mask(ROLE_BITS[sig[0]], among)
            row["n_sig2_her"] = tab.count_mask(ROLE_BITS[sig[1]], among)
            row["n_sig12_her"] = tab.count_mask(
                ROLE_BITS[sig[0]] | ROLE_BITS[sig[1]], among)
        rows.append(row)
    return rows
