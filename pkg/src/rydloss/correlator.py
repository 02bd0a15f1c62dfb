"""Photon correlations from three-channel time-tag streams.

Coincidences are histogrammed against channel-1 "anchor" events.  For a
shift ``s`` the pair histogram counts partners with
``t_partner - t_anchor - s`` in the half-open bins
``[k dtau - W, (k + 1) dtau - W)``, k = 0 .. 2W/dtau - 1, so the bin holding
zero delay starts at exactly 0.  Normalizations use the same engine at block
offsets m T (m = +-1 .. +-4).
"""
from __future__ import annotations

import csv
import itertools
import math
import os
from dataclasses import dataclass, field
from typing import Dict, Iterable, Optional, Sequence

import numpy as np
import scipy.sparse

from .errors import MemoryBudgetError, ValidationError

DEFAULT_BIN_NS = 20
DEFAULT_BLOCK_NS = 100_000
DEFAULT_WINDOW_NS = 1_000
BLOCK_OFFSETS = (1, 2, 3, 4)
TTAG_MAGIC = b"TTAG1"
TTAG_RECORD = np.dtype([("channel", "u1"), ("timestamp", "<u8")])
DEFAULT_EVENT_BUDGET = 50_000_000
_CELL_BUDGET = 1 << 22  # histogram cells per anchor chunk


@dataclass
class TimeTagStream:
    """Sorted arrival times (ns) of one detector channel."""

    channel: int
    timestamps: np.ndarray
    duration: int

    def __post_init__(self):
        if self.channel not in (1, 2, 3):
            raise ValidationError("channel", f"channel must be 1, 2 or 3, got {self.channel}")
        ts = np.asarray(self.timestamps)
        if ts.ndim != 1:
            raise ValidationError("timestamps", "must be one-dimensional")
        if ts.size and not np.issubdtype(ts.dtype, np.integer):
            raise ValidationError("timestamps", "must be integer nanoseconds")
        self.timestamps = ts.astype(np.int64)
        self.duration = int(self.duration)
        if self.duration <= 0:
            raise ValidationError("duration", "must be positive")
        if ts.size:
            if np.any(np.diff(self.timestamps) < 0):
                raise ValidationError("timestamps", "must be nondecreasing")
            if self.timestamps[0] < 0 or self.timestamps[-1] >= self.duration:
                raise ValidationError("timestamps", "must lie in [0, duration)")

    def __len__(self):
        return int(self.timestamps.size)

    @property
    def rate(self) -> float:
        """Mean count rate in events per us."""
        return len(self) / (self.duration * 1e-3)


def block_offsets(block_ns: int):
    """Signed offsets +-m T, m = 1..4, used in the pair normalization (8 terms)."""
    return [sign * m * block_ns for m in BLOCK_OFFSETS for sign in (1, -1)]


def triple_offsets(block_ns: int):
    """Signed offset pairs (a T, b T) with a, b in +-{1..4} and a != b (56 terms)."""
    signed = [sign * m for m in BLOCK_OFFSETS for sign in (1, -1)]
    return [(a * block_ns, b * block_ns) for a, b in itertools.product(signed, signed) if a != b]


def _check_binning(bin_ns, window_ns):
    if bin_ns <= 0 or window_ns <= 0:
        raise ValidationError("bin_ns", "bin width and window must be positive")
    if window_ns % bin_ns:
        raise ValidationError("window_ns", "window must be a whole number of bins")
    return 2 * (window_ns // bin_ns)


def _partner_ranges(anchors, partners, shift, window_ns):
    lo = np.searchsorted(partners, anchors + (shift - window_ns), side="left")
    hi = np.searchsorted(partners, anchors + (shift + window_ns), side="left")
    return lo, hi


def _expand(lo, hi):
    """Anchor index and partner index of every (anchor, partner) pair."""
    n = hi - lo
    total = int(n.sum())
    owner = np.repeat(np.arange(lo.size), n)
    start = np.repeat(np.cumsum(n) - n, n)
    return owner, np.repeat(lo, n) + (np.arange(total) - start)


def _bins(delay, shift, window_ns, bin_ns):
    return (delay - shift + window_ns) // bin_ns


def pair_counts(t1, t2, shift, bin_ns, window_ns, anchor_range=None) -> np.ndarray:
    """Integer pair histogram N12 at one shift.

    ``anchor_range=(lo, hi)`` restricts anchors to lo <= t1 < hi while
    partners come from the full stream, so disjoint anchor ranges add up
    exactly to the full count.
    """
    nbins = _check_binning(bin_ns, window_ns)
    t1 = np.asarray(t1, dtype=np.int64)
    t2 = np.asarray(t2, dtype=np.int64)
    if anchor_range is not None:
        a, b = np.searchsorted(t1, anchor_range, side="left")
        t1 = t1[a:b]
    counts = np.zeros(nbins, dtype=np.int64)
    step = max(1, _CELL_BUDGET)
    for start in range(0, t1.size, step):
        anchors = t1[start:start + step]
        lo, hi = _partner_ranges(anchors, t2, shift, window_ns)
        owner, idx = _expand(lo, hi)
        b = _bins(t2[idx] - anchors[owner], shift, window_ns, bin_ns)
        counts += np.bincount(b, minlength=nbins)
    return counts


def triple_counts(t1, t2, t3, shifts, bin_ns, window_ns, anchor_range=None) -> np.ndarray:
    """Integer triple histogram N123[k1, k2] at one pair of shifts.

    Axis 0 bins t2 - t1, axis 1 bins t3 - t1.  For each anchor the partner
    histograms of channels 2 and 3 are independent, so the triple histogram is
    the sum over anchors of their outer products.
    """
    nbins = _check_binning(bin_ns, window_ns)
    s1, s2 = shifts
    t1 = np.asarray(t1, dtype=np.int64)
    t2 = np.asarray(t2, dtype=np.int64)
    t3 = np.asarray(t3, dtype=np.int64)
    if anchor_range is not None:
        a, b = np.searchsorted(t1, anchor_range, side="left")
        t1 = t1[a:b]
    lo2, hi2 = _partner_ranges(t1, t2, s1, window_ns)
    lo3, hi3 = _partner_ranges(t1, t3, s2, window_ns)
    keep = (hi2 > lo2) & (hi3 > lo3)
    t1, lo2, hi2, lo3, hi3 = t1[keep], lo2[keep], hi2[keep], lo3[keep], hi3[keep]
    counts = np.zeros((nbins, nbins), dtype=np.int64)
    step = max(1, _CELL_BUDGET // nbins)
    for start in range(0, t1.size, step):
        sl = slice(start, start + step)
        anchors = t1[sl]
        n = anchors.size
        hists = []
        for lo, hi, tp, s in ((lo2[sl], hi2[sl], t2, s1), (lo3[sl], hi3[sl], t3, s2)):
            owner, idx = _expand(lo, hi)
            b = _bins(tp[idx] - anchors[owner], s, window_ns, bin_ns)
            # a few partners per anchor: sparse rows, integer data (duplicates summed)
            hists.append(scipy.sparse.csr_matrix((np.ones(owner.size, dtype=np.int64), (owner, b)),
                                                 shape=(n, nbins)))
        counts += (hists[0].T @ hists[1]).toarray()
    return counts


@dataclass
class CoincidenceHistogram:
    """Mergeable coincidence counts for one channel pair or triple.

    ``numerator`` holds the zero-shift histogram and ``shifted`` the histograms
    at each normalization offset, keyed by shift (ns) or shift pair.
    """

    bin_ns: int
    window_ns: int
    block_ns: int
    channels: tuple
    numerator: np.ndarray
    shifted: Dict[object, np.ndarray]
    totals: Dict[int, int]
    duration: int

    @property
    def order(self) -> int:
        return len(self.channels)

    @property
    def tau_ns(self) -> np.ndarray:
        """Left bin edges (ns); the zero-delay bin is [0, bin_ns)."""
        k = np.arange(2 * (self.window_ns // self.bin_ns))
        return k * self.bin_ns - self.window_ns

    @property
    def zero_index(self) -> int:
        return self.window_ns // self.bin_ns

    @property
    def n_terms(self) -> int:
        return len(self.shifted)

    def normalization_sum(self) -> np.ndarray:
        return sum(self.shifted.values())

    def merge(self, other: "CoincidenceHistogram") -> "CoincidenceHistogram":
        """Sum of two histograms with identical settings.

        Exact when the underlying data partitions are separated by more than
        the reach (4 T + window) or were produced from disjoint anchor ranges.
        """
        if (self.bin_ns, self.window_ns, self.block_ns, self.channels) != (
                other.bin_ns, other.window_ns, other.block_ns, other.channels):
            raise ValidationError("histogram", "cannot merge histograms with different settings")
        if set(self.shifted) != set(other.shifted):
            raise ValidationError("histogram", "offset sets differ")
        totals = {ch: self.totals.get(ch, 0) + other.totals.get(ch, 0)
                  for ch in set(self.totals) | set(other.totals)}
        return CoincidenceHistogram(
            bin_ns=self.bin_ns, window_ns=self.window_ns, block_ns=self.block_ns,
            channels=self.channels, numerator=self.numerator + other.numerator,
            shifted={k: v + other.shifted[k] for k, v in self.shifted.items()},
            totals=totals, duration=self.duration + other.duration)


def _by_channel(streams) -> Dict[int, TimeTagStream]:
    if isinstance(streams, dict):
        out = dict(streams)
    else:
        out = {s.channel: s for s in streams}
    return out


def _require(streams, channels):
    missing = [c for c in channels if c not in streams]
    if missing:
        raise ValidationError("streams", f"missing channel(s) {missing}")
    return [streams[c] for c in channels]


def _check_block(block_ns, window_ns):
    if block_ns <= 2 * window_ns:
        raise ValidationError("block_ns", "block period must be much longer than the window")


def pair_histogram(streams, channels=(1, 2), bin_ns=DEFAULT_BIN_NS, window_ns=DEFAULT_WINDOW_NS,
                   block_ns=DEFAULT_BLOCK_NS, anchor_range=None) -> CoincidenceHistogram:
    streams = _by_channel(streams)
    a, b = _require(streams, channels)
    _check_block(block_ns, window_ns)
    num = pair_counts(a.timestamps, b.timestamps, 0, bin_ns, window_ns, anchor_range)
    shifted = {s: pair_counts(a.timestamps, b.timestamps, s, bin_ns, window_ns, anchor_range)
               for s in block_offsets(block_ns)}
    return CoincidenceHistogram(bin_ns=bin_ns, window_ns=window_ns, block_ns=block_ns,
                                channels=tuple(channels), numerator=num, shifted=shifted,
                                totals={a.channel: len(a), b.channel: len(b)},
                                duration=max(a.duration, b.duration))


def triple_histogram(streams, bin_ns=DEFAULT_BIN_NS, window_ns=DEFAULT_WINDOW_NS,
                     block_ns=DEFAULT_BLOCK_NS, anchor_range=None) -> CoincidenceHistogram:
    streams = _by_channel(streams)
    a, b, c = _require(streams, (1, 2, 3))
    _check_block(block_ns, window_ns)
    args = (a.timestamps, b.timestamps, c.timestamps)
    num = triple_counts(*args, (0, 0), bin_ns, window_ns, anchor_range)
    shifted = {s: triple_counts(*args, s, bin_ns, window_ns, anchor_range)
               for s in triple_offsets(block_ns)}
    return CoincidenceHistogram(bin_ns=bin_ns, window_ns=window_ns, block_ns=block_ns,
                                channels=(1, 2, 3), numerator=num, shifted=shifted,
                                totals={1: len(a), 2: len(b), 3: len(c)},
                                duration=max(a.duration, b.duration, c.duration))


@dataclass
class CorrelationEstimate:
    """Normalized correlation with counting errors.

    Bins whose normalization is empty are flagged and hold NaN.
    """

    tau_ns: np.ndarray
    value: np.ndarray
    stderr: np.ndarray
    numerator: np.ndarray
    denominator: np.ndarray
    flagged: np.ndarray
    analytic_denominator: float
    histogram: CoincidenceHistogram = field(repr=False)

    @property
    def zero(self):
        k = self.histogram.zero_index
        return self.value[(k,) * self.value.ndim]

    @property
    def zero_stderr(self):
        k = self.histogram.zero_index
        return self.stderr[(k,) * self.stderr.ndim]


def normalize(hist: CoincidenceHistogram) -> CorrelationEstimate:
    """Divide the zero-shift counts by the mean over the block offsets."""
    total = hist.normalization_sum().astype(float)
    den = total / hist.n_terms
    flagged = total <= 0
    num = hist.numerator.astype(float)
    with np.errstate(divide="ignore", invalid="ignore"):
        value = np.where(flagged, np.nan, num / den)
        rel = np.sqrt(1.0 / np.maximum(num, 1.0) + 1.0 / total)
        err = np.where(flagged, np.nan, np.where(num > 0, value * rel, 1.0 / den))
    prod = float(np.prod([hist.totals[c] for c in hist.channels]))
    analytic = prod * (hist.bin_ns / hist.duration) ** (hist.order - 1)
    return CorrelationEstimate(tau_ns=hist.tau_ns, value=value, stderr=err,
                               numerator=hist.numerator, denominator=den, flagged=flagged,
                               analytic_denominator=analytic, histogram=hist)


def g2_from_tags(streams, bin_ns=DEFAULT_BIN_NS, window_ns=DEFAULT_WINDOW_NS,
                 block_ns=DEFAULT_BLOCK_NS, channels=(1, 2)) -> CorrelationEstimate:
    """g2(tau) = N12(tau) / [(1/8) sum_{m=1..4} N12(tau +- m T)], tau = t2 - t1."""
    return normalize(pair_histogram(streams, channels, bin_ns, window_ns, block_ns))


def g3_from_tags(streams, bin_ns=DEFAULT_BIN_NS, window_ns=DEFAULT_WINDOW_NS,
                 block_ns=DEFAULT_BLOCK_NS) -> CorrelationEstimate:
    """g3(tau1, tau2) over the 56 off-diagonal block offsets; tau1 = t2 - t1, tau2 = t3 - t1."""
    return normalize(triple_histogram(streams, bin_ns, window_ns, block_ns))


def eta3_combine(g2, g3):
    """Connected third-order correlation.

    eta3 = g2(tau1) + g2(tau2) + g2(tau2 - tau1) - g3(tau1, tau2) - 2.

    Parameters
    ----------
    g2 : scalar, array or sequence of three
        Either the three pair correlations (g2(tau1), g2(tau2), g2(tau2 - tau1))
        or a single value used for all three (equal-time case).
    g3 : scalar or array
    """
    g3 = np.asarray(g3, dtype=float)
    if isinstance(g2, (tuple, list)) and len(g2) == 3:
        parts = [np.asarray(x, dtype=float) for x in g2]
    else:
        parts = [np.asarray(g2, dtype=float)] * 3
    for x in parts:
        if x.shape != g3.shape and x.ndim and g3.ndim:
            raise ValidationError("g2", f"shape {x.shape} does not match g3 shape {g3.shape}")
    out = parts[0] + parts[1] + parts[2] - g3 - 2.0
    return float(out) if out.ndim == 0 else out


def eta3_map(g2_12: CorrelationEstimate, g2_13: CorrelationEstimate, g2_23: CorrelationEstimate,
             g3: CorrelationEstimate) -> np.ndarray:
    """eta3 on the g3 bin grid using the three pair correlations.

    g2_23 is read at the bin offset k2 - k1; cells outside its window are NaN.
    """
    n = g3.value.shape[0]
    k0 = g3.histogram.zero_index
    k1, k2 = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
    diff = k2 - k1 + k0
    inside = (diff >= 0) & (diff < n)
    g23 = np.where(inside, g2_23.value[np.clip(diff, 0, n - 1)], np.nan)
    return eta3_combine((g2_12.value[k1], g2_13.value[k2], g23), g3.value)


def correlation_summary(streams, bin_ns=DEFAULT_BIN_NS, window_ns=DEFAULT_WINDOW_NS,
                        block_ns=DEFAULT_BLOCK_NS) -> dict:
    """Equal-time g2 (channel-pair mean), g3 and eta3 with standard errors."""
    pairs = {p: g2_from_tags(streams, bin_ns, window_ns, block_ns, channels=p)
             for p in ((1, 2), (1, 3), (2, 3))}
    g3 = g3_from_tags(streams, bin_ns, window_ns, block_ns)
    g2z = [pairs[p].zero for p in pairs]
    g2e = [pairs[p].zero_stderr for p in pairs]
    eta = eta3_combine(tuple(g2z), g3.zero)
    return {
        "g2_0": float(np.mean(g2z)),
        "g2_0_stderr": float(math.sqrt(sum(e * e for e in g2e)) / 3.0),
        "g2_0_pairs": {f"{a}{b}": float(v) for (a, b), v in zip(pairs, g2z)},
        "g3_00": float(g3.zero),
        "g3_00_stderr": float(g3.zero_stderr),
        "eta3_00": float(eta),
        "eta3_00_stderr": float(math.sqrt(sum(e * e for e in g2e) + g3.zero_stderr ** 2)),
        "flagged_bins_g2": int(sum(int(pairs[p].flagged.sum()) for p in pairs)),
        "flagged_bins_g3": int(g3.flagged.sum()),
    }


# synthetic data

SYNTH_MODELS = ("poisson", "bunched_pairs", "triplets")


@dataclass(frozen=True)
class SynthConfig:
    """Synthetic three-detector data.

    Parameters
    ----------
    model : {"poisson", "bunched_pairs", "triplets"}
    rate : float
        Uncorrelated (Poisson) photon rate before the three-way split, per us.
    group_rate : float
        Rate of correlated pairs or triplets, per us.
    jitter_ns : float
        rms timing spread within a correlated group.
    seed : int
    """

    model: str = "poisson"
    rate: float = 3.0
    group_rate: float = 0.0
    jitter_ns: float = 0.0
    seed: int = 0
    max_events: int = DEFAULT_EVENT_BUDGET

    def __post_init__(self):
        if self.model not in SYNTH_MODELS:
            raise ValidationError("model", f"unknown model {self.model!r}")
        for name in ("rate", "group_rate", "jitter_ns"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v >= 0):
                raise ValidationError(name, "must be finite and non-negative")


def synth_tags(config: SynthConfig, duration_ns: int):
    """Three reproducible channel streams (list ordered by channel)."""
    duration_ns = int(duration_ns)
    if duration_ns <= 0:
        raise ValidationError("duration_ns", "must be positive")
    group = {"poisson": 0, "bunched_pairs": 2, "triplets": 3}[config.model]
    t_us = duration_ns * 1e-3
    expected = config.rate * t_us + group * config.group_rate * t_us
    if expected > config.max_events:
        raise MemoryBudgetError(f"expected {expected:.3g} events exceed the budget of "
                                f"{config.max_events}")
    rng = np.random.default_rng(config.seed)
    # homogeneous Poisson process: Poisson count, uniform times
    n = rng.poisson(config.rate * t_us)
    times = [rng.uniform(0.0, duration_ns, n)]
    chans = [rng.integers(1, 4, n)]
    if group:
        ng = rng.poisson(config.group_rate * t_us)
        centre = rng.uniform(0.0, duration_ns, ng)
        if group == 2:
            gch = np.stack([rng.permutation(3)[:2] + 1 for _ in range(ng)]) if ng else np.zeros((0, 2), int)
        else:
            gch = np.tile(np.arange(1, 4), (ng, 1))
        if config.jitter_ns > 0:
            jit = rng.normal(0.0, config.jitter_ns, (ng, group))
        else:
            jit = np.zeros((ng, group))
        times.append((centre[:, None] + jit).ravel())
        chans.append(gch.ravel())
    t = np.concatenate(times)
    ch = np.concatenate(chans)
    ok = (t >= 0) & (t < duration_ns)
    t = np.floor(t[ok]).astype(np.int64)
    ch = ch[ok]
    return [TimeTagStream(c, np.sort(t[ch == c]), duration_ns) for c in (1, 2, 3)]


# I/O

def _atomic(path, mode):
    tmp = f"{path}.tmp{os.getpid()}"
    return tmp, open(tmp, mode, newline="" if "b" not in mode else None)


def write_tags_csv(streams, path):
    streams = _by_channel(streams)
    duration = max(s.duration for s in streams.values())
    tmp, fh = _atomic(path, "w")
    with fh:
        fh.write(f"# duration_ns={duration}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["channel", "timestamp_ns"])
        for ch, t in _interleave(streams):
            w.writerow([ch, t])
    os.replace(tmp, path)


def _interleave(streams):
    ch = np.concatenate([np.full(len(s), c, dtype=np.uint8) for c, s in sorted(streams.items())])
    t = np.concatenate([s.timestamps for c, s in sorted(streams.items())])
    order = np.lexsort((ch, t))
    return zip(ch[order].tolist(), t[order].tolist())


def _split(ch, t, duration):
    if duration is None:
        duration = int(t.max()) + 1 if t.size else 1
    out = []
    for c in np.unique(ch):
        sel = np.sort(t[ch == c])
        out.append(TimeTagStream(int(c), sel, duration))
    return out


def read_tags_csv(path, duration_ns: Optional[int] = None):
    """Read ``channel,timestamp_ns`` rows; the duration defaults to the
    ``# duration_ns=`` comment or the last timestamp + 1."""
    with open(path) as fh:
        first = fh.readline()
        if first.startswith("#") and "duration_ns=" in first and duration_ns is None:
            duration_ns = int(first.split("duration_ns=")[1].strip())
        rows = [line for line in itertools.chain([first], fh) if line.strip() and not line.startswith("#")]
    reader = csv.reader(rows)
    header = next(reader, None)
    if header is None or [h.strip() for h in header] != ["channel", "timestamp_ns"]:
        raise ValidationError("csv", "expected header 'channel,timestamp_ns'")
    data = np.array([[int(a), int(b)] for a, b in reader], dtype=np.int64).reshape(-1, 2)
    return _split(data[:, 0], data[:, 1], duration_ns)


def write_tags_binary(streams, path):
    """Packed little-endian records (u8 channel, u64 ns) after the magic
    ``TTAG1`` and a u64 duration."""
    streams = _by_channel(streams)
    duration = max(s.duration for s in streams.values())
    pairs = list(_interleave(streams))
    rec = np.zeros(len(pairs), dtype=TTAG_RECORD)
    if pairs:
        arr = np.array(pairs, dtype=np.int64)
        rec["channel"] = arr[:, 0]
        rec["timestamp"] = arr[:, 1]
    tmp, fh = _atomic(path, "wb")
    with fh:
        fh.write(TTAG_MAGIC)
        fh.write(np.array([duration], dtype="<u8").tobytes())
        fh.write(rec.tobytes())
    os.replace(tmp, path)


def read_tags_binary(path):
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:len(TTAG_MAGIC)] != TTAG_MAGIC:
        raise ValidationError("binary", "missing TTAG1 header")
    off = len(TTAG_MAGIC)
    duration = int(np.frombuffer(blob, dtype="<u8", count=1, offset=off)[0])
    body = blob[off + 8:]
    if len(body) % TTAG_RECORD.itemsize:
        raise ValidationError("binary", "truncated record")
    rec = np.frombuffer(body, dtype=TTAG_RECORD)
    return _split(rec["channel"].astype(np.int64), rec["timestamp"].astype(np.int64), duration)


def read_tags(path):
    """Dispatch on the magic header."""
    with open(path, "rb") as fh:
        head = fh.read(len(TTAG_MAGIC))
    return read_tags_binary(path) if head == TTAG_MAGIC else read_tags_csv(path)
