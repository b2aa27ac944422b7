"""Fluorescence-onset detection and PMT/APD cross-correlation.

All times are integer nanoseconds. Coincidences and histogram bins use strict
inequalities on |t_apd - t_onset|, so bin boundaries are symmetric under
exchange of the two streams.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .tags import Channel, TagStream

ACCIDENTAL_OFFSETS_NS = tuple(s * k * 1_000_000 for k in range(1, 11) for s in (-1, 1))


@dataclass(frozen=True)
class OnsetCriteria:
    min_followers: int = 5
    follow_window: int = 2_000_000  # ns
    # log of the fluorescence-to-dark rate ratio; sets how large a leading gap
    # (in burst spacings) marks the tag before it as a dark count
    gap_factor: float = 7.0
    rate_gaps: int = 40

    def __post_init__(self):
        if self.min_followers < 1:
            raise ValueError("min_followers must be at least 1")
        if not self.follow_window > 0:
            raise ValueError("follow_window must be positive")


def detection_windows(stream: TagStream) -> tuple[np.ndarray, np.ndarray]:
    """[start, end) of every detection window: DETECT_START up to the next CYCLE_START."""
    starts = stream.select(Channel.DETECT_START)
    cycles = stream.select(Channel.CYCLE_START)
    idx = np.searchsorted(cycles, starts, side="right")
    big = np.iinfo(np.int64).max
    ends = np.where(idx < len(cycles), cycles[np.minimum(idx, len(cycles) - 1)] if len(cycles) else big, big)
    return starts, ends.astype(np.int64)


def detect_onsets(stream: TagStream, criteria: OnsetCriteria | None = None) -> np.ndarray:
    """Fluorescence onset time of each detection window that has one."""
    c = criteria or OnsetCriteria()
    starts, ends = detection_windows(stream)
    pmt = stream.select(Channel.PMT)
    if len(starts) == 0 or len(pmt) == 0:
        return np.zeros(0, np.int64)
    win = np.searchsorted(starts, pmt, side="right") - 1
    inside = win >= 0
    inside[inside] = pmt[inside] < ends[win[inside]]
    lo = np.searchsorted(pmt, starts, side="left")
    hi = np.searchsorted(pmt, ends, side="left")

    idx = np.flatnonzero(inside)
    w = win[idx]
    reach = np.minimum(np.searchsorted(pmt, pmt[idx] + c.follow_window, side="right"), hi[w])
    qualifies = np.zeros(len(pmt), bool)
    qualifies[idx] = reach - idx - 1 >= c.min_followers
    q = np.flatnonzero(qualifies)
    if q.size == 0:
        return np.zeros(0, np.int64)
    _, first = np.unique(win[q], return_index=True)
    cand = q[first]
    cand_hi = hi[win[cand]]

    # burst spacing measured past the first few followers, where leading dark
    # counts no longer bias it
    k = c.min_followers
    anchor = cand + k
    m = np.minimum(c.rate_gaps, cand_hi - anchor - 1)
    has_rate = m >= 1
    mm = np.maximum(m, 1)
    spacing = (pmt[np.minimum(anchor + mm, len(pmt) - 1)] - pmt[np.minimum(anchor, len(pmt) - 1)]) / mm
    has_rate &= spacing > 0
    spacing = np.where(has_rate, spacing, 1.0)
    # changepoint among the first k + 1 tags: tags before the onset are dark
    # counts, so each one moves the log-likelihood by gap/spacing - gap_factor
    j = cand[:, None] + np.arange(k + 1)[None, :]
    score = np.zeros(j.shape)
    gaps = (pmt[j[:, 1:]] - pmt[j[:, :-1]]) / spacing[:, None]
    score[:, 1:] = np.cumsum(gaps - c.gap_factor, axis=1)
    score[~qualifies[j]] = -np.inf
    best = np.argmax(score, axis=1)
    cand = np.where(has_rate, cand + best, cand)
    return pmt[cand]


@dataclass
class CorrelationHistogram:
    bin_width: int
    n_half: int
    counts: np.ndarray
    n_a: int
    n_b: int

    @property
    def tau(self) -> np.ndarray:
        """Bin centers in ns; bin k spans ((k - 1/2) w, (k + 1/2) w)."""
        return np.arange(-self.n_half, self.n_half + 1, dtype=np.int64) * self.bin_width

    @property
    def range(self) -> tuple[float, float]:
        half = (self.n_half + 0.5) * self.bin_width
        return -half, half

    def at(self, tau_ns: int) -> int:
        return int(self.counts[_bin_index(np.array([tau_ns]), self.bin_width)[0] + self.n_half])

    def zero_bin(self) -> int:
        return int(self.counts[self.n_half])

    def off_peak_mean(self, exclude: int = 2) -> float:
        """Mean count of bins more than ``exclude`` bins away from tau = 0."""
        k = np.arange(-self.n_half, self.n_half + 1)
        sel = np.abs(k) > exclude
        return float(self.counts[sel].mean()) if sel.any() else 0.0

    def flipped(self) -> "CorrelationHistogram":
        return CorrelationHistogram(self.bin_width, self.n_half, self.counts[::-1].copy(), self.n_b, self.n_a)


def _bin_index(delta: np.ndarray, width: int) -> np.ndarray:
    # round half away from zero: symmetric in the sign of delta
    mag = (2 * np.abs(delta) + width) // (2 * width)
    return np.sign(delta) * mag


def _pairs_within(a: np.ndarray, b: np.ndarray, max_abs: int, chunk: int = 1 << 20):
    """Yield t_b - t_a for all pairs with |t_b - t_a| <= max_abs, chunked over a."""
    if len(a) == 0 or len(b) == 0 or max_abs < 0:
        return
    lo_all = np.searchsorted(b, a - max_abs, side="left")
    hi_all = np.searchsorted(b, a + max_abs, side="right")
    start = 0
    while start < len(a):
        lens_all = hi_all[start:] - lo_all[start:]
        csum = np.cumsum(lens_all)
        stop = start + max(1, int(np.searchsorted(csum, chunk, side="right")))
        lo, hi = lo_all[start:stop], hi_all[start:stop]
        lens = hi - lo
        total = int(lens.sum())
        if total:
            first = np.repeat(np.cumsum(lens) - lens, lens)
            j = np.repeat(lo, lens) + (np.arange(total) - first)
            yield b[j] - np.repeat(a[start:stop], lens)
        start = stop


def g2_histogram(onsets, apd_tags, bin_width: int = 8_000, tau_range: int = 1_000_000) -> CorrelationHistogram:
    """Counts of t_apd - t_onset delays in bins of ``bin_width`` ns centered on multiples of it.

    The bins cover at least +-tau_range. Pairs are enumerated from sorted streams
    with binary-search bounds, so the cost is linear in the pairs that fall in range.
    """
    if not bin_width > 0:
        raise ValueError("bin_width must be positive")
    bin_width = int(bin_width)
    a = np.asarray(onsets, np.int64)
    b = np.asarray(apd_tags, np.int64)
    n_half = max(0, math.ceil(tau_range / bin_width - 0.5))
    max_abs = ((2 * n_half + 1) * bin_width - 1) // 2
    counts = np.zeros(2 * n_half + 1, np.int64)
    for delta in _pairs_within(a, b, max_abs):
        counts += np.bincount(_bin_index(delta, bin_width) + n_half, minlength=len(counts))
    return CorrelationHistogram(bin_width, n_half, counts, len(a), len(b))


class Coincidences(NamedTuple):
    coincidences: int
    accidental_estimate: float


def _matched(a: np.ndarray, b: np.ndarray, max_abs: int) -> int:
    if len(a) == 0 or len(b) == 0 or max_abs < 0:
        return 0
    lo = np.searchsorted(b, a - max_abs, side="left")
    hi = np.searchsorted(b, a + max_abs, side="right")
    return int(np.count_nonzero(hi > lo))


def count_coincidences(onsets, apd_tags, window: float = 10_000,
                       offsets=ACCIDENTAL_OFFSETS_NS) -> Coincidences:
    """Onsets with at least one APD tag within |dt| < window, and the displaced-window background."""
    a = np.asarray(onsets, np.int64)
    b = np.asarray(apd_tags, np.int64)
    if window <= 0:
        return Coincidences(0, 0.0)
    max_abs = math.ceil(window) - 1
    coinc = _matched(a, b, max_abs)
    acc = float(np.mean([_matched(a + d, b, max_abs) for d in offsets])) if offsets else 0.0
    return Coincidences(coinc, acc)


def poisson_errors(counts) -> np.ndarray:
    c = np.asarray(counts, dtype=float)
    if np.any(c < 0):
        raise ValueError("counts must be non-negative")
    return np.sqrt(np.maximum(c, 1.0))


def detection_time(stream: TagStream) -> float:
    """Total detection-window time in seconds (the last window ends at the last tag)."""
    starts, ends = detection_windows(stream)
    if len(starts) == 0:
        return 0.0
    last = stream.times[-1] + 1 if len(stream) else starts[-1]
    ends = np.where(ends == np.iinfo(np.int64).max, max(last, starts[-1]), ends)
    return float(np.sum(ends - starts)) * 1e-9


def rate_in_windows(stream: TagStream, channel: Channel) -> float:
    """Count rate of ``channel`` inside detection windows, per second."""
    starts, ends = detection_windows(stream)
    t = stream.select(channel)
    if len(starts) == 0 or len(t) == 0:
        return 0.0
    w = np.searchsorted(starts, t, side="right") - 1
    ok = w >= 0
    ok[ok] = t[ok] < ends[w[ok]]
    dt = detection_time(stream)
    return float(ok.sum()) / dt if dt > 0 else 0.0


@dataclass
class CoincidenceSummary:
    n_onsets: int
    coincidences: int
    accidentals: float
    apd_rate: float
    window: float
    closed_form_accidentals: float

    @property
    def herald_efficiency(self) -> float:
        return (self.coincidences - self.accidentals) / self.n_onsets if self.n_onsets else 0.0


def summarize(stream: TagStream, window: float = 10_000, criteria: OnsetCriteria | None = None,
              onsets: np.ndarray | None = None) -> CoincidenceSummary:
    onsets = detect_onsets(stream, criteria) if onsets is None else onsets
    apd = stream.select(Channel.APD)
    co = count_coincidences(onsets, apd, window)
    rate = rate_in_windows(stream, Channel.APD)
    return CoincidenceSummary(len(onsets), co.coincidences, co.accidental_estimate, rate, window,
                              rate * 2 * window * 1e-9 * len(onsets))
