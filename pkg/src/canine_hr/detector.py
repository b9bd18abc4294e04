"""
Per-window periodicity detection, beat picking, cross-window aggregation
and the smoothed inter-beat-interval trend.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.signal import find_peaks

from .dsp import Envelope, Window
from .errors import NoPeriodEstimate, TooFewBeats, WindowTooShort

# a half-lag peak this close to the winner's height marks the winner as a multiple
HARMONIC_RATIO = 0.9
# tolerance (fraction of the half lag) when looking for the half-lag peak
HALF_LAG_TOL = 0.1


@dataclass(frozen=True)
class HrBounds:
    min_bpm: float = 40.0
    max_bpm: float = 220.0

    def __post_init__(self):
        if not (0 < self.min_bpm < self.max_bpm):
            raise ValueError(f"invalid HR bounds {self.min_bpm}-{self.max_bpm}")

    @property
    def min_lag_s(self):
        return 60.0 / self.max_bpm

    @property
    def max_lag_s(self):
        return 60.0 / self.min_bpm


CANINE_BOUNDS = HrBounds()


@dataclass(frozen=True)
class WindowEstimate:
    start_s: float
    hr_bpm: float | None
    confidence: float
    valid: bool

    def to_dict(self):
        return {"start_s": self.start_s, "hr_bpm": self.hr_bpm,
                "confidence": self.confidence, "valid": self.valid}


@dataclass(frozen=True)
class TrendSeries:
    points: tuple = ()

    @property
    def times_s(self):
        return np.array([t for t, _ in self.points])

    @property
    def values_ms(self):
        return np.array([v for _, v in self.points])

    def to_dict(self):
        return {"time_s": [t for t, _ in self.points],
                "ibi_ms": [v for _, v in self.points]}


def normalized_autocorr(x: np.ndarray, max_lag: int) -> np.ndarray:
    """Biased, mean-removed autocorrelation normalized to 1 at lag 0.

    Returns lags 0..max_lag; all zeros for a constant input.
    """
    x = np.asarray(x, dtype=np.float64)
    x = x - x.mean()
    energy = float(np.dot(x, x))
    n = len(x)
    if energy <= 0 or n == 0:
        return np.zeros(max_lag + 1)
    nfft = 1 << int(np.ceil(np.log2(2 * n)))
    spec = np.fft.rfft(x, nfft)
    ac = np.fft.irfft(spec * np.conj(spec), nfft)[:max_lag + 1]
    return ac / energy


def _refine_peak(ac, i):
    """Parabolic interpolation of a local maximum; returns (lag, height)."""
    if 0 < i < len(ac) - 1:
        a, b, c = ac[i - 1], ac[i], ac[i + 1]
        denom = a - 2 * b + c
        if denom < 0:
            delta = 0.5 * (a - c) / denom
            return i + delta, b - 0.25 * (a - c) * delta
    return float(i), ac[i]


def _half_lag_peak(ac, peaks, lag):
    """Index of the strongest autocorrelation peak near lag/2, or None."""
    half = lag / 2.0
    near = peaks[np.abs(peaks - half) <= HALF_LAG_TOL * half]
    if len(near) == 0:
        return None
    best = near[np.argmax(ac[near])]
    return int(best)


def window_periodicity(w: Window, bounds: HrBounds = CANINE_BOUNDS,
                       prominence_min: float = 0.5) -> WindowEstimate:
    """Estimate the cardiac period of one envelope window.

    The normalized autocorrelation is searched over the lag range implied by
    ``bounds``. The tallest peak at or above ``prominence_min`` wins; it is
    then walked down to shorter lags while the peak near half its lag is
    qualifying and at least 90% as tall, so an S1-S1 multiple collapses to
    the fundamental period.
    """
    rate = w.rate
    n = len(w.values)
    if n < 3 * bounds.max_lag_s * rate - 1:
        raise WindowTooShort(
            f"window of {n / rate:.2f} s holds fewer than 3 cycles at {bounds.min_bpm} bpm")

    lo = int(np.ceil(bounds.min_lag_s * rate))
    hi = int(np.floor(bounds.max_lag_s * rate))
    ac = normalized_autocorr(w.values, hi + 1)
    search = ac[lo:hi + 1]
    best_height = float(np.clip(search.max(initial=0.0), 0.0, 1.0))

    peaks, _ = find_peaks(ac[:hi + 2])
    peaks = peaks[peaks >= 1]
    in_range = peaks[(peaks >= lo) & (peaks <= hi)]
    qualifying = in_range[ac[in_range] >= prominence_min]
    if len(qualifying) == 0:
        return WindowEstimate(w.start_s, None, best_height, False)

    winner = int(qualifying[np.argmax(ac[qualifying])])
    while True:
        half = _half_lag_peak(ac, in_range, winner)
        if half is None:
            break
        if ac[half] >= prominence_min and ac[half] >= HARMONIC_RATIO * ac[winner]:
            winner = half
        else:
            break

    lag, height = _refine_peak(ac, winner)
    hr = 60.0 * rate / lag
    if not (bounds.min_bpm < hr < bounds.max_bpm):
        return WindowEstimate(w.start_s, None, best_height, False)
    return WindowEstimate(w.start_s, float(hr), float(np.clip(height, 0.0, 1.0)), True)


def detect_beats(env: Envelope, expected_period_s: float | None) -> np.ndarray:
    """Pick one envelope maximum per cardiac cycle.

    Peaks must clear median + 2*MAD of the envelope and sit at least
    0.6 periods apart. Returns beat times in seconds.
    """
    if expected_period_s is None or not np.isfinite(expected_period_s) or expected_period_s <= 0:
        raise NoPeriodEstimate("a positive expected period is required")
    x = env.values
    med = np.median(x)
    mad = np.median(np.abs(x - med))
    distance = max(1, int(round(0.6 * expected_period_s * env.rate)))
    peaks, _ = find_peaks(x, height=med + 2.0 * mad, distance=distance)
    return peaks / env.rate


def aggregate_hr(estimates, consistency_tol: float, min_valid_fraction: float):
    """Combine per-window estimates into (hr_bpm, consistency, accepted).

    hr_bpm is the median over valid windows (None when none are valid);
    consistency is the share of *all* windows whose estimate lies within
    ``consistency_tol`` of that median.
    """
    estimates = list(estimates)
    if not estimates:
        raise ValueError("aggregate_hr needs at least one window estimate")
    hrs = np.array([e.hr_bpm for e in estimates if e.valid], dtype=np.float64)
    n_all = len(estimates)
    if len(hrs) == 0:
        return None, 0.0, False
    hr = float(np.median(hrs))
    n_consistent = int(np.sum(np.abs(hrs - hr) <= consistency_tol * hr))
    valid_fraction = len(hrs) / n_all
    consistency = n_consistent / n_all
    accepted = valid_fraction >= min_valid_fraction and consistency >= min_valid_fraction
    return hr, consistency, accepted


def beat_intervals(beats, bounds: HrBounds = CANINE_BOUNDS):
    """Inter-beat intervals (ms) paired with the beat that closes each one.

    Intervals outside the bounds-implied range, or longer than twice the
    median in-range interval (a missed beat), are dropped.
    """
    beats = np.asarray(beats, dtype=np.float64)
    ibi = np.diff(beats) * 1000.0
    ends = beats[1:]
    keep = (ibi >= 60000.0 / bounds.max_bpm) & (ibi <= 60000.0 / bounds.min_bpm)
    ibi, ends = ibi[keep], ends[keep]
    if len(ibi):
        keep = ibi <= 2.0 * np.median(ibi)
        ibi, ends = ibi[keep], ends[keep]
    return ends, ibi


def trend_from_intervals(ends, ibi, smooth_k: int = 5) -> TrendSeries:
    """Centered moving median over runs of ``smooth_k`` beats.

    A run of k beats spans k-1 intervals; its point is stamped at the
    central beat.
    """
    span = smooth_k - 1
    if len(ibi) < span:
        raise TooFewBeats(f"{len(ibi)} usable intervals, need {span}")
    centre = (smooth_k - 1) // 2  # index of the central beat inside the run
    points = []
    for i in range(len(ibi) - span + 1):
        run = ibi[i:i + span]
        # beat j of the run closes interval i + j - 1
        t = ends[i + centre - 1]
        points.append((float(t), float(np.median(run))))
    return TrendSeries(tuple(points))


def hrv_trend(beats, smooth_k: int = 5, bounds: HrBounds = CANINE_BOUNDS) -> TrendSeries:
    if smooth_k < 3:
        raise ValueError("smooth_k must be >= 3")
    if len(beats) < smooth_k + 1:
        raise TooFewBeats(f"{len(beats)} beats, need at least {smooth_k + 1}")
    ends, ibi = beat_intervals(beats, bounds)
    return trend_from_intervals(ends, ibi, smooth_k)
