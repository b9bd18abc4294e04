"""Signal conditioning for phonocardiogram analysis."""
from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np
from scipy import signal
from scipy.ndimage import uniform_filter1d

from .audio_io import AudioBuffer
from .errors import EmptyInput, InvalidBand, InvalidRate, InvalidWindow, RecordingTooShort

ANALYSIS_RATE = 2000
PASS_BAND = (25.0, 200.0)
ENVELOPE_SMOOTH_MS = 20.0
CLIP_LEVEL = 0.999

# anti-alias design: flat to 0.45 x target rate, >= 60 dB beyond 0.55 x target rate
_AA_PASS_FRACTION = 0.45
_AA_ATTENUATION_DB = 60.0
_BANDPASS_ORDER = 4


@dataclass(frozen=True, eq=False)
class Envelope:
    values: np.ndarray
    rate: int

    @property
    def duration_s(self):
        return len(self.values) / self.rate


@dataclass(frozen=True, eq=False)
class Window:
    start_s: float
    values: np.ndarray
    rate: int

    @property
    def duration_s(self):
        return len(self.values) / self.rate


@dataclass(frozen=True)
class NoiseProfile:
    snr_proxy_db: float
    clipping_fraction: float

    def to_dict(self):
        return {"snr_proxy_db": self.snr_proxy_db,
                "clipping_fraction": self.clipping_fraction}


def resample(buf: AudioBuffer, target_rate: int = ANALYSIS_RATE) -> AudioBuffer:
    """Polyphase resampling with a Kaiser anti-alias filter.

    Identity when the rates already match.
    """
    if target_rate < 1000 or int(target_rate) != target_rate:
        raise InvalidRate(f"target rate must be an integer >= 1000 Hz, got {target_rate}")
    target_rate = int(target_rate)
    if buf.sample_rate == target_rate:
        return buf
    if len(buf) == 0:
        raise EmptyInput("cannot resample an empty buffer")

    ratio = Fraction(target_rate, buf.sample_rate)
    up, down = ratio.numerator, ratio.denominator
    fs_up = buf.sample_rate * up
    # the band edge is set by whichever of the two rates is lower
    edge_rate = min(target_rate, buf.sample_rate)
    width = (1.0 - 2 * _AA_PASS_FRACTION) * edge_rate
    numtaps, beta = signal.kaiserord(_AA_ATTENUATION_DB, width / (0.5 * fs_up))
    numtaps |= 1
    taps = signal.firwin(numtaps, 0.5 * edge_rate, window=("kaiser", beta), fs=fs_up)
    y = signal.resample_poly(buf.samples, up, down, window=taps)
    return AudioBuffer(np.clip(y, -1.0, 1.0), target_rate)


def _bandpass_sos(lo, hi, rate):
    return signal.butter(_BANDPASS_ORDER, [lo, hi], btype="bandpass", fs=rate, output="sos")


def bandpass(buf: AudioBuffer, lo: float = PASS_BAND[0], hi: float = PASS_BAND[1]) -> AudioBuffer:
    """Zero-phase Butterworth band-pass (forward-backward filtering)."""
    if not (0 < lo < hi < buf.sample_rate / 2):
        raise InvalidBand(f"need 0 < lo < hi < {buf.sample_rate / 2}, got [{lo}, {hi}]")
    if len(buf) == 0:
        raise EmptyInput("cannot filter an empty buffer")
    sos = _bandpass_sos(lo, hi, buf.sample_rate)
    padlen = min(3 * (2 * len(sos) + 1), len(buf) - 1)
    y = signal.sosfiltfilt(sos, buf.samples, padlen=max(padlen, 0))
    # filter output may overshoot full scale; AudioBuffer carries it unclipped
    return AudioBuffer(y, buf.sample_rate)


def shannon_envelope(buf: AudioBuffer, smooth_ms: float = ENVELOPE_SMOOTH_MS) -> Envelope:
    """Shannon energy envelope -x^2 log(x^2), moving-averaged and peak-normalized."""
    if smooth_ms <= 0:
        raise ValueError("smooth_ms must be positive")
    if len(buf) == 0:
        raise EmptyInput("cannot take the envelope of an empty buffer")
    x = buf.samples
    peak = np.max(np.abs(x))
    if peak == 0:
        return Envelope(np.zeros(len(x)), buf.sample_rate)
    sq = (x / peak) ** 2
    energy = np.zeros_like(sq)
    nz = sq > 0
    energy[nz] = -sq[nz] * np.log(sq[nz])
    width = max(1, int(round(smooth_ms * buf.sample_rate / 1000.0)))
    smoothed = uniform_filter1d(energy, size=width, mode="nearest")
    smoothed = np.maximum(smoothed, 0.0)
    top = smoothed.max()
    if top > 0:
        smoothed = smoothed / top
    return Envelope(smoothed, buf.sample_rate)


def window_starts(n_samples: int, win: int, hop: int) -> list[int]:
    """Start indices for a sliding window with an end-anchored tail."""
    starts = list(range(0, n_samples - win + 1, hop))
    # one-sample slack: a sub-sample remainder does not earn a tail window
    if n_samples - (starts[-1] + win) > 1:
        starts.append(n_samples - win)
    return starts


def segment_windows(env: Envelope, window_s: float, hop_s: float) -> list[Window]:
    if window_s < 4.0:
        raise InvalidWindow(f"window_s must be >= 4 s, got {window_s}")
    if not (0 < hop_s <= window_s):
        raise InvalidWindow(f"need 0 < hop_s <= window_s, got hop {hop_s}")
    win = int(round(window_s * env.rate))
    hop = max(1, int(round(hop_s * env.rate)))
    n = len(env.values)
    if n < win:
        raise RecordingTooShort(
            f"recording is {n / env.rate:.2f} s, shorter than the {window_s} s window")
    return [Window(s / env.rate, env.values[s:s + win], env.rate)
            for s in window_starts(n, win, hop)]


def estimate_noise(buf: AudioBuffer, band=PASS_BAND) -> NoiseProfile:
    """In-band vs out-of-band spectral energy ratio and clipping share."""
    x = buf.samples
    if len(x) == 0:
        raise EmptyInput("cannot estimate noise of an empty buffer")
    power = np.abs(np.fft.rfft(x)) ** 2
    freqs = np.fft.rfftfreq(len(x), d=1.0 / buf.sample_rate)
    in_band = (freqs >= band[0]) & (freqs <= band[1])
    e_in = float(power[in_band].sum())
    e_out = float(power[~in_band].sum())
    # floor keeps the ratio finite for silent or perfectly band-limited input
    floor = 1e-15 * (e_in + e_out) + 1e-300
    snr = 10.0 * math.log10((e_in + floor) / (e_out + floor))
    clipping = float(np.mean(np.abs(x) >= CLIP_LEVEL))
    return NoiseProfile(snr, clipping)
