"""
Synthetic canine phonocardiograms with exact S1/S2 ground truth.

Each cardiac cycle carries an exponentially damped S1 burst at its onset and
a quieter S2 burst one systole later. Additive noise is generated
separately and scaled to an exact heart-signal-to-noise power ratio.
"""
from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass

import numpy as np
from scipy import signal

from .audio_io import AnnotationSet, AudioBuffer, Label
from .errors import InvalidSpec

HR_LIMITS = (40.0, 220.0)
NOISE_COLORS = ("white", "pink")
MURMUR_BAND = (100.0, 200.0)
MURMUR_REL_DB = -10.0
OUTPUT_PEAK = 0.9


@dataclass(frozen=True)
class SynthSpec:
    """Recipe for one synthetic recording.

    ``hr_bpm`` is either a constant or a sequence of ``(time_s, bpm)``
    breakpoints interpolated linearly (held flat outside the breakpoints).
    ``snr_db = inf`` disables additive noise.
    """

    duration_s: float = 60.0
    hr_bpm: float | tuple = 100.0
    systole_fraction: float = 0.35
    s1_freq_hz: float = 50.0
    s2_freq_hz: float = 60.0
    s1_dur_ms: float = 100.0
    s2_dur_ms: float = 80.0
    snr_db: float = 20.0
    noise_color: str = "white"
    murmur: bool = False
    hr_jitter_pct: float = 0.0
    seed: int = 0
    sample_rate: int = 4000
    s2_gain: float = 0.5

    def __post_init__(self):
        if not isinstance(self.hr_bpm, (int, float)):
            profile = tuple((float(t), float(b)) for t, b in self.hr_bpm)
            object.__setattr__(self, "hr_bpm", profile)
        validate_spec(self)

    def hr_at(self, t):
        if isinstance(self.hr_bpm, tuple):
            times, bpms = zip(*self.hr_bpm)
            return float(np.interp(t, times, bpms))
        return float(self.hr_bpm)

    @property
    def mean_hr_bpm(self):
        if isinstance(self.hr_bpm, tuple):
            grid = np.linspace(0.0, self.duration_s, 1001)
            return float(np.mean([self.hr_at(t) for t in grid]))
        return float(self.hr_bpm)

    def to_dict(self):
        d = dataclasses.asdict(self)
        if isinstance(self.hr_bpm, tuple):
            d["hr_bpm"] = [list(p) for p in self.hr_bpm]
        if math.isinf(self.snr_db):
            d["snr_db"] = "inf"
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        if isinstance(d.get("hr_bpm"), list):
            d["hr_bpm"] = tuple(tuple(p) for p in d["hr_bpm"])
        if d.get("snr_db") in ("inf", "Infinity"):
            d["snr_db"] = math.inf
        fields = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - fields
        if unknown:
            raise InvalidSpec(f"unknown synth fields: {sorted(unknown)}")
        try:
            return cls(**d)
        except TypeError as exc:
            raise InvalidSpec(str(exc)) from exc


def validate_spec(spec: SynthSpec) -> None:
    problems = []
    if not (spec.duration_s > 0 and math.isfinite(spec.duration_s)):
        problems.append("duration_s must be positive")
    if isinstance(spec.hr_bpm, tuple):
        if not spec.hr_bpm:
            problems.append("empty HR profile")
        bpms = [b for _, b in spec.hr_bpm]
        times = [t for t, _ in spec.hr_bpm]
        if any(b2 <= b1 for b1, b2 in zip(times, times[1:])):
            problems.append("HR profile times must be strictly increasing")
    else:
        bpms = [spec.hr_bpm]
    if any(not (HR_LIMITS[0] <= b <= HR_LIMITS[1]) for b in bpms):
        problems.append(f"HR must lie in [{HR_LIMITS[0]:g}, {HR_LIMITS[1]:g}] bpm")
    if not (0.2 <= spec.systole_fraction <= 0.5):
        problems.append("systole_fraction must lie in [0.2, 0.5]")
    if not (0 <= spec.hr_jitter_pct <= 10):
        problems.append("hr_jitter_pct must lie in [0, 10]")
    if math.isnan(spec.snr_db) or spec.snr_db == -math.inf:
        problems.append("snr_db must be a number or +inf")
    if spec.noise_color not in NOISE_COLORS:
        problems.append(f"noise_color must be one of {NOISE_COLORS}")
    if int(spec.sample_rate) != spec.sample_rate or spec.sample_rate < 1000:
        problems.append("sample_rate must be an integer >= 1000")
    nyq = spec.sample_rate / 2
    for name in ("s1_freq_hz", "s2_freq_hz"):
        if not (0 < getattr(spec, name) < nyq):
            problems.append(f"{name} must lie in (0, {nyq})")
    if spec.murmur and MURMUR_BAND[1] >= nyq:
        problems.append("sample_rate too low for the murmur band")
    for name in ("s1_dur_ms", "s2_dur_ms"):
        if not getattr(spec, name) > 0:
            problems.append(f"{name} must be positive")
    if not (0 < spec.s2_gain <= 1):
        problems.append("s2_gain must lie in (0, 1]")
    if problems:
        raise InvalidSpec("; ".join(problems))


@dataclass(frozen=True, eq=False)
class SynthComponents:
    """Heart signal and noise at output scale, before summation."""

    heart: np.ndarray
    noise: np.ndarray
    annotations: AnnotationSet
    sample_rate: int

    @property
    def achieved_snr_db(self):
        p_noise = float(np.mean(self.noise ** 2))
        if p_noise == 0:
            return math.inf
        return 10 * math.log10(float(np.mean(self.heart ** 2)) / p_noise)


def _add_burst(x, rate, onset, freq, dur_s, gain):
    i0 = int(math.ceil(onset * rate))
    i1 = min(len(x), int(math.ceil((onset + dur_s) * rate)))
    if i0 >= i1:
        return
    tt = np.arange(i0, i1) / rate - onset
    x[i0:i1] += gain * np.sin(2 * np.pi * freq * tt) * np.exp(-4.0 * tt / dur_s)


def _burst_rms(rate, freq, dur_s):
    tt = np.arange(int(math.ceil(dur_s * rate))) / rate
    b = np.sin(2 * np.pi * freq * tt) * np.exp(-4.0 * tt / dur_s)
    return float(np.sqrt(np.mean(b ** 2)))


def _colored_noise(rng, n, color, rate):
    white = rng.standard_normal(n)
    if color == "white":
        return white
    spec = np.fft.rfft(white)
    freqs = np.fft.rfftfreq(n, d=1.0 / rate)
    shape = np.zeros_like(freqs)
    shape[1:] = 1.0 / np.sqrt(freqs[1:])
    return np.fft.irfft(spec * shape, n)


def render_components(spec: SynthSpec) -> SynthComponents:
    rate = int(spec.sample_rate)
    n = int(round(spec.duration_s * rate))
    rng = np.random.default_rng(spec.seed)
    heart = np.zeros(n)
    s1_dur = spec.s1_dur_ms / 1000.0
    s2_dur = spec.s2_dur_ms / 1000.0
    jitter = spec.hr_jitter_pct / 100.0

    murmur_src = None
    murmur_gain = 0.0
    if spec.murmur:
        sos = signal.butter(4, MURMUR_BAND, btype="bandpass", fs=rate, output="sos")
        murmur_src = signal.sosfiltfilt(sos, rng.standard_normal(n))
        murmur_src /= np.sqrt(np.mean(murmur_src ** 2))
        murmur_gain = _burst_rms(rate, spec.s1_freq_hz, s1_dur) * 10 ** (MURMUR_REL_DB / 20)

    events = []
    t = rng.uniform(0.0, 60.0 / spec.hr_at(0.0))
    while t < spec.duration_s:
        period = 60.0 / spec.hr_at(t)
        if jitter:
            period *= 1.0 + jitter * rng.uniform(-1.0, 1.0)
        s2_t = t + spec.systole_fraction * period
        _add_burst(heart, rate, t, spec.s1_freq_hz, s1_dur, 1.0)
        events.append((t, Label.S1))
        if murmur_src is not None and t + s1_dur < min(s2_t, spec.duration_s):
            i0, i1 = int(math.ceil((t + s1_dur) * rate)), min(n, int(math.ceil(s2_t * rate)))
            heart[i0:i1] += murmur_gain * murmur_src[i0:i1]
            events.append((t + s1_dur, Label.MURMUR))
        if s2_t < spec.duration_s:
            _add_burst(heart, rate, s2_t, spec.s2_freq_hz, s2_dur, spec.s2_gain)
            events.append((s2_t, Label.S2))
        t += period

    noise = np.zeros(n)
    if math.isfinite(spec.snr_db):
        noise = _colored_noise(rng, n, spec.noise_color, rate)
        p_heart = float(np.mean(heart ** 2))
        noise *= math.sqrt(p_heart / (10 ** (spec.snr_db / 10)) / float(np.mean(noise ** 2)))

    peak = float(np.max(np.abs(heart + noise))) if n else 0.0
    scale = OUTPUT_PEAK / peak if peak > 0 else 1.0
    events.sort(key=lambda e: e[0])
    ann = AnnotationSet(tuple(events), n / rate)
    return SynthComponents(heart * scale, noise * scale, ann, rate)


def synth_recording(spec: SynthSpec) -> tuple[AudioBuffer, AnnotationSet]:
    parts = render_components(spec)
    return AudioBuffer(parts.heart + parts.noise, parts.sample_rate), parts.annotations


def child_seed(seed: int, index: int) -> int:
    return int(np.random.SeedSequence([seed, index]).generate_state(1)[0])


def corpus_specs(base: SynthSpec, n: int, hr_range, snr_values, seed: int) -> list[SynthSpec]:
    """The specs ``synth_corpus`` would render, without rendering them."""
    if n < 1:
        raise InvalidSpec("corpus size must be >= 1")
    lo, hi = hr_range
    if not (HR_LIMITS[0] <= lo <= hi <= HR_LIMITS[1]):
        raise InvalidSpec(f"hr_range must lie within {HR_LIMITS}")
    snr_values = list(snr_values)
    if not snr_values:
        raise InvalidSpec("snr_values must be nonempty")
    rng = np.random.default_rng(seed)
    hrs = rng.uniform(lo, hi, size=n)
    return [dataclasses.replace(base, hr_bpm=float(hrs[i]),
                                snr_db=float(snr_values[i % len(snr_values)]),
                                seed=child_seed(seed, i))
            for i in range(n)]


def synth_corpus(base: SynthSpec, n: int, hr_range, snr_values, seed: int):
    return [(*synth_recording(s), s) for s in corpus_specs(base, n, hr_range, snr_values, seed)]
