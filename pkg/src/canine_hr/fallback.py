"""
Three-stage analysis with progressively relaxed thresholds, the composite
quality score, and the presentability gate.
"""
from __future__ import annotations

import dataclasses
import enum
import json
import math
from dataclasses import dataclass, field

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .audio_io import AudioBuffer
from .detector import (
    CANINE_BOUNDS,
    HrBounds,
    TrendSeries,
    aggregate_hr,
    detect_beats,
    hrv_trend,
    window_periodicity,
)
from .dsp import (
    ANALYSIS_RATE,
    ENVELOPE_SMOOTH_MS,
    PASS_BAND,
    NoiseProfile,
    bandpass,
    estimate_noise,
    resample,
    segment_windows,
    shannon_envelope,
)
from .errors import ConfigError, EmptyInput, TooFewBeats

FAILED = "FAILED"
GATE_THRESHOLD = 70

# report warnings raised from the noise profile; informational only
CLIPPING_WARN_FRACTION = 0.01
LOW_BAND_ENERGY_DB = 0.0


class Variant(enum.Enum):
    PRIMARY = "PRIMARY"
    FAST = "FAST"

    @property
    def expected_duration_s(self):
        return {Variant.PRIMARY: (55.0, math.inf), Variant.FAST: (28.0, 45.0)}[self]

    @classmethod
    def parse(cls, value):
        if isinstance(value, Variant):
            return value
        try:
            return cls(str(value).upper())
        except ValueError:
            raise ValueError(f"unknown variant {value!r}; expected primary or fast") from None


@dataclass(frozen=True)
class StageConfig:
    stage_index: int
    window_s: float
    hop_s: float
    prominence_min: float
    consistency_tol: float
    min_valid_fraction: float


_PROMINENCE = (0.50, 0.35, 0.25)
_CONSISTENCY_TOL = (0.08, 0.12, 0.20)
_MIN_VALID = (0.70, 0.55, 0.40)
_GEOMETRY = {Variant.PRIMARY: (10.0, 5.0), Variant.FAST: (6.0, 3.0)}


def _default_schedule(variant):
    window_s, hop_s = _GEOMETRY[variant]
    return tuple(StageConfig(k + 1, window_s, hop_s, _PROMINENCE[k], _CONSISTENCY_TOL[k],
                             _MIN_VALID[k]) for k in range(3))


def check_relaxation(schedule) -> list[str]:
    """Problems with a schedule's monotone relaxation; empty when valid."""
    problems = []
    if len(schedule) != 3:
        problems.append(f"expected 3 stages, got {len(schedule)}")
        return problems
    for a, b in zip(schedule, schedule[1:]):
        if not b.prominence_min < a.prominence_min:
            problems.append(f"prominence_min must decrease at stage {b.stage_index}")
        if not b.consistency_tol > a.consistency_tol:
            problems.append(f"consistency_tol must increase at stage {b.stage_index}")
        if not b.min_valid_fraction <= a.min_valid_fraction:
            problems.append(f"min_valid_fraction must not increase at stage {b.stage_index}")
    for s in schedule:
        if not (0 <= s.prominence_min <= 1 and s.consistency_tol > 0
                and 0 <= s.min_valid_fraction <= 1):
            problems.append(f"stage {s.stage_index} thresholds out of range")
    return problems


@dataclass(frozen=True)
class QualityWeights:
    stage: float = 0.30
    confidence: float = 0.35
    consistency: float = 0.35
    stage_factors: tuple = (1.0, 0.75, 0.50)


@dataclass(frozen=True)
class AnalysisConfig:
    schedules: dict = field(default_factory=lambda: {v: _default_schedule(v) for v in Variant})
    weights: QualityWeights = QualityWeights()
    gate_threshold: float = GATE_THRESHOLD
    bounds: HrBounds = CANINE_BOUNDS
    analysis_rate: int = ANALYSIS_RATE
    band: tuple = PASS_BAND
    smooth_ms: float = ENVELOPE_SMOOTH_MS
    hrv_smooth_k: int = 5

    def snapshot(self):
        return {
            "schedules": {v.value: [dataclasses.asdict(s) for s in sch]
                          for v, sch in self.schedules.items()},
            "weights": dataclasses.asdict(self.weights),
            "gate_threshold": self.gate_threshold,
            "bounds": dataclasses.asdict(self.bounds),
            "analysis_rate": self.analysis_rate,
            "band": list(self.band),
            "smooth_ms": self.smooth_ms,
            "hrv_smooth_k": self.hrv_smooth_k,
        }


DEFAULT_CONFIG = AnalysisConfig()

_STAGE_KEYS = ("prominence_min", "consistency_tol", "min_valid_fraction")


def _override_schedule(schedule, table, where):
    stages = [dataclasses.asdict(s) for s in schedule]
    for key, value in table.items():
        if key in ("window_s", "hop_s"):
            for s in stages:
                s[key] = float(value)
        elif key in _STAGE_KEYS:
            if not isinstance(value, list) or len(value) != 3:
                raise ConfigError(f"{where}.{key} must be a list of 3 numbers")
            for s, v in zip(stages, value):
                s[key] = float(v)
        elif key in ("stage1", "stage2", "stage3") and isinstance(value, dict):
            s = stages[int(key[-1]) - 1]
            for k, v in value.items():
                if k not in _STAGE_KEYS + ("window_s", "hop_s"):
                    raise ConfigError(f"unknown key {where}.{key}.{k}")
                s[k] = float(v)
        else:
            raise ConfigError(f"unknown key {where}.{key}")
    return tuple(StageConfig(**s) for s in stages)


def config_from_mapping(data: dict, base: AnalysisConfig = DEFAULT_CONFIG) -> AnalysisConfig:
    """Apply overrides (as parsed from a config file) on top of ``base``."""
    schedules = dict(base.schedules)
    weights = base.weights
    changes = {}
    for section, table in data.items():
        if not isinstance(table, dict):
            raise ConfigError(f"top-level key {section!r} must be a table")
        if section.upper() in Variant.__members__:
            v = Variant(section.upper())
            schedules[v] = _override_schedule(schedules[v], table, section)
            problems = check_relaxation(schedules[v])
            if problems:
                raise ConfigError(f"[{section}] " + "; ".join(problems))
        elif section == "qs":
            w = dataclasses.asdict(weights)
            for k, val in table.items():
                if k == "threshold":
                    changes["gate_threshold"] = float(val)
                elif k == "stage_factors":
                    if len(val) != 3:
                        raise ConfigError("qs.stage_factors must have 3 entries")
                    w[k] = tuple(float(x) for x in val)
                elif k in ("stage", "confidence", "consistency"):
                    w[k] = float(val)
                else:
                    raise ConfigError(f"unknown key qs.{k}")
            weights = QualityWeights(**w)
        elif section == "detector":
            bounds = dataclasses.asdict(base.bounds)
            for k, val in table.items():
                if k in ("min_bpm", "max_bpm"):
                    bounds[k] = float(val)
                elif k in ("smooth_ms", "analysis_rate", "hrv_smooth_k"):
                    changes[k] = type(getattr(base, k))(val)
                elif k == "band":
                    changes["band"] = tuple(float(x) for x in val)
                else:
                    raise ConfigError(f"unknown key detector.{k}")
            try:
                changes["bounds"] = HrBounds(**bounds)
            except ValueError as exc:
                raise ConfigError(str(exc)) from exc
        else:
            raise ConfigError(f"unknown section [{section}]")
    return dataclasses.replace(base, schedules=schedules, weights=weights, **changes)


def load_config(path) -> AnalysisConfig:
    """Read a TOML config file of overrides, e.g.::

        [primary]
        window_s = 10
        prominence_min = [0.5, 0.35, 0.25]

        [fast.stage3]
        min_valid_fraction = 0.35

        [qs]
        threshold = 70
    """
    try:
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return config_from_mapping(data)


def stage_schedule(variant, config: AnalysisConfig = DEFAULT_CONFIG) -> list[StageConfig]:
    return list(config.schedules[Variant.parse(variant)])


def quality_score(stage_reached, mean_confidence: float, consistency: float,
                  weights: QualityWeights = QualityWeights()) -> int:
    """Composite 0-100 reliability score; 0 for a failed analysis."""
    if stage_reached == FAILED or stage_reached is None:
        return 0
    if stage_reached not in (1, 2, 3):
        raise ValueError(f"stage_reached must be 1, 2, 3 or FAILED, got {stage_reached!r}")
    if not (0.0 <= mean_confidence <= 1.0 and 0.0 <= consistency <= 1.0):
        raise ValueError("confidence and consistency must lie in [0, 1]")
    raw = 100.0 * (weights.stage * weights.stage_factors[stage_reached - 1]
                   + weights.confidence * mean_confidence
                   + weights.consistency * consistency)
    # round half up; tiny epsilon absorbs binary error in e.g. 81.99999999999999
    return int(min(100, max(0, math.floor(raw + 0.5 + 1e-9))))


@dataclass
class AnalysisReport:
    hr_bpm: float | None
    stage_reached: int | str
    window_estimates: list
    consistency: float
    mean_confidence: float
    quality_score: int
    presentable: bool
    hrv_trend: TrendSeries | None
    noise: NoiseProfile
    variant: Variant
    warnings: list = field(default_factory=list)
    beats_s: list = field(default_factory=list)
    windows_evaluated: int = 0
    duration_s: float = 0.0

    def to_dict(self):
        return {
            "hr_bpm": _r(self.hr_bpm),
            "stage_reached": self.stage_reached,
            "quality_score": self.quality_score,
            "presentable": self.presentable,
            "consistency": _r(self.consistency),
            "mean_confidence": _r(self.mean_confidence),
            "hrv_trend": (None if self.hrv_trend is None else
                          {k: [_r(v) for v in vals] for k, vals in self.hrv_trend.to_dict().items()}),
            "noise": {k: _r(v) for k, v in self.noise.to_dict().items()},
            "variant": self.variant.value,
            "warnings": list(self.warnings),
            "window_estimates": [{k: _r(v) for k, v in w.to_dict().items()}
                                 for w in self.window_estimates],
            "n_beats": len(self.beats_s),
            "windows_evaluated": self.windows_evaluated,
            "duration_s": _r(self.duration_s),
        }

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"


def _r(value, ndigits=6):
    if isinstance(value, (bool, int, str)) or value is None:
        return value
    return round(float(value), ndigits)


def gate(report, threshold: float = GATE_THRESHOLD) -> bool:
    return report.hr_bpm is not None and report.quality_score >= threshold


def preprocess(buf: AudioBuffer, config: AnalysisConfig = DEFAULT_CONFIG):
    """Resample, measure noise, band-pass and take the envelope once."""
    if len(buf) == 0:
        raise EmptyInput("empty recording")
    work = resample(buf, config.analysis_rate)
    noise = estimate_noise(work, config.band)
    env = shannon_envelope(bandpass(work, *config.band), config.smooth_ms)
    return env, noise


def run_stage(env, stage: StageConfig, bounds: HrBounds = CANINE_BOUNDS):
    """One detection pass: (estimates, hr_bpm, consistency, accepted)."""
    windows = segment_windows(env, stage.window_s, stage.hop_s)
    estimates = [window_periodicity(w, bounds, stage.prominence_min) for w in windows]
    hr, consistency, accepted = aggregate_hr(estimates, stage.consistency_tol,
                                             stage.min_valid_fraction)
    return estimates, hr, consistency, accepted


def _mean_confidence(estimates):
    conf = [e.confidence for e in estimates if e.valid]
    return float(np.mean(conf)) if conf else 0.0


def analyze(buf: AudioBuffer, variant=Variant.PRIMARY,
            config: AnalysisConfig = DEFAULT_CONFIG) -> AnalysisReport:
    variant = Variant.parse(variant)
    if len(buf) == 0:
        raise EmptyInput("empty recording")
    warnings = []
    lo, hi = variant.expected_duration_s
    if not (lo <= buf.duration_s <= hi):
        warnings.append(f"DurationMismatch: {buf.duration_s:.2f} s outside the "
                        f"{variant.value} range [{lo:g}, {hi:g}] s")

    env, noise = preprocess(buf, config)
    if noise.clipping_fraction > CLIPPING_WARN_FRACTION:
        warnings.append(f"Clipping: {100 * noise.clipping_fraction:.1f}% of samples at full scale")
    if noise.snr_proxy_db < LOW_BAND_ENERGY_DB:
        warnings.append(f"LowBandEnergy: in-band/out-of-band ratio {noise.snr_proxy_db:.1f} dB")

    stage_reached = FAILED
    windows_evaluated = 0
    for stage in config.schedules[variant]:
        estimates, hr, consistency, accepted = run_stage(env, stage, config.bounds)
        windows_evaluated += len(estimates)
        if accepted:
            stage_reached = stage.stage_index
            break

    mean_conf = _mean_confidence(estimates)
    beats, trend = [], None
    if stage_reached == FAILED:
        hr = None
    else:
        beats = detect_beats(env, 60.0 / hr)
        try:
            trend = hrv_trend(beats, config.hrv_smooth_k, config.bounds)
        except TooFewBeats as exc:
            warnings.append(f"NoHrvTrend: {exc}")

    qs = quality_score(stage_reached, mean_conf, consistency, config.weights)
    report = AnalysisReport(
        hr_bpm=hr, stage_reached=stage_reached, window_estimates=estimates,
        consistency=consistency, mean_confidence=mean_conf, quality_score=qs,
        presentable=False, hrv_trend=trend, noise=noise, variant=variant,
        warnings=warnings, beats_s=[float(b) for b in beats],
        windows_evaluated=windows_evaluated, duration_s=buf.duration_s)
    report.presentable = gate(report, config.gate_threshold)
    return report
