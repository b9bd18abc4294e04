"""
Evaluation against annotated ground truth: error and accuracy metrics,
percentile tables with and without quality gating, and the short-segment
subsampling protocol.

Percentiles use linear interpolation between order statistics with the
endpoints at ranks 1 and n (the "inclusive" convention, numpy's default).
"""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .audio_io import AnnotationSet, AudioBuffer, Label
from .errors import EmptyList, InsufficientS1Events, InvalidGroundTruth, RecordingTooShort

QUANTILE_CONVENTION = "linear interpolation, inclusive endpoints (ranks 1..n)"

CSV_FIELDS = ("id", "hr_est", "hr_gt", "error_pct", "accuracy_pct",
              "quality_score", "stage_reached", "variant")


def ground_truth_hr(ann: AnnotationSet) -> float:
    """Heart rate from S1 onsets: 60 * (count - 1) / span."""
    s1 = ann.times(Label.S1)
    if len(s1) < 2:
        raise InsufficientS1Events(f"need >= 2 S1 events, found {len(s1)}")
    span = float(s1[-1] - s1[0])
    if span <= 0:
        raise InsufficientS1Events("S1 events span zero time")
    return 60.0 * (len(s1) - 1) / span


def hr_error_pct(est: float, gt: float) -> float:
    if not (gt > 0 and math.isfinite(gt)):
        raise InvalidGroundTruth(f"ground truth HR must be positive, got {gt}")
    return 100.0 * abs(est - gt) / gt


def accuracy(error_pct: float) -> float:
    """100 - error; negative for errors above 100% (kept as-is)."""
    if error_pct < 0:
        raise ValueError("error_pct must be >= 0")
    return 100.0 - error_pct


def percentile_accuracy(errors, p: float) -> float:
    """Accuracy at the p-th percentile of error, i.e. 100 - Q_p(errors)."""
    errors = np.asarray(list(errors), dtype=np.float64)
    if errors.size == 0:
        raise EmptyList("percentile of an empty error list")
    if not (0 < p < 100):
        raise ValueError("p must lie in (0, 100)")
    return 100.0 - float(np.percentile(errors, p, method="linear"))


@dataclass(frozen=True)
class RecordingResult:
    id: str
    hr_est: float | None
    hr_gt: float
    quality_score: int
    stage_reached: int | str
    variant: str
    error_pct: float | None = field(init=False)

    def __post_init__(self):
        err = None if self.hr_est is None else hr_error_pct(self.hr_est, self.hr_gt)
        object.__setattr__(self, "error_pct", err)

    def row(self):
        return {
            "id": self.id,
            "hr_est": _fmt(self.hr_est),
            "hr_gt": _fmt(self.hr_gt),
            "error_pct": _fmt(self.error_pct),
            "accuracy_pct": "" if self.error_pct is None else _fmt(accuracy(self.error_pct)),
            "quality_score": self.quality_score,
            "stage_reached": self.stage_reached,
            "variant": self.variant,
        }


def _fmt(v, nd=4):
    return "" if v is None else f"{v:.{nd}f}"


@dataclass(frozen=True)
class AccuracyStats:
    n: int
    mean_acc: float | None
    median_acc: float | None
    p80_acc: float | None
    p90_acc: float | None

    @classmethod
    def from_errors(cls, errors):
        errors = list(errors)
        if not errors:
            return cls(0, None, None, None, None)
        e = np.asarray(errors, dtype=np.float64)
        return cls(len(e), 100.0 - float(e.mean()), 100.0 - float(np.median(e)),
                   percentile_accuracy(e, 80), percentile_accuracy(e, 90))

    def to_dict(self):
        r2 = lambda v: None if v is None else round(v, 2)
        return {"n": self.n, "mean_acc": r2(self.mean_acc), "median_acc": r2(self.median_acc),
                "p80_acc": r2(self.p80_acc), "p90_acc": r2(self.p90_acc)}


@dataclass(frozen=True)
class EvalSummary:
    n_total: int
    n_gated: int
    n_no_result: int
    qs_threshold: float
    all: AccuracyStats
    gated: AccuracyStats

    @property
    def gated_fraction_pct(self):
        return 100.0 * self.n_gated / self.n_total

    # flat accessors mirroring the result tables
    mean_acc = property(lambda self: self.all.mean_acc)
    median_acc = property(lambda self: self.all.median_acc)
    p80_acc = property(lambda self: self.all.p80_acc)
    p90_acc = property(lambda self: self.all.p90_acc)
    gated_mean_acc = property(lambda self: self.gated.mean_acc)
    gated_median_acc = property(lambda self: self.gated.median_acc)
    gated_p80_acc = property(lambda self: self.gated.p80_acc)
    gated_p90_acc = property(lambda self: self.gated.p90_acc)

    def to_dict(self):
        return {
            "n_total": self.n_total,
            "n_gated": self.n_gated,
            "n_no_result": self.n_no_result,
            "gated_fraction_pct": round(self.gated_fraction_pct, 2),
            "qs_threshold": self.qs_threshold,
            "all": self.all.to_dict(),
            "gated": self.gated.to_dict(),
            "quantile_convention": QUANTILE_CONVENTION,
        }

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"


def summarize(results, qs_threshold: float = 70) -> EvalSummary:
    results = list(results)
    if not results:
        raise EmptyList("no results to summarize")
    with_hr = [r for r in results if r.hr_est is not None]
    gated = [r for r in with_hr if r.quality_score >= qs_threshold]
    return EvalSummary(
        n_total=len(results),
        n_gated=len(gated),
        n_no_result=len(results) - len(with_hr),
        qs_threshold=qs_threshold,
        all=AccuracyStats.from_errors(r.error_pct for r in with_hr),
        gated=AccuracyStats.from_errors(r.error_pct for r in gated),
    )


def results_csv(results) -> str:
    out = io.StringIO()
    writer = csv.DictWriter(out, fieldnames=CSV_FIELDS, lineterminator="\n")
    writer.writeheader()
    for r in results:
        writer.writerow(r.row())
    return out.getvalue()


@dataclass(frozen=True)
class Segment:
    start_s: float
    length_s: float


def draw_segments(duration_s: float, n: int = 3, len_range=(30.0, 40.0), seed: int = 0):
    """Random (start, length) pairs; lengths clip to the recording duration."""
    lo, hi = len_range
    if not (0 < lo <= hi):
        raise ValueError(f"invalid length range {len_range}")
    if duration_s < lo:
        raise RecordingTooShort(f"recording is {duration_s:.2f} s, need >= {lo} s")
    hi = min(hi, duration_s)
    rng = np.random.default_rng(seed)
    segments = []
    for _ in range(n):
        length = float(rng.uniform(lo, hi))
        start = float(rng.uniform(0.0, duration_s - length))
        segments.append(Segment(start, length))
    return segments


def crop_annotations(ann: AnnotationSet, start_s: float, length_s: float) -> AnnotationSet:
    end = start_s + length_s
    events = tuple((min(max(t - start_s, 0.0), length_s), lab)
                   for t, lab in ann.events if start_s <= t <= end)
    return AnnotationSet(events, length_s)


def subsample(buf: AudioBuffer, ann: AnnotationSet, n: int = 3, len_range=(30.0, 40.0),
              seed: int = 0):
    """Cut ``n`` random, possibly overlapping segments with re-based annotations.

    Segment boundaries snap to whole samples; annotations are re-based to the
    snapped start.
    """
    rate = buf.sample_rate
    shortest = math.ceil(len_range[0] * rate)
    longest = min(len(buf), math.floor(len_range[1] * rate))
    out = []
    for seg in draw_segments(buf.duration_s, n, len_range, seed):
        i0 = int(round(seg.start_s * rate))
        length = min(max(int(round(seg.length_s * rate)), shortest), longest)
        i0 = min(i0, len(buf) - length)
        start_s, length_s = i0 / rate, length / rate
        piece = AudioBuffer(buf.samples[i0:i0 + length].copy(), rate)
        out.append((piece, crop_annotations(ann, start_s, length_s)))
    return out
