import math

import numpy as np
import pytest
from hypothesis import assume, given, settings, strategies as st

from canine_hr.audio_io import AnnotationSet, AudioBuffer, Label
from canine_hr.errors import EmptyList, InsufficientS1Events, InvalidGroundTruth, RecordingTooShort
from canine_hr.evaluation import (
    CSV_FIELDS,
    RecordingResult,
    accuracy,
    crop_annotations,
    draw_segments,
    ground_truth_hr,
    hr_error_pct,
    percentile_accuracy,
    results_csv,
    subsample,
    summarize,
)


def brute_force_quantile(values, p):
    """Sorted-rank oracle: position (n - 1) * p / 100 on the sorted list,
    linearly interpolated between neighbouring ranks."""
    xs = sorted(values)
    pos = (len(xs) - 1) * p / 100.0
    lo = int(math.floor(pos))
    hi = min(lo + 1, len(xs) - 1)
    frac = pos - lo
    return xs[lo] + (xs[hi] - xs[lo]) * frac


def _ann(s1_times, extra=(), duration=None):
    events = sorted([(t, Label.S1) for t in s1_times] + list(extra), key=lambda e: e[0])
    return AnnotationSet(tuple(events), duration or (events[-1][0] + 1 if events else 1.0))


# --- ground truth & errors ------------------------------------------------

def test_ground_truth_examples():
    assert ground_truth_hr(_ann(range(60))) == pytest.approx(60.0)
    assert ground_truth_hr(_ann([0.0, 0.5, 1.0, 1.5])) == pytest.approx(120.0)
    with pytest.raises(InsufficientS1Events):
        ground_truth_hr(_ann([3.0]))


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(0.01, 2.0), min_size=1, max_size=40),
       st.lists(st.tuples(st.floats(0, 60), st.sampled_from(
           [Label.S2, Label.MURMUR, Label.ECTOPIC, Label.ARRHYTHMIA])), max_size=30))
def test_ground_truth_ignores_other_labels(gaps, others):
    s1 = np.concatenate([[0.0], np.cumsum(gaps)])
    assume(np.all(np.diff(s1) > 0))
    base = ground_truth_hr(_ann(s1, duration=100))
    assert ground_truth_hr(_ann(s1, others, duration=100)) == pytest.approx(base, rel=1e-12)


def test_error_examples():
    assert hr_error_pct(100, 100) == 0
    assert hr_error_pct(110, 100) == pytest.approx(10.0)
    assert accuracy(hr_error_pct(108.37, 100)) == pytest.approx(91.63)
    with pytest.raises(InvalidGroundTruth):
        hr_error_pct(100, 0)


@pytest.mark.parametrize("err,acc", [(11.14, 88.86), (7.02, 92.98), (8.37, 91.63),
                                     (5.05, 94.95), (0, 100)])
def test_accuracy_reported_figures(err, acc):
    assert round(accuracy(err), 2) == acc


@settings(max_examples=100)
@given(st.floats(0.1, 500))
def test_self_error_is_perfect(x):
    assert accuracy(hr_error_pct(x, x)) == 100


# --- percentiles ----------------------------------------------------------

def test_percentile_examples():
    assert percentile_accuracy([5.0] * 7, 80) == 95.0
    assert percentile_accuracy([0, 10, 20, 30, 40], 80) == pytest.approx(68.0)
    assert percentile_accuracy([0, 10, 20, 30, 40], 90) == pytest.approx(64.0)
    with pytest.raises(EmptyList):
        percentile_accuracy([], 50)


@settings(max_examples=200)
@given(st.lists(st.floats(0, 200), min_size=1, max_size=50), st.floats(0.01, 99.99))
def test_percentile_matches_oracle(errors, p):
    assert percentile_accuracy(errors, p) == pytest.approx(
        100 - brute_force_quantile(errors, p), abs=1e-9)


@settings(max_examples=200)
@given(st.lists(st.floats(0, 200), min_size=1, max_size=50), st.floats(1, 99), st.floats(1, 99))
def test_percentile_nonincreasing_in_p(errors, p1, p2):
    lo, hi = sorted((p1, p2))
    assert percentile_accuracy(errors, hi) <= percentile_accuracy(errors, lo) + 1e-12


# --- summaries -------------------------------------------------------------

def _results(n, n_gated, err=5.0):
    return [RecordingResult(f"r{i}", 100 + err, 100.0, 90 if i < n_gated else 40, 1, "PRIMARY")
            for i in range(n)]


def test_gated_fraction_114():
    s = summarize(_results(114, 98))
    assert (s.n_total, s.n_gated) == (114, 98)
    assert round(s.gated_fraction_pct) == 86
    assert round(s.gated_fraction_pct, 2) == 85.96


def test_gated_fraction_38():
    s = summarize(_results(38, 32))
    assert round(s.gated_fraction_pct, 2) == 84.21


def test_single_perfect_result():
    s = summarize([RecordingResult("a", 100.0, 100.0, 100, 1, "PRIMARY")])
    assert s.n_gated == 1
    assert s.mean_acc == s.median_acc == s.p80_acc == s.p90_acc == 100
    assert s.gated_mean_acc == 100


def test_no_result_excluded_and_counted():
    res = [RecordingResult("a", None, 100.0, 0, "FAILED", "PRIMARY"),
           RecordingResult("b", 90.0, 100.0, 95, 1, "PRIMARY")]
    s = summarize(res)
    assert s.n_no_result == 1 and s.all.n == 1 and s.n_gated == 1
    assert s.mean_acc == pytest.approx(90.0)
    assert res[0].error_pct is None


def test_summarize_empty():
    with pytest.raises(EmptyList):
        summarize([])


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(st.one_of(st.none(), st.floats(40, 220)), st.floats(40, 220),
                          st.integers(0, 100)), min_size=1, max_size=30),
       st.integers(0, 100))
def test_summary_invariants(rows, threshold):
    res = [RecordingResult(str(i), est, gt, qs, 1, "PRIMARY") for i, (est, gt, qs) in enumerate(rows)]
    s = summarize(res, threshold)
    assert s.n_gated <= s.n_total
    assert s.gated.n <= s.all.n
    for stats in (s.all, s.gated):
        for v in (stats.mean_acc, stats.median_acc, stats.p80_acc, stats.p90_acc):
            assert v is None or v <= 100


def test_summary_json_documents_quantile_convention():
    d = summarize(_results(5, 3)).to_dict()
    assert "inclusive" in d["quantile_convention"]
    assert d["all"]["mean_acc"] == 95.0


def test_results_csv_header_and_blank_fields():
    res = [RecordingResult("a", None, 100.0, 0, "FAILED", "PRIMARY")]
    lines = results_csv(res).splitlines()
    assert lines[0] == ",".join(CSV_FIELDS)
    assert lines[1] == "a,,100.0000,,,0,FAILED,PRIMARY"


# --- subsampling ------------------------------------------------------------

def test_crop_fixture():
    ann = _ann([9.9, 10.2, 44.0, 46.0], duration=60)
    cropped = crop_annotations(ann, 10.0, 35.0)
    assert cropped.times(Label.S1) == pytest.approx([0.2, 34.0])
    assert cropped.source_duration_s == 35.0
    assert len(crop_annotations(_ann([9.9, 10.2], duration=60), 10, 35).times(Label.S1)) == 1


def _recording(duration=60.0, rate=1000):
    buf = AudioBuffer(np.sin(np.arange(int(duration * rate)) * 0.01), rate)
    ann = _ann(np.arange(0.25, duration, 0.5), duration=duration)
    return buf, ann


def test_subsample_38_recordings_gives_114_segments():
    total = 0
    for k in range(38):
        segs = subsample(*_recording(), n=3, seed=k)
        total += len(segs)
        for piece, ann in segs:
            assert 30 <= piece.duration_s <= 40
            t = ann.times()
            assert np.all((t >= 0) & (t <= piece.duration_s))
    assert total == 114


def test_subsample_is_deterministic():
    buf, ann = _recording()
    a = subsample(buf, ann, seed=7)
    b = subsample(buf, ann, seed=7)
    assert all(pa == pb and aa == ab for (pa, aa), (pb, ab) in zip(a, b))
    assert draw_segments(60, 3, seed=7) == draw_segments(60, 3, seed=7)
    assert draw_segments(60, 3, seed=7) != draw_segments(60, 3, seed=8)


def test_subsample_audio_matches_annotations():
    buf, ann = _recording()
    for piece, cropped in subsample(buf, ann, seed=3):
        # segment audio is a contiguous slice of the source
        i0 = int(np.flatnonzero(buf.samples == piece.samples[0])[0])
        np.testing.assert_array_equal(buf.samples[i0:i0 + len(piece)], piece.samples)
        start = i0 / buf.sample_rate
        expected = ann.times()[(ann.times() >= start) & (ann.times() <= start + piece.duration_s)]
        np.testing.assert_allclose(cropped.times() + start, expected, atol=1e-9)


def test_subsample_short_recording():
    with pytest.raises(RecordingTooShort):
        subsample(*_recording(25.0))
    for piece, _ in subsample(*_recording(35.0), seed=2):
        assert 30 <= piece.duration_s <= 35


@settings(max_examples=40, deadline=None)
@given(st.floats(30, 120), st.integers(0, 2**32 - 1), st.integers(1, 5))
def test_subsample_properties(duration, seed, n):
    buf, ann = _recording(duration, rate=200)
    segs = subsample(buf, ann, n, (30.0, 40.0), seed)
    assert len(segs) == n
    for piece, cropped in segs:
        assert 30 <= piece.duration_s <= 40
        assert np.all((cropped.times() >= 0) & (cropped.times() <= piece.duration_s))
