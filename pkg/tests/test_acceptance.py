"""Acceptance criteria, one test each, run at their stated tolerances.

Each test reports a ``[PASS]``/``[FAIL]`` line through the ``acceptance``
fixture; the lines are echoed in the terminal summary. Criteria that do not
hold are left failing rather than loosened.
"""
import hashlib
import json
import math

import numpy as np
import pytest

from canine_hr.audio_io import AudioBuffer, Label
from canine_hr.cli import main
from canine_hr.evaluation import (
    RecordingResult,
    accuracy,
    crop_annotations,
    ground_truth_hr,
    percentile_accuracy,
    subsample,
    summarize,
)
from canine_hr.fallback import (
    FAILED,
    AnalysisReport,
    Variant,
    analyze,
    gate,
    preprocess,
    quality_score,
    run_stage,
    stage_schedule,
)
from canine_hr.dsp import NoiseProfile
from canine_hr.synth import SynthSpec, synth_corpus

pytestmark = pytest.mark.slow

CLEAN_BASE = SynthSpec(duration_s=60, hr_jitter_pct=2)


def _corpus(snr_values, n=50, seed=2024, base=CLEAN_BASE):
    return synth_corpus(base, n, (50, 180), snr_values, seed)


def _results(corpus, variant=Variant.PRIMARY):
    out = []
    for buf, ann, spec in corpus:
        rep = analyze(buf, variant)
        out.append((rep, RecordingResult(str(spec.seed), rep.hr_bpm, ground_truth_hr(ann),
                                         rep.quality_score, rep.stage_reached,
                                         rep.variant.value)))
    return out


def test_criterion_1_metric_math(acceptance):
    pairs = [(11.14, 88.86), (7.02, 92.98), (8.37, 91.63), (5.05, 94.95)]
    ok = all(round(accuracy(e), 2) == a for e, a in pairs)

    def crafted(n, n_gated):
        return [RecordingResult(f"r{i}", 100.0, 100.0, 85 if i < n_gated else 50, 1, "PRIMARY")
                for i in range(n)]

    frac_114 = summarize(crafted(114, 98)).gated_fraction_pct
    frac_38 = summarize(crafted(38, 32)).gated_fraction_pct
    # 98/114 = 85.96%, reported as a whole percentage
    ok = ok and round(frac_114) == 86 and round(frac_38, 2) == 84.21
    acceptance(1, ok, f"accuracy figures exact; 98/114 -> {frac_114:.2f}% (~86%), "
                      f"32/38 -> {frac_38:.2f}%")


def test_criterion_2_clean_calibration(acceptance):
    results = _results(_corpus([20]))
    n = len(results)
    stage1_ok = sum(rep.stage_reached == 1 and res.error_pct is not None and res.error_pct < 2
                    for rep, res in results)
    qs_ok = sum(rep.quality_score >= 70 for rep, _ in results)
    ok = stage1_ok / n >= 0.95 and qs_ok / n >= 0.95
    acceptance(2, ok, f"stage 1 with error < 2%: {stage1_ok}/{n}; QS >= 70: {qs_ok}/{n}")


def test_criterion_3_degradation_and_fallback(acceptance):
    results = _results(_corpus([0]))
    n = len(results)
    degraded = sum(rep.stage_reached != 1 for rep, _ in results)
    summary = summarize([res for _, res in results])
    p90_all, p90_gated = summary.p90_acc, summary.gated_p90_acc
    engaged = degraded / n >= 0.20
    directional = p90_all is not None and p90_gated is not None and p90_gated > p90_all
    acceptance(3, engaged and directional,
               f"stage >= 2 or FAILED: {degraded}/{n} (need >= 20%); "
               f"p90 accuracy gated {p90_gated:.2f} vs all {p90_all:.2f} (need strictly higher)")


def test_criterion_4_fast_vs_primary(acceptance):
    corpus = _corpus([6], seed=4)
    primary, fast = [], []
    for buf, ann, spec in corpus:
        rep = analyze(buf, Variant.PRIMARY)
        primary.append(np.nan if rep.hr_bpm is None else
                       100 * abs(rep.hr_bpm - ground_truth_hr(ann)) / ground_truth_hr(ann))
        (piece, piece_ann), = subsample(buf, ann, 1, (35.0, 35.0), seed=spec.seed)
        rep = analyze(piece, Variant.FAST)
        gt = ground_truth_hr(piece_ann)
        fast.append(np.nan if rep.hr_bpm is None else 100 * abs(rep.hr_bpm - gt) / gt)
    p, f = np.nanmean(primary), np.nanmean(fast)
    missing = int(np.isnan(primary).sum() + np.isnan(fast).sum())
    acceptance(4, bool(p <= f), f"mean error primary {p:.3f}% vs fast {f:.3f}% "
                                f"({missing} missing estimates)")


def _tree_digest(path):
    h = hashlib.sha256()
    for p in sorted(path.iterdir()):
        if p.name == "manifest.json":
            continue
        h.update(p.name.encode())
        h.update(p.read_bytes())
    return h.hexdigest()


def test_criterion_5_subsampling(acceptance, tmp_path):
    src = tmp_path / "src"
    assert main(["synth", "--n", "38", "--duration", "60", "--seed", "38", "--jitter", "2",
                 "--out", str(src)]) == 0
    for run in ("a", "b"):
        assert main(["subsample", str(src), "--seed", "114", "--out", str(tmp_path / run)]) == 0
    segs = json.loads((tmp_path / "a" / "segments.json").read_text())["segments"]
    count = len(segs)
    lengths_ok = all(30 <= s["length_s"] <= 40 for s in segs)
    identical = _tree_digest(tmp_path / "a") == _tree_digest(tmp_path / "b")

    # hand-cropped fixtures
    from canine_hr.audio_io import AnnotationSet
    fixture = AnnotationSet(((9.9, Label.S1), (10.2, Label.S1), (10.5, Label.S2),
                             (44.95, Label.S1), (45.3, Label.S1)), 60.0)
    cropped = crop_annotations(fixture, 10.0, 35.0)
    expected = ((0.2, Label.S1), (0.5, Label.S2), (34.95, Label.S1))
    rebased = (len(cropped) == 3 and
               all(lab == el and math.isclose(t, et, abs_tol=1e-9)
                   for (t, lab), (et, el) in zip(cropped.events, expected)))
    ok = count == 114 and lengths_ok and identical and rebased
    acceptance(5, ok, f"{count} segments, lengths in [30,40]: {lengths_ok}, "
                      f"re-based fixture: {rebased}, byte-identical rerun: {identical}")


def test_criterion_6_fallback_monotonicity(acceptance):
    snrs = [20, 6, 0, -10, -14, -16, -18, -20]
    corpus = synth_corpus(CLEAN_BASE, 200, (50, 180), snrs, seed=11)
    schedule = stage_schedule(Variant.PRIMARY)
    accepted = [set(), set(), set()]
    for idx, (buf, _, _) in enumerate(corpus):
        env, _ = preprocess(buf)
        for k, stage in enumerate(schedule):
            if run_stage(env, stage)[3]:
                accepted[k].add(idx)
    violations = len(accepted[0] - accepted[1]) + len(accepted[1] - accepted[2])
    sizes = "/".join(str(len(a)) for a in accepted)
    acceptance(6, violations == 0, f"{violations} nesting violations; accepted per stage {sizes}")


def _report_with(hr, qs):
    return AnalysisReport(hr, 1, [], 1.0, 1.0, qs, False, None, NoiseProfile(0.0, 0.0),
                          Variant.PRIMARY)


def test_criterion_7_quality_score_properties(acceptance):
    rng = np.random.default_rng(7)
    stages = rng.integers(1, 4, 10_000)
    conf, cons = rng.random((2, 10_000))
    bump_c, bump_k = rng.random((2, 10_000))
    in_range = monotone = True
    for s, c, k, dc, dk in zip(stages, conf, cons, bump_c, bump_k):
        q = quality_score(int(s), c, k)
        in_range &= isinstance(q, int) and 0 <= q <= 100
        c2, k2 = c + (1 - c) * dc, k + (1 - k) * dk
        monotone &= q <= quality_score(int(s), c2, k) and q <= quality_score(int(s), c, k2)
    failed_zero = all(quality_score(FAILED, c, k) == 0 for c, k in zip(conf[:100], cons[:100]))
    boundary = gate(_report_with(100.0, 70)) and not gate(_report_with(100.0, 69))
    ok = in_range and monotone and failed_zero and boundary
    acceptance(7, ok, f"range {in_range}, monotone {monotone}, FAILED->0 {failed_zero}, "
                      f"gate inclusive at 70 {boundary} (10,000 triples)")


def test_criterion_8_noise_rejection(acceptance):
    presentable = 0
    for seed in range(50):
        rng = np.random.default_rng([8, seed])
        x = np.clip(0.25 * rng.standard_normal(60 * 4000), -1, 1)
        presentable += analyze(AudioBuffer(x, 4000)).presentable
    acceptance(8, presentable / 50 < 0.05, f"presentable on pure noise: {presentable}/50")


def test_criterion_9_determinism(acceptance, clean_120, tmp_path):
    buf, _ = clean_120
    runs = {analyze(buf).to_json() for _ in range(3)}
    src = tmp_path / "src"
    assert main(["synth", "--n", "8", "--duration", "60", "--snr-values", "20", "0", "-16",
                 "--seed", "9", "--out", str(src)]) == 0
    digests = []
    for jobs in ("1", "8"):
        out = tmp_path / f"jobs{jobs}"
        assert main(["analyze", str(src), "--jobs", jobs, "--out", str(out)]) == 0
        digests.append(_tree_digest(out))
    ok = len(runs) == 1 and digests[0] == digests[1]
    acceptance(9, ok, f"3 in-process runs identical: {len(runs) == 1}; "
                      f"--jobs 1 vs 8 identical: {digests[0] == digests[1]}")


def _oracle_quantile(values, p):
    xs = sorted(values)
    pos = (len(xs) - 1) * p / 100.0
    lo = int(math.floor(pos))
    hi = min(lo + 1, len(xs) - 1)
    return xs[lo] + (xs[hi] - xs[lo]) * (pos - lo)


def test_criterion_10_quantile_oracle(acceptance):
    rng = np.random.default_rng(10)
    worst = 0.0
    for _ in range(1000):
        errors = list(rng.exponential(8.0, rng.integers(1, 120)))
        p = float(rng.uniform(0.5, 99.5)) if rng.random() < 0.5 else float(rng.choice([80, 90]))
        worst = max(worst, abs(percentile_accuracy(errors, p) - (100 - _oracle_quantile(errors, p))))
    acceptance(10, worst <= 1e-9, f"max deviation from sorted-rank oracle {worst:.2e} (1,000 lists)")


def test_supplementary_gating_direction_under_heavy_noise():
    """Not an acceptance criterion: the gated-vs-all p90 direction, shown at an
    SNR where the synthetic pipeline actually degrades."""
    results = _results(_corpus([-16]))
    summary = summarize([res for _, res in results])
    degraded = sum(rep.stage_reached != 1 for rep, _ in results)
    assert degraded / len(results) >= 0.20
    assert summary.gated_p90_acc > summary.p90_acc
