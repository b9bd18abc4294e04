"""
Command-line entry point: ``canine-hr {analyze,evaluate,subsample,synth}``.

Exit codes: 0 success, 1 usage, 2 I/O, 3 data format. Machine outputs are
JSON/CSV files under ``--out``; diagnostics go to stderr.
"""
from __future__ import annotations

import argparse
import datetime as _dt
import json
import math
import os
import sys
import tempfile
import zlib
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from . import __version__
from .audio_io import format_annotations, load_wav, parse_annotations, write_wav
from .errors import CanineHRError, MissingPair
from .evaluation import (
    RecordingResult,
    ground_truth_hr,
    results_csv,
    subsample,
    summarize,
)
from .fallback import DEFAULT_CONFIG, Variant, analyze, load_config
from .synth import SynthSpec, corpus_specs, synth_recording

EXIT_OK, EXIT_USAGE, EXIT_IO, EXIT_DATA = 0, 1, 2, 3
MANIFEST_NAME = "manifest.json"


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _err(msg):
    print(msg, file=sys.stderr)


def _atomic_write(path: Path, payload) -> None:
    if isinstance(payload, str):
        payload = payload.encode("utf-8")
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _atomic_wav(buf, path: Path) -> None:
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    os.close(fd)
    try:
        write_wav(buf, tmp)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _dumps(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def _write_manifest(out: Path, argv, config, seeds, inputs, extra=None):
    manifest = {
        "command": ["canine-hr", *argv],
        "config": config,
        "seeds": seeds,
        "inputs": [str(p) for p in inputs],
        "tool_version": __version__,
        "timestamp": _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds"),
    }
    if extra:
        manifest.update(extra)
    _atomic_write(out / MANIFEST_NAME, _dumps(manifest))


def _collect(inputs, suffix):
    files = []
    for p in map(Path, inputs):
        if p.is_dir():
            files.extend(sorted(p.glob(f"*{suffix}")))
        else:
            files.append(p)
    return files


def _run_jobs(fn, items, jobs):
    if jobs <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items))


# --- analyze --------------------------------------------------------------

def _analyze_one(task):
    path, variant, config_path, out = task
    try:
        config = load_config(config_path) if config_path else DEFAULT_CONFIG
        report = analyze(load_wav(path), variant, config)
        doc = report.to_dict()
        doc["source"] = Path(path).name
        doc["manifest"] = MANIFEST_NAME
        _atomic_write(Path(out) / f"{Path(path).stem}.json", _dumps(doc))
        return EXIT_OK, None
    except CanineHRError as exc:
        return exc.exit_code, f"{path}: {exc}"
    except OSError as exc:
        return EXIT_IO, f"{path}: {exc}"


def cmd_analyze(args, argv):
    config = load_config(args.config) if args.config else DEFAULT_CONFIG
    variant = Variant.parse(args.variant)
    inputs = _collect(args.inputs, ".wav")
    if not inputs:
        raise _UsageError("no input WAV files")
    out = _outdir(args.out)
    tasks = [(str(p), variant.value, args.config, str(out)) for p in inputs]
    status = EXIT_OK
    for code, msg in _run_jobs(_analyze_one, tasks, args.jobs):
        if msg:
            _err(msg)
        status = max(status, code)
    _write_manifest(out, argv, config.snapshot(), {}, inputs, {"variant": variant.value})
    return status


# --- evaluate -------------------------------------------------------------

def cmd_evaluate(args, argv):
    reports_dir, ann_dir = Path(args.reports_dir), Path(args.annotations_dir)
    for d in (reports_dir, ann_dir):
        if not d.is_dir():
            raise FileNotFoundError(f"not a directory: {d}")
    reports = sorted(p for p in reports_dir.glob("*.json") if p.name != MANIFEST_NAME)
    if not reports:
        raise MissingPair(f"no reports in {reports_dir}")
    results = []
    for rp in reports:
        ap = ann_dir / f"{rp.stem}.ann"
        if not ap.is_file():
            raise MissingPair(f"report {rp.name} has no annotation {ap.name} in {ann_dir}")
        try:
            doc = json.loads(rp.read_text(encoding="utf-8"))
            results.append(RecordingResult(
                id=rp.stem, hr_est=doc["hr_bpm"], hr_gt=ground_truth_hr(parse_annotations(ap)),
                quality_score=int(doc["quality_score"]), stage_reached=doc["stage_reached"],
                variant=doc.get("variant", "")))
        except (KeyError, TypeError, ValueError) as exc:
            if isinstance(exc, CanineHRError):
                raise
            raise _DataError(f"{rp}: malformed report ({exc})") from exc
    report_stems = {p.stem for p in reports}
    orphans = sorted(p.name for p in ann_dir.glob("*.ann") if p.stem not in report_stems)
    if orphans:
        _err(f"warning: {len(orphans)} annotation(s) without a report, e.g. {orphans[0]}")

    summary = summarize(results, args.qs_threshold)
    out = _outdir(args.out)
    _atomic_write(out / "results.csv", results_csv(results))
    doc = summary.to_dict()
    doc["manifest"] = MANIFEST_NAME
    _atomic_write(out / "summary.json", _dumps(doc))
    _atomic_write(out / "summary.csv", _summary_table(summary))
    _write_manifest(out, argv, {"qs_threshold": args.qs_threshold}, {},
                    [str(p) for p in reports])
    return EXIT_OK


def _summary_table(summary):
    def cell(v):
        return "" if v is None else f"{v:.2f}"
    rows = ["metric,all,gated"]
    for name in ("mean_acc", "median_acc", "p80_acc", "p90_acc"):
        rows.append(f"{name},{cell(getattr(summary.all, name))},{cell(getattr(summary.gated, name))}")
    rows.append(f"n,{summary.all.n},{summary.gated.n}")
    return "\n".join(rows) + "\n"


# --- subsample ------------------------------------------------------------

def _file_seed(seed, name):
    return [seed, zlib.crc32(name.encode("utf-8"))]


def cmd_subsample(args, argv):
    if not (0 < args.min_s <= args.max_s):
        raise _UsageError("need 0 < --min-s <= --max-s")
    inputs = _collect(args.inputs, ".wav")
    if not inputs:
        raise _UsageError("no input WAV files")
    out = _outdir(args.out)
    entries = []
    for wav in inputs:
        ann_path = wav.with_suffix(".ann")
        if not ann_path.is_file():
            raise MissingPair(f"{wav.name} has no annotation file {ann_path.name}")
        buf, ann = load_wav(wav), parse_annotations(ann_path)
        seed = _file_seed(args.seed, wav.name)
        pieces = subsample(buf, ann, args.n, (args.min_s, args.max_s), seed)
        for k, (piece, piece_ann) in enumerate(pieces):
            stem = f"{wav.stem}_seg{k}"
            _atomic_wav(piece, out / f"{stem}.wav")
            _atomic_write(out / f"{stem}.ann", format_annotations(piece_ann))
            entries.append({"id": stem, "source": wav.name, "wav": f"{stem}.wav",
                            "ann": f"{stem}.ann", "length_s": piece.duration_s})
    _atomic_write(out / "segments.json", _dumps({"segments": entries, "manifest": MANIFEST_NAME}))
    _write_manifest(out, argv, {"n": args.n, "min_s": args.min_s, "max_s": args.max_s},
                    {"seed": args.seed}, inputs)
    return EXIT_OK


# --- synth ----------------------------------------------------------------

def _spec_from_args(args):
    if args.spec_file:
        try:
            data = json.loads(Path(args.spec_file).read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise _DataError(f"{args.spec_file}: {exc}") from exc
        return SynthSpec.from_dict(data)
    kwargs = {
        "duration_s": args.duration, "hr_bpm": args.hr, "snr_db": args.snr,
        "noise_color": args.noise_color, "murmur": args.murmur,
        "hr_jitter_pct": args.jitter, "seed": args.seed, "sample_rate": args.rate,
        "systole_fraction": args.systole,
    }
    return SynthSpec(**kwargs)


def _synth_one(task):
    spec_dict, stem, out = task
    spec = SynthSpec.from_dict(spec_dict)
    buf, ann = synth_recording(spec)
    out = Path(out)
    _atomic_wav(buf, out / f"{stem}.wav")
    _atomic_write(out / f"{stem}.ann", format_annotations(ann))
    return {"id": stem, "spec": spec.to_dict(), "wav": f"{stem}.wav", "ann": f"{stem}.ann"}


def cmd_synth(args, argv):
    spec = _spec_from_args(args)
    out = _outdir(args.out)
    if args.n is None:
        specs = [(spec, args.name)]
        seeds = {"seed": spec.seed}
    else:
        lo, hi = args.hr_range
        snrs = args.snr_values or [spec.snr_db]
        specs = [(s, f"{args.name}_{i:04d}")
                 for i, s in enumerate(corpus_specs(spec, args.n, (lo, hi), snrs, args.seed))]
        seeds = {"corpus_seed": args.seed}
    tasks = [(s.to_dict(), stem, str(out)) for s, stem in specs]
    entries = _run_jobs(_synth_one, tasks, args.jobs)
    _atomic_write(out / "corpus.json", _dumps({"recordings": entries, "manifest": MANIFEST_NAME}))
    _write_manifest(out, argv, {"base_spec": spec.to_dict()}, seeds, [])
    return EXIT_OK


# --- plumbing -------------------------------------------------------------

class _UsageError(CanineHRError):
    exit_code = EXIT_USAGE


class _DataError(CanineHRError):
    exit_code = EXIT_DATA


def _outdir(path):
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _float_or_inf(text):
    value = float(text)
    if math.isnan(value):
        raise argparse.ArgumentTypeError("NaN is not allowed")
    return value


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="TOML file overriding stage thresholds and QS weights")
    common.add_argument("--seed", type=int, default=0, help="random seed (default 0)")
    common.add_argument("--jobs", type=int, default=1, help="parallel worker processes")
    common.add_argument("--out", default="out", help="output directory (default ./out)")

    parser = _Parser(prog="canine-hr", description=__doc__.strip().splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("analyze", parents=[common], help="estimate heart rate for WAV files")
    p.add_argument("inputs", nargs="+", help="WAV files or directories of WAV files")
    p.add_argument("--variant", choices=["primary", "fast"], default="primary")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser(
        "evaluate", parents=[common],
        help="score reports against annotations",
        description="Pairs <reports_dir>/X.json with <annotations_dir>/X.ann by basename.")
    p.add_argument("reports_dir")
    p.add_argument("annotations_dir")
    p.add_argument("--qs-threshold", type=float, default=70.0)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("subsample", parents=[common],
                       help="cut random short segments from annotated recordings",
                       description="Each X.wav needs a sibling X.ann.")
    p.add_argument("inputs", nargs="+")
    p.add_argument("--n", type=int, default=3)
    p.add_argument("--min-s", type=float, default=30.0)
    p.add_argument("--max-s", type=float, default=40.0)
    p.set_defaults(func=cmd_subsample)

    p = sub.add_parser("synth", parents=[common], help="generate synthetic recordings")
    p.add_argument("--spec-file", help="JSON SynthSpec (overrides the flags below)")
    p.add_argument("--hr", type=float, default=100.0)
    p.add_argument("--duration", type=float, default=60.0)
    p.add_argument("--snr", type=_float_or_inf, default=20.0, help="dB; 'inf' for no noise")
    p.add_argument("--noise-color", choices=["white", "pink"], default="white")
    p.add_argument("--murmur", action="store_true")
    p.add_argument("--jitter", type=float, default=0.0, help="HR jitter in percent")
    p.add_argument("--systole", type=float, default=0.35)
    p.add_argument("--rate", type=int, default=4000)
    p.add_argument("--name", default="synth")
    p.add_argument("--n", type=int, help="corpus mode: number of recordings")
    p.add_argument("--hr-range", type=float, nargs=2, default=(50.0, 180.0))
    p.add_argument("--snr-values", type=_float_or_inf, nargs="+")
    p.set_defaults(func=cmd_synth)
    return parser


def main(argv=None):
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.jobs < 1:
        parser.error("--jobs must be >= 1")
    try:
        return args.func(args, argv)
    except CanineHRError as exc:
        _err(f"error: {exc}")
        return exc.exit_code
    except OSError as exc:
        _err(f"error: {exc}")
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
