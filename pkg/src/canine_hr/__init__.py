"""Windowed heart-rate estimation for canine phonocardiogram recordings."""

__version__ = "0.1.0"

from .audio_io import AnnotationSet, AudioBuffer, Label, load_wav, parse_annotations, write_annotations
from .fallback import AnalysisReport, Variant, analyze, gate, quality_score, stage_schedule
from .evaluation import accuracy, ground_truth_hr, hr_error_pct, percentile_accuracy, subsample, summarize
from .synth import SynthSpec, synth_corpus, synth_recording

__all__ = [
    "AnnotationSet", "AudioBuffer", "Label", "load_wav", "parse_annotations", "write_annotations",
    "AnalysisReport", "Variant", "analyze", "gate", "quality_score", "stage_schedule",
    "accuracy", "ground_truth_hr", "hr_error_pct", "percentile_accuracy", "subsample", "summarize",
    "SynthSpec", "synth_corpus", "synth_recording",
]
