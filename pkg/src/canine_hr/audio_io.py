"""
Audio loading and cardiologist annotation files.

Annotation files are UTF-8 text with LF line endings, one event per line::

    # optional comments
    duration	61.250
    0.512	S1
    0.803	S2

The ``duration`` header is optional; without it the duration is the last
event time.
"""
from __future__ import annotations

import enum
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.io import wavfile

from .errors import (
    AudioIOError,
    CorruptHeader,
    NonMonotonicTime,
    NotFound,
    ParseError,
    UnknownLabel,
    UnsupportedFormat,
)

__all__ = [
    "AudioBuffer",
    "Label",
    "AnnotationSet",
    "load_wav",
    "write_wav",
    "parse_annotations",
    "write_annotations",
    "format_annotations",
]

# Full-scale divisors; scipy returns 24-bit data left-justified in int32.
_INT_SCALE = {
    np.dtype(np.int16): 32768.0,
    np.dtype(np.int32): 2147483648.0,
}


@dataclass(frozen=True, eq=False)
class AudioBuffer:
    """Mono float signal in [-1, 1] plus its sample rate in Hz."""

    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim != 1:
            raise ValueError("AudioBuffer samples must be one-dimensional")
        if int(self.sample_rate) <= 0:
            raise ValueError("sample_rate must be positive")
        object.__setattr__(self, "samples", samples)
        object.__setattr__(self, "sample_rate", int(self.sample_rate))

    @property
    def duration_s(self) -> float:
        return len(self.samples) / self.sample_rate

    def __len__(self):
        return len(self.samples)

    def __eq__(self, other):
        if not isinstance(other, AudioBuffer):
            return NotImplemented
        return (self.sample_rate == other.sample_rate
                and np.array_equal(self.samples, other.samples))


class Label(str, enum.Enum):
    S1 = "S1"
    S2 = "S2"
    MURMUR = "MURMUR"
    ECTOPIC = "ECTOPIC"
    ARRHYTHMIA = "ARRHYTHMIA"

    def __str__(self):
        return self.value


@dataclass(frozen=True)
class AnnotationSet:
    events: tuple = ()
    source_duration_s: float = 0.0

    def __post_init__(self):
        events = tuple((float(t), Label(lab)) for t, lab in self.events)
        prev = None
        for i, (t, _) in enumerate(events):
            if not np.isfinite(t) or t < 0:
                raise ParseError(f"event {i} has invalid time {t!r}")
            if prev is not None and t < prev:
                raise NonMonotonicTime(f"event {i} at {t} s precedes {prev} s")
            prev = t
        duration = float(self.source_duration_s)
        if events and duration < events[-1][0]:
            raise ParseError(
                f"event at {events[-1][0]} s lies beyond duration {duration} s")
        object.__setattr__(self, "events", events)
        object.__setattr__(self, "source_duration_s", duration)

    def times(self, label=None) -> np.ndarray:
        if label is None:
            return np.array([t for t, _ in self.events])
        label = Label(label)
        return np.array([t for t, lab in self.events if lab is label])

    def __len__(self):
        return len(self.events)


def load_wav(path) -> AudioBuffer:
    """Read a PCM or IEEE-float WAV file into a mono AudioBuffer.

    Integer samples are scaled by their full-scale value so that the most
    negative code maps to exactly -1.0; 8-bit data is unsigned with a 128
    offset. Stereo is averaged to mono. Float data is clipped to [-1, 1].
    """
    path = Path(path)
    if not path.is_file():
        raise NotFound(f"no such file: {path}")
    try:
        with open(path, "rb") as fh:
            magic = fh.read(12)
    except OSError as exc:
        raise AudioIOError(f"cannot read {path}: {exc}") from exc
    if len(magic) < 12 or magic[:4] not in (b"RIFF", b"RIFX", b"RF64") or magic[8:12] != b"WAVE":
        raise CorruptHeader(f"{path}: not a RIFF/WAVE file")

    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", wavfile.WavFileWarning)
            rate, data = wavfile.read(path)
    except ValueError as exc:
        msg = str(exc)
        if "Unknown wave file format" in msg or "not supported" in msg:
            raise UnsupportedFormat(f"{path}: {msg}") from exc
        raise CorruptHeader(f"{path}: {msg}") from exc
    except OSError as exc:
        raise AudioIOError(f"cannot read {path}: {exc}") from exc
    except Exception as exc:  # scipy surfaces truncated headers as assorted errors
        raise CorruptHeader(f"{path}: malformed WAV header ({exc!r})") from exc

    if data.ndim == 2 and data.shape[1] > 2:
        raise UnsupportedFormat(f"{path}: {data.shape[1]} channels (max 2)")

    if data.dtype == np.uint8:
        x = (data.astype(np.float64) - 128.0) / 128.0
    elif data.dtype in _INT_SCALE:
        x = data.astype(np.float64) / _INT_SCALE[data.dtype]
    elif data.dtype in (np.float32, np.float64):
        x = data.astype(np.float64)
        if not np.all(np.isfinite(x)):
            raise UnsupportedFormat(f"{path}: non-finite float samples")
        x = np.clip(x, -1.0, 1.0)
    else:
        raise UnsupportedFormat(f"{path}: unsupported sample type {data.dtype}")

    if x.ndim == 2:
        x = x.mean(axis=1)
    if len(x) == 0:
        raise CorruptHeader(f"{path}: no audio frames")
    return AudioBuffer(x, int(rate))


def write_wav(buf: AudioBuffer, path, bits: int = 16) -> None:
    """Write a mono WAV; ``bits`` is 16 (PCM) or 32 (IEEE float).

    16-bit output uses the same 32768 scale as ``load_wav`` so audio that
    originated as 16-bit PCM round-trips exactly.
    """
    x = np.clip(buf.samples, -1.0, 1.0)
    if bits == 16:
        data = np.clip(np.round(x * 32768.0), -32768, 32767).astype("<i2")
    elif bits == 32:
        data = x.astype("<f4")
    else:
        raise ValueError("bits must be 16 or 32")
    try:
        wavfile.write(path, buf.sample_rate, data)
    except OSError as exc:
        raise AudioIOError(f"cannot write {path}: {exc}") from exc


def _parse_time(text, lineno):
    try:
        value = float(text)
    except ValueError:
        raise ParseError(f"bad time value {text!r}", lineno) from None
    if not np.isfinite(value) or value < 0:
        raise ParseError(f"time must be finite and >= 0, got {text!r}", lineno)
    return value


def parse_annotations(path) -> AnnotationSet:
    path = Path(path)
    if not path.is_file():
        raise NotFound(f"no such file: {path}")
    try:
        text = path.read_text(encoding="utf-8")
    except UnicodeDecodeError as exc:
        raise ParseError(f"{path}: not UTF-8 ({exc})") from exc
    except OSError as exc:
        raise AudioIOError(f"cannot read {path}: {exc}") from exc

    duration = None
    events = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) != 2:
            raise ParseError(f"expected '<time>\\t<LABEL>', got {raw!r}", lineno)
        first, second = (p.strip() for p in parts)
        if first == "duration":
            if duration is not None or events:
                raise ParseError("duration header must come first and only once", lineno)
            duration = _parse_time(second, lineno)
            continue
        t = _parse_time(first, lineno)
        try:
            label = Label(second)
        except ValueError:
            raise UnknownLabel(f"unknown label {second!r}", lineno) from None
        if events and t < events[-1][0]:
            raise NonMonotonicTime(
                f"time {t} s precedes previous event at {events[-1][0]} s", lineno)
        if duration is not None and t > duration:
            raise ParseError(f"event at {t} s beyond duration {duration} s", lineno)
        events.append((t, label))

    if duration is None:
        duration = events[-1][0] if events else 0.0
    return AnnotationSet(tuple(events), duration)


def format_annotations(ann: AnnotationSet) -> str:
    lines = [f"duration\t{ann.source_duration_s:.3f}"]
    lines += [f"{t:.3f}\t{lab.value}" for t, lab in ann.events]
    return "\n".join(lines) + "\n"


def write_annotations(ann: AnnotationSet, path) -> None:
    """Serialize with millisecond timestamps (see module docstring)."""
    try:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(format_annotations(ann))
    except OSError as exc:
        raise AudioIOError(f"cannot write {path}: {exc}") from exc
