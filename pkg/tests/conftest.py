import struct
import wave

import numpy as np
import pytest

from canine_hr.synth import SynthSpec, synth_recording

ACCEPTANCE_LINES = []


def write_pcm_reference(path, frames, rate, sampwidth, channels=1):
    """Write integer PCM with the stdlib ``wave`` module (independent of scipy)."""
    frames = np.asarray(frames, dtype=np.int64).reshape(-1)
    if sampwidth == 1:
        payload = bytes(int(v) for v in frames)
    elif sampwidth == 2:
        payload = struct.pack(f"<{len(frames)}h", *frames)
    elif sampwidth == 3:
        payload = b"".join(struct.pack("<i", int(v))[:3] for v in frames)
    elif sampwidth == 4:
        payload = struct.pack(f"<{len(frames)}i", *frames)
    else:
        raise ValueError(sampwidth)
    with wave.open(str(path), "wb") as w:
        w.setnchannels(channels)
        w.setsampwidth(sampwidth)
        w.setframerate(rate)
        w.writeframes(payload)


@pytest.fixture(scope="session")
def clean_120():
    """60 s, 120 bpm, 20 dB SNR synthetic recording."""
    return synth_recording(SynthSpec(duration_s=60, hr_bpm=120, snr_db=20, seed=1))


@pytest.fixture(scope="session")
def clean_90():
    return synth_recording(SynthSpec(duration_s=60, hr_bpm=90, snr_db=float("inf"), seed=2))


@pytest.fixture
def acceptance():
    """Record one pass/fail line per acceptance criterion, then assert."""

    def check(criterion, ok, detail):
        ACCEPTANCE_LINES.append(f"[{'PASS' if ok else 'FAIL'}] criterion {criterion}: {detail}")
        assert ok, f"criterion {criterion} failed: {detail}"

    return check


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
