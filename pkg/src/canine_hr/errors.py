"""Exception types raised across the package.

Each error maps onto one of the CLI exit classes (usage, I/O, data format)
through its ``exit_code`` attribute.
"""


class CanineHRError(Exception):
    exit_code = 3


# --- audio / annotation I/O ---------------------------------------------

class AudioIOError(CanineHRError):
    exit_code = 2


class NotFound(AudioIOError, FileNotFoundError):
    pass


class UnsupportedFormat(CanineHRError):
    pass


class CorruptHeader(CanineHRError):
    pass


class ParseError(CanineHRError):
    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class UnknownLabel(ParseError):
    pass


class NonMonotonicTime(ParseError):
    pass


# --- signal processing --------------------------------------------------

class InvalidRate(CanineHRError, ValueError):
    pass


class InvalidBand(CanineHRError, ValueError):
    pass


class EmptyInput(CanineHRError, ValueError):
    pass


class RecordingTooShort(CanineHRError, ValueError):
    pass


class InvalidWindow(CanineHRError, ValueError):
    pass


class WindowTooShort(CanineHRError, ValueError):
    pass


class NoPeriodEstimate(CanineHRError, ValueError):
    pass


class TooFewBeats(CanineHRError, ValueError):
    pass


# --- evaluation / synthesis / config ------------------------------------

class InsufficientS1Events(CanineHRError, ValueError):
    pass


class InvalidGroundTruth(CanineHRError, ValueError):
    pass


class EmptyList(CanineHRError, ValueError):
    pass


class InvalidSpec(CanineHRError, ValueError):
    exit_code = 1


class ConfigError(CanineHRError, ValueError):
    exit_code = 1


class MissingPair(CanineHRError):
    pass
