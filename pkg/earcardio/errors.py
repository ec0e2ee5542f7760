"""Domain exceptions raised across the pipeline."""

from __future__ import annotations


class CardioError(ValueError):
    """Base class for data errors; the CLI maps these to exit code 2."""


class EmptySignal(CardioError):
    pass


class NonPositiveRate(CardioError):
    pass


class SignalTooShort(CardioError):
    pass


class InvalidBand(CardioError):
    pass


class RecordingNotFound(CardioError, FileNotFoundError):
    pass


class UnsupportedEncoding(CardioError):
    pass


class CorruptHeader(CardioError):
    pass


class SchemaMismatch(CardioError):
    pass


class NonMonotonicTimestamps(CardioError):
    pass


class TapsNotFound(CardioError):
    pass


class InvalidConfig(CardioError):
    pass


class WrongWindowLength(CardioError):
    pass


class SingleClassDataset(CardioError):
    pass


class InconsistentFeatureLength(CardioError):
    pass


class TooFewSamples(CardioError):
    pass


class NoPeaksFound(CardioError):
    pass


class NoAnchors(CardioError):
    pass


class NoChannels(CardioError):
    pass


class NoLeftPeak(CardioError):
    pass


class NoRightPeak(CardioError):
    pass


class TooFewCycles(CardioError):
    pass


class IncompatibleCycles(CardioError):
    pass


class DegenerateTarget(CardioError):
    pass


class ZeroOutput(CardioError):
    pass


class ShapeMismatch(CardioError):
    pass


class EmptyDataset(CardioError):
    pass


class NonFiniteLoss(CardioError):
    pass


class ConstantInput(CardioError):
    pass


class LengthMismatch(CardioError):
    pass


class TooFewSets(CardioError):
    pass


class EmptyInput(CardioError):
    pass
