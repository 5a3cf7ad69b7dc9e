"""Exception hierarchy shared across the package."""


class SleepStageError(Exception):
    """Base class for every error this package raises deliberately."""


# --- EDF ingestion ---

class TruncatedFile(SleepStageError):
    """Byte stream ends before the declared header or data records do."""


class MalformedHeader(SleepStageError):
    """A fixed-width header field holds something it must not."""


class SignalNotFound(SleepStageError):
    """Requested channel label is absent from the recording."""


class DegenerateCalibration(SleepStageError):
    """digital_min == digital_max, so the affine map is undefined."""


class OverlappingAnnotations(SleepStageError):
    """Hypnogram intervals overlap or run backwards."""


class UnknownStageString(SleepStageError):
    """Annotation text is not one of the scored-stage vocabulary."""


class SampleRateMismatch(SleepStageError):
    """30 s of signal is not a whole number of samples."""


# --- preprocessing ---

class EmptySignal(SleepStageError):
    pass


class DegenerateSignal(SleepStageError):
    """5th and 95th percentiles coincide; normalization undefined."""


# --- tensor engine ---

class ShapeMismatch(SleepStageError):
    pass


class NegativeThreshold(SleepStageError):
    """Soft threshold requires tau >= 0 elementwise."""


class NonScalarLoss(SleepStageError):
    """backward() only starts from a single-element tensor."""


class GraphConsumed(SleepStageError):
    """backward() was already run on this graph."""


# --- training ---

class ZeroProportion(SleepStageError):
    pass


class MissingGradient(SleepStageError):
    """Optimizer stepped over a parameter whose grad was never populated."""


class EmptySplit(SleepStageError):
    pass


# --- evaluation ---

class UndefinedMetric(SleepStageError):
    """Metric denominator is zero (reported as absent, never as 0)."""


class TooFewSamples(SleepStageError):
    pass


class TooFewSubjects(SleepStageError):
    pass


class SingleClassPresent(SleepStageError):
    """ROC/PR curve requested for a class with no positive examples."""


# --- CLI / fetch ---

class ChecksumMismatch(SleepStageError):
    pass


class NetworkFailure(SleepStageError):
    pass


class ConfigMismatch(SleepStageError):
    """Checkpoint and requested run disagree (channel, shapes, ...)."""


class ConfigError(SleepStageError):
    """Run configuration file or overrides failed validation."""
