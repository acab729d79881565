"""Exception hierarchy.

Every error carries a short machine-greppable ``code`` that the CLI prints
on failure, so scripted callers can branch on the error class without
parsing prose.
"""


class StarError(Exception):
    code = "internal-error"


class MalformedRecordError(StarError):
    code = "malformed-record"


class RecordParseError(StarError):
    code = "parse-error"


class TimestampOrderError(StarError):
    code = "timestamp-order"


class DimensionError(StarError):
    code = "dimension-mismatch"


class EmptyInputError(StarError):
    code = "empty-input"


class FilterDesignError(StarError):
    code = "design-error"


class DomainError(StarError):
    code = "domain-error"


class NumericInputError(StarError):
    code = "numeric-error"


class IndexRangeError(StarError):
    code = "index-range"


class StaleTraceError(StarError):
    code = "stale-trace"


class DivergenceError(StarError):
    code = "divergence"


class UncalibratedError(StarError):
    code = "uncalibrated-network"


class HalfRangeError(StarError):
    code = "fp16-range"


class ConfigError(StarError):
    code = "config-error"


class ModelNotFoundError(StarError):
    code = "model-not-found"


class DataNotFoundError(StarError):
    code = "data-not-found"


class MeasurementError(StarError):
    code = "measurement-error"


class WeightsFormatError(StarError):
    code = "weights-format"
