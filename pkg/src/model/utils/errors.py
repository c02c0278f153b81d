class MSANError(Exception):
    """Base class for every error raised by the captioning pipeline."""


class UsageError(MSANError, ValueError):
    """An operation was called with arguments that violate its preconditions."""


class DimensionError(UsageError):
    """Tensor shapes do not conform."""


class ConfigError(UsageError):
    """A configuration file or flag holds an invalid value."""


class EmptyCaptionError(UsageError):
    """A caption tokenizes to nothing."""


class InsufficientVocabularyError(UsageError):
    """Fewer eligible attribute words than requested."""


class ParseError(UsageError):
    """A dataset line could not be parsed.

    Attributes:
        line (int): 1-based line number of the offending record
    """

    def __init__(self, message: str, line: int):
        super().__init__(f"line {line}: {message}")
        self.line = line


class SchemaError(UsageError):
    """A dataset is well-formed JSON but violates the record schema."""


class NumericError(MSANError, ArithmeticError):
    """An operation produced NaN or Inf."""


class TrainingError(MSANError):
    """Training was aborted, e.g. by a non-finite loss on a named example."""
