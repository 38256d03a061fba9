"""Exception hierarchy shared across the package.

The CLI maps these onto process exit codes (see ``topicrec.cli``), so new
error types should subclass one of the four coarse families below.
"""


class TopicRecError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(TopicRecError):
    """Invalid or inconsistent run configuration."""


class ParseError(TopicRecError):
    """Malformed input file content.

    Carries the offending line number when one is known.
    """

    def __init__(self, message, line=None, path=None):
        self.line = line
        self.path = path
        prefix = ""
        if path is not None:
            prefix += f"{path}: "
        if line is not None:
            prefix += f"line {line}: "
        super().__init__(prefix + message)


class CorpusError(TopicRecError):
    """Corpus-level inconsistency (duplicate ids, unusable documents, ...)."""


class DegenerateInputError(TopicRecError):
    """Input that leaves an operation undefined (all-masked softmax, empty corpus)."""


class ColdUserError(DegenerateInputError):
    """A user encoder was asked to summarize an empty click history."""


class DimensionError(TopicRecError):
    """Operand shapes are incompatible. Message names both shapes."""


class NumericError(TopicRecError):
    """Non-finite values where finite ones are required."""


class CompatibilityError(TopicRecError):
    """Checkpoint and corpus/config do not belong together."""


class VariantUnsupportedError(CompatibilityError):
    """The requested operation is undefined for this model variant."""
