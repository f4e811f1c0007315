"""Exception hierarchy shared across the package."""


class LexMTLError(Exception):
    """Base class for all package errors."""


class DimensionError(LexMTLError, ValueError):
    pass


class ShapeError(LexMTLError, ValueError):
    pass


class VocabularyError(LexMTLError, ValueError):
    pass


class DegenerateBatchError(LexMTLError, ValueError):
    pass


class ConfigError(LexMTLError, ValueError):
    pass


class EmptyInputError(LexMTLError, ValueError):
    pass


class TaskRegistryError(LexMTLError, KeyError):
    def __str__(self):
        return str(self.args[0]) if self.args else ""


class AlignmentError(LexMTLError, ValueError):
    pass


class ParseError(LexMTLError, ValueError):
    pass


class UndefinedMetricError(LexMTLError, ValueError):
    pass


class MergeError(LexMTLError, ValueError):
    pass


class CheckpointError(LexMTLError):
    pass


class CheckpointFormatError(CheckpointError):
    pass


class CheckpointVersionError(CheckpointError):
    pass


class CheckpointTruncatedError(CheckpointError):
    pass


class VocabHashMismatchError(CheckpointError):
    pass
