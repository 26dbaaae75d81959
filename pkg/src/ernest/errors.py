"""Exception hierarchy shared by every stage of the pipeline."""


class ErnestError(Exception):
    """Base class for all pipeline errors."""

    exit_code = 1


class ConfigError(ErnestError, ValueError):
    exit_code = 2


class DataError(ErnestError):
    exit_code = 3


class ParseError(DataError):
    """A trial file could not be parsed.

    ``kind`` is one of ``header``, ``incomplete``, ``duplicate``, ``label``
    or ``format``.
    """

    def __init__(self, kind, message, path=None):
        self.kind = kind
        self.path = path
        where = f"{path}: " if path else ""
        super().__init__(f"{where}[{kind}] {message}")


class EmptyDataset(DataError):
    pass


class SchemaError(DataError):
    pass


class SplitError(DataError):
    pass


class LabelError(DataError):
    pass


class ShapeError(ErnestError, ValueError):
    pass


class CacheError(ErnestError):
    """Backward was called with an activation record that no longer matches."""


class MetricError(ErnestError, ValueError):
    pass


class FormatError(DataError):
    """A persisted artifact has a bad magic, version or checksum."""


class TrainingDiverged(ErnestError):
    exit_code = 4

    def __init__(self, epoch, where=None):
        self.epoch = epoch
        self.where = where
        loc = f" in {where}" if where is not None else ""
        super().__init__(f"non-finite loss at epoch {epoch}{loc}")
