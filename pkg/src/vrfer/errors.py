"""Exception hierarchy. Everything raised on bad input derives from VrferError."""


class VrferError(Exception):
    pass


class ShapeError(VrferError, ValueError):
    pass


class BatchTooSmallError(VrferError, ValueError):
    pass


class LabelError(VrferError, ValueError):
    pass


class TrainingError(VrferError, RuntimeError):
    pass


class DataError(VrferError, ValueError):
    pass


class RecordError(DataError):
    """A single malformed record in a JSONL file."""

    def __init__(self, path, line: int, field: str, message: str):
        self.path = str(path)
        self.line = line
        self.field = field
        super().__init__(f"{self.path}:{line}: field '{field}': {message}")


class FeaLengthError(RecordError):
    pass


class FeaRangeError(RecordError):
    pass


class UnknownLabelError(RecordError):
    pass


class UnknownSplitError(RecordError):
    pass


class DuplicateIdError(RecordError):
    pass


class SimplexError(RecordError):
    pass


class FeatureLengthError(RecordError):
    pass


class MissingClassError(DataError):
    pass


class PairingError(DataError):
    pass


class ModelFormatError(VrferError, ValueError):
    pass


class ModelVersionError(ModelFormatError):
    pass


class GridSpecError(VrferError, ValueError):
    pass
