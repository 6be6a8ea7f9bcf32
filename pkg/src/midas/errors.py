"""Exception hierarchy shared across the package."""


class MidasError(Exception):
    """Base class for all errors raised by this package."""


class InvalidInputError(MidasError, ValueError):
    """An argument violates a documented precondition."""


class AmbiguousLabelError(MidasError):
    """A vote vector or soft label has no strictly unique maximum."""


class ShapeMismatchError(MidasError, ValueError):
    """Two operands that must share a shape do not."""


class DegenerateMixError(MidasError):
    """The virtual-label reparameterization hit its vanishing denominator."""


class EmptyDatasetError(MidasError, ValueError):
    """An operation that needs at least one sample received none."""


class EmptyClearGroupError(MidasError):
    """No sample exceeds the ambiguity threshold."""


class TrainingDivergedError(MidasError):
    """Training produced a non-finite loss or non-finite parameters."""


class ManifestError(MidasError):
    """A dataset manifest or clip file failed to load.

    ``clip_id`` names the offending entry when one is identifiable.
    """

    def __init__(self, message: str, clip_id: str | None = None):
        self.clip_id = clip_id
        if clip_id is not None:
            message = f"{message} (clip_id={clip_id!r})"
        super().__init__(message)


class MissingClipFileError(ManifestError):
    """A clip file referenced by the manifest does not exist."""


class MalformedRecordError(ManifestError):
    """A manifest record or clip binary is structurally invalid."""


class VoteLabelMismatchError(ManifestError):
    """A stored label disagrees with the label derived from the votes."""


class TensorShapeError(ManifestError):
    """A clip's tensor dimensions are inconsistent with the rest of the dataset."""
