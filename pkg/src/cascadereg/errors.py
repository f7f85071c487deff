"""Exception hierarchy shared by all modules."""


class RegistrationError(Exception):
    """Base class for every error raised by this package."""


class VolumeIOError(RegistrationError):
    pass


class UnreadableFileError(VolumeIOError):
    pass


class UnsupportedDataTypeError(VolumeIOError):
    pass


class SizeMismatchError(VolumeIOError):
    pass


class GridMismatchError(RegistrationError, ValueError):
    """Two arrays that must share a grid do not."""


class DegenerateClusteringError(RegistrationError):
    pass


class EmptySegmentationError(RegistrationError):
    pass


class DivergenceError(RegistrationError):
    """A numerical iteration produced non-finite or runaway values."""


class UndefinedCorrelationError(RegistrationError):
    pass


class LandmarkError(RegistrationError):
    pass


class WeightShapeError(RegistrationError):
    pass
