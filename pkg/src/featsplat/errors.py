"""Exception types shared across the engine."""


class FeatsplatError(Exception):
    """Base class for all engine errors."""


# --- file parsing / IO ---

class TruncatedFile(FeatsplatError):
    pass


class MalformedRecord(FeatsplatError):
    pass


class UnsupportedCameraModel(FeatsplatError):
    pass


class NonFiniteValue(FeatsplatError):
    pass


class MissingFile(FeatsplatError):
    pass


class InconsistentReferences(FeatsplatError):
    pass


class DegenerateExtent(FeatsplatError):
    pass


class ChecksumMismatch(FeatsplatError):
    pass


class VersionUnsupported(FeatsplatError):
    pass


# --- scene / rendering ---

class EmptyPointCloud(FeatsplatError):
    pass


class NonFiniteParameter(FeatsplatError):
    def __init__(self, gaussian_index: int, field: str = ""):
        self.gaussian_index = gaussian_index
        self.field = field
        super().__init__(f"non-finite value in gaussian {gaussian_index} ({field})")


# --- shapes / dimensions ---

class ShapeMismatch(FeatsplatError):
    pass


class DimMismatch(FeatsplatError):
    pass


class TooSmall(FeatsplatError):
    pass


class DegenerateInput(FeatsplatError):
    pass


# --- training / evaluation ---

class NonFiniteLoss(FeatsplatError):
    pass


class MissingFeatureMap(FeatsplatError):
    pass


class MissingGroundTruth(FeatsplatError):
    pass


class PointOutOfBounds(FeatsplatError):
    pass
