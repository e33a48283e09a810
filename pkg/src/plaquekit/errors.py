"""Exception and warning types raised across the toolkit."""


class PlaquekitError(Exception):
    """Base class for all toolkit errors."""


# annotations / geometry

class MalformedXml(PlaquekitError):
    """Annotation text is not well-formed XML."""


class SchemaViolation(PlaquekitError):
    """Annotation XML parses but violates the documented schema."""


class OutOfBounds(PlaquekitError):
    """A coordinate or region falls outside the image extent."""


class DegeneratePolygon(PlaquekitError):
    """Polygon area below the degeneracy threshold."""


class UnknownLevel(PlaquekitError):
    """Pyramid level index not present in the WSI record."""


# tiling

class UnreadableImage(PlaquekitError):
    """Image container missing or corrupt."""


# augmentation

class BBoxTooLarge(PlaquekitError):
    """ROI bounding box cannot be placed at the requested corner inset."""


# stain

class InsufficientTissue(PlaquekitError):
    """Too few tissue pixels above the optical-density threshold."""


class DegenerateStains(PlaquekitError):
    """Estimated stain vectors are (near-)collinear."""


class MethodMismatch(PlaquekitError):
    """Source and reference stain profiles use different estimation methods."""


class NoConvergenceWarning(UserWarning):
    """Dictionary learning stopped at the iteration cap without meeting tolerance."""


# folds

class IndivisibleCohort(PlaquekitError):
    """Cohort size does not divide into the requested equal-size groups."""


class EmptyCohort(PlaquekitError):
    """No WSIs left after filtering."""


# metrics

class ShapeMismatch(PlaquekitError):
    """Buffers passed to a pixel-wise operation have different shapes."""


class EmptyInput(PlaquekitError):
    """Aggregation called with no records."""


class RaggedColumns(PlaquekitError):
    """Records have inconsistent column presence."""


class IoFailure(PlaquekitError):
    """File could not be written or read."""


# pipeline / cli

class ConfigInvalid(PlaquekitError):
    """Configuration fails validation; message carries the field path."""

    def __init__(self, field: str, message: str):
        self.field = field
        super().__init__(f"{field}: {message}")


class StageFailure(PlaquekitError):
    """A pipeline stage raised; wraps the underlying module error."""
