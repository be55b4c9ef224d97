"""Exception and warning types shared across the package."""


class PhenokeyError(Exception):
    """Base class for all errors raised by this package."""


class ParseError(PhenokeyError):
    """Annotation document could not be parsed; message carries line/field context."""


class SchemaError(PhenokeyError):
    """Document parsed but violates the keypoint annotation schema."""


class IntegrityError(PhenokeyError):
    """Cross-record inconsistency, e.g. duplicate image ids."""


class DatasetValidationError(PhenokeyError):
    """A dataset failed invariant validation where validity is required."""

    def __init__(self, violations):
        self.violations = list(violations)
        lines = "; ".join(str(v) for v in self.violations[:5])
        more = "" if len(self.violations) <= 5 else f" (+{len(self.violations) - 5} more)"
        super().__init__(f"dataset failed validation: {lines}{more}")


class MissingKeypointError(PhenokeyError):
    """A measurement endpoint is not visible/annotated."""


class NoMeasurablePhenotypeError(PhenokeyError):
    """No phenotype related to a keypoint is measurable on the given sample."""


class DegeneratePoseError(PhenokeyError):
    """Visible keypoints span a zero range on some axis; normalization undefined."""


class DegenerateScaleError(PhenokeyError):
    """A per-sample scale factor is zero or not computable."""


class UndefinedMetricError(PhenokeyError):
    """Metric has an empty denominator (no evaluable terms)."""


class DegenerateFitError(PhenokeyError):
    """Least-squares fit is undefined (constant regressor)."""


class DivergenceError(PhenokeyError):
    """Training diverged; carries the trace recorded up to the failure."""

    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = trace


class PhenokeyWarning(UserWarning):
    """Base class for warnings emitted by this package."""


class DegenerateMeasurementWarning(PhenokeyWarning):
    """A phenotype measured zero length (coincident endpoints)."""


class GradNormFallbackWarning(PhenokeyWarning):
    """GradNorm disabled because an initial task loss is zero."""


class DegenerateFitWarning(PhenokeyWarning):
    """A regression line could not be fitted; output degraded gracefully."""
