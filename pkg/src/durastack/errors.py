"""Exception types shared across the toolkit."""


class DurastackError(Exception):
    """Base class for all toolkit errors."""


class FieldError(DurastackError):
    """A single field failed validation. Carries (field, reason)."""

    def __init__(self, field: str, reason: str):
        super().__init__(f"{field}: {reason}")
        self.field = field
        self.reason = reason


class ValidationError(DurastackError):
    """A record failed validation; holds the per-field errors."""

    def __init__(self, errors: list[FieldError]):
        super().__init__("; ".join(str(e) for e in errors))
        self.errors = errors


class CsvError(DurastackError):
    """Fatal CSV-level problem (header, emptiness)."""


class SchemaMismatchError(DurastackError):
    """Encoded data does not match the expected encoding metadata."""


class ImputationError(DurastackError):
    """Imputation models cannot be fitted or applied."""


class LearnerError(DurastackError):
    """A base learner cannot be fitted or used for prediction."""


class SingularSystemError(LearnerError):
    """Unpenalized fit hit a singular system; caller must decide, we never
    regularize silently."""


class FoldError(DurastackError):
    """Fold construction or evaluation failed."""


class MetricError(DurastackError):
    """A metric is undefined for the given input (e.g. constant predictions)."""


class ArtifactError(DurastackError):
    """Locked-model artifact cannot be written or read."""


class ArtifactVersionError(ArtifactError):
    """Artifact format version does not match this code."""

    def __init__(self, found: int, expected: int):
        super().__init__(
            f"artifact format version {found} not supported (expected {expected})"
        )
        self.found = found
        self.expected = expected


class ConfigError(DurastackError):
    """Run configuration file is invalid."""


class ServiceError(DurastackError):
    """HTTP service cannot start (e.g. the port is already bound)."""


class StageFailure(DurastackError):
    """A pipeline stage failed; keeps the original error for classification."""

    def __init__(self, stage: str, original: Exception):
        super().__init__(f"{stage}: {original}")
        self.stage = stage
        self.original = original
