"""Exception hierarchy for the pipeline.

Every error carries the process exit code the CLI maps it to:
1 for validation problems, 2 for stage failures, 3 for unreachable
providers.
"""

from __future__ import annotations


class DerecError(Exception):
    """Base class for all pipeline errors."""

    exit_code = 2


class ValidationError(DerecError):
    """Bad configuration or malformed input, detected before work starts."""

    exit_code = 1


class MalformedRecordError(ValidationError):
    """A dataset record failed validation; reports line number and field."""

    def __init__(self, line_no: int, field: str, message: str):
        super().__init__(f"line {line_no}, field {field!r}: {message}")
        self.line_no = line_no
        self.field = field


class DuplicateClaimIdError(ValidationError):
    def __init__(self, claim_id: str, line_no: int | None = None):
        where = f" (line {line_no})" if line_no is not None else ""
        super().__init__(f"duplicate claim id {claim_id!r}{where}")
        self.claim_id = claim_id


class UnknownLabelError(ValidationError):
    def __init__(self, label: str, scheme_name: str, allowed):
        super().__init__(
            f"label {label!r} is not in the {scheme_name}-class scheme "
            f"{sorted(allowed)}"
        )
        self.label = label


class UnknownSplitError(ValidationError):
    def __init__(self, split: str):
        super().__init__(f"unknown split {split!r}; expected train, val or test")
        self.split = split


class StageError(DerecError):
    """A pipeline stage failed. Carries the stage name and, when the
    failure happened mid-profile, the partial runtime report."""

    exit_code = 2

    def __init__(self, stage: str, cause: BaseException, partial_report=None):
        super().__init__(f"stage {stage!r} failed: {cause}")
        self.stage = stage
        self.cause = cause
        self.partial_report = partial_report


class ProviderError(DerecError):
    """A remote provider misbehaved in a non-retryable way."""

    exit_code = 3


class ProviderUnreachableError(ProviderError):
    """Retries exhausted talking to a remote provider."""


class DimensionMismatchError(DerecError):
    def __init__(self, expected: int, got: int, context: str = ""):
        suffix = f" ({context})" if context else ""
        super().__init__(f"expected dimension {expected}, got {got}{suffix}")
        self.expected = expected
        self.got = got


class ZeroVectorError(DerecError):
    def __init__(self, name: str = "vector"):
        super().__init__(f"cannot normalize zero-norm {name}")
        self.name = name


class NotNormalizedError(DerecError):
    def __init__(self, name: str, norm: float):
        super().__init__(f"{name} is not unit-normalized (L2 norm {norm:.6g})")
        self.name = name
        self.norm = norm


class DuplicateKeyError(DerecError):
    def __init__(self, key: str):
        super().__init__(f"duplicate index key {key!r}")
        self.key = key


class MissingEmbeddingError(DerecError):
    def __init__(self, address: str):
        super().__init__(f"no embedding stored for address {address!r}")
        self.address = address


class FileFormatError(DerecError):
    """Bad magic bytes, unsupported version, truncation or checksum failure."""
