"""Exception types shared across the scrubbing pipeline."""


class RoarError(Exception):
    """Base class for all pipeline errors."""


class ParseError(RoarError):
    """Annotation document could not be decoded; carries a byte offset."""

    def __init__(self, message: str, offset: int | None = None):
        super().__init__(message if offset is None else f"{message} (byte offset {offset})")
        self.offset = offset


class DatasetValidationError(RoarError):
    """A dataset record violates an invariant; names the offending id."""


class DimensionMismatchError(RoarError):
    """Image/mask operands do not share dimensions."""


class BackendError(RoarError):
    """Remote backend failed after exhausting retries."""

    def __init__(self, message: str, request_id: str | None = None):
        super().__init__(f"{message} [request_id={request_id}]" if request_id else message)
        self.request_id = request_id


class ProtocolViolationError(RoarError):
    """Backend response does not honor the wire contract."""


class UnsupportedMetricError(RoarError):
    """Metric has no local implementation and no endpoint is configured."""


class UndefinedMetricError(RoarError):
    """Metric denominator is empty; the value does not exist."""


class MetricNotApplicableError(RoarError):
    """Metric is not defined for the requested scrub mode."""
