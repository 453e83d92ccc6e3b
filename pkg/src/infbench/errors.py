"""Exception hierarchy for the harness.

Every failure the library raises deliberately derives from HarnessError so
callers (and the CLI) can distinguish harness faults from programming bugs.
"""


class HarnessError(Exception):
    """Base class for all errors raised by this package."""


# --- manifest ---------------------------------------------------------------

class ManifestSyntaxError(HarnessError):
    """The manifest document is not well-formed."""


class ValidationError(HarnessError):
    """The manifest parsed but violates a structural rule."""


class ConstraintParseError(HarnessError):
    """Unsupported framework version constraint syntax."""


class ChecksumFormatError(HarnessError):
    """An expected checksum string is not a 64-character hex digest."""


class ChecksumMismatch(HarnessError):
    """Artifact bytes do not hash to the declared checksum."""


class FetchError(HarnessError):
    """A remote model source could not be retrieved."""


# --- tensor / frame protocol ------------------------------------------------

class RankError(HarnessError):
    """Tensor rank does not fit the requested operation."""


class TruncatedFrame(HarnessError):
    """Byte stream ended before a complete frame was read."""


class UnknownDtypeCode(HarnessError):
    """Frame carries a dtype code outside the known range."""


class UnknownHookId(HarnessError):
    """Frame carries a hook id outside the known range."""


class LengthMismatch(HarnessError):
    """Declared and actual sizes disagree (frame payloads, paired lists)."""


# --- processor --------------------------------------------------------------

class PipelineStateError(HarnessError):
    """Pipeline lifecycle misuse (double start, hook before start, ...)."""


class WorkerLaunchError(HarnessError):
    """External worker process could not be started."""


class WorkerCrashed(HarnessError):
    """External worker died or timed out mid-exchange."""


class ProtocolError(HarnessError):
    """External worker replied with a malformed or unexpected frame."""


class HookContractError(HarnessError):
    """Tensor data supplied to a hook that must not receive any (or vice versa)."""


class SizeMismatch(HarnessError):
    """Raw image byte count disagrees with the declared dimensions."""


class RangeError(HarnessError):
    """A processing step parameter is outside its valid range."""


class DegenerateCrop(HarnessError):
    """Center crop would produce a zero-sized image."""


class ShapeMismatch(HarnessError):
    """Per-channel parameters do not match the tensor's channel count."""


class ZeroRescale(HarnessError):
    """Normalization rescale divisor is zero."""


# --- sut / dataset ----------------------------------------------------------

class IndexOutOfRange(HarnessError):
    """Sample index beyond the dataset bounds."""


class NotLoaded(HarnessError):
    """Query issued for a sample index that is not preloaded."""


class QueryFailed(HarnessError):
    """Backend or processing failure during a query, annotated with its id."""

    def __init__(self, query_id: int, cause: BaseException):
        super().__init__(f"query {query_id} failed: {cause}")
        self.query_id = query_id
        self.cause = cause


# --- loadgen / metrics ------------------------------------------------------

class ConfigError(HarnessError):
    """Scenario configuration is inconsistent or incomplete."""


class EmptyInput(HarnessError):
    """An aggregate was requested over zero values."""


class EmptyRun(HarnessError):
    """A report was requested for a run that produced no records."""


class ReportParseError(HarnessError):
    """A serialized report does not match the report schema."""


# --- trace ------------------------------------------------------------------

class LevelDisabled(HarnessError):
    """Span recorded at a level deeper than the run enabled."""


class WorkloadMismatch(HarnessError):
    """Leveled runs disagree on the span sequence of a shared level."""
