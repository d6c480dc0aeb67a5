"""Exception taxonomy for the benchmarking loop.

Every failure the harness can produce is a subclass of KbenchError, so callers
can catch the family with one clause.  Errors that describe *documents* carry a
``path`` (a dotted field path into the JSON) so validation reports can point at
the offending field; errors that describe *plugin execution* carry enough state
for the engine to classify the evaluation status.
"""
from __future__ import annotations


class KbenchError(Exception):
    """Base class for all errors raised by this package."""


# ---------------------------------------------------------------------------
# Schema / document errors
# ---------------------------------------------------------------------------

class SchemaError(KbenchError):
    """A document violates the trace schema.

    ``path`` is a dotted/indexed field path ("axes.M.value", "inputs[2].dtype")
    identifying the field, which validation reports surface verbatim.
    """

    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path
        self.reason = message


class ConstraintGrammarError(SchemaError):
    """A constraint expression fails to tokenize or parse."""

    def __init__(self, expr: str, message: str, position: int | None = None):
        at = f" at position {position}" if position is not None else ""
        super().__init__("constraints", f"{expr!r}: {message}{at}")
        self.expr = expr
        self.position = position


class UnboundName(KbenchError):
    """A constraint references a name that is neither a known axis nor tensor."""


class NonIntegerTensorIndexed(KbenchError):
    """A constraint indexes a tensor whose dtype is not an integer type."""


class IndexOutOfRange(KbenchError):
    """A constraint indexes a tensor outside its bounds (or a non-vector)."""


class ConstraintViolated(KbenchError):
    """A workload binding falsifies one of the definition's constraints."""

    def __init__(self, expr: str, detail: str = ""):
        suffix = f" ({detail})" if detail else ""
        super().__init__(f"constraint violated: {expr}{suffix}")
        self.expr = expr


class MissingAxis(KbenchError):
    """A workload omits a variable axis the definition requires."""


class ConstAxisOverridden(KbenchError):
    """A workload tries to assign a value to a const axis."""


# ---------------------------------------------------------------------------
# Tensor / archive errors
# ---------------------------------------------------------------------------

class DTypeMismatch(KbenchError):
    """A tensor's dtype differs from what the declaration requires."""


class ShapeMismatch(KbenchError):
    """A tensor's shape differs from what the declaration requires."""


class ArchiveError(KbenchError):
    """Base for tensor-archive container failures."""


class CorruptHeader(ArchiveError):
    """The archive header is unreadable: bad length, bad JSON, bad offsets."""


class TruncatedPayload(ArchiveError):
    """The archive byte buffer ends before the header-declared payload does."""


class ArchiveMissingKey(ArchiveError):
    """A requested tensor key is not present in the archive."""


# ---------------------------------------------------------------------------
# Validation errors
# ---------------------------------------------------------------------------

class UnsupportedOpType(KbenchError):
    """No built-in reference evaluator exists for this op type."""


class SamplerCrashed(KbenchError):
    """The sampler under stochastic validation raised instead of sampling."""


class LengthMismatch(KbenchError):
    """Two distributions compared for total-variation distance differ in length."""


class DegenerateDistribution(KbenchError):
    """A probability vector has no mass (all zeros) or is otherwise unusable."""


# ---------------------------------------------------------------------------
# Plugin / engine errors
# ---------------------------------------------------------------------------

class FrameError(KbenchError):
    """A wire frame violates the protocol (bad length, type, or payload)."""


class PluginError(KbenchError):
    """A plugin process failed.  ``kind`` classifies the evaluation status:

    - "compile": the process never became ready (spawn/handshake failure)
    - "runtime": the process crashed or reported an error mid-run
    - "timeout": the process exceeded its deadline and was killed
    - "protocol": the process spoke garbage on the wire
    """

    def __init__(self, kind: str, message: str, log: str = "", dead: bool = False):
        super().__init__(f"[{kind}] {message}")
        self.kind = kind
        self.log = log
        self.dead = dead  # the plugin process is gone (respawn-and-retry candidate)


class WorkerDied(KbenchError):
    """The worker executing a job died (infrastructure fault, not the
    solution's fault).  The scheduler retries the job elsewhere."""

    def __init__(self, worker_id: str, message: str = ""):
        super().__init__(f"worker {worker_id} died{': ' + message if message else ''}")
        self.worker_id = worker_id


class SchedulerStalled(KbenchError):
    """No live worker remains and the spare pool is exhausted."""


class NoPassingSolution(KbenchError):
    """A generate-evaluate loop exhausted its budget with no passing candidate.

    ``digest`` carries the per-iteration failure summaries that were fed back
    to the provider, so callers can inspect why every candidate failed.
    """

    def __init__(self, message: str, digest: list):
        super().__init__(message)
        self.digest = digest


class EmptyEvalSet(KbenchError):
    """A report was requested over a dataset with no evaluation records."""


class EmptyDataset(KbenchError):
    """An operation needing definitions or workloads got a dataset with none."""
