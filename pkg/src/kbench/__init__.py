"""kbench: a desk-scale kernel benchmarking loop.

Trace schema for kernel tasks, correctness validators (deterministic,
matched-ratio, stochastic TVD), a benchmarking engine over out-of-process
plugins, Hungarian-scheduled multi-worker evaluation, fast_p leaderboard
metrics, and a dispatch index routing operator calls to the fastest
validated implementation.
"""
from .dtypes import DType, parse_dtype, quantize as quantize_array
from .tensor import Tensor, bitwise_equal
from .archive import read_archive, write_archive, load_archive_file, save_archive_file
from .trace import (
    AxisSpec,
    BoundShapes,
    DefinitionRecord,
    EvalStatus,
    EvaluationRecord,
    InputSpec,
    OpType,
    SolutionRecord,
    TensorSpec,
    TraceRecord,
    WorkloadRecord,
    bind_workload,
    definitions_equivalent,
    parse_trace,
    serialize_trace,
)
from .dataset import Dataset, Violation
from .materialize import materialize_input

__version__ = "0.1.0"

__all__ = [
    "AxisSpec",
    "BoundShapes",
    "Dataset",
    "DefinitionRecord",
    "DType",
    "EvalStatus",
    "EvaluationRecord",
    "InputSpec",
    "OpType",
    "SolutionRecord",
    "Tensor",
    "TensorSpec",
    "TraceRecord",
    "Violation",
    "WorkloadRecord",
    "bind_workload",
    "bitwise_equal",
    "definitions_equivalent",
    "load_archive_file",
    "materialize_input",
    "parse_dtype",
    "parse_trace",
    "quantize_array",
    "read_archive",
    "save_archive_file",
    "serialize_trace",
    "write_archive",
    "__version__",
]
