"""Typed model of the trace schema: Definition, Workload, Solution, Evaluation.

A *trace document* is UTF-8 JSON.  Three document shapes exist in a dataset
directory and `parse_trace` tells them apart structurally:

- a **definition** (has ``op_type``): the contract for a kernel task — axes
  (const/var), constraints, I/O tensor specs, and reference semantics text;
- a **solution** (has ``sources``): a candidate implementation — language,
  entry point ``file::symbol``, and its source files;
- a **trace** (has ``workload``): a self-contained bundle referencing a
  definition (by name or inline), optionally a solution, a workload binding
  var axes and input materialization rules, and optionally an evaluation.

Canonical serialization sorts keys at every level *except* definition
inputs/outputs, whose declaration order is semantic (it is the entry point's
argument order).  Floats print as their shortest round-trip decimal, so values
like a speedup factor survive a parse→serialize cycle exactly.
"""
from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass, field

from .constraints import (
    ConstraintExpr,
    check_constraint,
    needs_tensors,
    parse_constraint,
    references,
)
from .dtypes import DType, parse_dtype
from .errors import ConstAxisOverridden, DTypeMismatch, MissingAxis, SchemaError


class OpType(enum.Enum):
    GEMM = "gemm"
    FUSED_ADD_RMSNORM = "fused_add_rmsnorm"
    GQA_PAGED_DECODE = "gqa_paged_decode"
    SAMPLING_TOP_K_TOP_P = "sampling_top_k_top_p"


# Older dumps abbreviate the paged-decode op name; accept and canonicalize.
_OP_ALIASES = {"gqa_paged": OpType.GQA_PAGED_DECODE}


class EvalStatus(enum.Enum):
    PASSED = "PASSED"
    FAILED_COMPILE = "FAILED_COMPILE"
    FAILED_RUNTIME = "FAILED_RUNTIME"
    FAILED_CORRECTNESS = "FAILED_CORRECTNESS"
    TIMEOUT = "TIMEOUT"


# ---------------------------------------------------------------------------
# Records
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class AxisSpec:
    kind: str  # "const" | "var"
    value: int | None = None
    description: str = ""


@dataclass(frozen=True)
class TensorSpec:
    shape: tuple[str, ...]  # axis names; () for a scalar
    dtype: DType
    description: str = ""


@dataclass(frozen=True)
class DefinitionRecord:
    name: str
    op_type: OpType
    axes: dict[str, AxisSpec]
    inputs: dict[str, TensorSpec]
    outputs: dict[str, TensorSpec]
    reference: str
    description: str = ""
    tags: tuple[str, ...] = ()
    constraints: tuple[ConstraintExpr, ...] = ()

    def var_axes(self) -> list[str]:
        return [n for n, a in self.axes.items() if a.kind == "var"]

    def const_axes(self) -> dict[str, int]:
        return {n: a.value for n, a in self.axes.items() if a.kind == "const"}


@dataclass(frozen=True)
class InputSpec:
    kind: str  # "random" | "archive" | "scalar"
    seed: int | None = None
    path: str | None = None
    tensor_key: str | None = None
    value: float | None = None


@dataclass(frozen=True)
class WorkloadRecord:
    uuid: str
    axes: dict[str, int]
    inputs: dict[str, InputSpec]


@dataclass(frozen=True)
class SourceFile:
    path: str
    content: str


@dataclass(frozen=True)
class SolutionRecord:
    name: str
    definition: str
    author: str
    language: str
    entry_point: str
    sources: tuple[SourceFile, ...]
    target_hardware: tuple[str, ...] = ()
    dependencies: tuple[str, ...] = ()
    description: str = ""

    @property
    def entry_file(self) -> str:
        return self.entry_point.split("::", 1)[0]

    @property
    def entry_symbol(self) -> str:
        return self.entry_point.split("::", 1)[1]


@dataclass(frozen=True)
class Correctness:
    max_relative_error: float
    max_absolute_error: float
    extra: dict | None = None


@dataclass(frozen=True)
class Performance:
    latency_ms: float
    reference_latency_ms: float
    speedup_factor: float


@dataclass(frozen=True)
class Environment:
    hardware: str
    libs: dict[str, str] = field(default_factory=dict)


@dataclass(frozen=True)
class EvaluationRecord:
    status: EvalStatus
    environment: Environment
    timestamp: str
    log: str = ""
    correctness: Correctness | None = None
    performance: Performance | None = None


@dataclass(frozen=True)
class TraceRecord:
    definition: "str | DefinitionRecord"
    workload: WorkloadRecord
    solution: "str | SolutionRecord | None" = None
    evaluation: EvaluationRecord | None = None

    @property
    def definition_name(self) -> str:
        return self.definition if isinstance(self.definition, str) else self.definition.name

    @property
    def solution_name(self) -> str | None:
        if self.solution is None or isinstance(self.solution, str):
            return self.solution
        return self.solution.name


Record = "DefinitionRecord | SolutionRecord | TraceRecord"


# ---------------------------------------------------------------------------
# Parsing
# ---------------------------------------------------------------------------


def _get(obj: dict, key: str, path: str, kind: type | tuple, required: bool = True, default=None):
    if key not in obj or obj[key] is None:
        if required:
            raise SchemaError(_join(path, key), "missing required field")
        return default
    value = obj[key]
    if not isinstance(value, kind) or (isinstance(value, bool) and kind in (int, (int,))):
        want = kind.__name__ if isinstance(kind, type) else "/".join(k.__name__ for k in kind)
        raise SchemaError(_join(path, key), f"expected {want}, got {type(value).__name__}")
    return value


def _join(path: str, key: str) -> str:
    return f"{path}.{key}" if path else key


def _int_value(value, path: str) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise SchemaError(path, f"expected integer, got {type(value).__name__}")
    return value


def _str_list(obj: dict, key: str, path: str, required: bool = False) -> tuple[str, ...]:
    raw = _get(obj, key, path, list, required=required, default=[])
    out = []
    for i, item in enumerate(raw):
        if not isinstance(item, str):
            raise SchemaError(f"{_join(path, key)}[{i}]", "expected string")
        out.append(item)
    return tuple(out)


def parse_definition(obj: dict, path: str = "") -> DefinitionRecord:
    name = _get(obj, "name", path, str)
    op_raw = _get(obj, "op_type", path, str)
    try:
        op_type = _OP_ALIASES.get(op_raw) or OpType(op_raw)
    except ValueError:
        known = sorted([o.value for o in OpType] + list(_OP_ALIASES))
        raise SchemaError(_join(path, "op_type"), f"unknown op_type {op_raw!r} (known: {known})") from None

    axes: dict[str, AxisSpec] = {}
    for axis_name, spec in _get(obj, "axes", path, dict).items():
        axis_path = f"{_join(path, 'axes')}.{axis_name}"
        if not isinstance(spec, dict):
            raise SchemaError(axis_path, "expected object")
        kind = _get(spec, "type", axis_path, str)
        if kind not in ("const", "var"):
            raise SchemaError(_join(axis_path, "type"), f"expected 'const' or 'var', got {kind!r}")
        value = spec.get("value")
        if kind == "const":
            if value is None:
                raise SchemaError(_join(axis_path, "value"), "const axis requires a value")
            value = _int_value(value, _join(axis_path, "value"))
            if value < 0:
                raise SchemaError(_join(axis_path, "value"), "axis value must be non-negative")
        elif value is not None:
            raise SchemaError(_join(axis_path, "value"), "var axis must not carry a value")
        axes[axis_name] = AxisSpec(kind, value, _get(spec, "description", axis_path, str, required=False, default=""))

    def parse_io(key: str) -> dict[str, TensorSpec]:
        out: dict[str, TensorSpec] = {}
        for tensor_name, spec in _get(obj, key, path, dict).items():
            tpath = f"{_join(path, key)}.{tensor_name}"
            if not isinstance(spec, dict):
                raise SchemaError(tpath, "expected object")
            raw_shape = spec.get("shape")
            if raw_shape is None:
                shape: tuple[str, ...] = ()
            elif isinstance(raw_shape, list) and all(isinstance(a, str) for a in raw_shape):
                shape = tuple(raw_shape)
            else:
                raise SchemaError(_join(tpath, "shape"), "expected a list of axis names or null")
            for axis_name in shape:
                if axis_name not in axes:
                    raise SchemaError(_join(tpath, "shape"), f"undeclared axis {axis_name!r}")
            try:
                dtype = parse_dtype(_get(spec, "dtype", tpath, str))
            except DTypeMismatch as exc:
                raise SchemaError(_join(tpath, "dtype"), str(exc)) from None
            out[tensor_name] = TensorSpec(
                shape, dtype, _get(spec, "description", tpath, str, required=False, default="")
            )
        return out

    inputs = parse_io("inputs")
    outputs = parse_io("outputs")
    if not outputs:
        raise SchemaError(_join(path, "outputs"), "at least one output required")
    overlap = set(inputs) & set(outputs)
    if overlap:
        raise SchemaError(_join(path, "outputs"), f"names also declared as inputs: {sorted(overlap)}")

    constraints = tuple(parse_constraint(text) for text in _str_list(obj, "constraints", path))
    int_inputs = {n for n, t in inputs.items() if t.dtype.is_int}
    for expr in constraints:
        axis_refs, tensor_refs = references(expr)
        for ref in sorted(axis_refs - set(axes)):
            raise SchemaError(
                _join(path, "constraints"), f"{expr.text!r} references undeclared axis {ref!r}"
            )
        for ref in sorted(tensor_refs - int_inputs):
            raise SchemaError(
                _join(path, "constraints"),
                f"{expr.text!r} indexes {ref!r}, which is not an integer-dtype input",
            )

    return DefinitionRecord(
        name=name,
        op_type=op_type,
        axes=axes,
        inputs=inputs,
        outputs=outputs,
        reference=_get(obj, "reference", path, str),
        description=_get(obj, "description", path, str, required=False, default=""),
        tags=_str_list(obj, "tags", path),
        constraints=constraints,
    )


_INPUT_KINDS = {"random": "random", "safetensors": "archive", "archive": "archive", "scalar": "scalar"}


def parse_input_spec(obj: dict, path: str) -> InputSpec:
    if not isinstance(obj, dict):
        raise SchemaError(path, "expected object")
    raw_kind = _get(obj, "type", path, str)
    kind = _INPUT_KINDS.get(raw_kind)
    if kind is None:
        raise SchemaError(_join(path, "type"), f"unknown input kind {raw_kind!r}")
    seed = obj.get("seed")
    if seed is not None:
        seed = _int_value(seed, _join(path, "seed"))
    if kind == "random":
        if obj.get("path") is not None or obj.get("value") is not None:
            raise SchemaError(path, "random inputs carry only an optional seed")
        return InputSpec("random", seed=seed)
    if kind == "archive":
        if seed is not None or obj.get("value") is not None:
            raise SchemaError(path, "archive inputs carry only path and tensor_key")
        return InputSpec(
            "archive",
            path=_get(obj, "path", path, str),
            tensor_key=_get(obj, "tensor_key", path, str),
        )
    if seed is not None or obj.get("path") is not None:
        raise SchemaError(path, "scalar inputs carry only a value")
    value = obj.get("value")
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise SchemaError(_join(path, "value"), "expected a number")
    return InputSpec("scalar", value=value)


def parse_workload(obj: dict, path: str = "workload") -> WorkloadRecord:
    if not isinstance(obj, dict):
        raise SchemaError(path, "expected object")
    axes = {}
    for axis_name, value in _get(obj, "axes", path, dict).items():
        value = _int_value(value, f"{_join(path, 'axes')}.{axis_name}")
        if value < 0:
            raise SchemaError(f"{_join(path, 'axes')}.{axis_name}", "axis value must be non-negative")
        axes[axis_name] = value
    inputs = {
        input_name: parse_input_spec(spec, f"{_join(path, 'inputs')}.{input_name}")
        for input_name, spec in _get(obj, "inputs", path, dict).items()
    }
    return WorkloadRecord(uuid=_get(obj, "uuid", path, str), axes=axes, inputs=inputs)


def parse_solution(obj: dict, path: str = "") -> SolutionRecord:
    spec = _get(obj, "spec", path, dict)
    spec_path = _join(path, "spec")
    entry_point = _get(spec, "entry_point", spec_path, str)
    if "::" not in entry_point:
        raise SchemaError(_join(spec_path, "entry_point"), "expected 'file::symbol'")
    sources = []
    raw_sources = _get(obj, "sources", path, list)
    for i, item in enumerate(raw_sources):
        src_path = f"{_join(path, 'sources')}[{i}]"
        if not isinstance(item, dict):
            raise SchemaError(src_path, "expected object")
        sources.append(
            SourceFile(_get(item, "path", src_path, str), _get(item, "content", src_path, str))
        )
    entry_file = entry_point.split("::", 1)[0]
    if entry_file not in {s.path for s in sources}:
        raise SchemaError(
            _join(spec_path, "entry_point"), f"entry file {entry_file!r} not among sources"
        )
    return SolutionRecord(
        name=_get(obj, "name", path, str),
        definition=_get(obj, "definition", path, str),
        author=_get(obj, "author", path, str),
        language=_get(spec, "language", spec_path, str),
        entry_point=entry_point,
        sources=tuple(sources),
        target_hardware=_str_list(spec, "target_hardware", spec_path),
        dependencies=_str_list(spec, "dependencies", spec_path),
        description=_get(obj, "description", path, str, required=False, default=""),
    )


def _number(obj: dict, key: str, path: str) -> float:
    value = obj.get(key)
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise SchemaError(_join(path, key), "expected a number")
    return float(value)


# Hand-written records may carry a speedup rounded elsewhere; allow a sliver of
# slack, while records built by this package satisfy the identity exactly.
_SPEEDUP_REL_TOL = 1e-9


def parse_evaluation(obj: dict, path: str = "evaluation") -> EvaluationRecord:
    if not isinstance(obj, dict):
        raise SchemaError(path, "expected object")
    raw_status = _get(obj, "status", path, str)
    try:
        status = EvalStatus(raw_status)
    except ValueError:
        raise SchemaError(_join(path, "status"), f"unknown status {raw_status!r}") from None

    env_obj = _get(obj, "environment", path, dict)
    env_path = _join(path, "environment")
    libs = {}
    for lib_name, version in _get(env_obj, "libs", env_path, dict, required=False, default={}).items():
        if not isinstance(version, str):
            raise SchemaError(f"{_join(env_path, 'libs')}.{lib_name}", "expected string version")
        libs[lib_name] = version
    environment = Environment(hardware=_get(env_obj, "hardware", env_path, str), libs=libs)

    correctness = None
    if obj.get("correctness") is not None:
        c = obj["correctness"]
        cpath = _join(path, "correctness")
        if not isinstance(c, dict):
            raise SchemaError(cpath, "expected object or null")
        extra = c.get("extra")
        if extra is not None and not isinstance(extra, dict):
            raise SchemaError(_join(cpath, "extra"), "expected object or null")
        correctness = Correctness(
            max_relative_error=_number(c, "max_relative_error", cpath),
            max_absolute_error=_number(c, "max_absolute_error", cpath),
            extra=extra,
        )

    performance = None
    if obj.get("performance") is not None:
        p = obj["performance"]
        ppath = _join(path, "performance")
        if not isinstance(p, dict):
            raise SchemaError(ppath, "expected object or null")
        performance = Performance(
            latency_ms=_number(p, "latency_ms", ppath),
            reference_latency_ms=_number(p, "reference_latency_ms", ppath),
            speedup_factor=_number(p, "speedup_factor", ppath),
        )

    if status is EvalStatus.PASSED:
        if correctness is None or performance is None:
            raise SchemaError(path, "PASSED requires correctness and performance")
        implied = performance.reference_latency_ms / performance.latency_ms
        if not math.isclose(performance.speedup_factor, implied, rel_tol=_SPEEDUP_REL_TOL):
            raise SchemaError(
                _join(path, "performance"),
                f"speedup_factor {performance.speedup_factor} != "
                f"reference_latency_ms / latency_ms = {implied}",
            )

    return EvaluationRecord(
        status=status,
        environment=environment,
        timestamp=_get(obj, "timestamp", path, str),
        log=_get(obj, "log", path, str, required=False, default=""),
        correctness=correctness,
        performance=performance,
    )


def parse_trace(text: str):
    """Parse any trace-schema document; the result type follows the shape.

    Documents with a ``workload`` are TraceRecords; with an ``op_type``,
    DefinitionRecords; with ``sources``, SolutionRecords.
    """
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SchemaError("", f"invalid JSON: {exc}") from None
    if not isinstance(obj, dict):
        raise SchemaError("", "document must be a JSON object")
    if "workload" in obj:
        raw_def = obj.get("definition")
        if isinstance(raw_def, str):
            definition: str | DefinitionRecord = raw_def
        elif isinstance(raw_def, dict):
            definition = parse_definition(raw_def, "definition")
        else:
            raise SchemaError("definition", "expected a name or an inline definition")
        raw_sol = obj.get("solution")
        if raw_sol is None or isinstance(raw_sol, str):
            solution: str | SolutionRecord | None = raw_sol
        elif isinstance(raw_sol, dict):
            solution = parse_solution(raw_sol, "solution")
        else:
            raise SchemaError("solution", "expected a name, an inline solution, or null")
        evaluation = None
        if obj.get("evaluation") is not None:
            evaluation = parse_evaluation(obj["evaluation"])
        return TraceRecord(
            definition=definition,
            workload=parse_workload(_get(obj, "workload", "", dict)),
            solution=solution,
            evaluation=evaluation,
        )
    if "op_type" in obj:
        return parse_definition(obj)
    if "sources" in obj or "spec" in obj:
        return parse_solution(obj)
    raise SchemaError("", "unrecognized document shape (no workload/op_type/sources)")


# ---------------------------------------------------------------------------
# Serialization (canonical)
# ---------------------------------------------------------------------------


def _axis_dict(spec: AxisSpec) -> dict:
    out: dict = {"type": spec.kind}
    if spec.kind == "const":
        out["value"] = spec.value
    if spec.description:
        out["description"] = spec.description
    return dict(sorted(out.items()))


def _tensor_dict(spec: TensorSpec) -> dict:
    out: dict = {
        "dtype": spec.dtype.json_name,
        "shape": list(spec.shape) if spec.shape else None,
    }
    if spec.description:
        out["description"] = spec.description
    return dict(sorted(out.items()))


def definition_dict(d: DefinitionRecord) -> dict:
    out: dict = {
        "axes": {n: _axis_dict(a) for n, a in sorted(d.axes.items())},
        "inputs": {n: _tensor_dict(t) for n, t in d.inputs.items()},
        "name": d.name,
        "op_type": d.op_type.value,
        "outputs": {n: _tensor_dict(t) for n, t in d.outputs.items()},
        "reference": d.reference,
    }
    if d.constraints:
        out["constraints"] = [c.text for c in d.constraints]
    if d.description:
        out["description"] = d.description
    if d.tags:
        out["tags"] = list(d.tags)
    return dict(sorted(out.items()))


def _input_spec_dict(spec: InputSpec) -> dict:
    if spec.kind == "random":
        out: dict = {"type": "random"}
        if spec.seed is not None:
            out["seed"] = spec.seed
    elif spec.kind == "archive":
        out = {"path": spec.path, "tensor_key": spec.tensor_key, "type": "safetensors"}
    else:
        out = {"type": "scalar", "value": spec.value}
    return dict(sorted(out.items()))


def workload_dict(w: WorkloadRecord) -> dict:
    return {
        "axes": dict(sorted(w.axes.items())),
        "inputs": {n: _input_spec_dict(s) for n, s in sorted(w.inputs.items())},
        "uuid": w.uuid,
    }


def solution_dict(s: SolutionRecord) -> dict:
    out: dict = {
        "author": s.author,
        "definition": s.definition,
        "name": s.name,
        "sources": [{"content": f.content, "path": f.path} for f in s.sources],
        "spec": {
            "dependencies": list(s.dependencies),
            "entry_point": s.entry_point,
            "language": s.language,
            "target_hardware": list(s.target_hardware),
        },
    }
    if s.description:
        out["description"] = s.description
    return dict(sorted(out.items()))


def evaluation_dict(e: EvaluationRecord) -> dict:
    correctness = None
    if e.correctness is not None:
        correctness = {
            "extra": dict(sorted(e.correctness.extra.items())) if e.correctness.extra else None,
            "max_absolute_error": e.correctness.max_absolute_error,
            "max_relative_error": e.correctness.max_relative_error,
        }
    performance = None
    if e.performance is not None:
        performance = {
            "latency_ms": e.performance.latency_ms,
            "reference_latency_ms": e.performance.reference_latency_ms,
            "speedup_factor": e.performance.speedup_factor,
        }
    return {
        "correctness": correctness,
        "environment": {
            "hardware": e.environment.hardware,
            "libs": dict(sorted(e.environment.libs.items())),
        },
        "log": e.log,
        "performance": performance,
        "status": e.status.value,
        "timestamp": e.timestamp,
    }


def trace_dict(t: TraceRecord) -> dict:
    return {
        "definition": t.definition if isinstance(t.definition, str) else definition_dict(t.definition),
        "evaluation": evaluation_dict(t.evaluation) if t.evaluation is not None else None,
        "solution": solution_dict(t.solution) if isinstance(t.solution, SolutionRecord) else t.solution,
        "workload": workload_dict(t.workload),
    }


def serialize_trace(record) -> str:
    """Canonical JSON text for any record type `parse_trace` can return."""
    if isinstance(record, DefinitionRecord):
        obj = definition_dict(record)
    elif isinstance(record, SolutionRecord):
        obj = solution_dict(record)
    elif isinstance(record, TraceRecord):
        obj = trace_dict(record)
    else:
        raise TypeError(f"cannot serialize {type(record).__name__}")
    return json.dumps(obj, indent=2) + "\n"


# ---------------------------------------------------------------------------
# Workload binding
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BoundShapes:
    """Concrete shapes for one (definition, workload) pair.

    ``deferred`` holds the constraints that index input tensors; they can only
    be checked after materialization (`check_deferred`).
    """

    axes: dict[str, int]
    inputs: dict[str, tuple[int, ...]]
    outputs: dict[str, tuple[int, ...]]
    deferred: tuple[ConstraintExpr, ...]


def check_workload(d: DefinitionRecord, w: WorkloadRecord) -> None:
    """Structural fit of a workload to its definition (axes and input cover)."""
    var_axes = set(d.var_axes())
    for axis_name in w.axes:
        if axis_name not in d.axes:
            raise MissingAxis(f"workload assigns unknown axis {axis_name!r}")
        if d.axes[axis_name].kind == "const":
            raise ConstAxisOverridden(f"axis {axis_name!r} is const in {d.name!r}")
    missing = var_axes - set(w.axes)
    if missing:
        raise MissingAxis(f"workload misses var axes {sorted(missing)} of {d.name!r}")
    if set(w.inputs) != set(d.inputs):
        missing_inputs = sorted(set(d.inputs) - set(w.inputs))
        extra = sorted(set(w.inputs) - set(d.inputs))
        detail = []
        if missing_inputs:
            detail.append(f"uncovered inputs {missing_inputs}")
        if extra:
            detail.append(f"unknown inputs {extra}")
        raise SchemaError("workload.inputs", "; ".join(detail))


def bind_workload(d: DefinitionRecord, w: WorkloadRecord) -> BoundShapes:
    """Resolve every axis and tensor shape; check axis-only constraints now."""
    check_workload(d, w)
    axes = dict(d.const_axes())
    axes.update(w.axes)
    deferred = []
    for expr in d.constraints:
        if needs_tensors(expr):
            deferred.append(expr)
        else:
            check_constraint(expr, axes)
    def resolve(specs: dict[str, TensorSpec]) -> dict[str, tuple[int, ...]]:
        return {name: tuple(axes[a] for a in spec.shape) for name, spec in specs.items()}
    return BoundShapes(
        axes=axes,
        inputs=resolve(d.inputs),
        outputs=resolve(d.outputs),
        deferred=tuple(deferred),
    )


def check_deferred(bound: BoundShapes, tensors: dict) -> None:
    """Evaluate tensor-indexing constraints against materialized inputs."""
    arrays = {name: getattr(t, "data", t) for name, t in tensors.items()}
    for expr in bound.deferred:
        check_constraint(expr, bound.axes, arrays)


# ---------------------------------------------------------------------------
# Definition equivalence (dataset dedup rule)
# ---------------------------------------------------------------------------


def _io_signature(specs: dict[str, TensorSpec]) -> tuple:
    return tuple((name, spec.shape, spec.dtype.value) for name, spec in specs.items())


def definitions_equivalent(a: DefinitionRecord, b: DefinitionRecord) -> bool:
    """True when two definitions denote the same task: identical I/O specs and
    reference text, the same axes with the same const/var roles, and equal
    const values.  Names, descriptions, and tags do not participate."""
    if _io_signature(a.inputs) != _io_signature(b.inputs):
        return False
    if _io_signature(a.outputs) != _io_signature(b.outputs):
        return False
    if a.reference != b.reference:
        return False
    if set(a.axes) != set(b.axes):
        return False
    for name, spec in a.axes.items():
        other = b.axes[name]
        if spec.kind != other.kind or spec.value != other.value:
            return False
    return True
