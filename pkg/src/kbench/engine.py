"""Benchmarking engine: staged sandboxes, out-of-process execution, timing.

The execution model, end to end:

1. A solution's sources are staged into a content-addressed sandbox
   directory (hash of the sources), so re-evaluating a solution never
   rebuilds the sandbox.
2. A plugin process is launched on the sandbox (``python3 -m
   kbench.plugin_rt <dir>`` for Python-family solutions) and greets with a
   HELLO frame; spawn-to-HELLO duration is the desk-scale "compile" cost.
3. Each kernel invocation is one RUN -> RESULT frame exchange.  In
   isolated mode the process is fresh per invocation and torn down after;
   in persistent mode the worker keeps it alive and a dead process is
   respawned once (the spare) before the failure is reported.
4. Timing takes the worker's FIFO lock, runs ``w`` untimed then ``m``
   timed exchanges back-to-back on one process, and reports the
   arithmetic mean of the monotonic-clock durations.
5. ``run_evaluation`` chains materialize -> reference -> execute ->
   validate -> time into one immutable EvaluationRecord carrying an
   environment snapshot.

Reference outputs never ride a RUN frame: solutions receive exactly the
materialized inputs.  The optional frame log exists so tests can assert
that property on the actual bytes.
"""
from __future__ import annotations

import enum
import hashlib
import json
import os
import platform
import queue
import shutil
import subprocess
import sys
import threading
import time
from collections import deque
from dataclasses import dataclass, field, replace
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .dtypes import DType, quantize
from .errors import (
    DegenerateDistribution,
    DTypeMismatch,
    FrameError,
    LengthMismatch,
    PluginError,
    SamplerCrashed,
    SchemaError,
    ShapeMismatch,
)
from .kernels import run_reference
from .materialize import materialize_workload
from .protocol import (
    Frame,
    FrameType,
    RunRequest,
    decode_error,
    decode_hello,
    decode_result,
    encode_run,
    read_frame,
    write_frame,
)
from .tensor import Tensor
from .trace import (
    Correctness,
    DefinitionRecord,
    Environment,
    EvalStatus,
    EvaluationRecord,
    OpType,
    Performance,
    SolutionRecord,
    SourceFile,
    WorkloadRecord,
    bind_workload,
    definition_dict,
)
from .validators import (
    StochasticConfig,
    ValidationVerdict,
    check_stochastic,
    validate_outputs,
)

_STDERR_CAP = 65536
_TRAILING_LOG = 4096


@dataclass(frozen=True)
class TimingConfig:
    """w untimed warm-up runs, m timed runs, and a per-execution deadline."""
    warmup_runs: int = 10
    timed_runs: int = 50
    timeout_ms: float = 10_000.0

    def __post_init__(self):
        if self.warmup_runs < 0:
            raise ValueError("warmup_runs must be non-negative")
        if self.timed_runs < 1:
            raise ValueError("timed_runs must be at least 1")
        if not self.timeout_ms > 0:
            raise ValueError("timeout_ms must be positive")


class ExecutorMode(enum.Enum):
    ISOLATED = "isolated"
    PERSISTENT = "persistent"


# ---------------------------------------------------------------------------
# Staging
# ---------------------------------------------------------------------------


def solution_digest(s: SolutionRecord) -> str:
    """Content hash over the solution's sources and entry point."""
    h = hashlib.sha256()
    h.update(s.entry_point.encode("utf-8"))
    for src in s.sources:
        h.update(b"\x00")
        h.update(src.path.encode("utf-8"))
        h.update(b"\x00")
        h.update(src.content.encode("utf-8"))
    return h.hexdigest()[:16]


def stage_solution(s: SolutionRecord, root: str | Path) -> Path:
    """Write the solution's sources under a content-addressed sandbox.

    An existing sandbox for the same content is reused untouched — this is
    the on-disk half of the compile cache.  Source paths must stay inside
    the sandbox; absolute paths and ``..`` segments are rejected.
    """
    for src in s.sources:
        rel = Path(src.path)
        if rel.is_absolute() or ".." in rel.parts or not src.path:
            raise SchemaError("sources", f"path {src.path!r} escapes the sandbox")
    root = Path(root)
    staged = root / solution_digest(s)
    if staged.is_dir():
        return staged
    build = root / (staged.name + ".build")
    if build.exists():
        shutil.rmtree(build)
    build.mkdir(parents=True, exist_ok=True)
    for src in s.sources:
        target = build / src.path
        target.parent.mkdir(parents=True, exist_ok=True)
        target.write_text(src.content)
    try:
        os.replace(build, staged)
    except OSError:
        if not staged.is_dir():  # lost a race with a concurrent stager
            raise
        shutil.rmtree(build)
    return staged


def resolve_launcher(language: str) -> list[str]:
    """Command prefix that runs a staged sandbox of the given language."""
    lang = language.lower()
    if lang in ("python", "triton", "cuda"):  # python-hosted kernels at desk scale
        return [sys.executable, "-m", "kbench.plugin_rt"]
    if lang in ("javascript", "typescript", "node"):
        shim = os.environ.get("KBENCH_NODE_SHIM")
        if not shim:
            raise PluginError(
                "compile",
                f"language {language!r} needs KBENCH_NODE_SHIM to point at a node shim",
            )
        return ["node", shim]
    raise PluginError("compile", f"no launcher for language {language!r}")


# ---------------------------------------------------------------------------
# FIFO lock
# ---------------------------------------------------------------------------


class FifoLock:
    """Mutual exclusion granted strictly in request order."""

    def __init__(self):
        self._cv = threading.Condition()
        self._queue: deque = deque()
        self._held = False

    def acquire(self):
        token = object()
        with self._cv:
            self._queue.append(token)
            self._cv.wait_for(lambda: not self._held and self._queue[0] is token)
            self._queue.popleft()
            self._held = True

    def release(self):
        with self._cv:
            self._held = False
            self._cv.notify_all()

    def locked(self) -> bool:
        with self._cv:
            return self._held

    def __enter__(self):
        self.acquire()
        return self

    def __exit__(self, *exc):
        self.release()


# ---------------------------------------------------------------------------
# Plugin process
# ---------------------------------------------------------------------------


class PluginProcess:
    """One live plugin subprocess with framed request/reply and deadlines."""

    def __init__(self, args: list[str], staged_dir: Path,
                 bootstrap_timeout_ms: float = 20_000.0, on_frame=None):
        self._on_frame = on_frame
        self._frames: queue.Queue = queue.Queue()
        self._stderr: deque[bytes] = deque(maxlen=64)
        started = time.perf_counter()
        try:
            self._proc = subprocess.Popen(
                args + [str(staged_dir)],
                stdin=subprocess.PIPE,
                stdout=subprocess.PIPE,
                stderr=subprocess.PIPE,
            )
        except OSError as exc:
            raise PluginError("compile", f"could not launch {args[0]}: {exc}") from exc
        threading.Thread(target=self._pump_frames, daemon=True).start()
        threading.Thread(target=self._pump_stderr, daemon=True).start()
        hello = self._next_frame(bootstrap_timeout_ms, during="bootstrap")
        if hello.type is not FrameType.HELLO:
            self.kill()
            raise PluginError("compile", f"plugin opened with {hello.type.name}, not HELLO",
                              log=self.stderr_tail())
        try:
            self.info = decode_hello(hello)
        except FrameError as exc:
            self.kill()
            raise PluginError("compile", str(exc), log=self.stderr_tail()) from exc
        self.bootstrap_ms = (time.perf_counter() - started) * 1000.0

    # -- reader threads ----------------------------------------------------

    def _pump_frames(self):
        stream = self._proc.stdout
        while True:
            try:
                frame = read_frame(stream)
            except (FrameError, OSError, ValueError) as exc:
                self._frames.put(("error", exc))
                return
            if frame is None:
                self._frames.put(("eof", None))
                return
            if self._on_frame:
                self._on_frame("recv", frame)
            self._frames.put(("frame", frame))

    def _pump_stderr(self):
        stream = self._proc.stderr
        while True:
            chunk = stream.read(4096)
            if not chunk:
                return
            self._stderr.append(chunk)

    def stderr_tail(self) -> str:
        blob = b"".join(self._stderr)[-_STDERR_CAP:]
        return blob.decode("utf-8", errors="replace")

    # -- request/reply -----------------------------------------------------

    def _next_frame(self, timeout_ms: float, during: str) -> Frame:
        try:
            kind, value = self._frames.get(timeout=timeout_ms / 1000.0)
        except queue.Empty:
            self.kill()
            raise PluginError(
                "timeout" if during != "bootstrap" else "compile",
                f"no frame within {timeout_ms:.0f} ms during {during}",
                log=self.stderr_tail(), dead=True,
            ) from None
        if kind == "frame":
            return value
        self.kill()
        if kind == "error":
            raise PluginError(
                "compile" if during == "bootstrap" else "protocol",
                f"garbage on the wire during {during}: {value}",
                log=self.stderr_tail(), dead=True,
            )
        raise PluginError(
            "compile" if during == "bootstrap" else "runtime",
            f"plugin exited during {during} (code {self._proc.poll()})",
            log=self.stderr_tail(), dead=True,
        )

    def request(self, frame: Frame, timeout_ms: float, during: str = "run") -> Frame:
        if not self.alive():
            raise PluginError("runtime", "plugin process is gone",
                              log=self.stderr_tail(), dead=True)
        if self._on_frame:
            self._on_frame("send", frame)
        try:
            write_frame(self._proc.stdin, frame)
        except (BrokenPipeError, OSError) as exc:
            self.kill()
            raise PluginError("runtime", f"plugin dropped the pipe: {exc}",
                              log=self.stderr_tail(), dead=True) from exc
        return self._next_frame(timeout_ms, during)

    def alive(self) -> bool:
        return self._proc.poll() is None

    def ping(self, timeout_ms: float = 2000.0) -> bool:
        try:
            return self.request(Frame(FrameType.PING), timeout_ms, "ping").type is FrameType.PING
        except PluginError:
            return False

    # -- teardown ----------------------------------------------------------

    def kill(self):
        if self._proc.poll() is None:
            self._proc.kill()
        self._proc.wait()

    def close(self):
        """Polite teardown: BYE, brief grace, then kill."""
        if self.alive():
            try:
                if self._on_frame:
                    self._on_frame("send", Frame(FrameType.BYE))
                write_frame(self._proc.stdin, Frame(FrameType.BYE))
                self._proc.stdin.close()
                self._proc.wait(timeout=2.0)
            except (OSError, subprocess.TimeoutExpired):
                pass
        self.kill()


# ---------------------------------------------------------------------------
# Worker
# ---------------------------------------------------------------------------


class Worker:
    """A serialized execution slot with its own lock and process cache.

    ``warm_solutions`` is the set of solution digests bootstrapped since this
    worker spawned and ``resident_definitions`` the definitions whose
    reference ran here — both feed the scheduler's cost discounts.
    """

    MAX_LIVE = 4

    def __init__(self, worker_id: str, on_frame=None):
        self.id = worker_id
        self.lock = FifoLock()
        self.state = "idle"  # idle | busy | dead
        self.warm_solutions: set[str] = set()
        self.resident_definitions: set[str] = set()
        self._procs: dict[str, PluginProcess] = {}
        self._on_frame = on_frame

    @property
    def prewarmed(self) -> bool:
        return any(p.alive() for p in self._procs.values())

    def process_for(self, staged: Path, args: list[str],
                    bootstrap_timeout_ms: float) -> PluginProcess:
        if self.state == "dead":
            raise PluginError("runtime", f"worker {self.id} is dead", dead=True)
        key = staged.name
        proc = self._procs.get(key)
        if proc is not None and proc.alive():
            return proc
        if proc is not None:
            self.discard(staged)
        while len(self._procs) >= self.MAX_LIVE:
            oldest = next(iter(self._procs))
            self._procs.pop(oldest).close()
        proc = PluginProcess(args, staged, bootstrap_timeout_ms, on_frame=self._on_frame)
        self._procs[key] = proc
        self.warm_solutions.add(key)
        return proc

    def discard(self, staged: Path):
        proc = self._procs.pop(staged.name, None)
        if proc is not None:
            proc.kill()

    def healthy(self) -> bool:
        """PING every live process, dropping the dead; False once marked dead."""
        if self.state == "dead":
            return False
        for key in list(self._procs):
            if not self._procs[key].ping():
                self._procs.pop(key).kill()
        return True

    def kill(self):
        """Simulate/record worker death: all processes die, state sticks."""
        self.state = "dead"
        for proc in self._procs.values():
            proc.kill()
        self._procs.clear()

    def close(self):
        for proc in self._procs.values():
            proc.close()
        self._procs.clear()
        if self.state != "dead":
            self.state = "idle"


# ---------------------------------------------------------------------------
# Reference-as-plugin
# ---------------------------------------------------------------------------

_REFERENCE_MAIN = '''\
"""Auto-generated reference plugin: replays the built-in evaluator."""
import json

import numpy as np

from kbench.kernels import run_reference
from kbench.tensor import Tensor
from kbench.trace import parse_definition

_DEF = parse_definition(json.loads(r"""{definition_json}"""))


def run(**inputs):
    tensors = {{}}
    for name, spec in _DEF.inputs.items():
        value = inputs[name]
        if isinstance(value, (int, float)):
            tensors[name] = Tensor.scalar(value, spec.dtype)
        else:
            tensors[name] = Tensor(spec.dtype, np.asarray(value, spec.dtype.storage))
    return {{name: t.data for name, t in run_reference(_DEF, tensors).items()}}
'''


def reference_solution(d: DefinitionRecord) -> SolutionRecord:
    """A synthetic solution that runs the built-in reference out of process.

    Timing the reference through the same plugin plumbing as real solutions
    makes the speedup ratio overhead-neutral: both sides pay identical frame
    and archive costs.
    """
    source = _REFERENCE_MAIN.format(
        definition_json=json.dumps(definition_dict(d))
    )
    return SolutionRecord(
        name=f"__reference__{d.name}",
        definition=d.name,
        author="kbench",
        language="python",
        target_hardware=("cpu",),
        entry_point="main.py::run",
        dependencies=(),
        sources=(SourceFile("main.py", source),),
        description=f"built-in reference for {d.name} behind the plugin protocol",
    )


# ---------------------------------------------------------------------------
# Engine
# ---------------------------------------------------------------------------


def _status_for(exc: PluginError) -> EvalStatus:
    if exc.kind == "compile":
        return EvalStatus.FAILED_COMPILE
    if exc.kind == "timeout":
        return EvalStatus.TIMEOUT
    return EvalStatus.FAILED_RUNTIME  # runtime and protocol


def coerce_outputs(d: DefinitionRecord, raw: dict[str, Tensor]) -> dict[str, Tensor]:
    """Re-quantize plugin outputs onto the declared output dtypes.

    Float outputs land on the declared grid (a float32 result for a bf16
    output is welcome); integer outputs cast between integer widths.  A
    float/integer class mismatch is left untouched for the validator to
    reject.  Undeclared extra outputs are dropped.
    """
    out: dict[str, Tensor] = {}
    for name, spec in d.outputs.items():
        tensor = raw.get(name)
        if tensor is None:
            continue  # validator reports the missing key
        if spec.dtype.is_float and tensor.dtype.is_float:
            out[name] = Tensor(spec.dtype, quantize(tensor.data.astype(np.float32), spec.dtype))
        elif spec.dtype.is_int and tensor.dtype.is_int:
            out[name] = Tensor(spec.dtype, tensor.data.astype(spec.dtype.storage))
        else:
            out[name] = tensor
    return out


@dataclass
class BenchEngine:
    """Configuration + worker plumbing for evaluations."""

    staging_root: Path
    timing: TimingConfig = field(default_factory=TimingConfig)
    mode: ExecutorMode = ExecutorMode.PERSISTENT
    stochastic: StochasticConfig = field(default_factory=StochasticConfig)
    hardware_label: str = ""
    bootstrap_timeout_ms: float = 20_000.0
    seed_base: int = 0
    archive_root: Path | None = None
    frame_log: list | None = None

    def __post_init__(self):
        self.staging_root = Path(self.staging_root)
        self.staging_root.mkdir(parents=True, exist_ok=True)
        if not self.hardware_label:
            self.hardware_label = f"{platform.machine() or 'cpu'}-host"
        self._default_worker: Worker | None = None

    # -- plumbing ----------------------------------------------------------

    def _record_frame(self, direction: str, frame: Frame):
        if self.frame_log is not None:
            self.frame_log.append((direction, frame.type, bytes(frame.payload)))

    def worker(self) -> Worker:
        if self._default_worker is None or self._default_worker.state == "dead":
            self._default_worker = self.new_worker("w0")
        return self._default_worker

    def new_worker(self, worker_id: str) -> Worker:
        return Worker(worker_id, on_frame=self._record_frame)

    def close(self):
        if self._default_worker is not None:
            self._default_worker.close()

    def _spawn(self, staged: Path, language: str) -> PluginProcess:
        return PluginProcess(resolve_launcher(language), staged,
                             self.bootstrap_timeout_ms, on_frame=self._record_frame)

    # -- execution ---------------------------------------------------------

    def execute_solution(
        self,
        s: SolutionRecord,
        request: RunRequest,
        mode: ExecutorMode | None = None,
        worker: Worker | None = None,
        timeout_ms: float | None = None,
    ) -> dict[str, Tensor]:
        """One kernel invocation; returns the raw decoded outputs."""
        mode = mode or self.mode
        worker = worker or self.worker()
        timeout_ms = timeout_ms or self.timing.timeout_ms
        staged = stage_solution(s, self.staging_root)
        frame = encode_run(request)

        if mode is ExecutorMode.ISOLATED:
            proc = self._spawn(staged, s.language)
            try:
                return self._exchange(proc, frame, timeout_ms)
            finally:
                proc.close()

        args = resolve_launcher(s.language)
        proc = worker.process_for(staged, args, self.bootstrap_timeout_ms)
        try:
            return self._exchange(proc, frame, timeout_ms)
        except PluginError as exc:
            if not exc.dead or exc.kind == "timeout":
                raise
            # the long-lived process died under us: one spare respawn, one retry
            worker.discard(staged)
            spare = worker.process_for(staged, args, self.bootstrap_timeout_ms)
            return self._exchange(spare, frame, timeout_ms)

    def _exchange(self, proc: PluginProcess, frame: Frame, timeout_ms: float) -> dict[str, Tensor]:
        reply = proc.request(frame, timeout_ms)
        if reply.type is FrameType.RESULT:
            try:
                return decode_result(reply)
            except FrameError as exc:
                raise PluginError("protocol", str(exc), log=proc.stderr_tail()) from exc
        if reply.type is FrameType.ERROR:
            try:
                phase, detail = decode_error(reply)
            except FrameError as exc:
                raise PluginError("protocol", str(exc), log=proc.stderr_tail()) from exc
            raise PluginError("compile" if phase == "bootstrap" else "runtime",
                              detail, log=proc.stderr_tail())
        raise PluginError("protocol", f"expected RESULT, got {reply.type.name}",
                          log=proc.stderr_tail())

    # -- timing ------------------------------------------------------------

    def time_solution(
        self,
        s: SolutionRecord,
        request: RunRequest,
        worker: Worker | None = None,
        cfg: TimingConfig | None = None,
        mode: ExecutorMode | None = None,
    ) -> float:
        """Mean latency over ``m`` timed runs after ``w`` warm-ups.

        The whole window holds the worker's FIFO lock and stays on one
        process; isolated mode uses a fresh process for the window and tears
        it down after.
        """
        cfg = cfg or self.timing
        mode = mode or self.mode
        worker = worker or self.worker()
        staged = stage_solution(s, self.staging_root)
        frame = encode_run(request)
        with worker.lock:
            owned = mode is ExecutorMode.ISOLATED
            if owned:
                proc = self._spawn(staged, s.language)
            else:
                proc = worker.process_for(staged, resolve_launcher(s.language),
                                          self.bootstrap_timeout_ms)
            try:
                for _ in range(cfg.warmup_runs):
                    self._checked_result(proc, frame, cfg.timeout_ms)
                total = 0.0
                for _ in range(cfg.timed_runs):
                    t0 = time.perf_counter()
                    self._checked_result(proc, frame, cfg.timeout_ms)
                    total += time.perf_counter() - t0
            finally:
                if owned:
                    proc.close()
        return total / cfg.timed_runs * 1000.0

    def _checked_result(self, proc: PluginProcess, frame: Frame, timeout_ms: float):
        reply = proc.request(frame, timeout_ms)
        if reply.type is FrameType.RESULT:
            return
        if reply.type is FrameType.ERROR:
            phase, detail = decode_error(reply)
            raise PluginError("compile" if phase == "bootstrap" else "runtime",
                              detail, log=proc.stderr_tail())
        raise PluginError("protocol", f"expected RESULT, got {reply.type.name}",
                          log=proc.stderr_tail())

    # -- full evaluation ---------------------------------------------------

    def run_evaluation(
        self,
        d: DefinitionRecord,
        w: WorkloadRecord,
        s: SolutionRecord,
        worker: Worker | None = None,
        mode: ExecutorMode | None = None,
    ) -> EvaluationRecord:
        """materialize -> reference -> execute -> validate -> time."""
        mode = mode or self.mode
        worker = worker or self.worker()
        bound = bind_workload(d, w)
        inputs = materialize_workload(d, w, bound, self.seed_base, root=self.archive_root)
        request = RunRequest(inputs, s.entry_point, dict(bound.axes))

        log_lines: list[str] = []
        try:
            if d.op_type is OpType.SAMPLING_TOP_K_TOP_P:
                # the derived target distribution is the reference here;
                # elementwise comparison is meaningless for samplers
                verdict = self._validate_sampling(d, s, inputs, request, worker, mode)
            else:
                ref_outputs = run_reference(d, inputs)
                raw = self.execute_solution(s, request, mode, worker)
                verdict = validate_outputs(coerce_outputs(d, raw), ref_outputs)
            worker.resident_definitions.add(d.name)
        except PluginError as exc:
            return self._finish(_status_for(exc), worker, log_lines, exc=exc)
        except SamplerCrashed as exc:
            cause = exc.__cause__
            if isinstance(cause, PluginError):
                return self._finish(_status_for(cause), worker, log_lines, exc=cause)
            return self._finish(
                EvalStatus.FAILED_CORRECTNESS, worker, log_lines,
                detail=str(exc),
                correctness=Correctness(float("inf"), float("inf")),
            )
        except (DTypeMismatch, ShapeMismatch, LengthMismatch, DegenerateDistribution) as exc:
            # structural rejection: wrong shape/dtype/output set is a failed
            # solution, not a failed harness
            return self._finish(
                EvalStatus.FAILED_CORRECTNESS, worker, log_lines,
                detail=f"{type(exc).__name__}: {exc}",
                correctness=Correctness(float("inf"), float("inf")),
            )

        correctness = Correctness(
            max_relative_error=verdict.max_relative_error,
            max_absolute_error=verdict.max_absolute_error,
            extra=verdict.extra,
        )
        if not verdict.passed:
            return self._finish(EvalStatus.FAILED_CORRECTNESS, worker, log_lines,
                                detail=verdict.detail, correctness=correctness)

        try:
            latency = self.time_solution(s, request, worker, mode=mode)
            ref_latency = self.time_solution(reference_solution(d), request, worker, mode=mode)
        except PluginError as exc:
            return self._finish(_status_for(exc), worker, log_lines, exc=exc,
                                correctness=correctness)
        performance = Performance(
            latency_ms=latency,
            reference_latency_ms=ref_latency,
            speedup_factor=ref_latency / latency,
        )
        return self._finish(EvalStatus.PASSED, worker, log_lines,
                            detail=verdict.detail, correctness=correctness,
                            performance=performance)

    def _validate_sampling(self, d, s, inputs, request, worker, mode) -> ValidationVerdict:
        """Stochastic regime: replay the solution as a seeded sampler.

        The contract for sampling ops: inputs named ``probs`` (the
        distributions, last axis = vocabulary) and a scalar ``seed``; output
        named ``samples`` with one token per probs row.  Validation pins one
        distribution — the first probs row — tiles it across the batch, and
        varies the seed per trial, so every exchange contributes a whole
        batch of trials toward the empirical frequencies.
        """
        for name in ("probs", "seed"):
            if name not in d.inputs:
                raise SchemaError(
                    "inputs", f"stochastic validation needs an input named {name!r}"
                )
        probs = inputs["probs"].data
        if probs.ndim == 1:
            p, tiled = probs.astype(np.float64), inputs["probs"]
        else:
            p = probs.reshape(-1, probs.shape[-1])[0].astype(np.float64)
            tiled = Tensor(
                inputs["probs"].dtype,
                np.broadcast_to(
                    probs.reshape(-1, probs.shape[-1])[0], probs.shape
                ).copy(),
            )
        top_k = inputs["top_k"].item() if "top_k" in inputs else None
        top_p = inputs["top_p"].item() if "top_p" in inputs else None
        seed_dtype = d.inputs["seed"].dtype

        def sample_fn(seed: int):
            trial_inputs = dict(request.inputs)
            trial_inputs["probs"] = tiled
            trial_inputs["seed"] = Tensor.scalar(seed & (2**63 - 1), seed_dtype)
            raw = self.execute_solution(s, replace(request, inputs=trial_inputs),
                                        mode, worker)
            samples = raw.get("samples")
            if samples is None:
                raise SamplerCrashed("sampler returned no 'samples' output")
            return samples.data
        return check_stochastic(sample_fn, p, top_k=top_k, top_p=top_p, cfg=self.stochastic)

    def _finish(
        self,
        status: EvalStatus,
        worker: Worker,
        log_lines: list[str],
        exc: PluginError | None = None,
        detail: str = "",
        correctness: Correctness | None = None,
        performance: Performance | None = None,
    ) -> EvaluationRecord:
        lines = list(log_lines)
        if detail:
            lines.append(detail)
        if exc is not None:
            lines.append(str(exc))
            if exc.log:
                lines.append(exc.log[-_TRAILING_LOG:])
        libs = {
            "python": platform.python_version(),
            "numpy": np.__version__,
            "kbench": __version__,
        }
        for proc in worker._procs.values():
            for key, value in proc.info.items():
                if key not in ("pid",) and isinstance(value, str):
                    libs.setdefault(f"plugin_{key}", value)
        return EvaluationRecord(
            status=status,
            environment=Environment(hardware=f"{self.hardware_label}/{worker.id}", libs=libs),
            timestamp=datetime.now(timezone.utc).isoformat(),
            log="\n".join(lines)[-8192:],
            correctness=correctness,
            performance=performance,
        )
