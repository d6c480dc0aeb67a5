"""Engine: staging, FIFO locks, plugin execution, timing, full evaluations."""
from __future__ import annotations

import dataclasses
import json
import sys
import threading
import time
from pathlib import Path

import numpy as np
import pytest

from kbench.archive import save_archive_file
from kbench.dtypes import DType, encode_wire
from kbench.engine import (
    BenchEngine,
    ExecutorMode,
    FifoLock,
    PluginProcess,
    TimingConfig,
    Worker,
    coerce_outputs,
    reference_solution,
    resolve_launcher,
    solution_digest,
    stage_solution,
)
from kbench.errors import PluginError, SchemaError
from kbench.kernels import run_reference
from kbench.materialize import materialize_workload
from kbench.protocol import Frame, FrameType, RunRequest
from kbench.tensor import Tensor, bitwise_equal
from kbench.trace import (
    EvalStatus,
    InputSpec,
    SolutionRecord,
    SourceFile,
    WorkloadRecord,
    bind_workload,
    parse_definition,
    parse_trace,
    parse_workload,
)

SAMPLE = Path(__file__).parent / "data" / "sample"

GEMM_OK = """\
import numpy as np

def run(A, B):
    return {"C": A.astype(np.float32) @ B.astype(np.float32).T}
"""

GEMM_OFFSET = """\
import numpy as np

def run(A, B):
    return {"C": A.astype(np.float32) @ B.astype(np.float32).T + 10.0}
"""

GEMM_CRASH = """\
def run(A, B):
    raise RuntimeError("numerical meltdown")
"""

GEMM_IMPORT_ERROR = "import a_module_that_does_not_exist_anywhere\n"

GEMM_SLEEP = """\
import time
import numpy as np

def run(A, B):
    time.sleep(5.0)
    return {"C": np.zeros((A.shape[0], B.shape[0]), np.float32)}
"""

GEMM_BAD_SHAPE = """\
import numpy as np

def run(A, B):
    return {"C": np.zeros(3, np.float32)}
"""

GEMM_NO_OUTPUT = "def run(A, B):\n    return {}\n"

IDENTITY = "def run(A):\n    return {'A': A}\n"

COUNTER = """\
CALLS = 0

def run(A):
    global CALLS
    CALLS += 1
    return {'calls': CALLS}
"""

DIE_ONCE = """\
import os
from pathlib import Path
import numpy as np

def run(A, B):
    marker = Path("died.marker")
    if not marker.exists():
        marker.write_text("x")
        os._exit(17)
    return {"C": A.astype(np.float32) @ B.astype(np.float32).T}
"""

ALWAYS_DIE = "import os\n\ndef run(A, B):\n    os._exit(23)\n"

BUSY = """\
import numpy as np

_ARR = np.arange(60000, dtype=np.float64)

def run(work):
    acc = 0.0
    for _ in range(int(work)):
        acc += float(np.sum(np.sqrt(_ARR)))
    return {"out": np.asarray([acc], np.float32)}
"""


def make_solution(name: str, source: str, definition: str = "gemm_n128_k2048") -> SolutionRecord:
    return SolutionRecord(
        name=name,
        definition=definition,
        author="tester",
        language="python",
        entry_point="main.py::run",
        sources=(SourceFile("main.py", source),),
    )


@pytest.fixture
def gemm_def():
    return parse_trace((SAMPLE / "gemm_n128_k2048.json").read_text())


@pytest.fixture
def gemm_workload():
    obj = json.loads((SAMPLE / "gemm_workload.json").read_text())
    return parse_workload(obj["workload"])


@pytest.fixture
def engine(tmp_path):
    eng = BenchEngine(
        staging_root=tmp_path / "stage",
        timing=TimingConfig(warmup_runs=1, timed_runs=3, timeout_ms=10_000.0),
    )
    yield eng
    eng.close()


def gemm_request(gemm_def, gemm_workload, entry="main.py::run"):
    bound = bind_workload(gemm_def, gemm_workload)
    inputs = materialize_workload(gemm_def, gemm_workload, bound)
    return RunRequest(inputs, entry, dict(bound.axes))


# ---------------------------------------------------------------------------
# staging
# ---------------------------------------------------------------------------


def test_staging_writes_sources_and_caches_by_content(tmp_path):
    s = make_solution("a", IDENTITY)
    first = stage_solution(s, tmp_path)
    assert (first / "main.py").read_text() == IDENTITY
    marker = first / "witness.txt"
    marker.write_text("kept")
    assert stage_solution(s, tmp_path) == first
    assert marker.exists()                      # cache hit did not rebuild
    other = stage_solution(make_solution("b", COUNTER), tmp_path)
    assert other != first
    assert solution_digest(s) != solution_digest(make_solution("b", COUNTER))


def test_staging_handles_subdirectories(tmp_path):
    s = SolutionRecord(
        name="nested", definition="d", author="t", language="python",
        entry_point="pkg/main.py::run",
        sources=(SourceFile("pkg/main.py", IDENTITY), SourceFile("pkg/util.py", "X = 1\n")),
    )
    staged = stage_solution(s, tmp_path)
    assert (staged / "pkg" / "util.py").read_text() == "X = 1\n"


@pytest.mark.parametrize("path", ["../evil.py", "/abs/evil.py", "a/../../evil.py", ""])
def test_staging_rejects_sandbox_escapes(tmp_path, path):
    s = SolutionRecord(
        name="evil", definition="d", author="t", language="python",
        entry_point="main.py::run", sources=(SourceFile(path, "boom"),),
    )
    with pytest.raises(SchemaError):
        stage_solution(s, tmp_path)


def test_launcher_registry(monkeypatch):
    assert resolve_launcher("python")[0] == sys.executable
    assert resolve_launcher("triton") == resolve_launcher("python")
    with pytest.raises(PluginError):
        resolve_launcher("fortran")
    monkeypatch.delenv("KBENCH_NODE_SHIM", raising=False)
    with pytest.raises(PluginError):
        resolve_launcher("javascript")
    monkeypatch.setenv("KBENCH_NODE_SHIM", "/opt/shim.mjs")
    assert resolve_launcher("javascript") == ["node", "/opt/shim.mjs"]


# ---------------------------------------------------------------------------
# FIFO lock
# ---------------------------------------------------------------------------


def test_fifo_lock_grants_in_arrival_order():
    lock = FifoLock()
    order: list[int] = []
    lock.acquire()

    def contender(i: int):
        time.sleep(0.05 * i)     # stagger arrival
        with lock:
            order.append(i)

    threads = [threading.Thread(target=contender, args=(i,)) for i in range(5)]
    for t in threads:
        t.start()
    time.sleep(0.05 * 5 + 0.2)   # everyone is queued
    lock.release()
    for t in threads:
        t.join(timeout=10)
    assert order == [0, 1, 2, 3, 4]
    assert not lock.locked()


# ---------------------------------------------------------------------------
# execution modes
# ---------------------------------------------------------------------------


def identity_request():
    a = Tensor.build(np.arange(6, dtype=np.float32), DType.F32)
    return RunRequest({"A": a}, "main.py::run", {}), a


def test_isolated_mode_fresh_process_per_call(engine):
    s = make_solution("counter", COUNTER)
    request, _ = identity_request()
    first = engine.execute_solution(s, request, mode=ExecutorMode.ISOLATED)
    second = engine.execute_solution(s, request, mode=ExecutorMode.ISOLATED)
    assert first["calls"].item() == 1
    assert second["calls"].item() == 1          # no state carryover
    assert not engine.worker().prewarmed        # nothing left running


def test_persistent_mode_reuses_the_process(engine):
    s = make_solution("counter", COUNTER)
    request, _ = identity_request()
    first = engine.execute_solution(s, request, mode=ExecutorMode.PERSISTENT)
    second = engine.execute_solution(s, request, mode=ExecutorMode.PERSISTENT)
    assert first["calls"].item() == 1
    assert second["calls"].item() == 2
    worker = engine.worker()
    assert worker.prewarmed
    assert solution_digest(s) in worker.warm_solutions


def test_identity_roundtrip_through_engine(engine):
    s = make_solution("identity", IDENTITY)
    request, a = identity_request()
    out = engine.execute_solution(s, request)
    assert bitwise_equal(out["A"], a)


def test_persistent_death_respawns_spare_and_retries_once(engine, gemm_def, gemm_workload):
    request = gemm_request(gemm_def, gemm_workload)
    out = engine.execute_solution(make_solution("flaky", DIE_ONCE), request,
                                  mode=ExecutorMode.PERSISTENT)
    assert out["C"].shape == (6, 128)           # survived one worker death

    with pytest.raises(PluginError) as err:
        engine.execute_solution(make_solution("doomed", ALWAYS_DIE), request,
                                mode=ExecutorMode.PERSISTENT)
    assert err.value.kind == "runtime"
    assert err.value.dead


def test_timeout_kills_the_plugin(engine, gemm_def, gemm_workload):
    request = gemm_request(gemm_def, gemm_workload)
    t0 = time.perf_counter()
    with pytest.raises(PluginError) as err:
        engine.execute_solution(make_solution("sleepy", GEMM_SLEEP), request,
                                timeout_ms=500.0)
    elapsed = time.perf_counter() - t0
    assert err.value.kind == "timeout"
    assert elapsed < 4.0                        # killed well before the 5 s sleep


def test_entry_import_error_is_a_compile_failure(engine):
    request, _ = identity_request()
    with pytest.raises(PluginError) as err:
        engine.execute_solution(make_solution("broken", GEMM_IMPORT_ERROR), request)
    assert err.value.kind == "compile"
    assert "a_module_that_does_not_exist" in str(err.value)


# ---------------------------------------------------------------------------
# malformed peers (driving PluginProcess directly)
# ---------------------------------------------------------------------------


def _script_process(tmp_path, script: str) -> PluginProcess:
    return PluginProcess([sys.executable, "-c", script], tmp_path, 10_000.0)


def test_garbage_after_hello_is_a_protocol_error(tmp_path):
    script = (
        "import sys, struct, time\n"
        "hello = b'{\"language\": \"x\"}'\n"
        "sys.stdout.buffer.write(struct.pack('<I', 1 + len(hello)) + bytes([1]) + hello)\n"
        "sys.stdout.buffer.write(b'\\xff\\xff\\xff\\xff\\xff')\n"
        "sys.stdout.buffer.flush()\n"
        "time.sleep(30)\n"
    )
    proc = _script_process(tmp_path, script)
    with pytest.raises(PluginError) as err:
        proc.request(Frame(FrameType.PING), 5000.0)
    assert err.value.kind == "protocol"
    assert not proc.alive()


def test_garbage_at_bootstrap_is_a_compile_error(tmp_path):
    script = (
        "import sys, time\n"
        "sys.stdout.buffer.write(b'\\xff' * 8)\n"
        "sys.stdout.buffer.flush()\n"
        "time.sleep(30)\n"
    )
    with pytest.raises(PluginError) as err:
        _script_process(tmp_path, script)
    assert err.value.kind == "compile"


def test_silent_exit_at_bootstrap_is_a_compile_error(tmp_path):
    with pytest.raises(PluginError) as err:
        _script_process(tmp_path, "import sys; sys.exit(9)")
    assert err.value.kind == "compile"


# ---------------------------------------------------------------------------
# timing
# ---------------------------------------------------------------------------


def busy_request(work: float) -> RunRequest:
    return RunRequest({"work": Tensor.scalar(work, DType.F32)}, "main.py::run", {})


def test_time_solution_mean_latency_positive(engine):
    s = make_solution("busy", BUSY)
    latency = engine.time_solution(s, busy_request(1.0),
                                   cfg=TimingConfig(warmup_runs=1, timed_runs=3))
    assert latency > 0.0


def test_doubling_the_work_roughly_doubles_latency(engine):
    s = make_solution("busy", BUSY)
    cfg = TimingConfig(warmup_runs=2, timed_runs=6, timeout_ms=30_000.0)
    for attempt in range(2):                    # one remeasure absorbs load spikes
        lat1 = engine.time_solution(s, busy_request(10.0), cfg=cfg)
        lat2 = engine.time_solution(s, busy_request(20.0), cfg=cfg)
        ratio = lat2 / lat1
        if 1.4 <= ratio <= 2.6 or attempt == 1:
            break
    assert 1.4 <= ratio <= 2.6                  # 2x work within +/-30%


def test_concurrent_timing_on_one_worker_serializes(engine):
    s = make_solution("busy", BUSY)
    cfg = TimingConfig(warmup_runs=0, timed_runs=3, timeout_ms=30_000.0)
    engine.time_solution(s, busy_request(1.0), cfg=cfg)   # warm the process
    worker = engine.worker()
    inner = worker.lock
    local = threading.local()
    spans: list[tuple[float, float]] = []

    class RecordingLock:
        def __enter__(self):
            inner.acquire()
            local.t0 = time.perf_counter()

        def __exit__(self, *exc):
            spans.append((local.t0, time.perf_counter()))
            inner.release()

    worker.lock = RecordingLock()

    def contender():
        engine.time_solution(s, busy_request(1.0), cfg=cfg, worker=worker)

    threads = [threading.Thread(target=contender) for _ in range(3)]
    for t in threads:
        t.start()
    for t in threads:
        t.join(timeout=60)
    worker.lock = inner
    assert len(spans) == 3
    spans.sort()
    for (_, prev_end), (next_start, _) in zip(spans, spans[1:]):
        assert next_start >= prev_end           # timing windows never overlap


def test_timing_failure_mid_window_aborts_with_that_status(engine, gemm_def, gemm_workload):
    request = gemm_request(gemm_def, gemm_workload)
    with pytest.raises(PluginError) as err:
        engine.time_solution(make_solution("crash", GEMM_CRASH), request)
    assert err.value.kind == "runtime"


# ---------------------------------------------------------------------------
# coercion
# ---------------------------------------------------------------------------


def test_coerce_outputs_lands_floats_on_declared_grid(gemm_def):
    raw = {"C": Tensor(DType.F32, np.asarray([[1.0004883, 2.0]], np.float32))}
    out = coerce_outputs(gemm_def, raw)
    assert out["C"].dtype is DType.F16
    assert out["C"].data.dtype == np.float16
    extra = coerce_outputs(gemm_def, {"C": raw["C"], "zzz": raw["C"]})
    assert "zzz" not in extra                   # undeclared outputs dropped
    assert coerce_outputs(gemm_def, {}) == {}   # missing left for the validator


# ---------------------------------------------------------------------------
# full evaluations
# ---------------------------------------------------------------------------


def test_run_evaluation_passes_correct_gemm(engine, gemm_def, gemm_workload):
    record = engine.run_evaluation(gemm_def, gemm_workload, make_solution("ok", GEMM_OK))
    assert record.status is EvalStatus.PASSED
    perf = record.performance
    assert perf is not None and perf.latency_ms > 0 and perf.reference_latency_ms > 0
    assert perf.speedup_factor == pytest.approx(
        perf.reference_latency_ms / perf.latency_ms, rel=1e-9
    )
    assert record.correctness.max_absolute_error <= 1e-3 + 1e-3 * 250
    assert record.environment.libs["numpy"] == np.__version__
    assert "T" in record.timestamp              # ISO 8601
    with pytest.raises(dataclasses.FrozenInstanceError):
        record.status = EvalStatus.TIMEOUT


def test_run_evaluation_statuses(engine, gemm_def, gemm_workload):
    def status_of(source, **kw):
        eng = engine
        if "timing" in kw:
            eng = BenchEngine(staging_root=engine.staging_root, timing=kw["timing"])
        try:
            return eng.run_evaluation(gemm_def, gemm_workload, make_solution(
                f"s{abs(hash(source)) % 10**6}", source))
        finally:
            if eng is not engine:
                eng.close()

    offset = status_of(GEMM_OFFSET)
    assert offset.status is EvalStatus.FAILED_CORRECTNESS
    assert offset.correctness.max_absolute_error == pytest.approx(10.0, rel=0.05)
    assert offset.performance is None

    crash = status_of(GEMM_CRASH)
    assert crash.status is EvalStatus.FAILED_RUNTIME
    assert "numerical meltdown" in crash.log

    broken = status_of(GEMM_IMPORT_ERROR)
    assert broken.status is EvalStatus.FAILED_COMPILE

    slow = status_of(GEMM_SLEEP, timing=TimingConfig(warmup_runs=0, timed_runs=1,
                                                     timeout_ms=500.0))
    assert slow.status is EvalStatus.TIMEOUT

    bad_shape = status_of(GEMM_BAD_SHAPE)
    assert bad_shape.status is EvalStatus.FAILED_CORRECTNESS
    assert "shape" in bad_shape.log.lower()

    empty = status_of(GEMM_NO_OUTPUT)
    assert empty.status is EvalStatus.FAILED_CORRECTNESS
    assert "C" in empty.log


def test_reference_outputs_never_ride_a_run_frame(tmp_path, gemm_def, gemm_workload):
    log: list = []
    engine = BenchEngine(
        staging_root=tmp_path / "stage",
        timing=TimingConfig(warmup_runs=0, timed_runs=2),
        frame_log=log,
    )
    try:
        record = engine.run_evaluation(gemm_def, gemm_workload, make_solution("ok", GEMM_OK))
    finally:
        engine.close()
    assert record.status is EvalStatus.PASSED

    bound = bind_workload(gemm_def, gemm_workload)
    inputs = materialize_workload(gemm_def, gemm_workload, bound)
    ref_wire = encode_wire(run_reference(gemm_def, inputs)["C"].data, DType.F16)
    assert len(ref_wire) == 6 * 128 * 2
    run_payloads = [p for (direction, ftype, p) in log
                    if direction == "send" and ftype is FrameType.RUN]
    assert run_payloads                          # the log actually saw traffic
    for payload in run_payloads:
        assert ref_wire not in payload


def test_records_are_append_only(engine, gemm_def, gemm_workload):
    s = make_solution("ok", GEMM_OK)
    first = engine.run_evaluation(gemm_def, gemm_workload, s)
    second = engine.run_evaluation(gemm_def, gemm_workload, s)
    assert first is not second
    assert first.status is second.status is EvalStatus.PASSED


def test_reference_solution_replays_the_builtin(engine, gemm_def, gemm_workload):
    request = gemm_request(gemm_def, gemm_workload)
    ref_sol = reference_solution(gemm_def)
    out = engine.execute_solution(ref_sol, dataclasses.replace(
        request, entry_point=ref_sol.entry_point))
    expected = run_reference(gemm_def, request.inputs)
    assert bitwise_equal(coerce_outputs(gemm_def, out)["C"], expected["C"])


# ---------------------------------------------------------------------------
# stochastic (sampling) evaluations
# ---------------------------------------------------------------------------

SAMPLER_OK = """\
import numpy as np
from kbench.kernels import sampling_core

def run(probs, top_k, top_p, seed):
    return {"samples": sampling_core(np.asarray(probs, np.float32), top_k, top_p, seed)}
"""

SAMPLER_LEAKY = """\
import numpy as np

def run(probs, top_k, top_p, seed):
    p = np.asarray(probs, np.float64)
    p = p / p.sum(axis=-1, keepdims=True)
    rng = np.random.Generator(np.random.Philox(key=seed))
    u = rng.random(p.shape[0])
    cdf = np.cumsum(p, axis=-1)
    idx = np.minimum((cdf < u[:, None]).sum(axis=-1), p.shape[-1] - 1)
    return {"samples": idx.astype(np.int64)}
"""


def sampling_definition():
    return parse_definition({
        "name": "toy_sampling_v8",
        "op_type": "sampling_top_k_top_p",
        "axes": {
            "B": {"type": "var"},
            "V": {"type": "const", "value": 8},
        },
        "inputs": {
            "probs": {"shape": ["B", "V"], "dtype": "float32"},
            "top_k": {"shape": None, "dtype": "int32"},
            "top_p": {"shape": None, "dtype": "float32"},
            "seed": {"shape": None, "dtype": "int64"},
        },
        "outputs": {
            "samples": {"shape": ["B"], "dtype": "int64"},
        },
        "reference": "invert the target CDF with a counter-based uniform per row",
    })


def sampling_workload(tmp_path, batch: int = 500) -> WorkloadRecord:
    base = np.array([0.5, 0.3, 0.2, 0, 0, 0, 0, 0], np.float32)
    probs = np.tile(base, (batch, 1))
    path = tmp_path / "probs.safetensors"
    save_archive_file(path, {"probs": Tensor(DType.F32, probs)})
    return WorkloadRecord(
        uuid="wl-sampling-1",
        axes={"B": batch},
        inputs={
            "probs": InputSpec(kind="archive", path=str(path), tensor_key="probs"),
            "top_k": InputSpec(kind="scalar", value=2),
            "top_p": InputSpec(kind="scalar", value=1.0),
            "seed": InputSpec(kind="scalar", value=1234),
        },
    )


def test_sampling_correct_sampler_passes(tmp_path, engine):
    from kbench.validators import StochasticConfig
    engine.stochastic = StochasticConfig(trials=8000, tau_tvd=0.02, seed=7)
    d = sampling_definition()
    w = sampling_workload(tmp_path)
    record = engine.run_evaluation(d, w, make_solution("sampler", SAMPLER_OK,
                                                       definition=d.name))
    assert record.status is EvalStatus.PASSED
    assert record.correctness.extra["trials"] == 8000
    assert 0.0 <= record.correctness.extra["tvd"] <= 0.02
    assert record.performance.speedup_factor > 0


def test_sampling_mask_violation_fails(tmp_path, engine):
    from kbench.validators import StochasticConfig
    engine.stochastic = StochasticConfig(trials=8000, tau_tvd=0.02, seed=7)
    d = sampling_definition()
    w = sampling_workload(tmp_path)
    record = engine.run_evaluation(d, w, make_solution("leaky", SAMPLER_LEAKY,
                                                       definition=d.name))
    assert record.status is EvalStatus.FAILED_CORRECTNESS
    assert record.correctness.extra["mask_violation"] is not None
    assert "mask" in record.log


# ---------------------------------------------------------------------------
# worker lifecycle
# ---------------------------------------------------------------------------


def test_worker_health_and_death(engine):
    s = make_solution("identity", IDENTITY)
    request, _ = identity_request()
    engine.execute_solution(s, request, mode=ExecutorMode.PERSISTENT)
    worker = engine.worker()
    assert worker.healthy()
    worker.kill()
    assert worker.state == "dead"
    assert not worker.healthy()
    with pytest.raises(PluginError):
        worker.process_for(Path("x"), [sys.executable], 1000.0)
    replacement = engine.worker()               # engine replaces a dead default
    assert replacement is not worker
    out = engine.execute_solution(s, request, mode=ExecutorMode.PERSISTENT)
    assert out["A"].shape == (6,)
