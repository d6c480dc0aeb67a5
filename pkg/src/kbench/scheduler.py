"""Round-based multi-worker scheduling over an EWMA cost model.

Each round the loop: checks worker health (dead workers are replaced from a
pre-created spare pool), takes a micro-batch of pending jobs (batch size =
number of live workers), builds a cost matrix from the EWMA model with
discounts for warm compile caches and resident reference definitions, solves
it with the Hungarian algorithm, dispatches the assigned pairs concurrently
(one job per worker), then collects in dispatch order and folds observed
latencies back into the cost model.

Failure policy: PASSED and FAILED_CORRECTNESS are final verdicts.  Other
failures in persistent mode are retried, and a job failing ``defer_after``
times is switched to isolated mode for its remaining attempts — a clean
process rules out cross-run contamination, so the isolated verdict is final.
A record collected from a worker that died under the job is suspect: the job
is retried elsewhere instead (the suspect record is kept only when the
attempt budget is exhausted).

Determinism: given the same job order, worker set, cost-model state, and
injected-fault script, rounds, assignments, and the emission order are all
reproducible — the Hungarian solver tie-breaks lexicographically and
collection follows dispatch order, not completion order.
"""
from __future__ import annotations

import math
from collections import deque
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

from .engine import ExecutorMode, Worker, solution_digest
from .errors import SchedulerStalled
from .hungarian import hungarian_assign
from .trace import DefinitionRecord, EvalStatus, EvaluationRecord, SolutionRecord, WorkloadRecord

#: Cost assigned to padding cells when a rectangular matrix is squared up.
#: Far above any plausible latency estimate, so phantom rows absorb the
#: spare workers and real jobs never land on phantom columns.
PAD_SENTINEL = 1e12

GAMMA_CACHE = 0.5   # discount when the worker holds a warm bootstrap for the solution
GAMMA_REF = 0.8     # discount when the definition's reference already ran on the worker


@dataclass
class Job:
    """One Solution x Workload evaluation task."""

    definition: DefinitionRecord
    workload: WorkloadRecord
    solution: SolutionRecord
    attempts: int = 0
    mode_override: ExecutorMode | None = None
    failures: int = 0   # non-final failures so far (drives isolated-mode deferral)

    @property
    def key(self) -> tuple[str, str, str]:
        return (self.definition.name, self.workload.uuid, self.solution.name)


@dataclass
class CostModel:
    """Per-(solution name, worker id) latency estimates, EWMA-updated."""

    alpha: float = 0.3
    default_ms: float = 100.0
    costs: dict[tuple[str, str], float] = field(default_factory=dict)

    def __post_init__(self):
        if not 0 < self.alpha <= 1:
            raise ValueError("alpha must lie in (0, 1]")
        if not self.default_ms > 0:
            raise ValueError("default_ms must be positive")

    def estimate(self, solution: str, worker: str) -> float:
        return self.costs.get((solution, worker), self.default_ms)


def ewma_update(cm: CostModel, solution: str, worker: str, observed_ms: float) -> CostModel:
    """Fold one observation in: cost' = alpha*observed + (1-alpha)*previous.

    An unseen pair initializes straight to the observation.  Updates in
    place and returns the model.
    """
    if not (math.isfinite(observed_ms) and observed_ms > 0):
        raise ValueError(f"observed_ms must be positive and finite, got {observed_ms}")
    key = (solution, worker)
    prev = cm.costs.get(key)
    if prev is None:
        cm.costs[key] = float(observed_ms)
    else:
        cm.costs[key] = cm.alpha * float(observed_ms) + (1.0 - cm.alpha) * prev
    return cm


def build_cost_matrix(
    jobs: list[Job],
    workers: list[Worker],
    cm: CostModel,
    gamma_cache: float = GAMMA_CACHE,
    gamma_ref: float = GAMMA_REF,
) -> list[list[float]]:
    """Square cost matrix over jobs x workers, sentinel-padded.

    Base entries come from the cost model; a worker holding a warm bootstrap
    cache for the job's solution earns the ``gamma_cache`` discount and one
    holding the definition's reference resident earns ``gamma_ref`` (both can
    apply).  Rows are jobs, columns workers.
    """
    if not jobs or not workers:
        raise ValueError("jobs and workers must be non-empty")
    n = max(len(jobs), len(workers))
    matrix = [[PAD_SENTINEL] * n for _ in range(n)]
    for i, job in enumerate(jobs):
        digest = solution_digest(job.solution)
        for k, worker in enumerate(workers):
            cost = cm.estimate(job.solution.name, worker.id)
            if digest in worker.warm_solutions:
                cost *= gamma_cache
            if job.definition.name in worker.resident_definitions:
                cost *= gamma_ref
            matrix[i][k] = cost
    return matrix


_FINAL_STATUSES = (EvalStatus.PASSED, EvalStatus.FAILED_CORRECTNESS)


def schedule_loop(
    jobs,
    workers,
    engine,
    cm: CostModel | None = None,
    *,
    mode: ExecutorMode = ExecutorMode.PERSISTENT,
    batch_size: int | None = None,
    max_retries: int = 3,
    defer_after: int = 2,
    gamma_cache: float = GAMMA_CACHE,
    gamma_ref: float = GAMMA_REF,
    spares: int | None = None,
    on_event=None,
):
    """Drive every job to exactly one final record; yields (job, record).

    ``engine`` needs ``run_evaluation(d, w, s, worker=..., mode=...)`` and
    ``new_worker(worker_id)`` — the benchmarking engine satisfies this, and
    tests substitute scripted fakes.  ``on_event`` receives tuples describing
    rounds, assignments, retries, deferrals, and worker deaths; the event
    stream is the loop's determinism witness.

    Raises SchedulerStalled when every worker is dead and the spare pool is
    exhausted.
    """
    pending = deque(jobs)
    if not pending:
        return
    workers = list(workers)
    if not workers:
        raise SchedulerStalled("no workers provided")
    cm = cm if cm is not None else CostModel()
    if spares is None:
        spares = max(2, len(workers))
    spare_pool = deque(engine.new_worker(f"spare{i}") for i in range(spares))
    emit = on_event or (lambda event: None)
    round_no = 0

    def run_one(job: Job, worker: Worker):
        return engine.run_evaluation(
            job.definition, job.workload, job.solution,
            worker=worker, mode=job.mode_override or mode,
        )

    while pending:
        alive = []
        for worker in workers:
            if worker.healthy():
                alive.append(worker)
                continue
            emit(("worker_dead", worker.id))
            if spare_pool:
                spare = spare_pool.popleft()
                emit(("respawn", worker.id, spare.id))
                alive.append(spare)
        workers = alive
        if not workers:
            raise SchedulerStalled("every worker is dead and the spare pool is exhausted")

        width = min(batch_size or len(workers), len(workers), len(pending))
        batch = [pending.popleft() for _ in range(width)]
        emit(("round", round_no, tuple(w.id for w in workers), tuple(j.key for j in batch)))
        columns = hungarian_assign(build_cost_matrix(batch, workers, cm, gamma_cache, gamma_ref))

        pairs = []
        for i, job in enumerate(batch):
            worker = workers[columns[i]]
            job.attempts += 1
            emit(("assign", job.key, worker.id, (job.mode_override or mode).value))
            pairs.append((job, worker))

        with ThreadPoolExecutor(max_workers=len(pairs)) as pool:
            futures = [(job, worker, pool.submit(run_one, job, worker)) for job, worker in pairs]
            collected = [(job, worker, f.result()) for job, worker, f in futures]

        for job, worker, record in collected:
            emit(("collect", job.key, worker.id, record.status.value))
            if worker.state == "dead":
                # infrastructure fault, not a verdict: retry elsewhere unless
                # the attempt budget is spent (then the suspect record stands)
                if job.attempts > max_retries:
                    emit(("final", job.key, record.status.value))
                    yield job, record
                else:
                    emit(("retry", job.key, "worker died"))
                    pending.append(job)
                continue
            if record.performance is not None:
                ewma_update(cm, job.solution.name, worker.id, record.performance.latency_ms)
            if record.status in _FINAL_STATUSES:
                emit(("final", job.key, record.status.value))
                yield job, record
                continue
            job.failures += 1
            ran_isolated = (job.mode_override or mode) is ExecutorMode.ISOLATED
            if ran_isolated or job.attempts > max_retries:
                emit(("final", job.key, record.status.value))
                yield job, record
                continue
            if job.failures >= defer_after:
                job.mode_override = ExecutorMode.ISOLATED
                emit(("defer", job.key))
            emit(("retry", job.key, record.status.value))
            pending.append(job)
        round_no += 1
