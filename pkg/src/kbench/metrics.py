"""fast_p metrics, leaderboard aggregation, and the iterative refinement loop.

``fast_p`` is the fraction of workloads on which a solution is both correct
and more than ``p`` times faster than the reference.  Sweeping ``p`` over a
grid yields a non-increasing curve whose area summarizes correctness and
performance in one number; at ``p = 0`` the value is exactly the correctness
rate.  Leaderboards average those curves pointwise across each author's
solutions for a definition.

`run_feedback_loop` drives a generate → benchmark → refine cycle: each
iteration asks a provider for a candidate solution, benchmarks it on every
workload, feeds the outcome summary back, and finally returns the candidate
with the best mean speedup among those that passed everywhere (earliest
iteration wins ties).
"""
from __future__ import annotations

import io
import json
import subprocess
from dataclasses import dataclass
from statistics import fmean
from typing import Callable, Sequence

import numpy as np

from .dataset import Dataset
from .errors import EmptyEvalSet, KbenchError, NoPassingSolution
from .trace import (
    DefinitionRecord,
    EvalStatus,
    EvaluationRecord,
    SolutionRecord,
    TraceRecord,
    WorkloadRecord,
    parse_trace,
    serialize_trace,
)

# Provider contract: called once per iteration with the definition and the
# previous iteration's outcome summary (None on the first call); returns the
# next candidate, or None when out of candidates.
CandidateProvider = Callable[[DefinitionRecord, "dict | None"], SolutionRecord | None]


def standard_grid() -> tuple[float, ...]:
    """Exact zero plus 64 log-spaced thresholds up to 4x."""
    return (0.0, *(float(p) for p in np.geomspace(2.0 ** -6, 4.0, 64)))


# ---------------------------------------------------------------------------
# fast_p
# ---------------------------------------------------------------------------


def fast_p(evals: Sequence[EvaluationRecord], p: float) -> float:
    """Fraction of records that PASSED with speedup strictly above ``p``."""
    if not evals:
        raise EmptyEvalSet("fast_p over an empty evaluation set")
    hits = sum(
        1
        for e in evals
        if e.status is EvalStatus.PASSED and e.performance.speedup_factor > p
    )
    return hits / len(evals)


@dataclass(frozen=True)
class FastPCurve:
    """fast_p sampled over an ascending threshold grid, with its area."""

    points: tuple[tuple[float, float], ...]  # (threshold, fraction)
    auc: float

    def __post_init__(self):
        values = [v for _, v in self.points]
        for a, b in zip(values, values[1:]):
            if b > a:
                raise ValueError("fast_p curve values must be non-increasing")

    @property
    def grid(self) -> tuple[float, ...]:
        return tuple(p for p, _ in self.points)

    @property
    def values(self) -> tuple[float, ...]:
        return tuple(v for _, v in self.points)

    def value_at(self, p: float) -> float:
        for threshold, value in self.points:
            if threshold == p:
                return value
        raise KeyError(f"threshold {p} is not on the curve's grid")


def fast_p_curve(
    evals: Sequence[EvaluationRecord], p_grid: Sequence[float] | None = None
) -> FastPCurve:
    if not evals:
        raise EmptyEvalSet("fast_p curve over an empty evaluation set")
    grid = tuple(float(p) for p in (standard_grid() if p_grid is None else p_grid))
    if len(grid) < 2:
        raise ValueError("threshold grid needs at least two points")
    if any(b <= a for a, b in zip(grid, grid[1:])):
        raise ValueError("threshold grid must be strictly ascending")
    values = tuple(fast_p(evals, p) for p in grid)
    return FastPCurve(
        points=tuple(zip(grid, values)),
        auc=float(np.trapezoid(values, grid)),
    )


def mean_curve(curves: Sequence[FastPCurve]) -> FastPCurve:
    """Pointwise average of curves sharing one grid."""
    if not curves:
        raise EmptyEvalSet("mean of zero curves")
    grid = curves[0].grid
    if any(c.grid != grid for c in curves):
        raise ValueError("curves use different threshold grids")
    values = np.mean([c.values for c in curves], axis=0)
    return FastPCurve(
        points=tuple(zip(grid, (float(v) for v in values))),
        auc=float(np.trapezoid(values, grid)),
    )


# ---------------------------------------------------------------------------
# leaderboard
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LeaderboardRow:
    author: str
    definition: str
    correctness_rate: float
    curve: FastPCurve

    @property
    def auc(self) -> float:
        return self.curve.auc


def aggregate_leaderboard(
    dataset: Dataset, p_grid: Sequence[float] | None = None
) -> list[LeaderboardRow]:
    """One row per (author, definition): the pointwise mean of that author's
    per-solution curves, sorted by auc desc, correctness rate desc, name."""
    groups: dict[tuple[str, str], dict[str, list[EvaluationRecord]]] = {}
    for trace in dataset.evaluations():
        solution = dataset.resolve_solution(trace)
        if solution is None:
            continue
        group = groups.setdefault((solution.author, trace.definition_name), {})
        group.setdefault(solution.name, []).append(trace.evaluation)

    rows = []
    for (author, definition), by_solution in sorted(groups.items()):
        curves = [
            fast_p_curve(by_solution[name], p_grid) for name in sorted(by_solution)
        ]
        curve = mean_curve(curves)
        rows.append(
            LeaderboardRow(
                author=author,
                definition=definition,
                correctness_rate=curve.values[0] if curve.grid[0] == 0.0
                else fmean(fast_p(by_solution[name], 0.0) for name in sorted(by_solution)),
                curve=curve,
            )
        )
    rows.sort(key=lambda r: (-r.auc, -r.correctness_rate, r.author, r.definition))
    return rows


def leaderboard_csv(rows: Sequence[LeaderboardRow]) -> str:
    """CSV report: one line per row, curve values in the grid's columns."""
    out = io.StringIO()
    if not rows:
        return ""
    grid = rows[0].curve.grid
    header = ["author", "definition", "correctness_rate", "auc"]
    header += [f"fast_{p:g}" for p in grid]
    print(",".join(header), file=out)
    for row in rows:
        if row.curve.grid != grid:
            raise ValueError("leaderboard rows use different threshold grids")
        cells = [row.author, row.definition,
                 f"{row.correctness_rate:.6g}", f"{row.auc:.6g}"]
        cells += [f"{v:.6g}" for v in row.curve.values]
        print(",".join(cells), file=out)
    return out.getvalue()


def leaderboard_document(rows: Sequence[LeaderboardRow]) -> dict:
    """JSON-serializable summary document mirroring the CSV."""
    return {
        "leaderboard": [
            {
                "author": row.author,
                "definition": row.definition,
                "correctness_rate": row.correctness_rate,
                "auc": row.auc,
                "curve": [[p, v] for p, v in row.curve.points],
            }
            for row in rows
        ]
    }


def curve_dump(curve: FastPCurve) -> str:
    """Plot-ready ``p,value`` lines (lossless: values round-trip via float)."""
    return "".join(f"{p!r},{v!r}\n" for p, v in curve.points)


# ---------------------------------------------------------------------------
# feedback loop
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FeedbackOutcome:
    solution: SolutionRecord
    traces: tuple[TraceRecord, ...]  # winner's per-workload evaluation traces
    iteration: int                   # 0-based iteration that produced the winner
    mean_speedup: float
    history: tuple[dict, ...]        # per-iteration summaries, as fed back


def _summarize(iteration: int, solution: SolutionRecord,
               records: Sequence[EvaluationRecord]) -> dict:
    failures = [
        {"workload": i, "status": r.status.value, "log": r.log}
        for i, r in enumerate(records)
        if r.status is not EvalStatus.PASSED
    ]
    speedups = [
        r.performance.speedup_factor
        for r in records
        if r.status is EvalStatus.PASSED
    ]
    return {
        "iteration": iteration,
        "solution": solution.name,
        "passed": not failures,
        "statuses": [r.status.value for r in records],
        "mean_speedup": fmean(speedups) if speedups else None,
        "failures": failures,
    }


def run_feedback_loop(
    provider: CandidateProvider,
    definition: DefinitionRecord,
    workloads: Sequence[WorkloadRecord],
    iterations: int,
    engine,
    *,
    hidden_workloads: Sequence[WorkloadRecord] = (),
) -> FeedbackOutcome:
    """Generate → benchmark → refine for up to ``iterations`` rounds.

    A candidate joins the winner pool only by PASSING every workload (and
    every hidden workload, when provided — hidden results are withheld from
    the feedback summary).  The pool's best mean speedup wins; on ties the
    earliest iteration is kept.  If the pool ends empty the per-iteration
    summaries are raised as the ``digest`` of `NoPassingSolution`.
    """
    if iterations < 1:
        raise ValueError("iterations must be >= 1")
    if not workloads:
        raise ValueError("at least one workload is required")

    best: tuple[float, int, SolutionRecord, tuple[TraceRecord, ...]] | None = None
    history: list[dict] = []
    feedback: dict | None = None
    for i in range(iterations):
        solution = provider(definition, feedback)
        if solution is None:
            break
        records = [engine.run_evaluation(definition, w, solution) for w in workloads]
        feedback = _summarize(i, solution, records)
        history.append(feedback)
        if all(r.status is EvalStatus.PASSED for r in records):
            hidden = [
                engine.run_evaluation(definition, w, solution)
                for w in hidden_workloads
            ]
            if all(r.status is EvalStatus.PASSED for r in hidden):
                speedup = fmean(r.performance.speedup_factor for r in records)
                if best is None or speedup > best[0]:
                    traces = tuple(
                        TraceRecord(definition=definition, workload=w,
                                    solution=solution, evaluation=r)
                        for w, r in zip(workloads, records)
                    )
                    best = (speedup, i, solution, traces)

    if best is None:
        raise NoPassingSolution(
            f"no candidate passed every workload for {definition.name!r} "
            f"after {len(history)} iteration(s)",
            digest=history,
        )
    speedup, iteration, solution, traces = best
    return FeedbackOutcome(
        solution=solution,
        traces=traces,
        iteration=iteration,
        mean_speedup=speedup,
        history=tuple(history),
    )


# ---------------------------------------------------------------------------
# providers
# ---------------------------------------------------------------------------


def directory_provider(root) -> CandidateProvider:
    """Yields the solution documents in ``root`` (sorted ``*.json``), one per
    iteration, ignoring feedback; None once exhausted."""
    from pathlib import Path

    files = sorted(Path(root).glob("*.json"))
    state = {"next": 0}

    def provide(definition: DefinitionRecord, feedback: dict | None):
        while state["next"] < len(files):
            file = files[state["next"]]
            state["next"] += 1
            record = parse_trace(file.read_text("utf-8"))
            if isinstance(record, SolutionRecord):
                if record.definition != definition.name:
                    raise KbenchError(
                        f"{file.name} targets definition {record.definition!r}, "
                        f"expected {definition.name!r}"
                    )
                return record
        return None

    return provide


def command_provider(argv: Sequence[str], timeout_s: float = 600.0) -> CandidateProvider:
    """Runs ``argv`` once per iteration, writing a JSON request document
    (definition plus prior-iteration feedback) to its stdin and parsing a
    solution document from its stdout.  A non-zero exit ends the supply."""

    def provide(definition: DefinitionRecord, feedback: dict | None):
        request = json.dumps({
            "definition": json.loads(serialize_trace(definition)),
            "feedback": feedback,
        })
        proc = subprocess.run(
            list(argv), input=request.encode(), capture_output=True,
            timeout=timeout_s,
        )
        if proc.returncode != 0:
            return None
        record = parse_trace(proc.stdout.decode("utf-8"))
        if not isinstance(record, SolutionRecord):
            raise KbenchError("provider command emitted a non-solution document")
        return record

    return provide
