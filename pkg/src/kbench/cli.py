"""Command-line surface tying the modules into one operational loop.

Five commands over a dataset directory of trace-schema JSON documents:

- ``validate`` — parse every document, list schema violations.
- ``bench``    — schedule every (solution, workload) pair onto plugin
  workers and append one evaluation trace per pair.
- ``report``   — leaderboard CSV/JSON plus per-(author, definition)
  speedup-threshold curve dumps.
- ``apply-demo`` — time one definition through the in-process reference
  and through routed ``apply()``, printing latencies and probe counters.
- ``loop``     — generate → benchmark → refine against a candidate
  provider, writing the winning solution and its traces back.

Exit codes: 0 success; 1 validation or evaluation failures present;
2 operational error (bad arguments, missing files, stalled workers).
"""
from __future__ import annotations

import functools
import json
import shlex
import sys
import tempfile
import time
from pathlib import Path

import click

from .dataset import Dataset
from .dispatch import ApplyRuntime, build_index, lookup, plugin_bootstrap
from .engine import BenchEngine, ExecutorMode, TimingConfig
from .errors import EmptyDataset, EmptyEvalSet, KbenchError, NoPassingSolution
from .kernels import run_reference
from .materialize import materialize_workload
from .metrics import (
    aggregate_leaderboard,
    command_provider,
    curve_dump,
    directory_provider,
    leaderboard_csv,
    leaderboard_document,
    run_feedback_loop,
)
from .scheduler import Job, schedule_loop
from .trace import EvalStatus, TraceRecord, WorkloadRecord, bind_workload, serialize_trace
from .validators import validate_outputs

_TIMING = TimingConfig()


def _operational(f):
    """Turn harness errors into a message on stderr and exit code 2."""

    @functools.wraps(f)
    def wrapper(*args, **kwargs):
        try:
            return f(*args, **kwargs)
        except (KbenchError, OSError) as exc:
            click.echo(f"error: {exc}", err=True)
            sys.exit(2)

    return wrapper


dataset_option = click.option(
    "--dataset", "dataset_dir", required=True,
    type=click.Path(file_okay=False, path_type=Path),
    help="Directory of trace-schema JSON documents.")
seed_option = click.option(
    "--seed", default=0, show_default=True,
    help="Base seed for workload input materialization.")


def timing_options(f):
    f = click.option("--warmup", default=_TIMING.warmup_runs, show_default=True,
                     type=click.IntRange(min=0),
                     help="Untimed warm-up executions per evaluation.")(f)
    f = click.option("--runs", default=_TIMING.timed_runs, show_default=True,
                     type=click.IntRange(min=1),
                     help="Timed executions per evaluation.")(f)
    return f


@click.group()
def cli():
    """Benchmark kernel solutions, aggregate leaderboards, and route calls
    through the fastest measured implementation."""


main = cli


# ---------------------------------------------------------------------------
# validate
# ---------------------------------------------------------------------------


@cli.command()
@dataset_option
@_operational
def validate(dataset_dir: Path):
    """Parse every document and report schema violations."""
    ds = Dataset.load(dataset_dir)
    for violation in ds.violations:
        click.echo(str(violation))
    documents = len(list(dataset_dir.glob("*.json")))
    click.echo(f"{documents} document(s), {len(ds.violations)} violation(s)")
    sys.exit(1 if ds.violations else 0)


# ---------------------------------------------------------------------------
# bench
# ---------------------------------------------------------------------------


@cli.command()
@dataset_option
@click.option("--workers", default=2, show_default=True, type=click.IntRange(min=1),
              help="Number of persistent plugin workers.")
@click.option("--mode", default="persistent", show_default=True,
              type=click.Choice(["isolated", "persistent"]),
              help="Run each job in a long-lived worker or a fresh process.")
@timing_options
@seed_option
@click.option("--filter-definition", default=None,
              help="Only run pairs for this definition.")
@click.option("--filter-solution", default=None,
              help="Only run pairs for this solution.")
@_operational
def bench(dataset_dir: Path, workers: int, mode: str, warmup: int, runs: int,
          seed: int, filter_definition: str | None, filter_solution: str | None):
    """Evaluate every (solution, workload) pair and append the traces."""
    ds = Dataset.load(dataset_dir)
    if ds.violations:
        for violation in ds.violations:
            click.echo(str(violation), err=True)
        click.echo("error: dataset has schema violations; fix or remove them first",
                   err=True)
        sys.exit(2)

    jobs = []
    for name in sorted(ds.definitions):
        if filter_definition and name != filter_definition:
            continue
        definition = ds.definitions[name]
        solutions = ds.solutions_for(name)
        if filter_solution:
            solutions = [s for s in solutions if s.name == filter_solution]
        for wt in ds.workloads_for(name):
            for solution in solutions:
                jobs.append(Job(definition, wt.workload, solution))
    if not jobs:
        click.echo("0 evaluation(s) written, 0 failed")
        sys.exit(0)

    failed = written = 0
    with tempfile.TemporaryDirectory(prefix="kbench-stage-") as staging:
        engine = BenchEngine(
            staging_root=Path(staging),
            timing=TimingConfig(warmup_runs=warmup, timed_runs=runs),
            mode=ExecutorMode(mode),
            seed_base=seed,
            archive_root=dataset_dir,
        )
        pool = [engine.new_worker(f"w{i}") for i in range(workers)]
        try:
            results = schedule_loop(jobs, pool, engine, mode=ExecutorMode(mode))
            for job, record in results:
                trace = TraceRecord(definition=job.definition.name,
                                    workload=job.workload,
                                    solution=job.solution.name,
                                    evaluation=record)
                path = ds.add_trace(trace, f"{job.solution.name}__{job.workload.uuid[:8]}")
                extra = ""
                if record.performance is not None:
                    extra = f" speedup={record.performance.speedup_factor:.3f}"
                click.echo(f"{job.definition.name} :: {job.solution.name} x "
                           f"{job.workload.uuid[:8]} -> {record.status.value}{extra}"
                           f"  ({path.name})")
                written += 1
                failed += record.status is not EvalStatus.PASSED
        finally:
            for worker in pool:
                worker.close()
            engine.close()
    click.echo(f"{written} evaluation(s) written, {failed} failed")
    sys.exit(1 if failed else 0)


# ---------------------------------------------------------------------------
# report
# ---------------------------------------------------------------------------


def _slug(text: str) -> str:
    return "".join(c if c.isalnum() or c in "-_." else "_" for c in text)


@cli.command()
@dataset_option
@click.option("--out", "out_dir", default=None,
              type=click.Path(file_okay=False, path_type=Path),
              help="Report directory  [default: <dataset>/report].")
@_operational
def report(dataset_dir: Path, out_dir: Path | None):
    """Write the leaderboard and per-(author, definition) curve dumps."""
    ds = Dataset.load(dataset_dir)
    rows = aggregate_leaderboard(ds)
    if not rows:
        raise EmptyEvalSet(f"no evaluation records in {dataset_dir}")
    out = out_dir if out_dir is not None else dataset_dir / "report"
    out.mkdir(parents=True, exist_ok=True)
    (out / "leaderboard.csv").write_text(leaderboard_csv(rows), "utf-8")
    (out / "leaderboard.json").write_text(
        json.dumps(leaderboard_document(rows), indent=2) + "\n", "utf-8")
    curves = out / "curves"
    curves.mkdir(exist_ok=True)
    for row in rows:
        name = f"{_slug(row.author)}__{_slug(row.definition)}.csv"
        (curves / name).write_text(curve_dump(row.curve), "utf-8")
    for rank, row in enumerate(rows, 1):
        click.echo(f"{rank:3d}. {row.author:<20} {row.definition:<28} "
                   f"auc={row.auc:.4f} correct={row.correctness_rate:.3f}")
    click.echo(f"report written to {out}")
    sys.exit(0)


# ---------------------------------------------------------------------------
# apply-demo
# ---------------------------------------------------------------------------


def _per_call_seconds(fn, calls: int, reps: int = 3) -> float:
    best = float("inf")
    for _ in range(reps):
        start = time.perf_counter()
        for _ in range(calls):
            fn()
        best = min(best, (time.perf_counter() - start) / calls)
    return best


def _parse_axis_overrides(pairs) -> dict[str, int]:
    overrides = {}
    for item in pairs:
        name, sep, value = item.partition("=")
        if not sep or not name or not value.lstrip("-").isdigit():
            raise click.BadParameter(f"expected NAME=INTEGER, got {item!r}",
                                     param_hint="--axis")
        overrides[name] = int(value)
    return overrides


@cli.command("apply-demo")
@dataset_option
@click.option("--definition", "definition_name", required=True,
              help="Definition to execute.")
@click.option("--axis", "axis_overrides", multiple=True, metavar="NAME=VALUE",
              help="Override a workload axis (repeatable).")
@click.option("--calls", default=50, show_default=True, type=click.IntRange(min=1),
              help="Calls per timing loop.")
@seed_option
@_operational
def apply_demo(dataset_dir: Path, definition_name: str, axis_overrides, calls: int,
               seed: int):
    """Time one definition via the reference and via routed apply().

    Routing activates only with FIB_ENABLE_APPLY=1 in the environment; with
    the flag unset the two paths are identical and the probe counter stays 0.
    """
    ds = Dataset.load(dataset_dir)
    if not ds.definitions:
        raise EmptyDataset(f"no definitions in {dataset_dir}")
    definition = ds.definitions.get(definition_name)
    if definition is None:
        raise KbenchError(f"unknown definition {definition_name!r}")
    workload_traces = ds.workloads_for(definition_name)
    if not workload_traces:
        raise EmptyDataset(f"no workloads for definition {definition_name!r}")

    base = workload_traces[0].workload
    axes = dict(base.axes)
    axes.update(_parse_axis_overrides(axis_overrides))
    workload = WorkloadRecord(uuid=base.uuid, axes=axes, inputs=base.inputs)
    bound = bind_workload(definition, workload)
    inputs = materialize_workload(definition, workload, bound, seed, root=ds.root)

    def fallback(tensors, _axes):
        return run_reference(definition, tensors)

    index = build_index(ds)
    entry = lookup(index, definition.name, axes)
    with tempfile.TemporaryDirectory(prefix="kbench-stage-") as staging:
        engine = BenchEngine(staging_root=Path(staging), archive_root=dataset_dir)
        try:
            runtime = ApplyRuntime(
                index, plugin_bootstrap(engine, ds.definitions, ds.solutions))
            routed_out = runtime.apply(definition.name, inputs, axes, fallback)
            verdict = validate_outputs(routed_out, fallback(inputs, axes))
            reference_s = _per_call_seconds(lambda: fallback(inputs, axes), calls)
            apply_s = _per_call_seconds(
                lambda: runtime.apply(definition.name, inputs, axes, fallback), calls)
        finally:
            engine.close()

    target = entry.solution if entry is not None else "none (fallback-only)"
    click.echo(f"routing enabled: {runtime.enabled}; index target: {target}")
    click.echo(f"outputs match reference: {verdict.passed}")
    click.echo(f"fallback : {reference_s * 1e3:.4f} ms/call")
    click.echo(f"apply()  : {apply_s * 1e3:.4f} ms/call")
    if runtime.stats["routed"] > 0:
        click.echo(f"routed speedup over fallback: {reference_s / apply_s:.3f}x")
    else:
        overhead = apply_s - reference_s
        click.echo(f"dispatch overhead: {overhead * 1e6:.2f} us/call "
                   f"(ratio {apply_s / reference_s:.4f})")
    click.echo(f"stats: {runtime.stats}")
    sys.exit(0)


# ---------------------------------------------------------------------------
# loop
# ---------------------------------------------------------------------------


@cli.command()
@dataset_option
@click.option("--definition", "definition_name", required=True,
              help="Definition the candidates implement.")
@click.option("--provider", "provider_spec", required=True,
              help="Directory of solution documents, or a command run once "
                   "per iteration (JSON request on stdin, solution on stdout).")
@click.option("--iterations", default=4, show_default=True,
              type=click.IntRange(min=1), help="Maximum refinement rounds.")
@timing_options
@seed_option
@_operational
def loop(dataset_dir: Path, definition_name: str, provider_spec: str,
         iterations: int, warmup: int, runs: int, seed: int):
    """Generate, benchmark, refine; write the winner and its traces back."""
    ds = Dataset.load(dataset_dir)
    definition = ds.definitions.get(definition_name)
    if definition is None:
        raise KbenchError(f"unknown definition {definition_name!r}")
    workloads = [t.workload for t in ds.workloads_for(definition_name)]
    if not workloads:
        raise EmptyDataset(f"no workloads for definition {definition_name!r}")

    if Path(provider_spec).is_dir():
        provider = directory_provider(provider_spec)
    else:
        provider = command_provider(shlex.split(provider_spec))

    with tempfile.TemporaryDirectory(prefix="kbench-stage-") as staging:
        engine = BenchEngine(
            staging_root=Path(staging),
            timing=TimingConfig(warmup_runs=warmup, timed_runs=runs),
            seed_base=seed,
            archive_root=dataset_dir,
        )
        try:
            outcome = run_feedback_loop(provider, definition, workloads,
                                        iterations, engine)
        except NoPassingSolution as exc:
            click.echo(f"no passing solution: {exc}", err=True)
            for summary in exc.digest:
                click.echo(json.dumps(summary), err=True)
            sys.exit(1)
        finally:
            engine.close()

    target = ds.root / f"{outcome.solution.name}.json"
    k = 1
    while target.exists():
        target = ds.root / f"{outcome.solution.name}_{k}.json"
        k += 1
    target.write_text(serialize_trace(outcome.solution), "utf-8")
    for trace in outcome.traces:
        ds.add_trace(trace, f"{outcome.solution.name}__eval")
    click.echo(f"winner: {outcome.solution.name} (iteration {outcome.iteration}, "
               f"mean speedup {outcome.mean_speedup:.3f}) -> {target.name}")
    sys.exit(0)


if __name__ == "__main__":
    main()
