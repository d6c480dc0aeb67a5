"""Runtime operator dispatch: offline index build, O(1) online routing.

`build_index` scans a dataset's evaluations, keeps the ones that PASSED
under a configurable relative-error threshold, keys them by definition plus
power-of-two-bucketed var-axis values, and records the lowest-latency
solution per key.  `ApplyRuntime.apply` then routes a call through exactly
one key construction and one hash probe; anything else — disabled flag,
unknown key, demoted key, plugin failure after one retry — transparently
falls back to the caller's own implementation.  Routing is gated on the
``FIB_ENABLE_APPLY=1`` environment variable, read live on every call.
"""
from __future__ import annotations

import hashlib
import json
import math
import os
import threading
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping, Sequence

from .dataset import Dataset
from .engine import coerce_outputs, resolve_launcher, stage_solution
from .errors import KbenchError
from .protocol import RunRequest
from .trace import DefinitionRecord, EvalStatus, SolutionRecord, serialize_trace

INDEX_VERSION = 1


def pow2_bucket(value: int) -> int:
    """Smallest power of two at or above ``value`` (monotone; 0 and 1 share
    bucket 1, so e.g. 6 -> 8)."""
    if value < 0:
        raise ValueError(f"axis values are non-negative, got {value}")
    return 1 if value <= 1 else 1 << (value - 1).bit_length()


@dataclass(frozen=True)
class DispatchKey:
    definition: str
    features: tuple[tuple[str, int], ...]  # (axis name, bucketed value), name-sorted


@dataclass(frozen=True)
class IndexEntry:
    solution: str
    latency_ms: float
    bootstrap: str  # "aot" | "jit"


@dataclass(frozen=True)
class ApplyConfig:
    error_threshold: float = 1e-2  # max allowed max_relative_error
    aot_ratio: float = 0.5         # fraction of selected solutions pre-bootstrapped
    # per-definition override of which var axes form the key (default: all)
    feature_axes: Mapping[str, Sequence[str]] | None = None

    def __post_init__(self):
        if not 0.0 <= self.aot_ratio <= 1.0:
            raise ValueError(f"aot_ratio must be in [0, 1], got {self.aot_ratio}")
        if not self.error_threshold >= 0:
            raise ValueError("error_threshold must be non-negative")


@dataclass(frozen=True)
class DispatchIndex:
    """Immutable key→solution routing table with its build metadata."""

    version: int
    error_threshold: float
    dataset_hash: str
    feature_axes: tuple[tuple[str, tuple[str, ...]], ...]  # definition → key axes
    entries: tuple[tuple[DispatchKey, IndexEntry], ...]

    def __post_init__(self):
        object.__setattr__(self, "_map", dict(self.entries))
        object.__setattr__(self, "_features", dict(self.feature_axes))

    def __len__(self) -> int:
        return len(self.entries)

    def key_for(self, definition: str, axes: Mapping[str, int]) -> DispatchKey | None:
        names = self._features.get(definition)
        if names is None:
            return None
        features = []
        for name in names:
            value = axes.get(name)
            if value is None:
                return None
            features.append((name, pow2_bucket(int(value))))
        return DispatchKey(definition, tuple(features))

    def get(self, key: DispatchKey | None) -> IndexEntry | None:
        return None if key is None else self._map.get(key)


def lookup(index: DispatchIndex, definition: str,
           axes: Mapping[str, int]) -> IndexEntry | None:
    """Single hash probe; None means the caller should fall back."""
    return index.get(index.key_for(definition, axes))


# ---------------------------------------------------------------------------
# offline build
# ---------------------------------------------------------------------------


def _dataset_hash(dataset: Dataset) -> str:
    texts = sorted(
        serialize_trace(trace)
        for _, trace in dataset.traces
        if trace.evaluation is not None
    )
    digest = hashlib.sha256("\0".join(texts).encode("utf-8"))
    return digest.hexdigest()[:16]


def build_index(dataset: Dataset, cfg: ApplyConfig = ApplyConfig()) -> DispatchIndex:
    """Pure function of (dataset, cfg); an eval-free dataset yields an empty
    index whose lookups all miss."""
    feature_axes: dict[str, tuple[str, ...]] = {}
    for name, definition in dataset.definitions.items():
        if cfg.feature_axes is not None and name in cfg.feature_axes:
            axes = tuple(cfg.feature_axes[name])
            unknown = [a for a in axes if a not in definition.axes]
            if unknown:
                raise KbenchError(f"feature axes {unknown} not in definition {name!r}")
        else:
            axes = tuple(sorted(
                a for a, spec in definition.axes.items() if spec.kind == "var"
            ))
        feature_axes[name] = axes

    best: dict[DispatchKey, IndexEntry] = {}
    for trace in dataset.evaluations():
        record = trace.evaluation
        if record.status is not EvalStatus.PASSED:
            continue
        if record.correctness.max_relative_error > cfg.error_threshold:
            continue
        solution = dataset.resolve_solution(trace)
        if solution is None or trace.definition_name not in feature_axes:
            continue
        features = tuple(
            (a, pow2_bucket(int(trace.workload.axes[a])))
            for a in feature_axes[trace.definition_name]
            if a in trace.workload.axes
        )
        if len(features) != len(feature_axes[trace.definition_name]):
            continue
        key = DispatchKey(trace.definition_name, features)
        entry = IndexEntry(solution.name, record.performance.latency_ms, "jit")
        incumbent = best.get(key)
        if incumbent is None or (entry.latency_ms, entry.solution) < (
            incumbent.latency_ms, incumbent.solution
        ):
            best[key] = entry

    counts = Counter(entry.solution for entry in best.values())
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    n_aot = min(len(ranked), max(0, math.ceil(cfg.aot_ratio * len(ranked) - 1e-12)))
    aot = {name for name, _ in ranked[:n_aot]}
    entries = tuple(
        (key, IndexEntry(e.solution, e.latency_ms,
                         "aot" if e.solution in aot else "jit"))
        for key, e in sorted(best.items(), key=lambda kv: (
            kv[0].definition, kv[0].features))
    )
    return DispatchIndex(
        version=INDEX_VERSION,
        error_threshold=cfg.error_threshold,
        dataset_hash=_dataset_hash(dataset),
        feature_axes=tuple(sorted(feature_axes.items())),
        entries=entries,
    )


# ---------------------------------------------------------------------------
# persistence
# ---------------------------------------------------------------------------


def index_document(index: DispatchIndex) -> dict:
    return {
        "version": index.version,
        "error_threshold": index.error_threshold,
        "dataset_hash": index.dataset_hash,
        "feature_axes": {name: list(axes) for name, axes in index.feature_axes},
        "entries": [
            {
                "definition": key.definition,
                "features": [[a, b] for a, b in key.features],
                "solution": entry.solution,
                "latency_ms": entry.latency_ms,
                "bootstrap": entry.bootstrap,
            }
            for key, entry in index.entries
        ],
    }


def save_index(index: DispatchIndex, path: str | Path) -> None:
    Path(path).write_text(json.dumps(index_document(index), indent=2) + "\n", "utf-8")


def load_index(path: str | Path) -> DispatchIndex:
    obj = json.loads(Path(path).read_text("utf-8"))
    if obj.get("version") != INDEX_VERSION:
        raise KbenchError(f"unsupported index version {obj.get('version')!r}")
    return DispatchIndex(
        version=obj["version"],
        error_threshold=float(obj["error_threshold"]),
        dataset_hash=obj["dataset_hash"],
        feature_axes=tuple(sorted(
            (name, tuple(axes)) for name, axes in obj["feature_axes"].items()
        )),
        entries=tuple(
            (
                DispatchKey(e["definition"],
                            tuple((a, int(b)) for a, b in e["features"])),
                IndexEntry(e["solution"], float(e["latency_ms"]), e["bootstrap"]),
            )
            for e in obj["entries"]
        ),
    )


# ---------------------------------------------------------------------------
# online routing
# ---------------------------------------------------------------------------

# A handle executes one kernel call: (inputs by name, axes) -> outputs by name.
KernelHandle = Callable[[Mapping, Mapping[str, int]], dict]
# Bootstrap turns a selected solution name into a ready-to-call handle.
Bootstrap = Callable[[str], KernelHandle]


class ApplyRuntime:
    """Routes calls through the index with transparent fallback.

    Bootstrap is memoized per solution (synchronized: one bootstrap runs,
    other callers wait).  Entries marked "aot" are bootstrapped eagerly at
    construction when routing is enabled.  A routed call that fails is
    retried once; a second failure demotes its key to the fallback for the
    rest of the session.  The hot path keys its routing table by plain
    tuples to keep per-call overhead in fractions of a microsecond.
    """

    def __init__(self, index: DispatchIndex, bootstrap: Bootstrap, *, env=None):
        self.index = index
        self._bootstrap = bootstrap
        self._env = os.environ if env is None else env
        self._feature_names = {name: axes for name, axes in index.feature_axes}
        self._routes = {
            (key.definition, key.features): entry for key, entry in index.entries
        }
        self._handles: dict[str, KernelHandle] = {}
        self._bootstrap_lock = threading.Lock()
        self._demoted: set[tuple] = set()
        self.probes = 0
        self.routed = 0
        self.fallback_calls = 0
        self.demotions = 0
        if self.enabled:
            for _, entry in index.entries:
                if entry.bootstrap == "aot":
                    self._handle(entry.solution)

    @property
    def enabled(self) -> bool:
        return self._env.get("FIB_ENABLE_APPLY") == "1"

    @property
    def demoted_keys(self) -> frozenset[DispatchKey]:
        return frozenset(DispatchKey(d, f) for d, f in self._demoted)

    def _handle(self, solution: str) -> KernelHandle:
        handle = self._handles.get(solution)
        if handle is not None:
            return handle
        with self._bootstrap_lock:
            handle = self._handles.get(solution)
            if handle is None:
                handle = self._bootstrap(solution)
                self._handles[solution] = handle
            return handle

    def apply(self, definition: str, inputs: Mapping, axes: Mapping[str, int],
              fallback: KernelHandle) -> dict:
        """One key construction + one probe, then route or fall back."""
        if self._env.get("FIB_ENABLE_APPLY") != "1":
            return fallback(inputs, axes)
        entry = None
        key = None
        names = self._feature_names.get(definition)
        if names is not None:
            features = []
            for name in names:
                value = axes.get(name)
                if value is None:
                    break
                if value < 2:
                    if value < 0:
                        raise ValueError(f"axis values are non-negative, got {value}")
                    features.append((name, 1))
                else:
                    features.append((name, 1 << (value - 1).bit_length()))
            else:
                key = (definition, tuple(features))
        self.probes += 1
        if key is not None:
            entry = self._routes.get(key)
        if entry is None or key in self._demoted:
            self.fallback_calls += 1
            return fallback(inputs, axes)
        try:
            outputs = self._handle(entry.solution)(inputs, axes)
            self.routed += 1
            return outputs
        except Exception:
            try:
                outputs = self._handle(entry.solution)(inputs, axes)
                self.routed += 1
                return outputs
            except Exception:
                self._demoted.add(key)
                self.demotions += 1
                self.fallback_calls += 1
                return fallback(inputs, axes)

    @property
    def stats(self) -> dict:
        return {
            "probes": self.probes,
            "routed": self.routed,
            "fallback_calls": self.fallback_calls,
            "demotions": self.demotions,
            "bootstrapped": sorted(self._handles),
        }


def plugin_bootstrap(
    engine,
    definitions: Mapping[str, DefinitionRecord],
    solutions: Mapping[str, SolutionRecord],
    worker=None,
) -> Bootstrap:
    """Handles that run the named solution out-of-process via the engine.

    Bootstrapping stages the sources and pre-spawns the persistent plugin
    process, so AOT entries pay their startup cost at construction time.
    """

    def bootstrap(name: str) -> KernelHandle:
        solution = solutions[name]
        definition = definitions[solution.definition]
        target = worker if worker is not None else engine.worker()
        staged = stage_solution(solution, engine.staging_root)
        with target.lock:
            target.process_for(staged, resolve_launcher(solution.language),
                               engine.bootstrap_timeout_ms)

        def handle(inputs: Mapping, axes: Mapping[str, int]) -> dict:
            # execute_solution leaves worker serialization to its caller
            with target.lock:
                raw = engine.execute_solution(
                    solution,
                    RunRequest(dict(inputs), solution.entry_point, dict(axes)),
                    worker=target,
                )
            return coerce_outputs(definition, raw)

        return handle

    return bootstrap
