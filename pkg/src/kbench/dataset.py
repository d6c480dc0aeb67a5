"""A dataset is a flat directory of ``*.json`` trace-schema documents.

Loading classifies each file by shape (definition / solution / trace),
resolves by-name references, and collects violations instead of dying on the
first bad file — `validate` powers the CLI's validation report.  Name
collisions are tolerated only when the payloads agree (definitions via the
equivalence predicate, solutions via identical canonical text), which is the
dedup rule for merged datasets.

Inline definitions or solutions inside a trace override by-name resolution
for that trace only.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

from .errors import KbenchError, SchemaError
from .trace import (
    DefinitionRecord,
    SolutionRecord,
    TraceRecord,
    bind_workload,
    definitions_equivalent,
    parse_trace,
    serialize_trace,
)


@dataclass(frozen=True)
class Violation:
    file: str
    path: str
    reason: str

    def __str__(self) -> str:
        where = f"{self.file}:{self.path}" if self.path else self.file
        return f"{where}: {self.reason}"


@dataclass
class Dataset:
    root: Path
    definitions: dict[str, DefinitionRecord] = field(default_factory=dict)
    solutions: dict[str, SolutionRecord] = field(default_factory=dict)
    traces: list[tuple[str, TraceRecord]] = field(default_factory=list)  # (filename, record)
    violations: list[Violation] = field(default_factory=list)

    # -- loading ----------------------------------------------------------

    @classmethod
    def load(cls, root: str | Path) -> "Dataset":
        root = Path(root)
        if not root.is_dir():
            raise KbenchError(f"dataset directory {root} does not exist")
        ds = cls(root=root)
        for file in sorted(root.glob("*.json")):
            try:
                record = parse_trace(file.read_text("utf-8"))
            except SchemaError as exc:
                ds.violations.append(Violation(file.name, exc.path, exc.reason))
                continue
            if isinstance(record, DefinitionRecord):
                ds._add_definition(file.name, record)
            elif isinstance(record, SolutionRecord):
                ds._add_solution(file.name, record)
            else:
                ds.traces.append((file.name, record))
                if isinstance(record.definition, DefinitionRecord):
                    ds._add_definition(file.name, record.definition, inline=True)
                if isinstance(record.solution, SolutionRecord):
                    ds._add_solution(file.name, record.solution, inline=True)
        ds._cross_check()
        return ds

    def _add_definition(self, file: str, record: DefinitionRecord, inline: bool = False) -> None:
        existing = self.definitions.get(record.name)
        if existing is None:
            self.definitions[record.name] = record
        elif not definitions_equivalent(existing, record):
            self.violations.append(
                Violation(file, "name", f"definition {record.name!r} conflicts with an existing one")
            )

    def _add_solution(self, file: str, record: SolutionRecord, inline: bool = False) -> None:
        existing = self.solutions.get(record.name)
        if existing is None:
            self.solutions[record.name] = record
        elif serialize_trace(existing) != serialize_trace(record):
            self.violations.append(
                Violation(file, "name", f"solution {record.name!r} conflicts with an existing one")
            )

    def _cross_check(self) -> None:
        for name, solution in sorted(self.solutions.items()):
            if solution.definition not in self.definitions:
                self.violations.append(
                    Violation(
                        "<dataset>", f"solution.{name}.definition",
                        f"references unknown definition {solution.definition!r}",
                    )
                )
        for file, trace in self.traces:
            definition = self.resolve_definition(trace)
            if definition is None:
                self.violations.append(
                    Violation(file, "definition", f"unknown definition {trace.definition_name!r}")
                )
                continue
            sol_name = trace.solution_name
            if sol_name is not None and self.resolve_solution(trace) is None:
                self.violations.append(
                    Violation(file, "solution", f"unknown solution {sol_name!r}")
                )
            try:
                bind_workload(definition, trace.workload)
            except KbenchError as exc:
                self.violations.append(Violation(file, "workload", str(exc)))

    # -- resolution -------------------------------------------------------

    def resolve_definition(self, trace: TraceRecord) -> DefinitionRecord | None:
        if isinstance(trace.definition, DefinitionRecord):
            return trace.definition
        return self.definitions.get(trace.definition)

    def resolve_solution(self, trace: TraceRecord) -> SolutionRecord | None:
        if isinstance(trace.solution, SolutionRecord):
            return trace.solution
        if trace.solution is None:
            return None
        return self.solutions.get(trace.solution)

    # -- views ------------------------------------------------------------

    def workloads_for(self, definition_name: str) -> list[TraceRecord]:
        """Workload-bearing traces for one definition, deduplicated by uuid,
        in file order."""
        seen: set[str] = set()
        out = []
        for _, trace in self.traces:
            if trace.definition_name != definition_name:
                continue
            if trace.workload.uuid in seen:
                continue
            seen.add(trace.workload.uuid)
            out.append(trace)
        return out

    def solutions_for(self, definition_name: str) -> list[SolutionRecord]:
        return [s for _, s in sorted(self.solutions.items()) if s.definition == definition_name]

    def evaluations(self) -> list[TraceRecord]:
        return [t for _, t in self.traces if t.evaluation is not None]

    # -- mutation (append-only) -------------------------------------------

    def add_trace(self, trace: TraceRecord, stem: str) -> Path:
        """Write a trace document under a fresh ``<stem>[_k].json`` name."""
        path = self.root / f"{stem}.json"
        k = 1
        while path.exists():
            path = self.root / f"{stem}_{k}.json"
            k += 1
        path.write_text(serialize_trace(trace), "utf-8")
        self.traces.append((path.name, trace))
        return path
