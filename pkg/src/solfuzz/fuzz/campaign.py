"""The fuzzing loop: schedule, mutate, execute, evaluate."""

from __future__ import annotations

import random
import time
from collections.abc import Callable, Mapping
from dataclasses import dataclass, field, replace
from typing import Any

from ..harness import Executor
from ..ledger import LedgerConfig, LedgerSnapshot, build_snapshot, commit, regenerate
from ..oracles import OracleConfig, OracleKind
from ..report import VulnerabilityReport, make_report
from ..txgen import reencode
from ..vm.interpreter import DEFAULT_BUDGET
from ..vm.loader import EbpfProgram
from .coverage import CoverageMap, is_power_of_two
from .evaluator import evaluate
from .mutate import Mutator, apply_key_hint

INITIAL_SEED = bytes(16)
MAX_ENERGY = 8
MAX_HINT_DEPTH = 4


@dataclass
class CampaignConfig:
    seed: int = 0
    timeout: float | None = 60.0
    max_execs: int | None = None
    coverage_size: int = 65536
    oracles: OracleConfig = field(default_factory=OracleConfig)
    ledger: LedgerConfig = field(default_factory=LedgerConfig)
    budget: int = DEFAULT_BUDGET
    mutation_weights: Mapping[str, float] | None = None
    stop_on: frozenset[OracleKind] | None = None
    snapshot: LedgerSnapshot | None = None
    key_hints: bool = True

    def __post_init__(self) -> None:
        if not is_power_of_two(self.coverage_size):
            raise ValueError("coverage size must be a power of two")
        if self.timeout is None and self.max_execs is None:
            raise ValueError("a campaign needs a timeout or an execution limit")


@dataclass
class CorpusEntry:
    data: bytes
    generation: int
    new_edges: int
    found_at: int

    @property
    def energy(self) -> int:
        return 1 + min(self.new_edges, MAX_ENERGY - 1)


@dataclass
class CampaignResult:
    reports: list[VulnerabilityReport]
    corpus: list[CorpusEntry]
    stats: dict[str, Any]
    snapshots: dict[int, LedgerSnapshot]
    final_snapshot: LedgerSnapshot
    covered_edges: list[int]

    @property
    def kinds(self) -> set[str]:
        return {r.kind for r in self.reports}


class Scheduler:
    """Round-robin over the corpus; each entry gets ``energy`` picks per visit."""

    def __init__(self, entries: list[CorpusEntry]) -> None:
        self.entries = entries
        self.cursor = -1
        self.left = 0

    def next(self) -> CorpusEntry:
        if self.left <= 0:
            self.cursor = (self.cursor + 1) % len(self.entries)
            self.left = self.entries[self.cursor].energy
        self.left -= 1
        return self.entries[self.cursor]


def run_campaign(
    program: EbpfProgram,
    config: CampaignConfig,
    *,
    progress: Callable[[dict[str, Any]], None] | None = None,
) -> CampaignResult:
    oracles = config.oracles
    if oracles.mkc is not None and oracles.mkc.function not in program.functions:
        raise ValueError(f"MKC function {oracles.mkc.function:#x} is not a local call target of the program")
    snapshot = config.snapshot or build_snapshot(program.text, config.ledger)
    if oracles.acpi_key is None:
        oracles = replace(oracles, acpi_key=config.ledger.malicious_program)
    executor = Executor(program, oracles, coverage_size=config.coverage_size, budget=config.budget)
    rng = random.Random(config.seed)
    coverage = CoverageMap(config.coverage_size)
    index = snapshot.selectable_keys.index
    mutator = Mutator(
        rng,
        config.mutation_weights,
        key_count=lambda: len(snapshot.accounts),
        wallets=(index[snapshot.user], index[snapshot.attacker]),
    )

    corpus = [CorpusEntry(INITIAL_SEED, snapshot.generation, 0, 0)]
    pool = [INITIAL_SEED]
    scheduler = Scheduler(corpus)
    reports: list[VulnerabilityReport] = []
    seen_reports: set[tuple[str, int]] = set()
    snapshots: dict[int, LedgerSnapshot] = {}
    first_seconds: dict[str, float] = {}
    first_exec: dict[str, int] = {}
    found_kinds: set[OracleKind] = set()
    pending: list[tuple[bytes, int]] = []

    start = time.monotonic()
    deadline = None if config.timeout is None else start + config.timeout
    execs = 0
    next_progress = start + 1.0

    while True:
        if config.max_execs is not None and execs >= config.max_execs:
            break
        now = time.monotonic()
        if deadline is not None and now >= deadline:
            break
        if progress is not None and now >= next_progress:
            next_progress = now + 1.0
            progress(_stats(execs, now - start, coverage, corpus, snapshot, first_seconds, first_exec))

        if pending:
            data, depth = pending.pop()
        elif execs == 0:
            data, depth = INITIAL_SEED, 0
        else:
            data, depth = mutator.mutate(scheduler.next().data, pool), 0
        execs += 1
        result = executor.run(snapshot, data, hints=config.key_hints and depth < MAX_HINT_DEPTH)
        for account, key_index in result.hints:
            hinted = apply_key_hint(data, account, key_index, len(snapshot.accounts))
            if hinted is not None:
                pending.append((hinted, depth + 1))
                break
        touched = result.edges.touched if result.edges is not None else []
        novel = coverage.novel(touched)
        decision = evaluate(
            result.outcome.status,
            len(novel),
            result.seed_structures,
            result.data_layouts,
            result.outcome.signals,
            snapshot,
        )
        if decision.admit:
            coverage.merge(novel)
            corpus.append(CorpusEntry(data, snapshot.generation, len(novel), execs))
            pool.append(data)
        for signal in decision.signals:
            key = (signal.kind.value, signal.pc)
            if key in seen_reports:
                continue
            seen_reports.add(key)
            snapshots[snapshot.generation] = snapshot
            reports.append(
                make_report(
                    signal,
                    result,
                    data=data,
                    program=program,
                    generation=snapshot.generation,
                    timestamp=execs,
                    seed=config.seed,
                    oracles=oracles,
                )
            )
            found_kinds.add(signal.kind)
            if signal.kind.value not in first_exec:
                first_exec[signal.kind.value] = execs
                first_seconds[signal.kind.value] = time.monotonic() - start
        if decision.commit:
            snapshot = commit(snapshot, result.working)
        if decision.regenerate:
            before = snapshot
            snapshot = regenerate(snapshot, decision.new_seed_structures, decision.new_layouts, config.ledger)
            if len(snapshot.accounts) != len(before.accounts):
                _rebase(corpus, pool, before, snapshot)
                pending.clear()
        if config.stop_on is not None and config.stop_on <= found_kinds:
            break

    elapsed = time.monotonic() - start
    stats = _stats(execs, elapsed, coverage, corpus, snapshot, first_seconds, first_exec)
    stats["reports"] = len(reports)
    return CampaignResult(reports, corpus, stats, snapshots, snapshot, coverage.covered())


def _rebase(corpus: list[CorpusEntry], pool: list[bytes], old: LedgerSnapshot, new: LedgerSnapshot) -> None:
    """Keep every corpus entry meaning the same transaction after the key set grew."""
    for i, entry in enumerate(corpus):
        data = reencode(entry.data, old.selectable_keys, new.selectable_keys)
        corpus[i] = replace(entry, data=data, generation=new.generation)
        pool[i] = data


def _stats(
    execs: int,
    elapsed: float,
    coverage: CoverageMap,
    corpus: list[CorpusEntry],
    snapshot: LedgerSnapshot,
    first_seconds: dict[str, float],
    first_exec: dict[str, int],
) -> dict[str, Any]:
    return {
        "executions": execs,
        "elapsed_seconds": round(elapsed, 3),
        "exec_per_sec": round(execs / elapsed, 1) if elapsed > 0 else 0.0,
        "covered_edges": coverage.seen_count,
        "corpus_size": len(corpus),
        "generation": snapshot.generation,
        "accounts": len(snapshot.accounts),
        "time_to_first": {k: round(v, 3) for k, v in sorted(first_seconds.items())},
        "execs_to_first": dict(sorted(first_exec.items())),
    }
