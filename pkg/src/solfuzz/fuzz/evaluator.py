"""Routes one execution's feedback: corpus admission, snapshot commit, regeneration, reports."""

from __future__ import annotations

from dataclasses import dataclass, field

from ..extractors import AccountDataLayout, SeedStructure
from ..ledger import LedgerSnapshot
from ..oracles import OracleSignal
from ..vm.interpreter import Status


@dataclass
class EvaluatorDecision:
    admit: bool = False
    commit: bool = False
    regenerate: bool = False
    signals: list[OracleSignal] = field(default_factory=list)
    new_seed_structures: list[SeedStructure] = field(default_factory=list)
    new_layouts: list[AccountDataLayout] = field(default_factory=list)


def evaluate(
    status: Status,
    new_edges: int,
    seed_structures: list[SeedStructure],
    layouts: list[AccountDataLayout],
    signals: list[OracleSignal],
    snapshot: LedgerSnapshot,
) -> EvaluatorDecision:
    known_seeds = {s.id for s in snapshot.seed_structures}
    known_layouts = {lay.id for lay in snapshot.data_layouts}
    fresh_seeds = [s for s in seed_structures if s.id not in known_seeds]
    fresh_layouts = [lay for lay in layouts if lay.id not in known_layouts]
    return EvaluatorDecision(
        admit=new_edges > 0,
        commit=status is Status.SUCCESS,
        regenerate=bool(fresh_seeds or fresh_layouts),
        signals=list(signals),
        new_seed_structures=fresh_seeds,
        new_layouts=fresh_layouts,
    )
