"""Vulnerability reports and standalone replay."""

from __future__ import annotations

import hashlib
import json
from collections.abc import Callable
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any

from .harness import ExecResult, Executor
from .ledger import LedgerSnapshot
from .model import b58, from_b58
from .oracles import MkcConfig, OracleConfig, OracleKind, OracleSignal
from .txgen import summarize
from .vm.loader import EbpfProgram

SCHEMA = 1


def program_hash(text: bytes) -> str:
    return hashlib.sha256(text).hexdigest()


def oracle_config_from_dict(doc: dict[str, Any]) -> OracleConfig:
    mkc = doc.get("mkc")
    acpi = doc.get("acpi_key")
    return OracleConfig(
        enabled=frozenset(OracleKind(k) for k in doc.get("enabled", [k.value for k in OracleKind])),
        mkc=None if mkc is None else MkcConfig(int(mkc["function"]), from_b58(mkc["expected_key"])),
        acpi_key=None if acpi is None else from_b58(acpi),
        strict_chunks=bool(doc.get("strict_chunks", False)),
    )


@dataclass(frozen=True)
class AccountDeltaRecord:
    pubkey: str
    before: int
    after: int


@dataclass(frozen=True)
class VulnerabilityReport:
    kind: str
    pc: int
    program_hash: str
    generation: int
    fuzz_bytes: str
    transaction: dict[str, Any]
    account_deltas: tuple[AccountDeltaRecord, ...]
    timestamp: int
    seed: int
    oracles: dict[str, Any]
    detail: dict[str, Any] = field(default_factory=dict)
    schema: int = SCHEMA

    @property
    def key(self) -> tuple[str, int]:
        return (self.kind, self.pc)

    @property
    def filename(self) -> str:
        return f"report-{self.kind}-pc{self.pc}-seed{self.seed}.json"

    def to_dict(self) -> dict[str, Any]:
        doc = asdict(self)
        doc["account_deltas"] = [asdict(d) for d in self.account_deltas]
        return doc

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"

    @classmethod
    def from_dict(cls, doc: dict[str, Any]) -> VulnerabilityReport:
        return cls(
            kind=str(doc["kind"]),
            pc=int(doc["pc"]),
            program_hash=str(doc["program_hash"]),
            generation=int(doc["generation"]),
            fuzz_bytes=str(doc["fuzz_bytes"]),
            transaction=dict(doc["transaction"]),
            account_deltas=tuple(AccountDeltaRecord(**d) for d in doc["account_deltas"]),
            timestamp=int(doc["timestamp"]),
            seed=int(doc["seed"]),
            oracles=dict(doc["oracles"]),
            detail=dict(doc.get("detail", {})),
            schema=int(doc.get("schema", SCHEMA)),
        )

    @classmethod
    def from_json(cls, text: str) -> VulnerabilityReport:
        return cls.from_dict(json.loads(text))


def make_report(
    signal: OracleSignal,
    result: ExecResult,
    *,
    data: bytes,
    program: EbpfProgram,
    generation: int,
    timestamp: int,
    seed: int,
    oracles: OracleConfig,
) -> VulnerabilityReport:
    return VulnerabilityReport(
        kind=signal.kind.value,
        pc=signal.pc,
        program_hash=program_hash(program.text),
        generation=generation,
        fuzz_bytes=data.hex(),
        transaction=summarize(result.tx),
        account_deltas=tuple(AccountDeltaRecord(b58(d.pubkey), d.before, d.after) for d in result.deltas),
        timestamp=timestamp,
        seed=seed,
        oracles=oracles.to_dict(),
        detail=signal.detail,
    )


@dataclass(frozen=True)
class Reproduced:
    kind: str
    pc: int

    def __str__(self) -> str:
        return f"Reproduced({self.kind}, pc={self.pc})"


@dataclass(frozen=True)
class NotReproduced:
    observed: tuple[tuple[str, int], ...]
    reason: str = ""

    def __str__(self) -> str:
        seen = ", ".join(f"{k}@{pc}" for k, pc in self.observed) or "no signal"
        return f"NotReproduced({seen}{'; ' + self.reason if self.reason else ''})"


Verdict = Reproduced | NotReproduced


class ReplayError(Exception):
    """The report cannot be replayed (missing or mismatched snapshot/program)."""


def replay(
    report: VulnerabilityReport,
    program: EbpfProgram,
    snapshot: LedgerSnapshot,
    *,
    trace: Callable[[str], None] | None = None,
) -> tuple[Verdict, ExecResult | None]:
    if snapshot.generation != report.generation:
        raise ReplayError(f"snapshot is generation {snapshot.generation}, report needs {report.generation}")
    if program_hash(program.text) != report.program_hash:
        raise ReplayError("program does not match the report's program hash")
    try:
        data = bytes.fromhex(report.fuzz_bytes)
    except ValueError:
        return NotReproduced((), "fuzz_bytes is not valid hex"), None
    executor = Executor(program, oracle_config_from_dict(report.oracles))
    result = executor.run(snapshot, data, coverage=False, extract=False, trace=trace)
    observed = tuple((s.kind.value, s.pc) for s in result.outcome.signals)
    if (report.kind, report.pc) in observed:
        return Reproduced(report.kind, report.pc), result
    return NotReproduced(observed), result


def load_report(path: str | Path) -> VulnerabilityReport:
    return VulnerabilityReport.from_json(Path(path).read_text())
