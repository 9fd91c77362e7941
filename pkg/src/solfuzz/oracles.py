"""Runtime bug oracles. State is per execution (one instance per VM)."""

from __future__ import annotations

import enum
from collections.abc import Iterable
from dataclasses import dataclass, field
from typing import Any

from .abi import InputLayout
from .model import Pubkey, b58
from .taint import OVERFLOWED, ComparisonFact


class OracleKind(enum.Enum):
    MSC = "MSC"
    MOC = "MOC"
    LAMPORTS = "LAMPORTS"
    ACPI = "ACPI"
    MKC = "MKC"
    IB = "IB"


ALL_KINDS = frozenset(OracleKind)


def parse_kinds(csv: str) -> frozenset[OracleKind]:
    kinds = set()
    for tok in csv.split(","):
        tok = tok.strip().upper()
        if not tok:
            continue
        try:
            kinds.add(OracleKind(tok))
        except ValueError:
            raise ValueError(f"unknown oracle {tok!r}; choose from {', '.join(k.value for k in OracleKind)}") from None
    return frozenset(kinds)


@dataclass(frozen=True)
class OracleSignal:
    kind: OracleKind
    pc: int
    detail: dict[str, Any] = field(default_factory=dict, compare=False, hash=False)

    def to_dict(self) -> dict[str, Any]:
        return {"kind": self.kind.value, "pc": self.pc, "detail": self.detail}


@dataclass(frozen=True)
class MkcConfig:
    function: int
    expected_key: Pubkey

    @property
    def chunks(self) -> tuple[int, int, int, int]:
        k = self.expected_key
        return tuple(int.from_bytes(k[8 * i : 8 * i + 8], "little") for i in range(4))  # type: ignore[return-value]


@dataclass(frozen=True)
class OracleConfig:
    enabled: frozenset[OracleKind] = ALL_KINDS
    mkc: MkcConfig | None = None
    acpi_key: Pubkey | None = None
    strict_chunks: bool = False

    def to_dict(self) -> dict[str, Any]:
        return {
            "enabled": sorted(k.value for k in self.enabled),
            "mkc": None
            if self.mkc is None
            else {"function": self.mkc.function, "expected_key": b58(self.mkc.expected_key)},
            "acpi_key": None if self.acpi_key is None else b58(self.acpi_key),
            "strict_chunks": self.strict_chunks,
        }


@dataclass(frozen=True)
class TxContext:
    """Who signed, and which keys count as user- or attacker-related."""

    attacker_signed: bool
    user_related: frozenset[Pubkey]
    attacker_related: frozenset[Pubkey]


class OracleSuite:
    """All six detectors over one VM's event stream.

    ``emit`` receives each signal; the instrumented VM halts after the
    instruction that produced it.
    """

    def __init__(
        self,
        config: OracleConfig,
        layout: InputLayout,
        program_id: Pubkey,
        owners: list[Pubkey | None],
        tx: TxContext,
        emit: Any,
    ) -> None:
        self.config = config
        self.layout = layout
        self.program_id = program_id
        self.tx = tx
        self.emit = emit
        en = config.enabled
        self.msc_on = OracleKind.MSC in en
        self.moc_on = OracleKind.MOC in en
        self.lamports_on = OracleKind.LAMPORTS in en and tx.attacker_signed
        self.acpi_on = OracleKind.ACPI in en and config.acpi_key is not None
        self.mkc_on = OracleKind.MKC in en and config.mkc is not None
        self.ib_on = OracleKind.IB in en
        n = len(layout.accounts)
        self.signed = [layout.primary(i).is_signer for i in range(n)]
        self.keys = [layout.primary(i).pubkey for i in range(n)]
        self.foreign = {i for i, o in enumerate(owners) if o is not None and o != program_id}
        # MSC
        self.msc_v: dict[int, set[int]] = {}
        self.msc_t: set[int] = set()
        # MOC
        self.moc_m: set[int] = set()
        self.moc_v: set[int] = set()
        # LAMPORTS
        self.user_lose = False
        self.attacker_gain = False
        self.lamports_fired = False
        self.msc_moc_fired = False
        # MKC
        self.mkc_a: set[int] = set()
        self.mkc_chunks = config.mkc.chunks if config.mkc else None

    def _signal(self, kind: OracleKind, pc: int, **detail: Any) -> None:
        if kind in (OracleKind.MSC, OracleKind.MOC):
            self.msc_moc_fired = True
        self.emit(OracleSignal(kind, pc, detail))

    def _acct(self, k: int) -> dict[str, Any]:
        return {"index": k, "pubkey": b58(self.keys[k])}

    # facts

    def on_facts(self, pc: int, facts: Iterable[ComparisonFact]) -> None:
        for f in facts:
            kind = f.kind
            if kind == "DataVsPubkey":
                if self.msc_on:
                    self._msc_fact(f.a, f.b)  # type: ignore[arg-type]
                if self.moc_on:
                    if f.a in self.moc_m:
                        self.moc_v.add(f.b)  # type: ignore[arg-type]
                    if f.b in self.moc_m:
                        self.moc_v.add(f.a)
            elif kind == "PubkeyVsConst" and self.mkc_on:
                if f.chunk is not None and f.value == self.mkc_chunks[f.chunk]:  # type: ignore[index]
                    self.mkc_a.add(f.a)

    def _msc_fact(self, a: int, b: int) -> None:
        if a in self.msc_t:
            return
        if not self.signed[a] and not self.signed[b]:
            self.msc_v.setdefault(a, set()).update((a, b))
        else:
            trusted = self.msc_v.pop(a, set())
            self.msc_t.update(trusted)
            self.msc_t.update((a, b))
            for other in self.msc_v.values():
                other.difference_update(self.msc_t)

    # data flow events

    def on_data_read(self, k: int) -> None:
        if self.moc_on and k in self.foreign:
            self.moc_m.add(k)

    def _msc_vulnerable(self, k: int) -> bool:
        return any(k in v for v in self.msc_v.values())

    def on_lamports_write(self, pc: int, k: int, before: int, after: int, overflowed: bool) -> None:
        if self.msc_on and self._msc_vulnerable(k):
            self._signal(OracleKind.MSC, pc, account=self._acct(k), field="lamports", before=before, after=after)
        if self.moc_on and k in self.moc_v and after < before:
            self._signal(OracleKind.MOC, pc, account=self._acct(k), field="lamports", before=before, after=after)
        if self.ib_on and overflowed:
            self._signal(OracleKind.IB, pc, account=self._acct(k), field="lamports", before=before, after=after)
        if self.lamports_on and not self.lamports_fired:
            key = self.keys[k]
            if after < before and key in self.tx.user_related:
                self.user_lose = True
            if after > before and key in self.tx.attacker_related:
                self.attacker_gain = True
            if self.user_lose and self.attacker_gain and not self.msc_moc_fired:
                self.lamports_fired = True
                self._signal(OracleKind.LAMPORTS, pc, account=self._acct(k), before=before, after=after)

    def on_data_write(self, pc: int, k: int, offset: int) -> None:
        if self.msc_on and self._msc_vulnerable(k):
            self._signal(OracleKind.MSC, pc, account=self._acct(k), field="data", offset=offset)
        if self.moc_on and k in self.moc_v:
            self._signal(OracleKind.MOC, pc, account=self._acct(k), field="data", offset=offset)

    def on_call(self, pc: int, target: int, regs: list[int]) -> None:
        if not self.mkc_on or target != self.config.mkc.function:  # type: ignore[union-attr]
            return
        for r in range(1, 6):
            ref = self.layout.locate(regs[r])
            if ref is not None and ref.account is not None:
                p = self.layout.primary(ref.account).index
                if p not in self.mkc_a:
                    self._signal(OracleKind.MKC, pc, account=self._acct(p), register=r, function=target)
                return

    def on_cpi(self, pc: int, target: Pubkey, signer_pdas: tuple[Pubkey, ...]) -> None:
        if self.acpi_on and target == self.config.acpi_key:
            self._signal(
                OracleKind.ACPI,
                pc,
                target=b58(target),
                escalation=bool(signer_pdas),
                signer_pdas=[b58(k) for k in signer_pdas],
            )


def ib_overflowed(labels: frozenset) -> bool:
    return OVERFLOWED in labels
