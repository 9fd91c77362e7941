"""Runtime recovery of PDA seed structures and pubkey positions in account data."""

from __future__ import annotations

import hashlib
import json
from collections.abc import Callable
from dataclasses import dataclass, field
from typing import Any

from .abi import FieldKind, InputLayout
from .taint import AccountPubkey, PdaResult, TaintState
from .vm.events import PdaEvent
from .vm.interpreter import INPUT_START


def stable_hash(*parts: object) -> int:
    digest = hashlib.sha256(json.dumps(parts, separators=(",", ":")).encode()).digest()
    return int.from_bytes(digest[:8], "little")


@dataclass(frozen=True)
class FromPubkey:
    role: str


@dataclass(frozen=True)
class Static:
    data: bytes


SeedElement = FromPubkey | Static


@dataclass(frozen=True)
class SeedStructure:
    id: int
    elements: tuple[SeedElement, ...]
    bump_handling: str = "searched"  # or "fixed"

    @property
    def has_pubkey_seed(self) -> bool:
        return any(isinstance(e, FromPubkey) for e in self.elements)

    def to_dict(self) -> dict[str, Any]:
        return {
            "id": self.id,
            "bump_handling": self.bump_handling,
            "elements": [
                {"from_pubkey": e.role} if isinstance(e, FromPubkey) else {"static": e.data.hex()}
                for e in self.elements
            ],
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> SeedStructure:
        elems: list[SeedElement] = [
            FromPubkey(e["from_pubkey"]) if "from_pubkey" in e else Static(bytes.fromhex(e["static"]))
            for e in d["elements"]
        ]
        return cls(int(d["id"]), tuple(elems), d.get("bump_handling", "searched"))


@dataclass(frozen=True)
class AccountDataLayout:
    id: int
    pubkey_offsets: tuple[int, ...]
    data_len: int

    def to_dict(self) -> dict[str, Any]:
        return {"id": self.id, "pubkey_offsets": list(self.pubkey_offsets), "data_len": self.data_len}

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> AccountDataLayout:
        return cls(int(d["id"]), tuple(d["pubkey_offsets"]), int(d["data_len"]))


def seed_structure_id(pc: int, seed_count: int) -> int:
    return stable_hash("seed", pc, seed_count)


def extract_seed_structure(
    pc: int,
    event: PdaEvent,
    state: TaintState,
    layout: InputLayout | None,
    role_of: Callable[[int], str],
) -> SeedStructure:
    """Classify each seed buffer as coming from an account pubkey or as static bytes.

    ``role_of`` maps an input account index to its ledger role name.
    """
    elements: list[SeedElement] = []
    for seed in event.seeds:
        account = None
        if seed.data:
            labels = state.mem_labels(seed.addr, len(seed.data))
            for lab in sorted(labels, key=lambda x: getattr(x, "account", 1 << 30)):
                if isinstance(lab, AccountPubkey):
                    account = lab.account
                    break
            if account is None and layout is not None and seed.addr >> 32 == INPUT_START >> 32:
                ref = layout.locate(seed.addr)
                if ref is not None and ref.kind is FieldKind.PUBKEY:
                    account = ref.account
        if account is not None:
            elements.append(FromPubkey(role_of(account)))
        else:
            elements.append(Static(seed.data))
    return SeedStructure(
        seed_structure_id(pc, len(event.seeds)),
        tuple(elements),
        "searched" if event.searched else "fixed",
    )


def _pubkeyish_chunk(label: object) -> int | None:
    if isinstance(label, (AccountPubkey, PdaResult)):
        return label.chunk
    return None


@dataclass
class LayoutExtractor:
    """Watches stores into account data for complete 32-byte pubkey windows."""

    layout: InputLayout
    state: TaintState
    writers: dict[tuple[int, int], int] = field(default_factory=dict)
    found: dict[int, dict[int, frozenset[int]]] = field(default_factory=dict)

    def on_data_write(self, pc: int, account: int, offset: int, width: int, addr: int, labels: frozenset) -> None:
        writers = self.writers
        for i in range(width):
            writers[(account, offset + i)] = pc
        if not labels:
            return
        chunks = {c for c in map(_pubkeyish_chunk, labels) if c is not None}
        if not chunks:
            return
        data_len = self.layout.accounts[account].data_len
        base = addr - offset
        candidates = sorted(
            {offset + i - 8 * c - j for c in chunks for i in range(width) for j in range(8)}
        )
        for start in candidates:
            if start < 0 or start + 32 > data_len:
                continue
            if self._window_ok(base + start):
                self._record(account, start)

    def _window_ok(self, addr: int) -> bool:
        mem = self.state.mem
        for c in range(4):
            for b in range(addr + 8 * c, addr + 8 * c + 8):
                labs = mem.get(b)
                if not labs or not any(_pubkeyish_chunk(x) == c for x in labs):
                    return False
        return True

    def _record(self, account: int, start: int) -> None:
        offsets = self.found.setdefault(account, {})
        if start in offsets:
            return
        if any(abs(start - o) < 32 for o in offsets):
            return
        pcs = frozenset(self.writers.get((account, start + i), -1) for i in range(32))
        offsets[start] = pcs

    def layouts(self) -> list[AccountDataLayout]:
        out = []
        for account in sorted(self.found):
            offsets = self.found[account]
            pcs = sorted(set().union(*offsets.values()))
            data_len = self.layout.accounts[account].data_len
            out.append(AccountDataLayout(stable_hash("layout", pcs, data_len), tuple(sorted(offsets)), data_len))
        return out


class SemanticsRegistry:
    """Campaign-wide accumulation of extracted structures, keyed by id (first observation wins)."""

    def __init__(self) -> None:
        self.seed_structures: dict[int, SeedStructure] = {}
        self.data_layouts: dict[int, AccountDataLayout] = {}

    def merge(self, structures: list[SeedStructure], layouts: list[AccountDataLayout]) -> bool:
        new = False
        for s in structures:
            if s.id not in self.seed_structures:
                self.seed_structures[s.id] = s
                new = True
        for lay in layouts:
            if lay.id not in self.data_layouts:
                self.data_layouts[lay.id] = lay
                new = True
        return new
