"""Register and memory taint tracking over the VM hook stream."""

from __future__ import annotations

from collections.abc import Callable
from dataclasses import dataclass

from .abi import FieldKind, InputLayout
from .vm.interpreter import INPUT_START
from .vm.isa import LDDW


@dataclass(frozen=True, slots=True)
class AccountData:
    account: int
    offset: int


@dataclass(frozen=True, slots=True)
class AccountPubkey:
    account: int
    chunk: int


@dataclass(frozen=True, slots=True)
class PdaResult:
    derivation: int
    chunk: int


class _Overflowed:
    __slots__ = ()
    _instance: _Overflowed | None = None

    def __new__(cls) -> _Overflowed:
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self) -> str:
        return "Overflowed"

    def __reduce__(self) -> str:
        return "OVERFLOWED"


OVERFLOWED = _Overflowed()

TaintLabel = AccountData | AccountPubkey | PdaResult | _Overflowed
Labels = frozenset
EMPTY: frozenset = frozenset()
_OVF = frozenset([OVERFLOWED])

_INPUT_REGION = INPUT_START >> 32


@dataclass(frozen=True, slots=True)
class ComparisonFact:
    """kind is one of DataVsPubkey, PubkeyVsPubkey, PubkeyVsPdaResult, DataVsConst, PubkeyVsConst."""

    kind: str
    a: int
    b: int | None = None
    chunk: int | None = None
    value: int | None = None


def _label_key(label: object) -> tuple:
    # deterministic ordering for traces
    if isinstance(label, AccountData):
        return (0, label.account, label.offset)
    if isinstance(label, AccountPubkey):
        return (1, label.account, label.chunk)
    if isinstance(label, PdaResult):
        return (2, label.derivation, label.chunk)
    return (3,)


def format_labels(labels: frozenset) -> str:
    return "{" + ", ".join(repr(x) for x in sorted(labels, key=_label_key)) + "}"


class TaintState:
    __slots__ = ("regs", "mem")

    def __init__(self) -> None:
        self.regs: list[frozenset] = [EMPTY] * 11
        self.mem: dict[int, frozenset] = {}

    def mem_labels(self, addr: int, width: int) -> frozenset:
        mem = self.mem
        if not mem:
            return EMPTY
        out = EMPTY
        for b in range(addr, addr + width):
            lab = mem.get(b)
            if lab:
                out = out | lab if out else lab
        return out


class TaintEngine:
    """Implements source, propagation and comparison rules.

    ``layout`` maps input-region addresses to account fields. ``pda_keys``
    resolves a derivation id to the key it produced, so PDA results can stand
    in for the matching input account's pubkey in comparisons.
    """

    def __init__(
        self,
        layout: InputLayout | None,
        *,
        strict: bool = False,
        trace: Callable[[str], None] | None = None,
    ) -> None:
        self.layout = layout
        self.state = TaintState()
        self.strict = strict
        self.trace = trace
        self.pda_keys: dict[int, bytes] = {}
        self._frames: list[tuple[frozenset, frozenset, frozenset, frozenset]] = []
        self._chunks_seen: dict[tuple, set[int]] = {}
        self._published: set[tuple] = set()

    # sources

    def source_labels(self, addr: int, width: int) -> frozenset:
        if addr >> 32 != _INPUT_REGION or self.layout is None:
            return EMPTY
        ref = self.layout.locate(addr)
        if ref is None or ref.account is None:
            return EMPTY
        if ref.kind is FieldKind.DATA:
            return frozenset([AccountData(ref.account, ref.offset)])
        if ref.kind is FieldKind.PUBKEY:
            return frozenset([AccountPubkey(ref.account, ref.offset >> 3)])
        return EMPTY

    def on_mem_read(self, pc: int, dst: int, addr: int, width: int) -> frozenset:
        labels = self.source_labels(addr, width)
        stored = self.state.mem_labels(addr, width)
        if stored:
            labels = labels | stored if labels else stored
        self.state.regs[dst] = labels
        if self.trace is not None and labels:
            self.trace(f"pc={pc} load r{dst} <- 0x{addr:x}/{width} labels={format_labels(labels)}")
        return labels

    def on_mem_write(self, pc: int, addr: int, width: int, src: int | None) -> frozenset:
        labels = self.state.regs[src] if src is not None else EMPTY
        mem = self.state.mem
        if labels:
            for b in range(addr, addr + width):
                mem[b] = labels
            if self.trace is not None:
                self.trace(f"pc={pc} store 0x{addr:x}/{width} labels={format_labels(labels)}")
        elif mem:
            for b in range(addr, addr + width):
                mem.pop(b, None)
        return labels

    def clear(self, addr: int, length: int) -> None:
        mem = self.state.mem
        if mem:
            for b in range(addr, addr + length):
                mem.pop(b, None)

    def on_pda_syscall_return(self, derivation: int, result_addr: int, key: bytes | None = None) -> None:
        mem = self.state.mem
        for chunk in range(4):
            lab = frozenset([PdaResult(derivation, chunk)])
            base = result_addr + 8 * chunk
            for b in range(base, base + 8):
                mem[b] = lab
        if key is not None:
            self.pda_keys[derivation] = key
        if self.trace is not None:
            self.trace(f"pda id={derivation:#x} -> 0x{result_addr:x}")

    # propagation

    def on_alu(self, pc: int, opcode: int, dst: int, src: int | None, wrapped: bool) -> None:
        regs = self.state.regs
        code = opcode & 0xF0
        if opcode == LDDW:
            regs[dst] = EMPTY
            return
        if code == 0xB0:  # mov
            regs[dst] = regs[src] if src is not None else EMPTY
            return
        labels = regs[dst]
        if src is not None:
            s = regs[src]
            if s:
                labels = labels | s if labels else s
        if wrapped:
            labels = labels | _OVF
            if self.trace is not None:
                self.trace(f"pc={pc} alu r{dst} wrapped labels={format_labels(labels)}")
        regs[dst] = labels

    def on_call(self) -> None:
        r = self.state.regs
        self._frames.append((r[6], r[7], r[8], r[9]))

    def on_return(self) -> None:
        if self._frames:
            r = self.state.regs
            r[6], r[7], r[8], r[9] = self._frames.pop()

    def on_syscall_return(self) -> None:
        self.state.regs[0] = EMPTY

    # comparisons

    def _pda_account(self, derivation: int) -> int | None:
        key = self.pda_keys.get(derivation)
        if key is None or self.layout is None:
            return None
        return self.layout.index_of(key)

    def _pair(self, x: object, y: object, out: list[ComparisonFact]) -> None:
        if isinstance(x, AccountData):
            if isinstance(y, AccountPubkey):
                out.append(ComparisonFact("DataVsPubkey", x.account, y.account, y.chunk))
            elif isinstance(y, PdaResult):
                k = self._pda_account(y.derivation)
                if k is not None:
                    out.append(ComparisonFact("DataVsPubkey", x.account, k, y.chunk))
        elif isinstance(x, AccountPubkey):
            if isinstance(y, AccountPubkey):
                a, b = sorted((x.account, y.account))
                out.append(ComparisonFact("PubkeyVsPubkey", a, b, x.chunk))
            elif isinstance(y, PdaResult):
                out.append(ComparisonFact("PubkeyVsPdaResult", x.account, y.derivation, x.chunk))

    def compare_event(
        self, lhs: frozenset, rhs: frozenset, lhs_value: int = 0, rhs_value: int = 0
    ) -> list[ComparisonFact]:
        if not lhs and not rhs:
            return []
        facts: list[ComparisonFact] = []
        for side, other, other_value in ((lhs, rhs, rhs_value), (rhs, lhs, lhs_value)):
            for x in side:
                if not other:
                    if isinstance(x, AccountData):
                        facts.append(ComparisonFact("DataVsConst", x.account, value=other_value))
                    elif isinstance(x, AccountPubkey):
                        facts.append(ComparisonFact("PubkeyVsConst", x.account, chunk=x.chunk, value=other_value))
                    continue
                for y in other:
                    self._pair(x, y, facts)
        # dedup, deterministic order
        seen: dict[tuple, ComparisonFact] = {}
        for f in facts:
            seen.setdefault((f.kind, f.a, f.b, f.chunk, f.value), f)
        result = [seen[k] for k in sorted(seen, key=lambda t: tuple(-1 if v is None else v for v in t))]
        if self.strict:
            result = self._strict_filter(result)
        return result

    def _strict_filter(self, facts: list[ComparisonFact]) -> list[ComparisonFact]:
        out = []
        for f in facts:
            if f.kind in ("DataVsConst", "PubkeyVsConst") or f.chunk is None:
                out.append(f)
                continue
            key = (f.kind, f.a, f.b)
            chunks = self._chunks_seen.setdefault(key, set())
            chunks.add(f.chunk)
            if len(chunks) == 4 and key not in self._published:
                self._published.add(key)
                out.append(ComparisonFact(f.kind, f.a, f.b))
        return out

    def on_compare(self, pc: int, lhs_reg: int, rhs_reg: int | None, lhs: int, rhs: int) -> list[ComparisonFact]:
        regs = self.state.regs
        lhs_l = regs[lhs_reg]
        rhs_l = regs[rhs_reg] if rhs_reg is not None else EMPTY
        if not lhs_l and not rhs_l:
            return []
        facts = self.compare_event(lhs_l, rhs_l, lhs, rhs)
        if self.trace is not None:
            self.trace(
                f"pc={pc} compare r{lhs_reg} {'r%d' % rhs_reg if rhs_reg is not None else 'imm'} "
                f"labels={format_labels(lhs_l)} vs {format_labels(rhs_l)} facts={facts}"
            )
        return facts
