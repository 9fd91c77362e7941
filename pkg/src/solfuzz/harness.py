"""One fuzz execution: decode, serialize, run with all analyses attached, collect feedback."""

from __future__ import annotations

import struct
from collections.abc import Callable
from dataclasses import dataclass, field
from typing import Any

from .abi import FieldKind, InputLayout, read_lamports
from .extractors import (
    AccountDataLayout,
    LayoutExtractor,
    SeedStructure,
    extract_seed_structure,
    seed_structure_id,
)
from .ledger import LedgerSnapshot, WorkingCopy
from .model import Transaction, b58
from .oracles import OracleConfig, OracleSignal, OracleSuite, TxContext
from .taint import OVERFLOWED, AccountPubkey, TaintEngine
from .txgen import decode
from .vm.events import CpiInstruction, PdaEvent, VmObserver
from .vm.interpreter import DEFAULT_BUDGET, INPUT_START, ComputeMeter, ExecutionOutcome, Vm
from .vm.loader import EbpfProgram
from .vm.runtime import Frame, InvokeContext, ProgramCache

_INPUT = INPUT_START >> 32
_U64 = struct.Struct("<Q")


class EdgeTrace:
    """Per-execution edge hits with 8-bit saturating counters."""

    __slots__ = ("mask", "hits", "touched")

    def __init__(self, size: int) -> None:
        self.mask = size - 1
        self.hits: dict[int, int] = {}
        self.touched: list[int] = []


class Instrumentation(VmObserver):
    """Taint, oracles, extractors and (optionally) coverage for one VM."""

    def __init__(
        self,
        frame: Frame,
        config: OracleConfig,
        tx: TxContext,
        *,
        role_of: Callable[[bytes], str],
        edges: EdgeTrace | None = None,
        extract: bool = False,
        trace: Callable[[str], None] | None = None,
        key_chunks: dict[tuple[int, int], int] | None = None,
        hints: list[tuple[int, int]] | None = None,
    ) -> None:
        self.frame = frame
        self.key_chunks = key_chunks
        self.hints = hints
        self.layout: InputLayout = frame.layout
        self.config = config
        self.tx = tx
        self.role_of = role_of
        self.edges = edges
        self.extract = extract
        self.trace = trace
        self.taint = TaintEngine(self.layout, strict=config.strict_chunks, trace=trace)
        self.seed_structures: list[SeedStructure] = []
        self.layout_extractor: LayoutExtractor | None = None

    def attach(self, vm: Vm) -> None:
        self.vm = vm
        self.mem = vm.input
        layout = self.layout
        owners: list[bytes | None] = []
        for i in range(len(layout.accounts)):
            slot = layout.primary(i)
            owners.append(bytes(vm.input[slot.owner_at : slot.owner_at + 32]))
        self.oracles = OracleSuite(self.config, layout, self.frame.program_id, owners, self.tx, vm.signal)
        if self.extract:
            self.layout_extractor = LayoutExtractor(layout, self.taint.state)
        self._lamport_ranges = {}
        for slot in layout.accounts:
            if slot.dup_of is None:
                self._lamport_ranges[slot.index] = INPUT_START + slot.lamports_at

    # hooks

    def on_branch(self, src_pc: int, dst_pc: int | None) -> None:
        edges = self.edges
        if edges is None or dst_pc is None:
            return
        i = (src_pc + dst_pc) & edges.mask
        v = edges.hits.get(i)
        if v is None:
            edges.hits[i] = 1
            edges.touched.append(i)
        elif v < 255:
            edges.hits[i] = v + 1

    def on_compare(self, pc: int, lhs_reg: int, rhs_reg: int | None, lhs: int, rhs: int) -> None:
        if self.key_chunks is not None and lhs != rhs:
            regs = self.taint.state.regs
            self._hint(regs[lhs_reg], rhs)
            if rhs_reg is not None:
                self._hint(regs[rhs_reg], lhs)
        facts = self.taint.on_compare(pc, lhs_reg, rhs_reg, lhs, rhs)
        if facts:
            self.oracles.on_facts(pc, facts)

    def _hint(self, labels: frozenset, other: int) -> None:
        # a pubkey chunk compared against a chunk of some other known key
        for label in labels:
            if type(label) is AccountPubkey:
                k = self.key_chunks.get((label.chunk, other))  # type: ignore[union-attr]
                if k is not None:
                    self.hints.append((label.account, k))  # type: ignore[union-attr]

    def on_alu(self, pc: int, opcode: int, dst: int, src: int | None, wrapped: bool) -> None:
        self.taint.on_alu(pc, opcode, dst, src, wrapped)

    def on_load(self, pc: int, dst: int, addr: int, width: int) -> None:
        labels = self.taint.on_mem_read(pc, dst, addr, width)
        if labels and addr >> 32 == _INPUT:
            ref = self.layout.locate(addr)
            if ref is not None and ref.kind is FieldKind.DATA:
                self.oracles.on_data_read(ref.account)  # type: ignore[arg-type]

    def on_store(self, pc: int, addr: int, width: int, src: int | None, old: bytes) -> None:
        labels = self.taint.on_mem_write(pc, addr, width, src)
        if addr >> 32 != _INPUT:
            return
        layout = self.layout
        first = layout.locate(addr)
        last = layout.locate(addr + width - 1)
        refs = [first]
        if last is not None and (first is None or (last.account, last.kind) != (first.account, first.kind)):
            refs.append(last)
        for ref in refs:
            if ref is None or ref.account is None:
                continue
            k = ref.account
            if ref.kind is FieldKind.LAMPORTS:
                field_at = self._lamport_ranges[k]
                after = _U64.unpack_from(self.mem, field_at - INPUT_START)[0]
                before_bytes = bytearray(self.mem[field_at - INPUT_START : field_at - INPUT_START + 8])
                for i, b in enumerate(old):
                    j = addr + i - field_at
                    if 0 <= j < 8:
                        before_bytes[j] = b
                before = _U64.unpack(before_bytes)[0]
                self.oracles.on_lamports_write(pc, k, before, after, OVERFLOWED in labels)
            elif ref.kind is FieldKind.DATA:
                self.oracles.on_data_write(pc, k, ref.offset)
                if self.layout_extractor is not None:
                    self.layout_extractor.on_data_write(pc, k, ref.offset, width, addr, labels)

    def on_call(self, pc: int, target: int) -> None:
        self.taint.on_call()
        self.oracles.on_call(pc, target, self.vm.regs)

    def on_return(self, pc: int, return_pc: int) -> None:
        self.taint.on_return()

    def on_syscall_return(self, pc: int, name: str, r0: int) -> None:
        self.taint.on_syscall_return()

    def on_mem_clobber(self, addr: int, length: int) -> None:
        self.taint.clear(addr, length)

    def on_pda(self, pc: int, event: PdaEvent) -> None:
        did = seed_structure_id(pc, len(event.seeds))
        if self.extract:
            self.seed_structures.append(
                extract_seed_structure(pc, event, self.taint.state, self.layout, self._role_of_index)
            )
        self.taint.on_pda_syscall_return(did, event.result_addr, event.key)

    def on_cpi(self, pc: int, target: bytes, instruction: CpiInstruction, signer_pdas: tuple[bytes, ...]) -> None:
        if self.trace is not None:
            self.trace(f"pc={pc} cpi target={b58(target)} signer_pdas={len(signer_pdas)}")
        self.oracles.on_cpi(pc, target, signer_pdas)

    def _role_of_index(self, k: int) -> str:
        return self.role_of(self.layout.primary(k).pubkey)

    def data_layouts(self) -> list[AccountDataLayout]:
        return self.layout_extractor.layouts() if self.layout_extractor is not None else []


@dataclass
class AccountDelta:
    pubkey: bytes
    before: int
    after: int

    def to_dict(self) -> dict[str, Any]:
        return {"pubkey": b58(self.pubkey), "lamports_before": self.before, "lamports_after": self.after}


@dataclass
class ExecResult:
    tx: Transaction
    outcome: ExecutionOutcome
    working: WorkingCopy
    edges: EdgeTrace | None
    seed_structures: list[SeedStructure] = field(default_factory=list)
    data_layouts: list[AccountDataLayout] = field(default_factory=list)
    deltas: list[AccountDelta] = field(default_factory=list)
    hints: list[tuple[int, int]] = field(default_factory=list)

    @property
    def signals(self) -> list[OracleSignal]:
        return self.outcome.signals


def tx_context(snapshot: LedgerSnapshot, tx: Transaction) -> TxContext:
    return TxContext(
        attacker_signed=tx.fee_payer_role == "attacker",
        user_related=snapshot.keys_in("user_keys", "user_pda_keys"),
        attacker_related=snapshot.keys_in("attacker_keys", "attacker_pda_keys", "attacker_controlled_keys"),
    )


class Executor:
    """Runs fuzz inputs against snapshots of one target program."""

    def __init__(
        self,
        program: EbpfProgram,
        oracles: OracleConfig | None = None,
        *,
        coverage_size: int = 65536,
        budget: int = DEFAULT_BUDGET,
    ) -> None:
        self.program = program
        self.oracles = oracles or OracleConfig()
        self.coverage_size = coverage_size
        self.budget = budget
        self.programs = ProgramCache()
        self._chunk_cache: tuple[tuple[bytes, ...], dict[tuple[int, int], int]] | None = None

    def _key_chunks(self, snapshot: LedgerSnapshot) -> dict[tuple[int, int], int]:
        keys = snapshot.selectable_keys.keys
        if self._chunk_cache is None or self._chunk_cache[0] is not keys:
            table: dict[tuple[int, int], int] = {}
            for i, k in enumerate(keys):
                for c in range(4):
                    table.setdefault((c, _U64.unpack_from(k, 8 * c)[0]), i)
            self._chunk_cache = (keys, table)
        return self._chunk_cache[1]

    def run(
        self,
        snapshot: LedgerSnapshot,
        data: bytes,
        *,
        coverage: bool = True,
        extract: bool = True,
        trace: Callable[[str], None] | None = None,
        hints: bool = False,
    ) -> ExecResult:
        """Execute ``data`` against ``snapshot``.

        With ``hints``, failed comparisons of an account key against a chunk of
        another selectable key are collected as (account position, key index).
        """
        tx = decode(data, snapshot.selectable_keys)
        key_chunks = self._key_chunks(snapshot) if hints else None
        hint_list: list[tuple[int, int]] = []
        self.programs.put(snapshot.program_id, snapshot.accounts[snapshot.program_id], self.program)
        working = WorkingCopy(snapshot)
        txc = tx_context(snapshot, tx)
        edges = EdgeTrace(self.coverage_size) if coverage else None
        top: list[Instrumentation] = []

        def factory(frame: Frame) -> VmObserver:
            inst = Instrumentation(
                frame,
                self.oracles,
                txc,
                role_of=snapshot.role_of,
                edges=edges if frame.depth == 0 else None,
                extract=extract and frame.depth == 0,
                trace=trace,
                key_chunks=key_chunks if frame.depth == 0 else None,
                hints=hint_list,
            )
            if frame.depth == 0:
                top.append(inst)
            return inst

        ctx = InvokeContext(
            working,
            ComputeMeter(self.budget),
            factory,
            self.programs,
            transaction_instructions=tx.instructions,
        )
        outcome = ctx.invoke(tx.instruction, 0)
        result = ExecResult(tx, outcome, working, edges, hints=hint_list)
        if top:
            inst = top[0]
            result.seed_structures = inst.seed_structures
            result.data_layouts = inst.data_layouts()
        vm = ctx.top_vm
        if vm is not None and vm.layout is not None:
            for slot in vm.layout.accounts:
                if slot.dup_of is None:
                    before = snapshot.accounts[slot.pubkey].lamports
                    result.deltas.append(AccountDelta(slot.pubkey, before, read_lamports(vm.input, slot)))
        return result
