"""Instruction processing: serialization, execution, nested invocation and write-back."""

from __future__ import annotations

import struct
from collections.abc import Callable, Sequence
from dataclasses import dataclass, field
from typing import TYPE_CHECKING

from .. import abi
from ..model import Account, Instruction, Pubkey
from ..pda import CurvePredicate, surrogate_on_curve
from .events import VmObserver
from .interpreter import DEFAULT_BUDGET, ComputeMeter, ExecutionOutcome, Status, Vm, program_error
from .loader import EbpfProgram, ProgramLoadError, load_program

if TYPE_CHECKING:
    from ..ledger import ClockValues, WorkingCopy


@dataclass(frozen=True)
class Frame:
    """What an observer factory learns about the VM it is instrumenting."""

    depth: int
    program_id: Pubkey
    instruction: Instruction
    layout: abi.InputLayout


ObserverFactory = Callable[[Frame], VmObserver | None]


class ProgramCache:
    def __init__(self) -> None:
        self._cache: dict[tuple[Pubkey, int], EbpfProgram] = {}

    def get(self, key: Pubkey, account: Account) -> EbpfProgram:
        token = (key, hash(account.data))
        prog = self._cache.get(token)
        if prog is None:
            prog = load_program(account.data)
            self._cache[token] = prog
        return prog

    def put(self, key: Pubkey, account: Account, program: EbpfProgram) -> None:
        self._cache[(key, hash(account.data))] = program


def _native_system(ctx: InvokeContext, instr: Instruction) -> ExecutionOutcome:
    from ..ledger import SYSTEM_PROGRAM

    data = instr.data
    if len(data) < 12 or struct.unpack_from("<I", data)[0] != 2 or len(instr.account_metas) < 2:
        return ExecutionOutcome(Status.PROGRAM_ERROR, code="InvalidInstructionData")
    (amount,) = struct.unpack_from("<Q", data, 4)
    src_meta, dst_meta = instr.account_metas[0], instr.account_metas[1]
    if not (src_meta.is_signer and src_meta.is_writable and dst_meta.is_writable):
        return ExecutionOutcome(Status.PROGRAM_ERROR, code="MissingRequiredSignature")
    src = ctx.working[src_meta.pubkey]
    if src.owner != SYSTEM_PROGRAM or src.data:
        return ExecutionOutcome(Status.PROGRAM_ERROR, code="InvalidAccountOwner")
    if src.lamports < amount:
        return ExecutionOutcome(Status.PROGRAM_ERROR, code="InsufficientFunds")
    ctx.working[src.pubkey] = src.with_(lamports=src.lamports - amount)
    dst = ctx.working[dst_meta.pubkey]
    ctx.working[dst.pubkey] = dst.with_(lamports=dst.lamports + amount)
    return ExecutionOutcome(Status.SUCCESS)


NativeHandler = Callable[["InvokeContext", Instruction], ExecutionOutcome]


@dataclass
class InvokeContext:
    """Transaction-wide state shared by the top-level VM and every nested invocation."""

    working: WorkingCopy
    meter: ComputeMeter = field(default_factory=lambda: ComputeMeter(DEFAULT_BUDGET))
    observer_factory: ObserverFactory | None = None
    programs: ProgramCache = field(default_factory=ProgramCache)
    transaction_instructions: Sequence[Instruction] = ()
    on_curve: CurvePredicate = surrogate_on_curve
    clock: ClockValues | None = None
    call_chain: list[Pubkey] = field(default_factory=list)
    logs: list[str] = field(default_factory=list)
    natives: dict[Pubkey, NativeHandler] = field(default_factory=dict)
    top_vm: Vm | None = None

    def __post_init__(self) -> None:
        from ..ledger import SYSTEM_PROGRAM, ClockValues

        self.natives.setdefault(SYSTEM_PROGRAM, _native_system)
        if self.clock is None:
            self.clock = ClockValues()

    def invoke(self, instr: Instruction, depth: int = 0) -> ExecutionOutcome:
        native = self.natives.get(instr.program_id)
        if native is not None:
            return native(self, instr)
        try:
            account = self.working[instr.program_id]
        except KeyError:
            return ExecutionOutcome(Status.PROGRAM_ERROR, code="UnsupportedProgramId")
        if not account.executable:
            return ExecutionOutcome(Status.PROGRAM_ERROR, code="UnsupportedProgramId")
        try:
            program = self.programs.get(instr.program_id, account)
        except ProgramLoadError:
            return ExecutionOutcome(Status.PROGRAM_ERROR, code="InvalidProgram")
        try:
            blob, layout = abi.serialize(instr, self.working)
        except KeyError:
            return ExecutionOutcome(Status.PROGRAM_ERROR, code="MissingAccount")
        observer = None
        if self.observer_factory is not None:
            observer = self.observer_factory(Frame(depth, instr.program_id, instr, layout))
        vm = Vm(
            program,
            blob,
            observer=observer,
            meter=self.meter,
            context=self,
            layout=layout,
            depth=depth,
            program_id=instr.program_id,
        )
        if depth == 0:
            self.top_vm = vm
        self.call_chain.append(instr.program_id)
        try:
            outcome = vm.run()
        finally:
            self.call_chain.pop()
        if outcome.ok:
            try:
                abi.writeback(vm.input, layout, self.working, instr.program_id)
            except abi.WritebackError as exc:
                outcome.status = Status.PROGRAM_ERROR
                outcome.code = exc.reason
        return outcome

    def sync_caller(self, vm: Vm) -> None:
        """Publish the caller's pending account changes before a nested call."""
        try:
            abi.writeback(vm.input, vm.layout, self.working, vm.program_id)  # type: ignore[arg-type]
        except abi.WritebackError as exc:
            raise program_error(exc.reason) from None

    def refresh_caller(self, vm: Vm) -> None:
        layout = vm.layout
        assert layout is not None
        before = bytes(vm.input)
        abi.refresh(vm.input, layout, self.working)
        if vm.observer is not None:
            for slot in layout.accounts:
                if slot.dup_of is not None:
                    continue
                a, b = slot.lamports_at, slot.data_at + slot.data_len
                if before[a:b] != vm.input[a:b]:
                    vm.observer.on_mem_clobber(layout.base + a, b - a)


def process_instruction(
    instr: Instruction,
    working: WorkingCopy,
    *,
    budget: int = DEFAULT_BUDGET,
    observer_factory: ObserverFactory | None = None,
    programs: ProgramCache | None = None,
) -> tuple[ExecutionOutcome, InvokeContext]:
    ctx = InvokeContext(
        working,
        ComputeMeter(budget),
        observer_factory,
        programs or ProgramCache(),
        transaction_instructions=(instr,),
    )
    return ctx.invoke(instr, 0), ctx
