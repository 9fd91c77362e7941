"""Hook interface between the interpreter and its analyses."""

from __future__ import annotations

from dataclasses import dataclass
from typing import TYPE_CHECKING, Any, Union

if TYPE_CHECKING:
    from .interpreter import Vm


@dataclass(frozen=True)
class PdaSeed:
    addr: int
    data: bytes


@dataclass(frozen=True)
class PdaEvent:
    seeds: tuple[PdaSeed, ...]
    program_id: bytes
    result_addr: int
    key: bytes | None
    bump: int | None
    searched: bool


@dataclass(frozen=True)
class CpiMeta:
    pubkey: bytes
    is_signer: bool
    is_writable: bool


@dataclass(frozen=True)
class CpiInstruction:
    program_id: bytes
    metas: tuple[CpiMeta, ...]
    data: bytes


class VmObserver:
    """No-op base. The interpreter calls these in instruction order.

    Set ``trace_instructions`` to receive ``on_instruction`` for every retired
    instruction; it is off by default because it dominates hook overhead.
    """

    trace_instructions = False

    def attach(self, vm: Vm) -> None:
        self.vm = vm

    def on_instruction(self, pc: int, opcode: int) -> None: ...

    def on_branch(self, src_pc: int, dst_pc: int | None) -> None: ...

    def on_compare(self, pc: int, lhs_reg: int, rhs_reg: int | None, lhs: int, rhs: int) -> None: ...

    def on_alu(self, pc: int, opcode: int, dst: int, src: int | None, wrapped: bool) -> None: ...

    def on_load(self, pc: int, dst: int, addr: int, width: int) -> None: ...

    def on_store(self, pc: int, addr: int, width: int, src: int | None, old: bytes) -> None: ...

    def on_call(self, pc: int, target: int) -> None: ...

    def on_return(self, pc: int, return_pc: int) -> None: ...

    def on_syscall(self, pc: int, name: str, args: tuple[int, ...]) -> None: ...

    def on_syscall_return(self, pc: int, name: str, r0: int) -> None: ...

    def on_mem_clobber(self, addr: int, length: int) -> None: ...

    def on_pda(self, pc: int, event: PdaEvent) -> None: ...

    def on_cpi(self, pc: int, target: bytes, instruction: CpiInstruction, signer_pdas: tuple[bytes, ...]) -> None: ...


# Event records, used by the recorder and by determinism tests.


@dataclass(frozen=True)
class InstructionRetired:
    pc: int
    opcode: int


@dataclass(frozen=True)
class ControlTransfer:
    src_pc: int
    dst_pc: int | None


@dataclass(frozen=True)
class RegCompare:
    pc: int
    lhs_reg: int
    rhs: int | str


@dataclass(frozen=True)
class MemRead:
    pc: int
    addr: int
    width: int


@dataclass(frozen=True)
class MemWrite:
    pc: int
    addr: int
    width: int
    old_bytes: bytes
    new_bytes: bytes


@dataclass(frozen=True)
class Syscall:
    pc: int
    id: str
    args: tuple[int, ...]


@dataclass(frozen=True)
class CpiInvoke:
    pc: int
    target_program_key: bytes
    instruction: CpiInstruction
    signer_pdas: tuple[bytes, ...]


VmHookEvent = Union[InstructionRetired, ControlTransfer, RegCompare, MemRead, MemWrite, Syscall, CpiInvoke]


class EventRecorder(VmObserver):
    """Collects the event stream as records."""

    def __init__(self, trace_instructions: bool = True) -> None:
        self.trace_instructions = trace_instructions
        self.events: list[VmHookEvent] = []

    def on_instruction(self, pc: int, opcode: int) -> None:
        self.events.append(InstructionRetired(pc, opcode))

    def on_branch(self, src_pc: int, dst_pc: int | None) -> None:
        self.events.append(ControlTransfer(src_pc, dst_pc))

    def on_compare(self, pc: int, lhs_reg: int, rhs_reg: int | None, lhs: int, rhs: int) -> None:
        self.events.append(RegCompare(pc, lhs_reg, f"r{rhs_reg}" if rhs_reg is not None else rhs))

    def on_load(self, pc: int, dst: int, addr: int, width: int) -> None:
        self.events.append(MemRead(pc, addr, width))

    def on_store(self, pc: int, addr: int, width: int, src: int | None, old: bytes) -> None:
        new = self.vm.read_bytes(addr, width)
        self.events.append(MemWrite(pc, addr, width, old, new))

    def on_syscall(self, pc: int, name: str, args: tuple[int, ...]) -> None:
        self.events.append(Syscall(pc, name, args))

    def on_cpi(self, pc: int, target: bytes, instruction: CpiInstruction, signer_pdas: tuple[bytes, ...]) -> None:
        self.events.append(CpiInvoke(pc, target, instruction, signer_pdas))


class FanOut(VmObserver):
    """Forwards every hook to several observers in order."""

    def __init__(self, *observers: VmObserver) -> None:
        self.observers = observers
        self.trace_instructions = any(o.trace_instructions for o in observers)

    def attach(self, vm: Vm) -> None:
        self.vm = vm
        for o in self.observers:
            o.attach(vm)

    def __getattribute__(self, name: str) -> Any:
        if name.startswith("on_"):
            observers = object.__getattribute__(self, "observers")

            def fan(*args: Any) -> None:
                for o in observers:
                    getattr(o, name)(*args)

            return fan
        return object.__getattribute__(self, name)
