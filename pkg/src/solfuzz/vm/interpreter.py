"""Metered eBPF interpreter."""

from __future__ import annotations

import enum
import struct
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Any

from .events import VmObserver
from .isa import CALL, EXIT, JA, LDDW, MASK64, SIGN64
from .loader import EbpfProgram

if TYPE_CHECKING:
    from ..abi import InputLayout
    from .runtime import InvokeContext

PROGRAM_START = 0x1_0000_0000
STACK_START = 0x2_0000_0000
HEAP_START = 0x3_0000_0000
INPUT_START = 0x4_0000_0000

STACK_FRAME_SIZE = 4096
MAX_CALL_DEPTH = 64
HEAP_SIZE = 32 * 1024
MAX_CPI_DEPTH = 4

DEFAULT_BUDGET = 200_000
INSTRUCTION_COST = 1
SYSCALL_COST = 100

_U = {w: struct.Struct(f"<{c}") for w, c in ((1, "B"), (2, "H"), (4, "I"), (8, "Q"))}
UNPACK = {w: s.unpack_from for w, s in _U.items()}
PACK = {w: s.pack_into for w, s in _U.items()}
_WIDTH = {0x00: 4, 0x08: 2, 0x10: 1, 0x18: 8}
_U64 = _U[8]


class Status(enum.Enum):
    SUCCESS = "Success"
    PROGRAM_ERROR = "ProgramError"
    ABORTED = "Aborted"
    ORACLE_SIGNAL = "OracleSignal"


@dataclass
class ExecutionOutcome:
    status: Status
    r0: int = 0
    code: int | str | None = None
    reason: str | None = None
    signals: list[Any] = field(default_factory=list)
    retired: int = 0
    compute_used: int = 0
    pc: int = 0
    logs: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return self.status is Status.SUCCESS

    def describe(self) -> str:
        if self.status is Status.SUCCESS:
            return "Success(0)"
        if self.status is Status.PROGRAM_ERROR:
            return f"ProgramError({self.code})"
        if self.status is Status.ABORTED:
            return f"Aborted({self.reason})"
        return f"OracleSignal({', '.join(s.kind.value for s in self.signals)})"


class VmHalt(Exception):
    """Raised inside the interpreter to terminate with a non-success outcome."""

    def __init__(self, status: Status, detail: int | str) -> None:
        super().__init__(detail)
        self.status = status
        self.detail = detail


def abort(reason: str) -> VmHalt:
    return VmHalt(Status.ABORTED, reason)


def program_error(code: int | str) -> VmHalt:
    return VmHalt(Status.PROGRAM_ERROR, code)


class ComputeMeter:
    __slots__ = ("remaining", "budget")

    def __init__(self, budget: int) -> None:
        self.budget = budget
        self.remaining = budget

    @property
    def used(self) -> int:
        return self.budget - self.remaining


class Vm:
    def __init__(
        self,
        program: EbpfProgram,
        input_data: bytes | bytearray,
        budget: int = DEFAULT_BUDGET,
        observer: VmObserver | None = None,
        *,
        meter: ComputeMeter | None = None,
        context: InvokeContext | None = None,
        layout: InputLayout | None = None,
        depth: int = 0,
        program_id: bytes = bytes(32),
    ) -> None:
        if budget <= 0 and meter is None:
            raise ValueError("budget must be positive")
        self.program = program
        self.input = bytearray(input_data)
        self.stack = bytearray(STACK_FRAME_SIZE * MAX_CALL_DEPTH)
        self.heap = bytearray(HEAP_SIZE)
        # region index = addr >> 32; (buffer, writable)
        self.regions: list[tuple[bytes | bytearray, bool] | None] = [
            None,
            (program.text, False),
            (self.stack, True),
            (self.heap, True),
            (self.input, True),
        ]
        self.regs = [0] * 11
        self.regs[1] = INPUT_START
        self.regs[10] = STACK_START + STACK_FRAME_SIZE
        self.pc = program.entry_pc
        self.meter = meter or ComputeMeter(budget)
        self.context = context
        self.layout = layout
        self.depth = depth
        self.program_id = program_id
        self.frames: list[tuple[int, int, int, int, int, int]] = []
        self.signals: list[Any] = []
        self.logs: list[str] = []
        self.retired = 0
        self.observer = observer
        if observer is not None:
            observer.attach(self)

    # memory helpers for syscalls and observers

    def _region(self, addr: int, length: int, write: bool) -> tuple[bytearray, int]:
        idx = addr >> 32
        off = addr & 0xFFFFFFFF
        region = self.regions[idx] if 0 <= idx < 5 else None
        if region is None or length < 0 or off + length > len(region[0]) or (write and not region[1]):
            raise abort("MemFault")
        return region[0], off  # type: ignore[return-value]

    def read_bytes(self, addr: int, length: int) -> bytes:
        buf, off = self._region(addr, length, False)
        return bytes(buf[off : off + length])

    def write_bytes(self, addr: int, data: bytes) -> None:
        buf, off = self._region(addr, len(data), True)
        buf[off : off + len(data)] = data

    def read_u64(self, addr: int) -> int:
        buf, off = self._region(addr, 8, False)
        return _U64.unpack_from(buf, off)[0]

    def signal(self, sig: Any) -> None:
        self.signals.append(sig)

    def log(self, line: str) -> None:
        self.logs.append(line)
        if self.context is not None:
            self.context.logs.append(line)

    # execution

    def run(self) -> ExecutionOutcome:
        start = self.meter.remaining
        try:
            r0 = self._loop()
        except VmHalt as halt:
            out = ExecutionOutcome(halt.status, pc=self.pc)
            if halt.status is Status.ABORTED:
                out.reason = str(halt.detail)
            else:
                out.code = halt.detail
        else:
            if self.signals:
                out = ExecutionOutcome(Status.ORACLE_SIGNAL, r0=r0, pc=self.pc)
            elif r0 == 0:
                out = ExecutionOutcome(Status.SUCCESS, r0=0, pc=self.pc)
            else:
                out = ExecutionOutcome(Status.PROGRAM_ERROR, r0=r0, code=r0, pc=self.pc)
        if self.signals and out.status is not Status.ABORTED:
            out.status = Status.ORACLE_SIGNAL
        out.signals = list(self.signals)
        out.retired = self.retired
        out.compute_used = start - self.meter.remaining
        out.logs = list(self.logs)
        return out

    def _loop(self) -> int:
        insns = self.program.insns
        n = len(insns)
        regs = self.regs
        regions = self.regions
        obs = self.observer
        trace = obs is not None and obs.trace_instructions
        signals = self.signals
        meter = self.meter
        frames = self.frames
        unpack = UNPACK
        pack = PACK
        widths = _WIDTH
        pc = self.pc
        remaining = meter.remaining
        retired = self.retired
        try:
            while True:
                if remaining <= 0:
                    raise abort("ComputeExceeded")
                if pc >= n:
                    raise abort("PcOutOfBounds")
                remaining -= 1
                op, dst, src, off, imm = insns[pc]
                cls = op & 7
                if trace:
                    obs.on_instruction(pc, op)  # type: ignore[union-attr]

                if cls == 7:  # ALU64
                    code = op & 0xF0
                    if op & 8:
                        b = regs[src]
                        sreg = src
                    else:
                        b = imm & MASK64
                        sreg = None
                    a = regs[dst]
                    wrapped = False
                    if code == 0xB0:
                        r = b
                    elif code == 0x00:
                        r = a + b
                        if sreg is None and imm < 0:
                            wrapped = a < -imm
                            r &= MASK64
                        elif r > MASK64:
                            wrapped = True
                            r &= MASK64
                    elif code == 0x10:
                        if sreg is None and imm < 0:
                            r = a - imm
                            wrapped = r > MASK64
                            r &= MASK64
                        else:
                            wrapped = a < b
                            r = (a - b) & MASK64
                    elif code == 0x20:
                        r = a * b
                        if r > MASK64:
                            wrapped = True
                            r &= MASK64
                    elif code == 0x30:
                        if b == 0:
                            raise program_error("DivideByZero")
                        r = a // b
                    elif code == 0x90:
                        if b == 0:
                            raise program_error("DivideByZero")
                        r = a % b
                    elif code == 0x40:
                        r = a | b
                    elif code == 0x50:
                        r = a & b
                    elif code == 0xA0:
                        r = a ^ b
                    elif code == 0x60:
                        r = (a << (b & 63)) & MASK64
                    elif code == 0x70:
                        r = a >> (b & 63)
                    elif code == 0xC0:
                        sa = a - (1 << 64) if a & SIGN64 else a
                        r = (sa >> (b & 63)) & MASK64
                    else:  # neg
                        r = (-a) & MASK64
                        wrapped = a == SIGN64
                        sreg = None
                    regs[dst] = r
                    if obs is not None:
                        obs.on_alu(pc, op, dst, sreg, wrapped)
                    pc += 1

                elif cls == 1:  # LDX
                    width = widths[op & 0x18]
                    addr = (regs[src] + off) & MASK64
                    idx = addr >> 32
                    region = regions[idx] if idx < 5 else None
                    o = addr & 0xFFFFFFFF
                    if region is None or o + width > len(region[0]):
                        raise abort("MemFault")
                    regs[dst] = unpack[width](region[0], o)[0]
                    if obs is not None:
                        obs.on_load(pc, dst, addr, width)
                    pc += 1

                elif cls == 5:  # JMP
                    if op == CALL:
                        if src == 1:
                            if len(frames) + 1 >= MAX_CALL_DEPTH:
                                raise abort("CallDepthExceeded")
                            frames.append((pc + 1, regs[6], regs[7], regs[8], regs[9], regs[10]))
                            regs[10] += STACK_FRAME_SIZE
                            target = pc + 1 + imm
                            if obs is not None:
                                obs.on_branch(pc, target)
                                obs.on_call(pc, target)
                            pc = target
                        else:
                            remaining -= SYSCALL_COST
                            if remaining < 0:
                                remaining = 0
                                raise abort("ComputeExceeded")
                            meter.remaining = remaining
                            self.pc = pc
                            self._syscall(pc, imm & 0xFFFFFFFF)
                            remaining = meter.remaining
                            if obs is not None:
                                obs.on_branch(pc, pc + 1)
                            pc += 1
                    elif op == EXIT:
                        if not frames:
                            retired += 1
                            if obs is not None:
                                obs.on_branch(pc, None)
                            return regs[0]
                        ret, regs[6], regs[7], regs[8], regs[9], regs[10] = frames.pop()
                        if obs is not None:
                            obs.on_branch(pc, ret)
                            obs.on_return(pc, ret)
                        pc = ret
                    elif op == JA:
                        target = pc + 1 + off
                        if obs is not None:
                            obs.on_branch(pc, target)
                        pc = target
                    else:
                        a = regs[dst]
                        if op & 8:
                            b = regs[src]
                            sreg = src
                        else:
                            b = imm & MASK64
                            sreg = None
                        code = op & 0xF0
                        if code == 0x10:
                            taken = a == b
                        elif code == 0x50:
                            taken = a != b
                        elif code == 0x20:
                            taken = a > b
                        elif code == 0x30:
                            taken = a >= b
                        elif code == 0xA0:
                            taken = a < b
                        elif code == 0xB0:
                            taken = a <= b
                        else:
                            sa = a - (1 << 64) if a & SIGN64 else a
                            sb = b - (1 << 64) if b & SIGN64 else b
                            if code == 0x60:
                                taken = sa > sb
                            elif code == 0x70:
                                taken = sa >= sb
                            elif code == 0xC0:
                                taken = sa < sb
                            else:
                                taken = sa <= sb
                        target = pc + 1 + off if taken else pc + 1
                        if obs is not None:
                            obs.on_compare(pc, dst, sreg, a, b)
                            obs.on_branch(pc, target)
                        pc = target

                elif cls == 3 or cls == 2:  # STX / ST
                    width = widths[op & 0x18]
                    addr = (regs[dst] + off) & MASK64
                    idx = addr >> 32
                    region = regions[idx] if idx < 5 else None
                    o = addr & 0xFFFFFFFF
                    if region is None or o + width > len(region[0]) or not region[1]:
                        raise abort("MemFault")
                    buf = region[0]
                    if cls == 3:
                        value = regs[src]
                        sreg = src
                    else:
                        value = imm
                        sreg = None
                    old = bytes(buf[o : o + width]) if obs is not None else b""
                    pack[width](buf, o, value & ((1 << (8 * width)) - 1))
                    if obs is not None:
                        obs.on_store(pc, addr, width, sreg, old)
                    pc += 1

                elif op == LDDW:
                    regs[dst] = imm
                    if obs is not None:
                        obs.on_alu(pc, LDDW, dst, None, False)
                    pc += 2

                else:
                    raise abort("InvalidInstruction")

                retired += 1
                if signals:
                    self.pc = pc
                    return regs[0]
        finally:
            meter.remaining = remaining
            self.retired = retired
            self.pc = pc

    def _syscall(self, pc: int, imm: int) -> None:
        from .syscalls import SYSCALL_HANDLERS

        name = self.program.syscall_table.get(imm)
        handler = SYSCALL_HANDLERS.get(name) if name else None
        if handler is None:
            raise abort("UnknownSyscall")
        regs = self.regs
        args = (regs[1], regs[2], regs[3], regs[4], regs[5])
        obs = self.observer
        if obs is not None:
            obs.on_syscall(pc, name, args)  # type: ignore[arg-type]
        if self.signals:
            regs[0] = 0
            return
        regs[0] = handler(self, pc, *args) & MASK64
        if obs is not None:
            obs.on_syscall_return(pc, name, regs[0])  # type: ignore[arg-type]


def execute(
    program: EbpfProgram,
    input_data: bytes | bytearray,
    budget: int = DEFAULT_BUDGET,
    hooks: VmObserver | None = None,
    **kwargs: Any,
) -> ExecutionOutcome:
    """Run ``program`` once over ``input_data``."""
    return Vm(program, input_data, budget, hooks, **kwargs).run()
