"""Program loading and static validation (flat bytecode or the .text of an ELF)."""

from __future__ import annotations

import hashlib
import io
from dataclasses import dataclass, field

from .isa import (
    CALL,
    COND_JUMP_OPCODES,
    DEFAULT_SYSCALLS,
    EXIT,
    INSN_SIZE,
    JA,
    LDDW,
    VALID_OPCODES,
    Insn,
    decode_slot,
)


class ProgramLoadError(Exception):
    pass


class MalformedInstruction(ProgramLoadError):
    pass


class UnresolvableTarget(ProgramLoadError):
    pass


class UnknownSyscall(ProgramLoadError):
    pass


@dataclass(frozen=True)
class EbpfProgram:
    text: bytes
    insns: tuple[Insn, ...]
    entry_pc: int = 0
    syscall_table: dict[int, str] = field(default_factory=dict)
    # pcs that are targets of local calls
    functions: frozenset[int] = frozenset()

    @property
    def size(self) -> int:
        return len(self.insns)

    @property
    def digest(self) -> str:
        return hashlib.sha256(self.text).hexdigest()


def decode_text(text: bytes) -> list[Insn]:
    """Decode raw slots. LDDW folds its second slot into the first; the second is a filler Insn."""
    if len(text) % INSN_SIZE:
        raise MalformedInstruction(f"text length {len(text)} is not a multiple of {INSN_SIZE}")
    n = len(text) // INSN_SIZE
    out: list[Insn] = []
    pc = 0
    while pc < n:
        ins = decode_slot(text, pc)
        if ins.opcode == LDDW:
            if pc + 1 >= n:
                raise MalformedInstruction(f"pc {pc}: truncated lddw")
            hi = decode_slot(text, pc + 1)
            if hi.opcode != 0 or hi.dst or hi.src or hi.off:
                raise MalformedInstruction(f"pc {pc}: bad lddw second slot")
            value = (ins.imm & 0xFFFFFFFF) | ((hi.imm & 0xFFFFFFFF) << 32)
            out.append(Insn(LDDW, ins.dst, ins.src, ins.off, value))
            out.append(Insn(0, 0, 0, 0, 0))
            pc += 2
            continue
        out.append(ins)
        pc += 1
    return out


def _validate(insns: list[Insn], syscalls: dict[int, str]) -> frozenset[int]:
    n = len(insns)
    # slots that hold the upper half of an lddw can never be jumped to
    filler = {i + 1 for i, ins in enumerate(insns) if ins.opcode == LDDW}
    functions: set[int] = set()

    def check_target(pc: int, target: int) -> None:
        if not 0 <= target < n or target in filler:
            raise UnresolvableTarget(f"pc {pc}: target {target} outside text")

    for pc, ins in enumerate(insns):
        if pc in filler:
            continue
        op = ins.opcode
        if op not in VALID_OPCODES:
            raise MalformedInstruction(f"pc {pc}: unsupported opcode 0x{op:02x}")
        if ins.dst > 10 or ins.src > 10:
            raise MalformedInstruction(f"pc {pc}: register out of range")
        if op == LDDW:
            if ins.dst == 10:
                raise MalformedInstruction(f"pc {pc}: r10 is read-only")
            continue
        if op == CALL:
            if ins.src == 0:
                if (ins.imm & 0xFFFFFFFF) not in syscalls:
                    raise UnknownSyscall(f"pc {pc}: unknown syscall immediate 0x{ins.imm & 0xFFFFFFFF:08x}")
            elif ins.src == 1:
                target = pc + 1 + ins.imm
                check_target(pc, target)
                functions.add(target)
            else:
                raise MalformedInstruction(f"pc {pc}: bad call source {ins.src}")
            continue
        if op == JA or op in COND_JUMP_OPCODES:
            check_target(pc, pc + 1 + ins.off)
            continue
        if op == EXIT:
            continue
        cls = op & 0x07
        # ALU and LDX write dst; STX/ST only read it
        if cls in (0x07, 0x01) and ins.dst == 10:
            raise MalformedInstruction(f"pc {pc}: r10 is read-only")
    return frozenset(functions)


def _elf_text(blob: bytes) -> tuple[bytes, int]:
    from elftools.common.exceptions import ELFError
    from elftools.elf.elffile import ELFFile

    try:
        elf = ELFFile(io.BytesIO(blob))
        section = elf.get_section_by_name(".text")
        if section is None:
            raise ProgramLoadError("ELF has no .text section")
        text = section.data()
        entry = elf.header["e_entry"]
        base = section["sh_addr"]
    except ELFError as exc:
        raise ProgramLoadError(f"bad ELF: {exc}") from exc
    entry_pc = 0
    if base <= entry < base + len(text) and (entry - base) % INSN_SIZE == 0:
        entry_pc = (entry - base) // INSN_SIZE
    return text, entry_pc


def load_program(
    blob: bytes,
    format: str = "flat",
    syscall_table: dict[int, str] | None = None,
    entry_pc: int = 0,
) -> EbpfProgram:
    syscalls = dict(DEFAULT_SYSCALLS if syscall_table is None else syscall_table)
    if format == "flat":
        text = bytes(blob)
    elif format in ("elf", "elf-text"):
        text, entry_pc = _elf_text(bytes(blob))
    else:
        raise ProgramLoadError(f"unknown program format {format!r}")
    insns = decode_text(text)
    if not insns:
        raise MalformedInstruction("program has no instructions")
    if not 0 <= entry_pc < len(insns):
        raise UnresolvableTarget(f"entry pc {entry_pc} outside text")
    functions = _validate(insns, syscalls)
    return EbpfProgram(text, tuple(insns), entry_pc, syscalls, functions)
