"""Instruction encoding for the supported eBPF subset."""

from __future__ import annotations

import struct
import zlib
from typing import NamedTuple

INSN_SIZE = 8
MASK64 = (1 << 64) - 1
SIGN64 = 1 << 63

INSN_STRUCT = struct.Struct("<BBhi")

CLS_LD = 0x00
CLS_LDX = 0x01
CLS_ST = 0x02
CLS_STX = 0x03
CLS_JMP = 0x05
CLS_ALU64 = 0x07

SRC_REG = 0x08

LDDW = 0x18
CALL = 0x85
EXIT = 0x95
JA = 0x05

ALU_OPS: dict[str, int] = {
    "add64": 0x00,
    "sub64": 0x10,
    "mul64": 0x20,
    "div64": 0x30,
    "or64": 0x40,
    "and64": 0x50,
    "lsh64": 0x60,
    "rsh64": 0x70,
    "neg64": 0x80,
    "mod64": 0x90,
    "xor64": 0xA0,
    "mov64": 0xB0,
    "arsh64": 0xC0,
}

JMP_OPS: dict[str, int] = {
    "jeq": 0x10,
    "jgt": 0x20,
    "jge": 0x30,
    "jne": 0x50,
    "jsgt": 0x60,
    "jsge": 0x70,
    "jlt": 0xA0,
    "jle": 0xB0,
    "jslt": 0xC0,
    "jsle": 0xD0,
}

# size field (bits 3..4) → byte width
SIZE_BITS: dict[int, int] = {0x00: 4, 0x08: 2, 0x10: 1, 0x18: 8}
WIDTH_SUFFIX: dict[int, str] = {1: "b", 2: "h", 4: "w", 8: "dw"}
SUFFIX_SIZE: dict[str, int] = {"b": 0x10, "h": 0x08, "w": 0x00, "dw": 0x18}

MEM_MODE = 0x60


def ldx_opcode(width: int) -> int:
    return MEM_MODE | SUFFIX_SIZE[WIDTH_SUFFIX[width]] | CLS_LDX


def st_opcode(width: int) -> int:
    return MEM_MODE | SUFFIX_SIZE[WIDTH_SUFFIX[width]] | CLS_ST


def stx_opcode(width: int) -> int:
    return MEM_MODE | SUFFIX_SIZE[WIDTH_SUFFIX[width]] | CLS_STX


ALU_OPCODES = frozenset(
    [0x07 | op for op in ALU_OPS.values() if op != 0x80]
    + [0x0F | op for op in ALU_OPS.values() if op != 0x80]
    + [0x87]
)
COND_JUMP_OPCODES = frozenset([0x05 | op for op in JMP_OPS.values()] + [0x0D | op for op in JMP_OPS.values()])
MEM_OPCODES = frozenset(
    [ldx_opcode(w) for w in (1, 2, 4, 8)]
    + [st_opcode(w) for w in (1, 2, 4, 8)]
    + [stx_opcode(w) for w in (1, 2, 4, 8)]
)
VALID_OPCODES = ALU_OPCODES | COND_JUMP_OPCODES | MEM_OPCODES | {LDDW, JA, CALL, EXIT}


def mem_width(opcode: int) -> int:
    return SIZE_BITS[opcode & 0x18]


def is_conditional_jump(opcode: int) -> bool:
    return opcode in COND_JUMP_OPCODES


def is_control_flow(opcode: int) -> bool:
    return opcode in COND_JUMP_OPCODES or opcode in (JA, CALL, EXIT)


class Insn(NamedTuple):
    """One decoded slot. For LDDW the first slot's ``imm`` holds the full 64-bit value."""

    opcode: int
    dst: int
    src: int
    off: int
    imm: int


def encode(opcode: int, dst: int = 0, src: int = 0, off: int = 0, imm: int = 0) -> bytes:
    return INSN_STRUCT.pack(opcode, (src << 4) | dst, off, imm)


def encode_lddw(dst: int, value: int) -> bytes:
    value &= MASK64
    lo = value & 0xFFFFFFFF
    hi = value >> 32
    return struct.pack("<BBhI", LDDW, dst, 0, lo) + struct.pack("<BBhI", 0, 0, 0, hi)


def decode_slot(text: bytes, index: int) -> Insn:
    opcode, regs, off, imm = INSN_STRUCT.unpack_from(text, index * INSN_SIZE)
    return Insn(opcode, regs & 0x0F, regs >> 4, off, imm)


def to_signed(value: int) -> int:
    return value - (1 << 64) if value & SIGN64 else value


def syscall_id(name: str) -> int:
    """Call immediate for a named syscall."""
    return zlib.crc32(name.encode())


SYSCALL_NAMES = (
    "abort",
    "sol_panic_",
    "sol_log_",
    "sol_log_64_",
    "sol_log_pubkey",
    "sol_invoke_signed_c",
    "sol_invoke_signed_rust",
    "sol_create_program_address",
    "sol_try_find_program_address",
    "sol_get_clock_sysvar",
    "sol_get_rent_sysvar",
    "sol_load_instruction_at",
)

# assembler-friendly aliases
SYSCALL_ALIASES = {"sol_log": "sol_log_", "sol_log_64": "sol_log_64_", "sol_panic": "sol_panic_"}

DEFAULT_SYSCALLS: dict[int, str] = {syscall_id(n): n for n in SYSCALL_NAMES}


def parse_syscall_table(text: str) -> dict[int, str]:
    """Parse ``<u32 immediate> <name>`` lines; blank lines and ``#`` comments are skipped."""
    table: dict[int, str] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 2:
            raise ValueError(f"syscall table line {lineno}: expected '<imm> <name>'")
        table[int(parts[0], 0) & 0xFFFFFFFF] = parts[1]
    return table


def format_syscall_table(table: dict[int, str]) -> str:
    return "".join(f"{imm} {name}\n" for imm, name in sorted(table.items()))
