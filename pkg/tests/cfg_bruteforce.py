"""Static successor enumeration straight from raw instruction bytes.

Deliberately shares no code with the loader or the estimator.
"""

from __future__ import annotations

import struct

_SLOT = struct.Struct("<BBhi")


def static_edges(text: bytes) -> set[tuple[int, object]]:
    slots = [_SLOT.unpack_from(text, i) for i in range(0, len(text), 8)]
    edges: set[tuple[int, object]] = set()
    pc = 0
    while pc < len(slots):
        op, regs, off, imm = slots[pc]
        width = 2 if op == 0x18 else 1
        cls = op & 0x07
        if cls == 0x05:
            code = op & 0xF0
            if op == 0x95:
                edges.add((pc, "return"))
            elif op == 0x85:
                local = (regs >> 4) == 1
                edges.add((pc, pc + 1 + imm if local else ("syscall", imm & 0xFFFFFFFF)))
            elif op == 0x05:
                edges.add((pc, pc + 1 + off))
            elif code in (0x10, 0x20, 0x30, 0x40, 0x50, 0x60, 0x70, 0xA0, 0xB0, 0xC0, 0xD0):
                edges.add((pc, pc + 1 + off))
                edges.add((pc, ("fall", pc + 1)))
        pc += width
    return edges
