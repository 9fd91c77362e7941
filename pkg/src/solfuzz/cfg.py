"""Static control-flow edge estimate."""

from __future__ import annotations

from .vm.isa import CALL, EXIT, JA, is_conditional_jump
from .vm.loader import EbpfProgram


def cfg_complexity(program: EbpfProgram) -> int:
    """Conditional jumps count 2 (taken, fall-through); ja, call and exit count 1."""
    total = 0
    for insn in program.insns:
        op = insn.opcode
        if is_conditional_jump(op):
            total += 2
        elif op in (JA, CALL, EXIT):
            total += 1
    return total
