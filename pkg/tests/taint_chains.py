"""Random MOV/load/store chains with a byte-level reference model of label flow.

The model is written from the propagation rules alone (copy on mov and load,
per-byte labels on store, clean stores erase) and never consults the engine.
"""

from __future__ import annotations

import random
from dataclasses import dataclass

from solfuzz.abi import serialize
from solfuzz.model import Account, AccountMeta, Instruction, named_key
from solfuzz.taint import AccountData, AccountPubkey, TaintEngine
from solfuzz.vm import execute, load_program
from solfuzz.vm.events import VmObserver
from solfuzz.vm.interpreter import STACK_START
from solfuzz.vm.isa import EXIT, encode

WIDTHS = {1: 0x10, 2: 0x08, 4: 0x00, 8: 0x18}
LDX, STX, ST = 0x61, 0x63, 0x62
MOV_IMM, MOV_REG = 0xB7, 0xBF
BASE = 9  # holds the input pointer throughout
CARRIERS = tuple(r for r in range(10) if r != BASE)
SLOTS = 8
FRAME_TOP = STACK_START + 4096

PROGRAM_ID = named_key("taint-chain-program")
ACCOUNTS = [Account(named_key(f"taint-chain-{i}"), PROGRAM_ID, 1000 + i, bytes(range(i, i + 48))) for i in range(3)]
INSTRUCTION = Instruction(PROGRAM_ID, tuple(AccountMeta(a.pubkey, False, True) for a in ACCOUNTS), b"")
BLOB, LAYOUT = serialize(INSTRUCTION, {a.pubkey: a for a in ACCOUNTS})


class _TaintOnly(VmObserver):
    def __init__(self) -> None:
        self.engine = TaintEngine(LAYOUT)

    def on_alu(self, pc, opcode, dst, src, wrapped):
        self.engine.on_alu(pc, opcode, dst, src, wrapped)

    def on_load(self, pc, dst, addr, width):
        self.engine.on_mem_read(pc, dst, addr, width)

    def on_store(self, pc, addr, width, src, old):
        self.engine.on_mem_write(pc, addr, width, src)


@dataclass
class Chain:
    code: bytes
    regs: list[frozenset]
    stack: dict[int, frozenset]
    source: object
    final_reg: int


def _source(rng: random.Random) -> tuple[object, int]:
    k = rng.randrange(len(ACCOUNTS))
    slot = LAYOUT.accounts[k]
    if rng.random() < 0.5:
        c = rng.randrange(4)
        return AccountPubkey(k, c), slot.pubkey_at + 8 * c
    off = rng.randrange(0, 40, 8)
    return AccountData(k, off), slot.data_at + off


def random_chain(rng: random.Random, length: int = 12) -> Chain:
    regs = [frozenset()] * 11
    stack: dict[int, frozenset] = {}  # byte address -> labels
    code = bytearray(encode(MOV_REG, dst=BASE, src=1))

    def slot_addr(j: int, width: int) -> tuple[int, int]:
        off = -8 * (j + 1) + rng.randrange(0, 8, width)
        return off, FRAME_TOP + off

    def load_stack(dst: int, j: int, width: int) -> None:
        off, addr = slot_addr(j, width)
        code.extend(encode(LDX | WIDTHS[width], dst=dst, src=10, off=off))
        out = frozenset()
        for b in range(addr, addr + width):
            out |= stack.get(b, frozenset())
        regs[dst] = out

    def store_stack(j: int, width: int, src: int | None) -> None:
        off, addr = slot_addr(j, width)
        if src is None:
            code.extend(encode(ST | WIDTHS[width], dst=10, off=off, imm=rng.randrange(-100, 100)))
            labels = frozenset()
        else:
            code.extend(encode(STX | WIDTHS[width], dst=10, src=src, off=off))
            labels = regs[src]
        for b in range(addr, addr + width):
            if labels:
                stack[b] = labels
            else:
                stack.pop(b, None)

    label, input_off = _source(rng)
    cur = rng.choice(CARRIERS)
    code.extend(encode(LDX | WIDTHS[8], dst=cur, src=BASE, off=input_off))
    regs[cur] = frozenset([label])

    for _ in range(length):
        r = rng.random()
        if r < 0.35:  # move the carried value along the chain
            if rng.random() < 0.5:
                nxt = rng.choice(CARRIERS)
                code.extend(encode(MOV_REG, dst=nxt, src=cur))
                regs[nxt] = regs[cur]
                cur = nxt
            else:
                j = rng.randrange(SLOTS)
                # full-width round trip through the stack
                off = -8 * (j + 1)
                code.extend(encode(STX | WIDTHS[8], dst=10, src=cur, off=off))
                for b in range(FRAME_TOP + off, FRAME_TOP + off + 8):
                    stack[b] = regs[cur]
                nxt = rng.choice(CARRIERS)
                code.extend(encode(LDX | WIDTHS[8], dst=nxt, src=10, off=off))
                regs[nxt] = regs[cur]
                cur = nxt
        elif r < 0.55:  # clean overwrite of some other register
            dst = rng.choice([c for c in CARRIERS if c != cur])
            code.extend(encode(MOV_IMM, dst=dst, imm=rng.randrange(1 << 16)))
            regs[dst] = frozenset()
        elif r < 0.75:  # stores of arbitrary width and taint
            width = rng.choice(list(WIDTHS))
            src = None if rng.random() < 0.5 else rng.choice(CARRIERS)
            store_stack(rng.randrange(SLOTS), width, src)
        elif r < 0.9:
            dst = rng.choice([c for c in CARRIERS if c != cur])
            load_stack(dst, rng.randrange(SLOTS), rng.choice(list(WIDTHS)))
        else:  # fresh source into a spare register
            dst = rng.choice([c for c in CARRIERS if c != cur])
            lab, off = _source(rng)
            code.extend(encode(LDX | WIDTHS[8], dst=dst, src=BASE, off=off))
            regs[dst] = frozenset([lab])
    code.extend(encode(EXIT))
    return Chain(bytes(code), regs, stack, label, cur)


def run_chain(chain: Chain) -> tuple[list[frozenset], dict[int, frozenset]]:
    obs = _TaintOnly()
    program = load_program(chain.code)
    out = execute(program, BLOB, hooks=obs)
    # a nonzero r0 at exit is a program error, which is still a clean exit
    assert out.status.name in ("SUCCESS", "PROGRAM_ERROR"), out
    return list(obs.engine.state.regs), dict(obs.engine.state.mem)


def check_chain(chain: Chain) -> None:
    regs, mem = run_chain(chain)
    assert regs[chain.final_reg] == frozenset([chain.source])
    for r in CARRIERS:
        assert regs[r] == chain.regs[r], f"r{r}"
    assert {a: lab for a, lab in mem.items() if lab} == chain.stack
