"""Mini assembler and disassembler for the supported eBPF subset.

Syntax, one statement per line::

    label:                      ; comments start with ';' or '//'
        mov64 r0, 0
        ldxdw r1, [r2+8]
        stb [r10-1], 0x41
        jne r1, r2, label
        call sol_log            ; syscall by name, or a local label
        lddw r3, 0x300000000

Directives: ``.equ NAME, expr``; ``.pubkey NAME, <base58>`` (defines
NAME_0..NAME_3, the little-endian u64 chunks); ``.include "file"``;
``.syscall name``; ``.macro NAME a, b`` ... ``.endm`` with ``\\a`` argument
references, ``\\@`` as a per-expansion unique suffix and ``\\()`` as a
token separator; ``.if expr`` / ``.else`` / ``.endif``.
"""

from __future__ import annotations

import ast
import operator
import re
from dataclasses import dataclass, field
from pathlib import Path

import base58

from .vm import isa
from .vm.isa import (
    ALU_OPS,
    CALL,
    EXIT,
    JA,
    JMP_OPS,
    LDDW,
    SYSCALL_ALIASES,
    SYSCALL_NAMES,
    encode,
    encode_lddw,
    syscall_id,
)
from .vm.loader import decode_text


class AsmError(Exception):
    def __init__(self, message: str, where: str | None = None) -> None:
        super().__init__(f"{where}: {message}" if where else message)
        self.where = where


@dataclass(frozen=True)
class SourceLine:
    where: str
    text: str


@dataclass
class Assembled:
    text: bytes
    symbols: dict[str, int]
    syscall_table: dict[int, str]
    constants: dict[str, int] = field(default_factory=dict)


_BINOPS = {
    ast.Add: operator.add,
    ast.Sub: operator.sub,
    ast.Mult: operator.mul,
    ast.FloorDiv: operator.floordiv,
    ast.Mod: operator.mod,
    ast.LShift: operator.lshift,
    ast.RShift: operator.rshift,
    ast.BitAnd: operator.and_,
    ast.BitOr: operator.or_,
    ast.BitXor: operator.xor,
}
_UNOPS = {ast.USub: operator.neg, ast.UAdd: operator.pos, ast.Invert: operator.invert}


def evaluate(expr: str, symbols: dict[str, int]) -> int:
    try:
        tree = ast.parse(expr.strip(), mode="eval")
    except SyntaxError:
        raise ValueError(f"bad expression {expr!r}") from None

    def ev(node: ast.AST) -> int:
        if isinstance(node, ast.Expression):
            return ev(node.body)
        if isinstance(node, ast.Constant) and isinstance(node.value, int) and not isinstance(node.value, bool):
            return node.value
        if isinstance(node, ast.Name):
            if node.id not in symbols:
                raise ValueError(f"undefined symbol {node.id!r}")
            return symbols[node.id]
        if isinstance(node, ast.BinOp) and type(node.op) in _BINOPS:
            return _BINOPS[type(node.op)](ev(node.left), ev(node.right))
        if isinstance(node, ast.UnaryOp) and type(node.op) in _UNOPS:
            return _UNOPS[type(node.op)](ev(node.operand))
        raise ValueError(f"unsupported expression {expr!r}")

    return ev(tree)


def _strip_comment(line: str) -> str:
    for marker in (";", "//"):
        i = line.find(marker)
        if i >= 0:
            line = line[:i]
    return line.strip()


def _split_args(text: str) -> list[str]:
    out, depth, cur = [], 0, []
    for ch in text:
        if ch in "[(":
            depth += 1
        elif ch in "])":
            depth -= 1
        if ch == "," and depth == 0:
            out.append("".join(cur).strip())
            cur = []
        else:
            cur.append(ch)
    if "".join(cur).strip():
        out.append("".join(cur).strip())
    return out


@dataclass
class _Macro:
    params: list[str]
    body: list[SourceLine]


class _Preprocessor:
    def __init__(self, search: list[Path]) -> None:
        self.search = search
        self.constants: dict[str, int] = {}
        self.macros: dict[str, _Macro] = {}
        self.syscalls: dict[int, str] = dict(isa.DEFAULT_SYSCALLS)
        self.out: list[SourceLine] = []
        self.counter = 0
        self.depth = 0

    def run(self, lines: list[SourceLine]) -> None:
        self.depth += 1
        if self.depth > 64:
            raise AsmError("include or macro nesting too deep", lines[0].where if lines else None)
        cond: list[tuple[bool, bool]] = []  # (active, seen_else)
        i = 0
        while i < len(lines):
            src = lines[i]
            i += 1
            text = _strip_comment(src.text)
            if not text:
                continue
            word = text.split(None, 1)[0].lower()
            rest = text[len(word) :].strip()
            active = all(c[0] for c in cond)
            if word == ".if":
                val = self._eval(rest, src) if active else 0
                cond.append((bool(val), False))
                continue
            if word == ".else":
                if not cond or cond[-1][1]:
                    raise AsmError(".else without .if", src.where)
                cond[-1] = (not cond[-1][0], True)
                continue
            if word == ".endif":
                if not cond:
                    raise AsmError(".endif without .if", src.where)
                cond.pop()
                continue
            if not active:
                continue
            if word == ".macro":
                parts = rest.replace(",", " ").split()
                if not parts:
                    raise AsmError(".macro needs a name", src.where)
                body: list[SourceLine] = []
                while True:
                    if i >= len(lines):
                        raise AsmError("unterminated .macro", src.where)
                    nxt = lines[i]
                    i += 1
                    if _strip_comment(nxt.text).lower().startswith(".endm"):
                        break
                    body.append(nxt)
                self.macros[parts[0]] = _Macro(parts[1:], body)
                continue
            if word == ".endm":
                raise AsmError(".endm without .macro", src.where)
            if word == ".equ":
                args = _split_args(rest)
                if len(args) != 2:
                    raise AsmError(".equ expects NAME, value", src.where)
                self.constants[args[0]] = self._eval(args[1], src)
                continue
            if word == ".pubkey":
                args = _split_args(rest)
                if len(args) != 2:
                    raise AsmError(".pubkey expects NAME, base58", src.where)
                try:
                    key = base58.b58decode(args[1])
                except ValueError:
                    key = b""
                if len(key) != 32:
                    raise AsmError(f"invalid pubkey {args[1]!r}", src.where)
                for c in range(4):
                    self.constants[f"{args[0]}_{c}"] = int.from_bytes(key[8 * c : 8 * c + 8], "little")
                continue
            if word == ".syscall":
                name = rest.strip()
                if not name:
                    raise AsmError(".syscall expects a name", src.where)
                self.syscalls[syscall_id(name)] = name
                continue
            if word == ".include":
                self._include(rest, src)
                continue
            head = text.split(None, 1)[0]
            if head in self.macros:
                self._expand(head, text[len(head) :].strip(), src)
                continue
            if word.startswith("."):
                raise AsmError(f"unknown directive {word}", src.where)
            self.out.append(SourceLine(src.where, text))
        if cond:
            raise AsmError("unterminated .if", lines[-1].where if lines else None)
        self.depth -= 1

    def _eval(self, expr: str, src: SourceLine) -> int:
        try:
            return evaluate(expr, self.constants)
        except ValueError as exc:
            raise AsmError(str(exc), src.where) from None

    def _include(self, rest: str, src: SourceLine) -> None:
        name = rest.strip().strip('"')
        for base in self.search:
            path = base / name
            if path.is_file():
                text = path.read_text()
                lines = [SourceLine(f"{path.name}:{n}", t) for n, t in enumerate(text.splitlines(), 1)]
                self.run(lines)
                return
        raise AsmError(f"include file {name!r} not found", src.where)

    def _expand(self, name: str, argtext: str, src: SourceLine) -> None:
        macro = self.macros[name]
        args = _split_args(argtext)
        if len(args) != len(macro.params):
            raise AsmError(f"macro {name} expects {len(macro.params)} arguments, got {len(args)}", src.where)
        self.counter += 1
        subst = dict(zip(macro.params, args))
        uid = str(self.counter)

        def repl(m: re.Match[str]) -> str:
            key = m.group(1)
            if key == "@":
                return uid
            if key in subst:
                return subst[key]
            raise AsmError(f"unknown macro parameter \\{key}", src.where)

        body = []
        for line in macro.body:
            text = re.sub(r"\\(@|[A-Za-z_]\w*)", repl, line.text).replace("\\()", "")
            body.append(SourceLine(f"{src.where} ({name} {line.where})", text))
        self.run(body)


_REG = re.compile(r"^r(10|[0-9])$")
_MEM = re.compile(r"^\[\s*(r10|r[0-9])\s*(?:([+-])\s*(.+))?\]$")
_LABEL = re.compile(r"^([A-Za-z_.$][\w.$]*)\s*:(.*)$")


def _mnemonic_table() -> dict[str, tuple[str, int]]:
    table: dict[str, tuple[str, int]] = {}
    for name, code in ALU_OPS.items():
        kind = "neg" if name == "neg64" else "alu"
        table[name] = (kind, code)
        table[name[:-2]] = (kind, code)
    for name, code in JMP_OPS.items():
        table[name] = ("jcc", code)
    for suffix, width in (("b", 1), ("h", 2), ("w", 4), ("dw", 8)):
        table["ldx" + suffix] = ("ldx", width)
        table["st" + suffix] = ("st", width)
        table["stx" + suffix] = ("stx", width)
    table.update({"lddw": ("lddw", 0), "ja": ("ja", 0), "call": ("call", 0), "exit": ("exit", 0)})
    return table


MNEMONICS = _mnemonic_table()


def _statement_size(mnemonic: str) -> int:
    return 2 if mnemonic == "lddw" else 1


class _Encoder:
    def __init__(self, constants: dict[str, int], labels: dict[str, int], syscalls: dict[int, str]) -> None:
        self.constants = constants
        self.labels = labels
        self.syscall_by_name = {name: imm for imm, name in syscalls.items()}
        for alias, real in SYSCALL_ALIASES.items():
            if real in self.syscall_by_name:
                self.syscall_by_name.setdefault(alias, self.syscall_by_name[real])

    def reg(self, tok: str, where: str) -> int:
        m = _REG.match(tok.strip())
        if not m:
            raise AsmError(f"expected register, got {tok!r}", where)
        return int(m.group(1))

    def imm(self, tok: str, where: str, bits: int = 32) -> int:
        try:
            value = evaluate(tok, self.constants)
        except ValueError as exc:
            raise AsmError(str(exc), where) from None
        if bits == 32 and not -(1 << 31) <= value < (1 << 31):
            raise AsmError(f"immediate {value} does not fit in 32 bits", where)
        if bits == 64 and not -(1 << 63) <= value < (1 << 64):
            raise AsmError(f"immediate {value} does not fit in 64 bits", where)
        return value

    def mem(self, tok: str, where: str) -> tuple[int, int]:
        m = _MEM.match(tok.strip())
        if not m:
            raise AsmError(f"expected memory operand [rN+off], got {tok!r}", where)
        reg = int(m.group(1)[1:])
        off = 0
        if m.group(2):
            off = self.imm(m.group(2) + "(" + m.group(3) + ")", where)
        if not -(1 << 15) <= off < (1 << 15):
            raise AsmError(f"offset {off} does not fit in 16 bits", where)
        return reg, off

    def target(self, tok: str, pc: int, where: str) -> int:
        tok = tok.strip()
        if tok in self.labels:
            rel = self.labels[tok] - pc - 1
        elif tok[:1] in "+-" and tok[1:].strip().isdigit():
            rel = int(tok.replace(" ", ""))
        else:
            raise AsmError(f"unknown label {tok!r}", where)
        return rel

    def is_reg(self, tok: str) -> bool:
        return bool(_REG.match(tok.strip()))

    def encode(self, mnemonic: str, ops: list[str], pc: int, where: str) -> bytes:
        if mnemonic not in MNEMONICS:
            raise AsmError(f"unknown mnemonic {mnemonic!r}", where)
        kind, code = MNEMONICS[mnemonic]
        expect = {"alu": 2, "neg": 1, "jcc": 3, "ldx": 2, "st": 2, "stx": 2, "lddw": 2, "ja": 1, "call": 1, "exit": 0}
        if len(ops) != expect[kind]:
            raise AsmError(f"{mnemonic} expects {expect[kind]} operands, got {len(ops)}", where)
        if kind == "alu":
            dst = self.reg(ops[0], where)
            if self.is_reg(ops[1]):
                return encode(0x0F | code, dst, self.reg(ops[1], where))
            return encode(0x07 | code, dst, imm=self.imm(ops[1], where))
        if kind == "neg":
            return encode(0x87, self.reg(ops[0], where))
        if kind == "jcc":
            dst = self.reg(ops[0], where)
            off = self.target(ops[2], pc, where)
            if self.is_reg(ops[1]):
                return encode(0x0D | code, dst, self.reg(ops[1], where), off)
            return encode(0x05 | code, dst, 0, off, self.imm(ops[1], where))
        if kind == "ldx":
            dst = self.reg(ops[0], where)
            src, off = self.mem(ops[1], where)
            return encode(isa.ldx_opcode(code), dst, src, off)
        if kind == "st":
            dst, off = self.mem(ops[0], where)
            return encode(isa.st_opcode(code), dst, 0, off, self.imm(ops[1], where))
        if kind == "stx":
            dst, off = self.mem(ops[0], where)
            return encode(isa.stx_opcode(code), dst, self.reg(ops[1], where), off)
        if kind == "lddw":
            return encode_lddw(self.reg(ops[0], where), self.imm(ops[1], where, 64))
        if kind == "ja":
            return encode(JA, off=self.target(ops[0], pc, where))
        if kind == "call":
            name = ops[0].strip()
            if name in self.labels:
                return encode(CALL, src=1, imm=self.labels[name] - pc - 1)
            if name in self.syscall_by_name:
                imm = self.syscall_by_name[name]
                return encode(CALL, imm=imm - (1 << 32) if imm >= 1 << 31 else imm)
            if re.fullmatch(r"0x[0-9a-fA-F]{1,8}", name):
                imm = int(name, 16)
                return encode(CALL, imm=imm - (1 << 32) if imm >= 1 << 31 else imm)
            raise AsmError(f"unknown label or syscall {name!r}", where)
        return encode(EXIT)


def assemble_lines(lines: list[SourceLine], search: list[Path] | None = None) -> Assembled:
    pre = _Preprocessor(search or [])
    pre.run(lines)
    labels: dict[str, int] = {}
    stmts: list[tuple[str, str, list[str], int]] = []
    pc = 0
    for src in pre.out:
        text = src.text
        while True:
            m = _LABEL.match(text)
            if not m:
                break
            name = m.group(1)
            if name in labels:
                raise AsmError(f"duplicate label {name!r}", src.where)
            labels[name] = pc
            text = m.group(2).strip()
        if not text:
            continue
        parts = text.split(None, 1)
        mnemonic = parts[0].lower()
        ops = _split_args(parts[1]) if len(parts) > 1 else []
        if mnemonic not in MNEMONICS:
            raise AsmError(f"unknown mnemonic {mnemonic!r}", src.where)
        stmts.append((src.where, mnemonic, ops, pc))
        pc += _statement_size(mnemonic)
    enc = _Encoder(pre.constants, labels, pre.syscalls)
    out = bytearray()
    for where, mnemonic, ops, spc in stmts:
        out += enc.encode(mnemonic, ops, spc, where)
    if not out:
        raise AsmError("no instructions")
    used = {n: i for i, n in pre.syscalls.items()}
    return Assembled(bytes(out), labels, {i: n for n, i in used.items()}, dict(pre.constants))


def assemble(source: str, *, name: str = "<source>", include_dirs: list[Path] | None = None) -> Assembled:
    lines = [SourceLine(f"{name}:{n}", t) for n, t in enumerate(source.splitlines(), 1)]
    return assemble_lines(lines, include_dirs)


def assemble_file(path: str | Path, include_dirs: list[Path] | None = None) -> Assembled:
    path = Path(path)
    return assemble(path.read_text(), name=path.name, include_dirs=[path.parent, *(include_dirs or [])])


def _fmt_off(off: int) -> str:
    return f"+{off}" if off >= 0 else f"-{-off}"


def disassemble(text: bytes, syscall_table: dict[int, str] | None = None) -> str:
    """Render ``text`` as assembly that reassembles to the same bytes."""
    table = isa.DEFAULT_SYSCALLS if syscall_table is None else syscall_table
    insns = decode_text(text)
    targets: set[int] = set()
    skip = {i + 1 for i, ins in enumerate(insns) if ins.opcode == LDDW}
    for pc, ins in enumerate(insns):
        if pc in skip:
            continue
        if ins.opcode == CALL and ins.src == 1:
            targets.add(pc + 1 + ins.imm)
        elif ins.opcode == JA or ins.opcode in isa.COND_JUMP_OPCODES:
            targets.add(pc + 1 + ins.off)
    names = {v: k for k, v in ALU_OPS.items()}
    jnames = {v: k for k, v in JMP_OPS.items()}
    lines: list[str] = []
    custom = sorted(n for n in table.values() if n not in SYSCALL_NAMES)
    lines += [f".syscall {n}" for n in custom]
    for pc, ins in enumerate(insns):
        if pc in skip:
            continue
        if pc in targets:
            lines.append(f"L{pc}:")
        op = ins.opcode
        cls = op & 7
        if op == LDDW:
            s = f"lddw r{ins.dst}, {ins.imm:#x}"
        elif op == EXIT:
            s = "exit"
        elif op == CALL:
            if ins.src == 1:
                s = f"call L{pc + 1 + ins.imm}"
            else:
                imm = ins.imm & 0xFFFFFFFF
                s = f"call {table[imm]}" if imm in table else f"call {imm:#x}"
        elif op == JA:
            s = f"ja L{pc + 1 + ins.off}"
        elif cls == isa.CLS_JMP:
            rhs = f"r{ins.src}" if op & 8 else str(ins.imm)
            s = f"{jnames[op & 0xF0]} r{ins.dst}, {rhs}, L{pc + 1 + ins.off}"
        elif cls == isa.CLS_ALU64:
            if op == 0x87:
                s = f"neg64 r{ins.dst}"
            else:
                rhs = f"r{ins.src}" if op & 8 else str(ins.imm)
                s = f"{names[op & 0xF0]} r{ins.dst}, {rhs}"
        else:
            suffix = isa.WIDTH_SUFFIX[isa.mem_width(op)]
            if cls == isa.CLS_LDX:
                s = f"ldx{suffix} r{ins.dst}, [r{ins.src}{_fmt_off(ins.off)}]"
            elif cls == isa.CLS_ST:
                s = f"st{suffix} [r{ins.dst}{_fmt_off(ins.off)}], {ins.imm}"
            else:
                s = f"stx{suffix} [r{ins.dst}{_fmt_off(ins.off)}], r{ins.src}"
        lines.append("    " + s)
    return "\n".join(lines) + "\n"
