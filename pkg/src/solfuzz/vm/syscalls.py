"""Syscall handlers. Each takes (vm, pc, r1..r5) and returns r0."""

from __future__ import annotations

import struct
from collections.abc import Callable

import base58

from ..pda import MAX_SEED_LEN, MAX_SEEDS, PdaError, create_program_address, find_program_address
from .events import CpiInstruction, CpiMeta, PdaEvent, PdaSeed
from .interpreter import MAX_CPI_DEPTH, Vm, abort, program_error

_SLICE = struct.Struct("<QQ")
_SOL_INSTRUCTION = struct.Struct("<QQQQQ")
_SOL_META = struct.Struct("<QBB6x")

MAX_CPI_ACCOUNTS = 16
MAX_CPI_DATA = 1024


def _on_curve(vm: Vm):
    return vm.context.on_curve if vm.context is not None else None


def _clobber(vm: Vm, addr: int, length: int) -> None:
    if vm.observer is not None:
        vm.observer.on_mem_clobber(addr, length)


def sol_log(vm: Vm, pc: int, addr: int, length: int, *_: int) -> int:
    text = vm.read_bytes(addr, length).decode("utf-8", "replace")
    vm.log(f"Program log: {text}")
    return 0


def sol_log_64(vm: Vm, pc: int, a: int, b: int, c: int, d: int, e: int) -> int:
    vm.log("Program log: " + ", ".join(f"{x:#x}" for x in (a, b, c, d, e)))
    return 0


def sol_log_pubkey(vm: Vm, pc: int, addr: int, *_: int) -> int:
    vm.log("Program log: " + base58.b58encode(vm.read_bytes(addr, 32)).decode())
    return 0


def sol_panic(vm: Vm, pc: int, *_: int) -> int:
    raise abort("Panic")


def sol_abort(vm: Vm, pc: int, *_: int) -> int:
    raise abort("Abort")


def read_seed_slices(vm: Vm, addr: int, count: int) -> tuple[PdaSeed, ...]:
    if count > MAX_SEEDS:
        raise program_error("MaxSeedLengthExceeded")
    seeds = []
    for i in range(count):
        ptr, length = _SLICE.unpack(vm.read_bytes(addr + 16 * i, 16))
        if length > MAX_SEED_LEN:
            raise program_error("MaxSeedLengthExceeded")
        seeds.append(PdaSeed(ptr, vm.read_bytes(ptr, length)))
    return tuple(seeds)


def sol_create_program_address(vm: Vm, pc: int, seeds_addr: int, n: int, pid_addr: int, out: int, _: int) -> int:
    seeds = read_seed_slices(vm, seeds_addr, n)
    program_id = vm.read_bytes(pid_addr, 32)
    kwargs = {"on_curve": _on_curve(vm)} if _on_curve(vm) else {}
    try:
        key = create_program_address([s.data for s in seeds], program_id, **kwargs)
    except PdaError:
        raise program_error("MaxSeedLengthExceeded") from None
    if key is None:
        return 1
    vm.write_bytes(out, key)
    _clobber(vm, out, 32)
    if vm.observer is not None:
        vm.observer.on_pda(pc, PdaEvent(seeds, program_id, out, key, None, searched=False))
    return 0


def sol_try_find_program_address(
    vm: Vm, pc: int, seeds_addr: int, n: int, pid_addr: int, out: int, bump_addr: int
) -> int:
    seeds = read_seed_slices(vm, seeds_addr, n)
    program_id = vm.read_bytes(pid_addr, 32)
    kwargs = {"on_curve": _on_curve(vm)} if _on_curve(vm) else {}
    try:
        found = find_program_address([s.data for s in seeds], program_id, **kwargs)
    except PdaError:
        raise program_error("MaxSeedLengthExceeded") from None
    if found is None:
        return 1
    key, bump = found
    # validate both destinations before writing either
    vm.read_bytes(out, 32)
    vm.read_bytes(bump_addr, 1)
    vm.write_bytes(out, key)
    vm.write_bytes(bump_addr, bytes([bump]))
    _clobber(vm, out, 32)
    _clobber(vm, bump_addr, 1)
    if vm.observer is not None:
        vm.observer.on_pda(pc, PdaEvent(seeds, program_id, out, key, bump, searched=True))
    return 0


def sol_get_clock_sysvar(vm: Vm, pc: int, addr: int, *_: int) -> int:
    from ..ledger import ClockValues

    data = vm.context.clock.pack() if vm.context is not None else ClockValues().pack()
    vm.write_bytes(addr, data)
    _clobber(vm, addr, len(data))
    return 0


def sol_get_rent_sysvar(vm: Vm, pc: int, addr: int, *_: int) -> int:
    from ..ledger import RENT_DATA

    vm.write_bytes(addr, RENT_DATA)
    _clobber(vm, addr, len(RENT_DATA))
    return 0


def encode_instruction_record(program_id: bytes, metas: list[tuple[bytes, bool, bool]], data: bytes) -> bytes:
    out = bytearray(program_id)
    out += struct.pack("<H", len(metas))
    for key, signer, writable in metas:
        out += key + bytes([int(signer) | (int(writable) << 1)])
    out += struct.pack("<H", len(data)) + data
    return bytes(out)


def sol_load_instruction_at(vm: Vm, pc: int, index: int, dst: int, dst_len: int, *_: int) -> int:
    """Copies a transaction instruction record; r0 is the full record length, or u64::MAX if absent."""
    ctx = vm.context
    if ctx is None or index >= len(ctx.transaction_instructions):
        return (1 << 64) - 1
    ix = ctx.transaction_instructions[index]
    record = encode_instruction_record(
        ix.program_id, [(m.pubkey, m.is_signer, m.is_writable) for m in ix.account_metas], ix.data
    )
    chunk = record[: min(dst_len, len(record))]
    vm.write_bytes(dst, chunk)
    _clobber(vm, dst, len(chunk))
    return len(record)


def parse_cpi(vm: Vm, ix_addr: int, seeds_addr: int, seeds_len: int) -> tuple[CpiInstruction, tuple[bytes, ...]]:
    pid_addr, metas_addr, metas_len, data_addr, data_len = _SOL_INSTRUCTION.unpack(vm.read_bytes(ix_addr, 40))
    if metas_len > MAX_CPI_ACCOUNTS or data_len > MAX_CPI_DATA:
        raise program_error("InvalidCpiInstruction")
    program_id = vm.read_bytes(pid_addr, 32)
    metas = []
    for i in range(metas_len):
        key_addr, writable, signer = _SOL_META.unpack(vm.read_bytes(metas_addr + 16 * i, 16))
        metas.append(CpiMeta(vm.read_bytes(key_addr, 32), bool(signer), bool(writable)))
    data = vm.read_bytes(data_addr, data_len)
    if seeds_len > MAX_SEEDS:
        raise program_error("InvalidCpiInstruction")
    pdas = []
    for i in range(seeds_len):
        arr, n = _SLICE.unpack(vm.read_bytes(seeds_addr + 16 * i, 16))
        seeds = read_seed_slices(vm, arr, n)
        kwargs = {"on_curve": _on_curve(vm)} if _on_curve(vm) else {}
        try:
            key = create_program_address([s.data for s in seeds], vm.program_id, **kwargs)
        except PdaError:
            key = None
        if key is None:
            raise program_error("InvalidSeeds")
        pdas.append(key)
    return CpiInstruction(program_id, tuple(metas), data), tuple(pdas)


def sol_invoke_signed(vm: Vm, pc: int, ix_addr: int, infos: int, infos_len: int, seeds: int, seeds_len: int) -> int:
    from ..model import AccountMeta, Instruction

    ctx = vm.context
    if ctx is None or vm.layout is None:
        raise program_error("CpiUnavailable")
    cpi, signer_pdas = parse_cpi(vm, ix_addr, seeds, seeds_len)
    if vm.observer is not None:
        vm.observer.on_cpi(pc, cpi.program_id, cpi, signer_pdas)
        if vm.signals:
            return 0
    if vm.depth >= MAX_CPI_DEPTH:
        raise abort("CpiDepthExceeded")
    if cpi.program_id in ctx.call_chain:
        raise abort("Reentrancy")
    layout = vm.layout
    for meta in cpi.metas:
        idx = layout.index_of(meta.pubkey)
        if idx is None:
            raise program_error("MissingAccount")
        slot = layout.accounts[idx]
        if meta.is_writable and not slot.is_writable:
            raise program_error("PrivilegeEscalation")
        if meta.is_signer and not (slot.is_signer or meta.pubkey in signer_pdas):
            raise program_error("PrivilegeEscalation")
    ctx.sync_caller(vm)
    callee = Instruction(
        cpi.program_id, tuple(AccountMeta(m.pubkey, m.is_signer, m.is_writable) for m in cpi.metas), cpi.data
    )
    outcome = ctx.invoke(callee, vm.depth + 1)
    if outcome.signals:
        vm.signals.extend(outcome.signals)
        return 0
    if outcome.reason is not None:
        raise abort(outcome.reason)
    if not outcome.ok:
        raise program_error(outcome.code if outcome.code is not None else "CpiFailed")
    ctx.refresh_caller(vm)
    return 0


Handler = Callable[..., int]

SYSCALL_HANDLERS: dict[str, Handler] = {
    "abort": sol_abort,
    "sol_panic_": sol_panic,
    "sol_log_": sol_log,
    "sol_log_64_": sol_log_64,
    "sol_log_pubkey": sol_log_pubkey,
    "sol_invoke_signed_c": sol_invoke_signed,
    "sol_invoke_signed_rust": sol_invoke_signed,
    "sol_create_program_address": sol_create_program_address,
    "sol_try_find_program_address": sol_try_find_program_address,
    "sol_get_clock_sysvar": sol_get_clock_sysvar,
    "sol_get_rent_sysvar": sol_get_rent_sysvar,
    "sol_load_instruction_at": sol_load_instruction_at,
}

for _alias, _name in (("sol_log", "sol_log_"), ("sol_log_64", "sol_log_64_"), ("sol_panic", "sol_panic_")):
    SYSCALL_HANDLERS[_alias] = SYSCALL_HANDLERS[_name]
