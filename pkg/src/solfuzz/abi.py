"""Serialization of an instruction and its accounts into the VM input region."""

from __future__ import annotations

import bisect
import enum
import struct
from collections.abc import Mapping
from dataclasses import dataclass
from typing import NamedTuple

from .model import Account, AccountMeta, Instruction, Pubkey
from .vm.interpreter import INPUT_START

NON_DUP = 0xFF
_U64 = struct.Struct("<Q")
_HEADER = struct.Struct("<BBBB4x32s32sQQ")  # dup, signer, writable, executable, pad, key, owner, lamports, len

# offsets within an account record
META_OFF = 0
PUBKEY_OFF = 8
OWNER_OFF = 40
LAMPORTS_OFF = 72
DATA_LEN_OFF = 80
DATA_OFF = 88


class FieldKind(enum.Enum):
    ACCOUNT_COUNT = "AccountCount"
    DUP = "Dup"
    META = "Meta"
    PUBKEY = "Pubkey"
    OWNER = "Owner"
    LAMPORTS = "Lamports"
    DATA_LEN = "DataLen"
    DATA = "Data"
    PADDING = "Padding"
    RENT_EPOCH = "RentEpoch"
    INSTRUCTION_DATA_LEN = "InstructionDataLen"
    INSTRUCTION_DATA = "InstructionData"
    PROGRAM_ID = "ProgramId"


class FieldRef(NamedTuple):
    account: int | None
    kind: FieldKind
    offset: int


@dataclass(frozen=True, slots=True)
class AccountSlot:
    """Byte ranges (blob offsets) of one serialized account entry."""

    index: int
    pubkey: Pubkey
    dup_of: int | None
    start: int
    end: int
    data_len: int
    is_signer: bool
    is_writable: bool
    executable: bool

    @property
    def pubkey_at(self) -> int:
        return self.start + PUBKEY_OFF

    @property
    def owner_at(self) -> int:
        return self.start + OWNER_OFF

    @property
    def lamports_at(self) -> int:
        return self.start + LAMPORTS_OFF

    @property
    def data_at(self) -> int:
        return self.start + DATA_OFF

    @property
    def rent_epoch_at(self) -> int:
        return self.end - 8


@dataclass(frozen=True)
class InputLayout:
    accounts: tuple[AccountSlot, ...]
    instruction_data_at: int
    instruction_data_len: int
    program_id_at: int
    size: int
    base: int = INPUT_START

    def __post_init__(self) -> None:
        object.__setattr__(self, "_starts", [a.start for a in self.accounts])

    def primary(self, index: int) -> AccountSlot:
        """The first-occurrence slot that an entry aliases."""
        slot = self.accounts[index]
        return self.accounts[slot.dup_of] if slot.dup_of is not None else slot

    def index_of(self, key: Pubkey) -> int | None:
        for slot in self.accounts:
            if slot.dup_of is None and slot.pubkey == key:
                return slot.index
        return None

    def locate(self, addr: int) -> FieldRef | None:
        off = addr - self.base
        if off < 0 or off >= self.size:
            return None
        if off < 8:
            return FieldRef(None, FieldKind.ACCOUNT_COUNT, off)
        if off >= self.instruction_data_at - 8:
            if off < self.instruction_data_at:
                return FieldRef(None, FieldKind.INSTRUCTION_DATA_LEN, off - self.instruction_data_at + 8)
            if off < self.program_id_at:
                return FieldRef(None, FieldKind.INSTRUCTION_DATA, off - self.instruction_data_at)
            return FieldRef(None, FieldKind.PROGRAM_ID, off - self.program_id_at)
        i = bisect.bisect_right(self._starts, off) - 1  # type: ignore[attr-defined]
        slot = self.accounts[i]
        rel = off - slot.start
        if slot.dup_of is not None:
            return FieldRef(i, FieldKind.DUP, rel)
        if rel < PUBKEY_OFF:
            return FieldRef(i, FieldKind.META, rel)
        if rel < OWNER_OFF:
            return FieldRef(i, FieldKind.PUBKEY, rel - PUBKEY_OFF)
        if rel < LAMPORTS_OFF:
            return FieldRef(i, FieldKind.OWNER, rel - OWNER_OFF)
        if rel < DATA_LEN_OFF:
            return FieldRef(i, FieldKind.LAMPORTS, rel - LAMPORTS_OFF)
        if rel < DATA_OFF:
            return FieldRef(i, FieldKind.DATA_LEN, rel - DATA_LEN_OFF)
        if rel < DATA_OFF + slot.data_len:
            return FieldRef(i, FieldKind.DATA, rel - DATA_OFF)
        if off < slot.end - 8:
            return FieldRef(i, FieldKind.PADDING, rel - DATA_OFF - slot.data_len)
        return FieldRef(i, FieldKind.RENT_EPOCH, off - (slot.end - 8))


class WritebackError(Exception):
    def __init__(self, reason: str, pubkey: Pubkey | None = None) -> None:
        super().__init__(reason)
        self.reason = reason
        self.pubkey = pubkey


def _merged_flags(metas: tuple[AccountMeta, ...]) -> dict[Pubkey, tuple[bool, bool]]:
    flags: dict[Pubkey, tuple[bool, bool]] = {}
    for m in metas:
        s, w = flags.get(m.pubkey, (False, False))
        flags[m.pubkey] = (s or m.is_signer, w or m.is_writable)
    return flags


def serialize(instr: Instruction, accounts: Mapping[Pubkey, Account]) -> tuple[bytes, InputLayout]:
    flags = _merged_flags(instr.account_metas)
    out = bytearray(_U64.pack(len(instr.account_metas)))
    slots: list[AccountSlot] = []
    first: dict[Pubkey, int] = {}
    for i, meta in enumerate(instr.account_metas):
        start = len(out)
        if meta.pubkey in first:
            j = first[meta.pubkey]
            out += bytes([j]) + bytes(7)
            p = slots[j]
            slots.append(AccountSlot(i, meta.pubkey, j, start, len(out), 0, p.is_signer, p.is_writable, p.executable))
            continue
        first[meta.pubkey] = i
        acct = accounts[meta.pubkey]
        signer, writable = flags[meta.pubkey]
        data = acct.data
        out += _HEADER.pack(
            NON_DUP, signer, writable, acct.executable, acct.pubkey, acct.owner, acct.lamports, len(data)
        )
        out += data
        out += bytes(-len(data) % 8)
        out += _U64.pack(acct.rent_epoch)
        slots.append(AccountSlot(i, meta.pubkey, None, start, len(out), len(data), signer, writable, acct.executable))
    out += _U64.pack(len(instr.data))
    data_at = len(out)
    out += instr.data
    program_at = len(out)
    out += instr.program_id
    layout = InputLayout(tuple(slots), data_at, len(instr.data), program_at, len(out))
    return bytes(out), layout


@dataclass(frozen=True)
class DeserializedAccount:
    dup_of: int | None
    is_signer: bool
    is_writable: bool
    account: Account | None


def deserialize(blob: bytes) -> tuple[list[DeserializedAccount], bytes, Pubkey]:
    """Inverse of ``serialize``; dup entries carry only their back-reference."""
    (count,) = _U64.unpack_from(blob, 0)
    pos = 8
    entries: list[DeserializedAccount] = []
    for _ in range(count):
        if blob[pos] != NON_DUP:
            j = blob[pos]
            p = entries[j]
            entries.append(DeserializedAccount(j, p.is_signer, p.is_writable, None))
            pos += 8
            continue
        _, signer, writable, executable, key, owner, lamports, dlen = _HEADER.unpack_from(blob, pos)
        pos += DATA_OFF
        data = bytes(blob[pos : pos + dlen])
        pos += dlen + (-dlen % 8)
        (rent_epoch,) = _U64.unpack_from(blob, pos)
        pos += 8
        acct = Account(key, owner, lamports, data, bool(executable), rent_epoch)
        entries.append(DeserializedAccount(None, bool(signer), bool(writable), acct))
    (dlen,) = _U64.unpack_from(blob, pos)
    pos += 8
    ix_data = bytes(blob[pos : pos + dlen])
    pos += dlen
    return entries, ix_data, bytes(blob[pos : pos + 32])


def read_lamports(blob: bytes | bytearray, slot: AccountSlot) -> int:
    return _U64.unpack_from(blob, slot.lamports_at)[0]


def diff_accounts(
    blob: bytes | bytearray, layout: InputLayout, accounts: Mapping[Pubkey, Account], program_id: Pubkey
) -> dict[Pubkey, Account]:
    """Validate the VM's view of each account against ``accounts`` and return the changed records.

    Raises WritebackError on any rule violation; nothing is applied.
    """
    changed: dict[Pubkey, Account] = {}
    before_sum = 0
    after_sum = 0
    for slot in layout.accounts:
        if slot.dup_of is not None:
            continue
        old = accounts[slot.pubkey]
        _, _, _, executable, key, owner, lamports, dlen = _HEADER.unpack_from(blob, slot.start)
        (rent_epoch,) = _U64.unpack_from(blob, slot.rent_epoch_at)
        if key != old.pubkey or owner != old.owner or dlen != len(old.data) or rent_epoch != old.rent_epoch:
            raise WritebackError("ModifiedImmutableField", slot.pubkey)
        if bool(executable) != old.executable:
            raise WritebackError("ModifiedImmutableField", slot.pubkey)
        data = bytes(blob[slot.data_at : slot.data_at + dlen])
        before_sum += old.lamports
        after_sum += lamports
        if lamports == old.lamports and data == old.data:
            continue
        if not slot.is_writable:
            raise WritebackError("ReadonlyAccountModified", slot.pubkey)
        if old.executable:
            raise WritebackError("ExecutableAccountModified", slot.pubkey)
        if old.owner != program_id:
            if data != old.data:
                raise WritebackError("ExternalAccountDataModified", slot.pubkey)
            if lamports < old.lamports:
                raise WritebackError("ExternalAccountLamportSpend", slot.pubkey)
        changed[slot.pubkey] = old.with_(lamports=lamports, data=data)
    if before_sum != after_sum:
        raise WritebackError("UnbalancedInstruction")
    return changed


def writeback(
    blob: bytes | bytearray, layout: InputLayout, working: Mapping[Pubkey, Account], program_id: Pubkey
) -> list[Pubkey]:
    """Copy lamports and data back into ``working`` (which must support item assignment)."""
    changed = diff_accounts(blob, layout, working, program_id)
    for key, acct in changed.items():
        working[key] = acct  # type: ignore[index]
    return list(changed)


def refresh(blob: bytearray, layout: InputLayout, accounts: Mapping[Pubkey, Account]) -> None:
    """Overwrite lamports and data in ``blob`` with the current account state (after a nested call)."""
    for slot in layout.accounts:
        if slot.dup_of is not None:
            continue
        acct = accounts[slot.pubkey]
        _U64.pack_into(blob, slot.lamports_at, acct.lamports)
        blob[slot.data_at : slot.data_at + slot.data_len] = acct.data
