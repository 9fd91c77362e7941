"""Core account and instruction records shared across modules."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field, replace

import base58

Pubkey = bytes

LAMPORTS_PER_SOL = 1_000_000_000


def b58(key: bytes) -> str:
    return base58.b58encode(key).decode()


def from_b58(text: str) -> Pubkey:
    key = base58.b58decode(text)
    if len(key) != 32:
        raise ValueError(f"pubkey {text!r} decodes to {len(key)} bytes, expected 32")
    return key


def named_key(name: str) -> Pubkey:
    """Deterministic key for a named emulator account."""
    return hashlib.sha256(b"solfuzz:" + name.encode()).digest()


@dataclass(frozen=True, slots=True)
class Account:
    pubkey: Pubkey
    owner: Pubkey
    lamports: int = 0
    data: bytes = b""
    executable: bool = False
    rent_epoch: int = 0

    def __post_init__(self) -> None:
        if len(self.pubkey) != 32 or len(self.owner) != 32:
            raise ValueError("pubkey and owner must be 32 bytes")
        if not 0 <= self.lamports < 1 << 64:
            raise ValueError("lamports must fit in u64")

    def with_(self, **changes: object) -> Account:
        return replace(self, **changes)  # type: ignore[arg-type]


@dataclass(frozen=True, slots=True)
class AccountMeta:
    pubkey: Pubkey
    is_signer: bool = False
    is_writable: bool = False


@dataclass(frozen=True, slots=True)
class Instruction:
    program_id: Pubkey
    account_metas: tuple[AccountMeta, ...] = ()
    data: bytes = b""

    MAX_ACCOUNTS = 16
    MAX_DATA = 1024

    def __post_init__(self) -> None:
        object.__setattr__(self, "account_metas", tuple(self.account_metas))
        object.__setattr__(self, "data", bytes(self.data))


@dataclass(frozen=True, slots=True)
class Transaction:
    fee_payer_role: str
    signer_set: tuple[Pubkey, ...]
    blockhash: bytes
    account_list: tuple[Pubkey, ...]
    instructions: tuple[Instruction, ...] = field(default=())

    @property
    def instruction(self) -> Instruction:
        return self.instructions[0]

    @property
    def fee_payer(self) -> Pubkey:
        return self.signer_set[0]
