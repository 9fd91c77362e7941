"""Total decoding of raw fuzzer bytes into single-instruction transactions.

Grammar (sequential reads, little-endian, exhausted input reads as zero):

    u8   account count  -> 1 + b % min(|keys|, 16)
    u8   signer         -> bit 0 set: attacker pays and signs, else user
    per account:
        u16  key index  -> mod |keys|
        u8   flags      -> bit 0 writable, bit 1 signer (kept only on the fee payer's wallet)
    u16  data length    -> mod 1025
    ...  instruction data
"""

from __future__ import annotations

import struct

from .ledger import SelectableKeys
from .model import AccountMeta, Instruction, Transaction

MAX_ACCOUNTS = 16
MAX_DATA = 1024


class StaleSnapshot(Exception):
    """The transaction references keys the current snapshot does not offer."""


class _Reader:
    __slots__ = ("data", "pos")

    def __init__(self, data: bytes) -> None:
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        chunk = self.data[self.pos : self.pos + n]
        self.pos += n
        if len(chunk) < n:
            chunk += bytes(n - len(chunk))
        return chunk

    def u8(self) -> int:
        return self.take(1)[0]

    def u16(self) -> int:
        return struct.unpack("<H", self.take(2))[0]


def decode(data: bytes, keys: SelectableKeys) -> Transaction:
    n_keys = len(keys.keys)
    if n_keys == 0:
        raise ValueError("no selectable keys")
    r = _Reader(bytes(data))
    count = 1 + r.u8() % min(n_keys, MAX_ACCOUNTS)
    attacker = bool(r.u8() & 1)
    payer = keys.attacker if attacker else keys.user
    metas = []
    for _ in range(count):
        key = keys.keys[r.u16() % n_keys]
        flags = r.u8()
        metas.append(AccountMeta(key, bool(flags & 2) and key == payer, bool(flags & 1)))
    dlen = r.u16() % (MAX_DATA + 1)
    ix = Instruction(keys.program_id, tuple(metas), r.take(dlen))
    account_list = list(dict.fromkeys([payer, *(m.pubkey for m in metas), keys.program_id]))
    return Transaction(
        "attacker" if attacker else "user",
        (payer,),
        keys.blockhash,
        tuple(account_list),
        (ix,),
    )


def replay_encode(tx: Transaction, keys: SelectableKeys) -> bytes:
    """Canonical bytes that decode back to ``tx`` under ``keys``."""
    if len(tx.instructions) != 1:
        raise ValueError("only single-instruction transactions are encodable")
    ix = tx.instruction
    index = keys.index
    n_keys = len(keys.keys)
    for key in (*tx.signer_set, *(m.pubkey for m in ix.account_metas)):
        if key not in index:
            raise StaleSnapshot("transaction references a key missing from the snapshot")
    if tx.blockhash != keys.blockhash or ix.program_id != keys.program_id:
        raise StaleSnapshot("transaction was built against a different snapshot")
    metas = ix.account_metas
    if not 1 <= len(metas) <= min(n_keys, MAX_ACCOUNTS):
        raise ValueError("account count outside the decodable range")
    if len(ix.data) > MAX_DATA:
        raise ValueError("instruction data too long")
    out = bytearray([len(metas) - 1, 1 if tx.fee_payer_role == "attacker" else 0])
    for m in metas:
        out += struct.pack("<H", index[m.pubkey])
        out.append(int(m.is_writable) | (int(m.is_signer) << 1))
    out += struct.pack("<H", len(ix.data))
    out += ix.data
    return bytes(out)


def reencode(data: bytes, old: SelectableKeys, new: SelectableKeys) -> bytes:
    """Rewrite ``data`` so it decodes under ``new`` to what it meant under ``old``.

    Valid whenever ``new`` extends ``old`` (keys are only ever appended).
    """
    tx = decode(data, old)
    tx = Transaction(tx.fee_payer_role, tx.signer_set, new.blockhash, tx.account_list, tx.instructions)
    return replay_encode(tx, new)


def summarize(tx: Transaction) -> dict:
    from .model import b58

    ix = tx.instruction
    return {
        "fee_payer_role": tx.fee_payer_role,
        "signers": [b58(k) for k in tx.signer_set],
        "accounts": [
            {"pubkey": b58(m.pubkey), "is_signer": m.is_signer, "is_writable": m.is_writable}
            for m in ix.account_metas
        ],
        "data": ix.data.hex(),
    }
