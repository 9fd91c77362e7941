"""Byte-level mutation of fuzz inputs."""

from __future__ import annotations

import random
import struct
from collections.abc import Callable, Mapping, Sequence
from dataclasses import dataclass

from ..txgen import MAX_ACCOUNTS

MAX_INPUT = 4096
ALIGNED = 0.75

U8_INTERESTING = (0, 1, 2, 3, 0x7F, 0x80, 0xFF)
U16_INTERESTING = (0, 1, 2, 0x7F, 0x80, 0xFF, 0x100, 0x7FFF, 0x8000, 0xFFFF)
U64_INTERESTING = (
    0,
    1,
    2,
    0xFF,
    1_000,
    1_000_000,
    1_000_000_000,
    0x7FFF_FFFF,
    0xFFFF_FFFF,
    0x7FFF_FFFF_FFFF_FFFF,
    0x8000_0000_0000_0000,
    0xFFFF_FFFF_FFFF_FFFF,
)

DEFAULT_WEIGHTS: dict[str, float] = {
    "bit_flip": 4.0,
    "byte_set": 4.0,
    "splice_u8": 2.0,
    "splice_u16": 3.0,
    "splice_u64": 2.0,
    "key_index": 4.0,
    "flags": 2.0,
    "payer": 1.0,
    "block_dup": 1.0,
    "block_delete": 1.0,
    "crossover": 1.0,
    "append": 1.0,
}


@dataclass(frozen=True)
class Fields:
    """Byte offsets of the transaction grammar's fields within one input."""

    keys: tuple[int, ...]
    flags: tuple[int, ...]
    data: int


def grammar_fields(buf: bytes | bytearray, key_count: int) -> Fields:
    n = 1 + (buf[0] if buf else 0) % max(1, min(key_count, MAX_ACCOUNTS))
    keys = tuple(2 + 3 * i for i in range(n))
    return Fields(keys, tuple(k + 2 for k in keys), 2 + 3 * n + 2)


def apply_key_hint(data: bytes, account: int, key_index: int, key_count: int) -> bytes | None:
    """Point account position ``account`` at ``key_index``; None if nothing changes."""
    fields = grammar_fields(data, key_count)
    if account >= len(fields.keys):
        return None
    at = fields.keys[account]
    buf = bytearray(data)
    if len(buf) < at + 2:
        buf.extend(bytes(at + 2 - len(buf)))
    packed = struct.pack("<H", key_index)
    if buf[at : at + 2] == packed:
        return None
    buf[at : at + 2] = packed
    return bytes(buf)


class Mutator:
    """Stacks 1 to 4 weighted mutations per call; all randomness comes from ``rng``.

    Splices land on grammar-aligned offsets (key indices, flag bytes, the start
    of instruction data) most of the time and anywhere otherwise.
    """

    def __init__(
        self,
        rng: random.Random,
        weights: Mapping[str, float] | None = None,
        *,
        key_count: Callable[[], int] = lambda: 16,
        wallets: tuple[int, int] = (0, 1),
        max_len: int = MAX_INPUT,
    ) -> None:
        self.rng = rng
        w = dict(DEFAULT_WEIGHTS)
        if weights:
            unknown = set(weights) - set(w)
            if unknown:
                raise ValueError(f"unknown mutation operators: {sorted(unknown)}")
            w.update(weights)
        self.ops = [name for name in DEFAULT_WEIGHTS if w[name] > 0]
        if not self.ops:
            raise ValueError("all mutation weights are zero")
        self.weights = [w[name] for name in self.ops]
        self.key_count = key_count
        self.wallets = wallets
        self.max_len = max_len

    def mutate(self, data: bytes, pool: Sequence[bytes] = ()) -> bytes:
        buf = bytearray(data)
        for _ in range(self.rng.randint(1, 4)):
            op = self.rng.choices(self.ops, self.weights)[0]
            getattr(self, "_" + op)(buf, pool)
        if not buf:
            self._append(buf, pool)
        del buf[self.max_len :]
        return bytes(buf)

    def _pos(self, buf: bytearray, width: int = 1) -> int | None:
        if len(buf) < width:
            return None
        return self.rng.randrange(len(buf) - width + 1)

    def _bit_flip(self, buf: bytearray, pool: Sequence[bytes]) -> None:
        i = self._pos(buf)
        if i is None:
            return self._append(buf, pool)
        buf[i] ^= 1 << self.rng.randrange(8)

    def _byte_set(self, buf: bytearray, pool: Sequence[bytes]) -> None:
        i = self._pos(buf)
        if i is None:
            return self._append(buf, pool)
        buf[i] = self.rng.randrange(256)

    def _splice(self, buf: bytearray, packed: bytes, at: int | None = None) -> None:
        if at is None:
            if len(buf) < len(packed):
                buf.extend(bytes(len(packed) - len(buf)))
            at = self._pos(buf, len(packed))
            assert at is not None
        if len(buf) < at + len(packed):
            buf.extend(bytes(at + len(packed) - len(buf)))
        buf[at : at + len(packed)] = packed

    def _fields(self, buf: bytearray) -> Fields:
        return grammar_fields(buf, self.key_count())

    def _data_offset(self, buf: bytearray) -> int | None:
        if self.rng.random() < ALIGNED:
            return self._fields(buf).data + self.rng.randrange(16)
        return None

    def _splice_u8(self, buf: bytearray, pool: Sequence[bytes]) -> None:
        self._splice(buf, bytes([self.rng.choice(U8_INTERESTING)]), self._data_offset(buf))

    def _splice_u16(self, buf: bytearray, pool: Sequence[bytes]) -> None:
        self._splice(buf, struct.pack("<H", self.rng.choice(U16_INTERESTING)), self._data_offset(buf))

    def _splice_u64(self, buf: bytearray, pool: Sequence[bytes]) -> None:
        value = self.rng.choice(U64_INTERESTING)
        if self.rng.random() < 0.25:
            value = self.rng.randrange(1, 1 << self.rng.randrange(1, 64))
        self._splice(buf, struct.pack("<Q", value), self._data_offset(buf))

    def _key_index(self, buf: bytearray, pool: Sequence[bytes]) -> None:
        n = max(1, self.key_count())
        at = self.rng.choice(self._fields(buf).keys) if self.rng.random() < ALIGNED else None
        self._splice(buf, struct.pack("<H", self.rng.randrange(n)), at)

    def _flags(self, buf: bytearray, pool: Sequence[bytes]) -> None:
        at = self.rng.choice(self._fields(buf).flags)
        self._splice(buf, bytes([self.rng.randrange(4)]), at)

    def _payer(self, buf: bytearray, pool: Sequence[bytes]) -> None:
        """Swap the fee payer; each reference to the old payer's wallet follows with p=1/2."""
        if len(buf) < 2:
            buf.extend(bytes(2 - len(buf)))
        user, attacker = self.wallets
        old, new = (attacker, user) if buf[1] & 1 else (user, attacker)
        buf[1] ^= 1
        n = max(1, self.key_count())
        for at in self._fields(buf).keys:
            if at + 2 <= len(buf) and struct.unpack_from("<H", buf, at)[0] % n == old and self.rng.random() < 0.5:
                struct.pack_into("<H", buf, at, new)

    def _block_dup(self, buf: bytearray, pool: Sequence[bytes]) -> None:
        if not buf:
            return self._append(buf, pool)
        start = self.rng.randrange(len(buf))
        length = self.rng.randint(1, min(32, len(buf) - start))
        at = self.rng.randrange(len(buf) + 1)
        buf[at:at] = buf[start : start + length]

    def _block_delete(self, buf: bytearray, pool: Sequence[bytes]) -> None:
        if len(buf) < 2:
            return
        start = self.rng.randrange(len(buf))
        length = self.rng.randint(1, min(16, len(buf) - start))
        del buf[start : start + length]

    def _crossover(self, buf: bytearray, pool: Sequence[bytes]) -> None:
        if not pool:
            return self._byte_set(buf, pool)
        other = pool[self.rng.randrange(len(pool))]
        if not other:
            return
        cut = self.rng.randint(0, len(buf))
        ocut = self.rng.randint(0, len(other))
        buf[cut:] = other[ocut:]

    def _append(self, buf: bytearray, pool: Sequence[bytes]) -> None:
        buf.extend(self.rng.randbytes(self.rng.randint(1, 8)))
