"""Writes the golden serialization fixtures from the byte layout alone (no solfuzz imports).

Run from this directory: python3 make_serialize_fixtures.py
"""

import hashlib
import struct


def key(name: str) -> bytes:
    return hashlib.sha256(b"fixture:" + name.encode()).digest()


def account(signer, writable, executable, pubkey, owner, lamports, data, rent_epoch):
    out = bytes([0xFF, signer, writable, executable]) + bytes(4)
    out += pubkey + owner + struct.pack("<QQ", lamports, len(data)) + data
    out += bytes(-len(data) % 8)
    return out + struct.pack("<Q", rent_epoch)


def tail(data: bytes, program_id: bytes) -> bytes:
    return struct.pack("<Q", len(data)) + data + program_id


P = key("program")

# 1. no accounts, empty instruction data
empty = struct.pack("<Q", 0) + tail(b"", P)

# 2. one writable signer account with empty data
single = struct.pack("<Q", 1)
single += account(1, 1, 0, key("wallet"), key("system"), 10_000_000_000, b"", 7)
single += tail(b"\x01\x02\x03", P)

# 3. a data account listed twice, then a read-only executable account
dup = struct.pack("<Q", 3)
dup += account(0, 1, 0, key("state"), P, 2_000_000, bytes(range(1, 14)), 0)
dup += bytes([0]) + bytes(7)
dup += account(0, 0, 1, key("token"), key("loader"), 1, b"\x95" + bytes(7), 3)
dup += tail(b"hello", P)

for name, blob in (("empty", empty), ("single", single), ("dup", dup)):
    with open(f"serialize_{name}.bin", "wb") as f:
        f.write(blob)
    print(name, len(blob))
