import hashlib
import random
import struct
from pathlib import Path

import pytest

from solfuzz.abi import (
    FieldKind,
    WritebackError,
    deserialize,
    serialize,
    writeback,
)
from solfuzz.ledger import ROLES, LedgerSnapshot, WorkingCopy
from solfuzz.model import Account, AccountMeta, Instruction
from solfuzz.vm.interpreter import INPUT_START

FIXTURES = Path(__file__).parent / "fixtures"


def key(name: str) -> bytes:
    return hashlib.sha256(b"fixture:" + name.encode()).digest()


P = key("program")

# configurations mirrored by fixtures/make_serialize_fixtures.py
WALLET = Account(key("wallet"), key("system"), 10_000_000_000, b"", rent_epoch=7)
STATE = Account(key("state"), P, 2_000_000, bytes(range(1, 14)))
TOKEN = Account(key("token"), key("loader"), 1, b"\x95" + bytes(7), executable=True, rent_epoch=3)
ACCOUNTS = {a.pubkey: a for a in (WALLET, STATE, TOKEN)}

CONFIGS = {
    "empty": Instruction(P, (), b""),
    "single": Instruction(P, (AccountMeta(WALLET.pubkey, True, True),), b"\x01\x02\x03"),
    "dup": Instruction(
        P,
        (
            AccountMeta(STATE.pubkey, False, True),
            AccountMeta(STATE.pubkey, False, False),
            AccountMeta(TOKEN.pubkey, False, False),
        ),
        b"hello",
    ),
}


@pytest.mark.parametrize("name", sorted(CONFIGS))
def test_golden_bytes(name):
    blob, layout = serialize(CONFIGS[name], ACCOUNTS)
    assert blob == (FIXTURES / f"serialize_{name}.bin").read_bytes()
    assert layout.size == len(blob)


def test_empty_is_48_bytes():
    blob, _ = serialize(CONFIGS["empty"], ACCOUNTS)
    assert blob == bytes(16) + P


def test_single_account_lamports_offset():
    ix = Instruction(P, (AccountMeta(WALLET.pubkey, False, False),), b"")
    blob, layout = serialize(ix, ACCOUNTS)
    assert layout.accounts[0].lamports_at == 80
    assert struct.unpack_from("<Q", blob, 80)[0] == WALLET.lamports


def test_duplicate_is_eight_bytes():
    blob, layout = serialize(CONFIGS["dup"], ACCOUNTS)
    dup = layout.accounts[1]
    assert dup.dup_of == 0 and dup.end - dup.start == 8
    assert blob[dup.start : dup.end] == bytes(8)


def test_locate_examples():
    ix = Instruction(P, (AccountMeta(WALLET.pubkey, False, True), AccountMeta(STATE.pubkey, False, True)), b"xy")
    _, layout = serialize(ix, ACCOUNTS)
    a0, a1 = layout.accounts
    ref = layout.locate(INPUT_START + a0.lamports_at)
    assert (ref.account, ref.kind, ref.offset) == (0, FieldKind.LAMPORTS, 0)
    ref = layout.locate(INPUT_START + a1.data_at + 5)
    assert (ref.account, ref.kind, ref.offset) == (1, FieldKind.DATA, 5)
    ref = layout.locate(INPUT_START + layout.instruction_data_at + 1)
    assert ref.account is None and ref.kind is FieldKind.INSTRUCTION_DATA
    assert layout.locate(INPUT_START + layout.size) is None
    assert layout.locate(INPUT_START - 1) is None


def _random_instruction(rng: random.Random):
    accounts = {}
    keys = []
    for i in range(rng.randint(1, 5)):
        k = key(f"r{i}-{rng.random()}")
        accounts[k] = Account(
            k,
            key("owner") if rng.random() < 0.5 else P,
            rng.randrange(2**64),
            rng.randbytes(rng.randint(0, 40)),
            rng.random() < 0.2,
            rng.randrange(2**64),
        )
        keys.append(k)
    metas = tuple(
        AccountMeta(rng.choice(keys), rng.random() < 0.5, rng.random() < 0.5) for _ in range(rng.randint(0, 16))
    )
    return Instruction(P, metas, rng.randbytes(rng.randint(0, 64))), accounts


def test_round_trip_and_layout_consistency():
    rng = random.Random(7)
    for _ in range(300):
        ix, accounts = _random_instruction(rng)
        blob, layout = serialize(ix, accounts)
        entries, data, pid = deserialize(blob)
        assert data == ix.data and pid == ix.program_id and len(entries) == len(ix.account_metas)
        for m, e in zip(ix.account_metas, entries):
            acct = e.account if e.dup_of is None else entries[e.dup_of].account
            assert acct == accounts[m.pubkey]
        # locate covers every byte with ranges consistent with the slots
        for off in range(layout.size):
            ref = layout.locate(INPUT_START + off)
            assert ref is not None
            if ref.account is not None:
                slot = layout.accounts[ref.account]
                assert slot.start <= off < slot.end
        assert layout.program_id_at + 32 == layout.size == len(blob)


def _snapshot():
    return LedgerSnapshot(dict(ACCOUNTS), {r: () for r in ROLES}, P)


def test_writeback_copies_balanced_lamports_and_data():
    a = Account(key("a"), P, 100, bytes(4))
    b = Account(key("b"), P, 10, bytes(4))
    snap = LedgerSnapshot({a.pubkey: a, b.pubkey: b}, {r: () for r in ROLES}, P)
    ix = Instruction(P, (AccountMeta(a.pubkey, False, True), AccountMeta(b.pubkey, False, True)), b"")
    blob, layout = serialize(ix, snap.accounts)
    blob = bytearray(blob)
    sa, sb = layout.accounts
    struct.pack_into("<Q", blob, sa.lamports_at, 5)
    struct.pack_into("<Q", blob, sb.lamports_at, 105)
    blob[sb.data_at + 1] = 0xAB
    work = WorkingCopy(snap)
    writeback(blob, layout, work, P)
    assert work[a.pubkey].lamports == 5 and work[b.pubkey].lamports == 105
    assert work[b.pubkey].data == b"\x00\xab\x00\x00"
    assert snap.accounts[a.pubkey].lamports == 100


def test_writeback_rejects_readonly_modification():
    snap = _snapshot()
    ix = Instruction(P, (AccountMeta(STATE.pubkey, False, False),), b"")
    blob, layout = serialize(ix, snap.accounts)
    blob = bytearray(blob)
    blob[layout.accounts[0].data_at] ^= 1
    work = WorkingCopy(snap)
    with pytest.raises(WritebackError) as exc:
        writeback(blob, layout, work, P)
    assert exc.value.reason == "ReadonlyAccountModified"
    assert work.changes() == {}


@pytest.mark.parametrize(
    "field,reason",
    [("owner", "ModifiedImmutableField"), ("unbalanced", "UnbalancedInstruction")],
)
def test_writeback_rule_violations(field, reason):
    snap = _snapshot()
    ix = Instruction(P, (AccountMeta(STATE.pubkey, False, True),), b"")
    blob, layout = serialize(ix, snap.accounts)
    blob = bytearray(blob)
    slot = layout.accounts[0]
    if field == "owner":
        blob[slot.owner_at] ^= 1
    else:
        struct.pack_into("<Q", blob, slot.lamports_at, STATE.lamports + 1)
    with pytest.raises(WritebackError) as exc:
        writeback(blob, layout, WorkingCopy(snap), P)
    assert exc.value.reason == reason


def test_foreign_account_data_is_immutable():
    snap = _snapshot()
    ix = Instruction(P, (AccountMeta(WALLET.pubkey, True, True),), b"")
    # wallet has no data; give it some through a custom account
    other = Account(key("foreign"), key("system"), 5, bytes(8))
    snap = LedgerSnapshot({**snap.accounts, other.pubkey: other}, snap.roles, P)
    ix = Instruction(P, (AccountMeta(other.pubkey, False, True),), b"")
    blob, layout = serialize(ix, snap.accounts)
    blob = bytearray(blob)
    blob[layout.accounts[0].data_at] = 1
    with pytest.raises(WritebackError) as exc:
        writeback(blob, layout, WorkingCopy(snap), P)
    assert exc.value.reason == "ExternalAccountDataModified"
