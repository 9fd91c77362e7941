from solfuzz.corpus import get
from solfuzz.extractors import (
    AccountDataLayout,
    FromPubkey,
    SeedStructure,
    SemanticsRegistry,
    Static,
)
from solfuzz.harness import Executor
from solfuzz.ledger import build_snapshot, regenerate

from conftest import encode_tx, meta

INIT = b"\x00"


def _setup(withdraw_program):
    raw = get("withdraw-msc").assemble().text
    snap = build_snapshot(raw)
    return snap, Executor(withdraw_program)


def _init(snap, vault, payer="attacker"):
    wallet = snap.roles["data_keys"][0]
    authority = snap.attacker if payer == "attacker" else snap.user
    return encode_tx(snap, payer, [meta(wallet), meta(vault), meta(authority, signer=True)], INIT)


def test_vault_seed_structure(withdraw_program):
    snap, ex = _setup(withdraw_program)
    res = ex.run(snap, _init(snap, snap.user))
    (s,) = res.seed_structures
    assert s.elements == (Static(b"vault"), FromPubkey("attacker"))
    assert s.bump_handling == "searched"
    # same call site and seed count give the same id
    again = ex.run(snap, _init(snap, snap.user, payer="user")).seed_structures[0]
    assert again.id == s.id and again.elements == (Static(b"vault"), FromPubkey("user"))


def test_wallet_layout_after_pda_generation(withdraw_program):
    snap, ex = _setup(withdraw_program)
    structures = ex.run(snap, _init(snap, snap.user)).seed_structures
    snap = regenerate(snap, structures, [])
    (vault,) = snap.roles["attacker_pda_keys"]
    res = ex.run(snap, _init(snap, vault))
    assert res.outcome.status.name == "SUCCESS"
    (lay,) = res.data_layouts
    assert lay.pubkey_offsets == (8, 40) and lay.data_len == 128
    grown = regenerate(snap, [], [lay])
    assert len(grown.selectable_keys) > len(snap.selectable_keys)
    assert grown.roles["attacker_controlled_keys"]


def test_failed_init_records_no_layout(withdraw_program):
    snap, ex = _setup(withdraw_program)
    # vault does not match the derived PDA, so nothing is written
    res = ex.run(snap, _init(snap, snap.user))
    assert res.data_layouts == []


def test_registry_deduplicates():
    reg = SemanticsRegistry()
    s = SeedStructure(1, (Static(b"x"),))
    lay = AccountDataLayout(9, (0, 32), 64)
    assert reg.merge([s], [lay])
    assert not reg.merge([SeedStructure(1, (Static(b"y"),))], [lay])
    assert reg.seed_structures[1] == s


def test_serialization_round_trip():
    s = SeedStructure(5, (Static(b"vault"), FromPubkey("user")), "fixed")
    assert SeedStructure.from_dict(s.to_dict()) == s
    lay = AccountDataLayout(6, (8, 40), 72)
    assert AccountDataLayout.from_dict(lay.to_dict()) == lay
    assert SeedStructure(7, ()).has_pubkey_seed is False
