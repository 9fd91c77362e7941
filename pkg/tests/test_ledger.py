import pytest

from solfuzz.extractors import AccountDataLayout, FromPubkey, SeedStructure, Static
from solfuzz.ledger import (
    NOOP_PROGRAM,
    ROLES,
    LedgerConfig,
    LedgerSnapshot,
    WorkingCopy,
    attacker_controlled_candidates,
    build_from_semantics,
    build_snapshot,
    commit,
    generate_attacker_controlled,
    generate_pdas,
    regenerate,
    snapshot_digest,
)
from solfuzz.model import LAMPORTS_PER_SOL, Account
from solfuzz.pda import find_program_address
from solfuzz.vm import ProgramLoadError

PROGRAM_BYTES = NOOP_PROGRAM
VAULT_SEEDS = SeedStructure(1, (Static(b"vault"), FromPubkey("user")))
STATIC_SEEDS = SeedStructure(2, (Static(b"house"),))
WALLET_LAYOUT = AccountDataLayout(3, (8, 40), 72)


@pytest.fixture
def snap():
    return build_snapshot(PROGRAM_BYTES)


def test_defaults(snap):
    cfg = LedgerConfig()
    assert set(snap.roles) == set(ROLES)
    assert snap.accounts[cfg.user].lamports == 10 * LAMPORTS_PER_SOL
    assert snap.accounts[cfg.attacker].lamports == 10 * LAMPORTS_PER_SOL
    assert cfg.malicious_program in snap.roles["program_keys"]
    assert snap.accounts[cfg.malicious_program].executable
    assert snap.accounts[snap.program_id].data == PROGRAM_BYTES
    assert len(snap.roles["data_keys"]) == cfg.data_accounts
    assert snap.roles["pda_keys"] == snap.roles["attacker_controlled_keys"] == ()
    keys = snap.selectable_keys
    assert keys.keys[0] == snap.user and keys.keys[1] == snap.attacker
    snap.check_invariants()


def test_malformed_program_rejected():
    with pytest.raises(ProgramLoadError):
        build_snapshot(b"\x00" * 7)


def test_pubkey_seed_yields_user_and_attacker_pdas(snap):
    out = generate_pdas(snap, [VAULT_SEEDS])
    (user_pda,) = out.roles["user_pda_keys"]
    (attacker_pda,) = out.roles["attacker_pda_keys"]
    assert user_pda == find_program_address([b"vault", snap.user], snap.program_id)[0]
    assert attacker_pda == find_program_address([b"vault", snap.attacker], snap.program_id)[0]
    assert out.accounts[user_pda].owner == snap.program_id
    assert len(out.accounts) == len(snap.accounts) + 2


def test_static_seed_yields_one_pda(snap):
    out = generate_pdas(snap, [STATIC_SEEDS])
    assert len(out.roles["pda_keys"]) == 1 and len(out.accounts) == len(snap.accounts) + 1


def test_generate_pdas_idempotent(snap):
    once = generate_pdas(snap, [VAULT_SEEDS, STATIC_SEEDS])
    assert generate_pdas(once, [VAULT_SEEDS, STATIC_SEEDS]) is once


def test_attacker_controlled_from_two_offset_layout(snap):
    snap = generate_pdas(snap, [VAULT_SEEDS])
    out = generate_attacker_controlled(snap, [WALLET_LAYOUT])
    created = out.roles["attacker_controlled_keys"]
    assert 0 < len(created) <= LedgerConfig().attacker_controlled_cap
    for k in created:
        acct = out.accounts[k]
        assert acct.owner == snap.attacker and len(acct.data) == 72
        slots = [acct.data[o : o + 32] for o in (8, 40)]
        assert snap.attacker in slots
        assert any(s != snap.attacker for s in slots)


def test_single_offset_layout_creates_nothing(snap):
    assert attacker_controlled_candidates(snap, AccountDataLayout(4, (8,), 40), 8) == []


def test_regenerate_bumps_generation_only_on_change(snap):
    grown = regenerate(snap, [VAULT_SEEDS], [WALLET_LAYOUT])
    assert grown.generation == snap.generation + 1 and grown.blockhash != snap.blockhash
    assert regenerate(grown, [VAULT_SEEDS], [WALLET_LAYOUT]) is grown
    # registration order only ever appends
    assert grown.selectable_keys.keys[: len(snap.accounts)] == snap.selectable_keys.keys


def test_build_from_semantics_is_pure():
    a = build_from_semantics(PROGRAM_BYTES, [VAULT_SEEDS], [WALLET_LAYOUT])
    b = build_from_semantics(PROGRAM_BYTES, [VAULT_SEEDS], [WALLET_LAYOUT])
    assert snapshot_digest(a) == snapshot_digest(b)


def test_working_copy_isolation(snap):
    w = WorkingCopy(snap)
    acct = w[snap.user]
    w[snap.user] = Account(acct.pubkey, acct.owner, acct.lamports - 1, acct.data)
    assert snap.accounts[snap.user].lamports == acct.lamports
    assert WorkingCopy(snap)[snap.user].lamports == acct.lamports
    with pytest.raises(KeyError):
        w[b"\x01" * 32] = acct
    with pytest.raises(TypeError):
        del w[snap.user]


def test_commit_publishes_next_generation(snap):
    w = WorkingCopy(snap)
    u, a = w[snap.user], w[snap.attacker]
    w[snap.user] = Account(u.pubkey, u.owner, u.lamports - 7, u.data)
    w[snap.attacker] = Account(a.pubkey, a.owner, a.lamports + 7, a.data)
    nxt = commit(snap, w)
    assert nxt.generation == snap.generation + 1
    assert nxt.accounts[snap.user].lamports == u.lamports - 7
    assert nxt.total_lamports() == snap.total_lamports()
    assert snap.accounts[snap.user].lamports == u.lamports


def test_json_round_trip(snap):
    grown = regenerate(snap, [VAULT_SEEDS, STATIC_SEEDS], [WALLET_LAYOUT])
    back = LedgerSnapshot.from_json(grown.to_json())
    assert back == grown
    assert back.selectable_keys.keys == grown.selectable_keys.keys
    assert back.to_json() == grown.to_json()


def test_duplicate_role_registration_detected(snap):
    roles = dict(snap.roles)
    roles["data_keys"] = roles["data_keys"] + (snap.user,)
    with pytest.raises(AssertionError):
        LedgerSnapshot(snap.accounts, roles, snap.program_id).check_invariants()
