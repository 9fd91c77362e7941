"""Emulated ledger: snapshot construction, regeneration from extracted semantics, working copies."""

from __future__ import annotations

import hashlib
import json
import struct
from collections.abc import Iterable, Iterator, Mapping, MutableMapping
from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Any

from .extractors import AccountDataLayout, FromPubkey, SeedStructure, Static
from .model import LAMPORTS_PER_SOL, Account, Pubkey, b58, from_b58, named_key
from .pda import CurvePredicate, PdaError, create_program_address, find_program_address, surrogate_on_curve
from .vm.loader import load_program

SYSTEM_PROGRAM = bytes(32)
NATIVE_LOADER = from_b58("NativeLoader1111111111111111111111111111111")
BPF_LOADER = from_b58("BPFLoaderUpgradeab1e11111111111111111111111")
SYSVAR_OWNER = from_b58("Sysvar1111111111111111111111111111111111111")
CLOCK_SYSVAR = from_b58("SysvarC1ock11111111111111111111111111111111")
RENT_SYSVAR = from_b58("SysvarRent111111111111111111111111111111111")
INSTRUCTIONS_SYSVAR = from_b58("Sysvar1nstructions1111111111111111111111111")
KECCAK_SYSVAR = from_b58("KeccakSecp256k11111111111111111111111111111")
TOKEN_PROGRAM = from_b58("TokenkegQfeZyiNwAJbNbGKPFXCWuBvf9Ss623VQ5DA")

TARGET_PROGRAM = named_key("target-program")
USER_WALLET = named_key("user-wallet")
ATTACKER_WALLET = named_key("attacker-wallet")
MALICIOUS_PROGRAM = named_key("malicious-program")

# mov64 r0, 0; exit
NOOP_PROGRAM = bytes.fromhex("b700000000000000" "9500000000000000")

ROLES = (
    "user_keys",
    "attacker_keys",
    "program_keys",
    "sysvar_keys",
    "data_keys",
    "pda_keys",
    "user_pda_keys",
    "attacker_pda_keys",
    "attacker_controlled_keys",
)

CLOCK = struct.Struct("<QqQQq")
RENT = struct.Struct("<QdB")


@dataclass(frozen=True)
class ClockValues:
    slot: int = 1000
    epoch_start_timestamp: int = 1_700_000_000
    epoch: int = 2
    leader_schedule_epoch: int = 3
    unix_timestamp: int = 1_700_000_400

    def pack(self) -> bytes:
        return CLOCK.pack(
            self.slot, self.epoch_start_timestamp, self.epoch, self.leader_schedule_epoch, self.unix_timestamp
        )


RENT_DATA = RENT.pack(3480, 2.0, 50)


@dataclass(frozen=True)
class LedgerConfig:
    program_id: Pubkey = TARGET_PROGRAM
    user: Pubkey = USER_WALLET
    attacker: Pubkey = ATTACKER_WALLET
    malicious_program: Pubkey = MALICIOUS_PROGRAM
    keccak_sysvar: Pubkey = KECCAK_SYSVAR
    wallet_lamports: int = 10 * LAMPORTS_PER_SOL
    pda_lamports: int = LAMPORTS_PER_SOL
    data_accounts: int = 4
    data_account_size: int = 128
    data_account_lamports: int = 2_000_000
    attacker_controlled_lamports: int = 2_000_000
    attacker_controlled_cap: int = 8
    clock: ClockValues = field(default_factory=ClockValues)


def blockhash_for(generation: int) -> bytes:
    return hashlib.sha256(f"solfuzz:blockhash:{generation}".encode()).digest()


@dataclass(frozen=True)
class SelectableKeys:
    """Keys the transaction decoder can reference, in stable registration order."""

    keys: tuple[Pubkey, ...]
    user: Pubkey
    attacker: Pubkey
    program_id: Pubkey
    blockhash: bytes
    generation: int = 0

    def __len__(self) -> int:
        return len(self.keys)

    @cached_property
    def index(self) -> dict[Pubkey, int]:
        return {k: i for i, k in enumerate(self.keys)}


@dataclass(frozen=True)
class LedgerSnapshot:
    """Immutable account store. Registration order of ``accounts`` defines SelectableKeys."""

    accounts: Mapping[Pubkey, Account]
    roles: Mapping[str, tuple[Pubkey, ...]]
    program_id: Pubkey
    generation: int = 0
    blockhash: bytes = field(default_factory=lambda: blockhash_for(0))
    seed_structures: tuple[SeedStructure, ...] = ()
    data_layouts: tuple[AccountDataLayout, ...] = ()

    @property
    def user(self) -> Pubkey:
        return self.roles["user_keys"][0]

    @property
    def attacker(self) -> Pubkey:
        return self.roles["attacker_keys"][0]

    @cached_property
    def role_index(self) -> dict[Pubkey, str]:
        return {k: role for role, keys in self.roles.items() for k in keys}

    def role_of(self, key: Pubkey) -> str:
        role = self.role_index.get(key)
        return role[: -len("_keys")] if role else "unknown"

    def keys_in(self, *roles: str) -> frozenset[Pubkey]:
        return frozenset(k for r in roles for k in self.roles.get(r, ()))

    @cached_property
    def selectable_keys(self) -> SelectableKeys:
        return SelectableKeys(
            tuple(self.accounts), self.user, self.attacker, self.program_id, self.blockhash, self.generation
        )

    def total_lamports(self) -> int:
        return sum(a.lamports for a in self.accounts.values())

    def check_invariants(self) -> None:
        seen: set[Pubkey] = set()
        for role in ROLES:
            for key in self.roles.get(role, ()):
                if key in seen:
                    raise AssertionError(f"key {b58(key)} registered in more than one role")
                if key not in self.accounts:
                    raise AssertionError(f"role key {b58(key)} missing from accounts")
                seen.add(key)

    # JSON

    def to_json(self) -> str:
        doc = {
            "generation": self.generation,
            "blockhash": self.blockhash.hex(),
            "program_id": b58(self.program_id),
            "accounts": {
                b58(k): {
                    "owner": b58(a.owner),
                    "executable": a.executable,
                    "rent_epoch": a.rent_epoch,
                    "lamports": a.lamports,
                    "data": a.data.hex(),
                }
                for k, a in self.accounts.items()
            },
            "roles": {r: [b58(k) for k in self.roles.get(r, ())] for r in ROLES},
            "semantics": {
                "seed_structures": [s.to_dict() for s in self.seed_structures],
                "data_layouts": [lay.to_dict() for lay in self.data_layouts],
            },
        }
        return json.dumps(doc, indent=1) + "\n"

    @classmethod
    def from_json(cls, text: str) -> LedgerSnapshot:
        doc = json.loads(text)
        accounts = {}
        for k, a in doc["accounts"].items():
            key = from_b58(k)
            accounts[key] = Account(
                key,
                from_b58(a["owner"]),
                int(a["lamports"]),
                bytes.fromhex(a["data"]),
                bool(a["executable"]),
                int(a["rent_epoch"]),
            )
        roles = {r: tuple(from_b58(k) for k in doc["roles"].get(r, [])) for r in ROLES}
        sem = doc.get("semantics", {})
        return cls(
            accounts,
            roles,
            from_b58(doc["program_id"]),
            int(doc["generation"]),
            bytes.fromhex(doc["blockhash"]),
            tuple(SeedStructure.from_dict(s) for s in sem.get("seed_structures", [])),
            tuple(AccountDataLayout.from_dict(x) for x in sem.get("data_layouts", [])),
        )


class _Builder:
    def __init__(self, base: LedgerSnapshot | None = None) -> None:
        self.accounts: dict[Pubkey, Account] = dict(base.accounts) if base else {}
        self.roles: dict[str, list[Pubkey]] = {r: list(base.roles.get(r, ())) if base else [] for r in ROLES}

    def add(self, role: str, account: Account) -> bool:
        if account.pubkey in self.accounts:
            return False
        self.accounts[account.pubkey] = account
        self.roles[role].append(account.pubkey)
        return True

    def frozen_roles(self) -> dict[str, tuple[Pubkey, ...]]:
        return {r: tuple(v) for r, v in self.roles.items()}


def build_snapshot(target_program: bytes, config: LedgerConfig | None = None) -> LedgerSnapshot:
    config = config or LedgerConfig()
    load_program(target_program)  # load errors propagate
    b = _Builder()
    b.add("user_keys", Account(config.user, SYSTEM_PROGRAM, config.wallet_lamports))
    b.add("attacker_keys", Account(config.attacker, SYSTEM_PROGRAM, config.wallet_lamports))
    b.add("program_keys", Account(config.program_id, BPF_LOADER, 1, bytes(target_program), executable=True))
    b.add("program_keys", Account(SYSTEM_PROGRAM, NATIVE_LOADER, 1, executable=True))
    b.add("program_keys", Account(TOKEN_PROGRAM, BPF_LOADER, 1, NOOP_PROGRAM, executable=True))
    b.add("program_keys", Account(config.malicious_program, BPF_LOADER, 1, NOOP_PROGRAM, executable=True))
    b.add("sysvar_keys", Account(CLOCK_SYSVAR, SYSVAR_OWNER, 1, config.clock.pack()))
    b.add("sysvar_keys", Account(RENT_SYSVAR, SYSVAR_OWNER, 1, RENT_DATA))
    b.add("sysvar_keys", Account(INSTRUCTIONS_SYSVAR, SYSVAR_OWNER, 1, bytes(2)))
    b.add("sysvar_keys", Account(config.keccak_sysvar, SYSVAR_OWNER, 1, bytes(64)))
    for i in range(config.data_accounts):
        b.add(
            "data_keys",
            Account(
                named_key(f"data-account-{i}"),
                config.program_id,
                config.data_account_lamports,
                bytes(config.data_account_size),
            ),
        )
    snap = LedgerSnapshot(b.accounts, b.frozen_roles(), config.program_id)
    snap.check_invariants()
    return snap


def derive_for(
    structure: SeedStructure,
    substitute: Pubkey | None,
    program_id: Pubkey,
    on_curve: CurvePredicate = surrogate_on_curve,
) -> Pubkey | None:
    seeds = [substitute if isinstance(e, FromPubkey) else e.data for e in structure.elements]
    if any(s is None for s in seeds):
        return None
    try:
        if structure.bump_handling == "fixed":
            last = structure.elements[-1] if structure.elements else None
            if isinstance(last, Static) and len(last.data) == 1:
                found = find_program_address(seeds[:-1], program_id, on_curve)  # type: ignore[arg-type]
                return found[0] if found else None
            return create_program_address(seeds, program_id, on_curve)  # type: ignore[arg-type]
        found = find_program_address(seeds, program_id, on_curve)  # type: ignore[arg-type]
        return found[0] if found else None
    except PdaError:
        return None


def generate_pdas(
    snapshot: LedgerSnapshot,
    seed_structures: Iterable[SeedStructure],
    config: LedgerConfig | None = None,
    on_curve: CurvePredicate = surrogate_on_curve,
) -> LedgerSnapshot:
    config = config or LedgerConfig()
    b = _Builder(snapshot)
    known = {s.id: s for s in snapshot.seed_structures}
    changed = False
    for s in seed_structures:
        if s.id not in known:
            known[s.id] = s
            changed = True
        targets = (
            [("user_pda_keys", snapshot.user), ("attacker_pda_keys", snapshot.attacker)]
            if s.has_pubkey_seed
            else [("pda_keys", None)]
        )
        for role, who in targets:
            key = derive_for(s, who, snapshot.program_id, on_curve)
            if key is not None:
                changed |= b.add(role, Account(key, snapshot.program_id, config.pda_lamports))
    if not changed:
        return snapshot
    return replace(
        snapshot,
        accounts=b.accounts,
        roles=b.frozen_roles(),
        seed_structures=tuple(known.values()),
    )


def attacker_controlled_candidates(
    snapshot: LedgerSnapshot, layout: AccountDataLayout, cap: int
) -> list[tuple[Pubkey, bytes]]:
    """Deterministic (key, data) pairs for one layout, at most ``cap``."""
    if len(layout.pubkey_offsets) < 2:
        return []
    fillers = [
        k
        for role in ("user_pda_keys", "user_keys", "pda_keys", "data_keys")
        for k in snapshot.roles.get(role, ())
    ]
    out: list[tuple[Pubkey, bytes]] = []
    for filler in fillers:
        for slot in layout.pubkey_offsets:
            data = bytearray(layout.data_len)
            for off in layout.pubkey_offsets:
                data[off : off + 32] = snapshot.attacker if off == slot else filler
            key = hashlib.sha256(b"solfuzz:attacker-controlled:" + layout.id.to_bytes(8, "little") + data).digest()
            out.append((key, bytes(data)))
            if len(out) == cap:
                return out
    return out


def generate_attacker_controlled(
    snapshot: LedgerSnapshot,
    layouts: Iterable[AccountDataLayout],
    config: LedgerConfig | None = None,
) -> LedgerSnapshot:
    config = config or LedgerConfig()
    b = _Builder(snapshot)
    known = {lay.id: lay for lay in snapshot.data_layouts}
    changed = False
    for lay in layouts:
        if lay.id not in known:
            known[lay.id] = lay
            changed = True
    for lay in known.values():
        for key, data in attacker_controlled_candidates(snapshot, lay, config.attacker_controlled_cap):
            acct = Account(key, snapshot.attacker, config.attacker_controlled_lamports, data)
            changed |= b.add("attacker_controlled_keys", acct)
    if not changed:
        return snapshot
    return replace(snapshot, accounts=b.accounts, roles=b.frozen_roles(), data_layouts=tuple(known.values()))


def regenerate(
    snapshot: LedgerSnapshot,
    seed_structures: Iterable[SeedStructure],
    layouts: Iterable[AccountDataLayout],
    config: LedgerConfig | None = None,
) -> LedgerSnapshot:
    """Fold new semantics into ``snapshot``; bumps the generation only if something changed."""
    snap = generate_pdas(snapshot, seed_structures, config)
    snap = generate_attacker_controlled(snap, layouts, config)
    if snap is snapshot:
        return snapshot
    gen = snapshot.generation + 1
    return replace(snap, generation=gen, blockhash=blockhash_for(gen))


def build_from_semantics(
    target_program: bytes,
    seed_structures: Iterable[SeedStructure],
    layouts: Iterable[AccountDataLayout],
    config: LedgerConfig | None = None,
) -> LedgerSnapshot:
    """Pure construction from (config, program, accumulated semantics)."""
    return regenerate(build_snapshot(target_program, config), list(seed_structures), list(layouts), config)


class WorkingCopy(MutableMapping[Pubkey, Account]):
    """Copy-on-write view over a snapshot; accounts are immutable so sharing is safe."""

    def __init__(self, snapshot: LedgerSnapshot) -> None:
        self.snapshot = snapshot
        self.base = snapshot.accounts
        self.overlay: dict[Pubkey, Account] = {}

    def __getitem__(self, key: Pubkey) -> Account:
        acct = self.overlay.get(key)
        if acct is None:
            return self.base[key]
        return acct

    def __setitem__(self, key: Pubkey, value: Account) -> None:
        if key not in self.base and key not in self.overlay:
            raise KeyError("working copies cannot create accounts")
        self.overlay[key] = value

    def __delitem__(self, key: Pubkey) -> None:
        raise TypeError("accounts cannot be deleted")

    def __contains__(self, key: object) -> bool:
        return key in self.overlay or key in self.base

    def __iter__(self) -> Iterator[Pubkey]:
        return iter(self.base)

    def __len__(self) -> int:
        return len(self.base)

    def changes(self) -> dict[Pubkey, Account]:
        return {k: v for k, v in self.overlay.items() if self.base.get(k) != v}


def reset_working_copy(snapshot: LedgerSnapshot) -> WorkingCopy:
    return WorkingCopy(snapshot)


def commit(snapshot: LedgerSnapshot, working: WorkingCopy) -> LedgerSnapshot:
    """Publish ``working`` as the next generation."""
    accounts = dict(snapshot.accounts)
    accounts.update(working.changes())
    gen = snapshot.generation + 1
    return replace(snapshot, accounts=accounts, generation=gen, blockhash=blockhash_for(gen))


def snapshot_digest(snapshot: LedgerSnapshot) -> str:
    return hashlib.sha256(snapshot.to_json().encode()).hexdigest()


def describe(snapshot: LedgerSnapshot) -> dict[str, Any]:
    return {
        "generation": snapshot.generation,
        "accounts": len(snapshot.accounts),
        "roles": {r: len(v) for r, v in snapshot.roles.items()},
    }
