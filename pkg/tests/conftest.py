from __future__ import annotations

from collections.abc import Sequence

import pytest

from solfuzz import corpus
from solfuzz.ledger import LedgerSnapshot
from solfuzz.model import AccountMeta, Instruction, Transaction
from solfuzz.txgen import replay_encode
from solfuzz.vm.loader import EbpfProgram, load_program


def corpus_program(name: str, patched: bool = False) -> EbpfProgram:
    assembled = corpus.get(name).assemble(patched)
    return load_program(assembled.text, syscall_table=assembled.syscall_table)


def encode_tx(snap: LedgerSnapshot, payer: str, metas: Sequence[AccountMeta], data: bytes) -> bytes:
    """Fuzz bytes that decode to the given single-instruction transaction."""
    keys = snap.selectable_keys
    signer = snap.user if payer == "user" else snap.attacker
    tx = Transaction(payer, (signer,), keys.blockhash, (), (Instruction(snap.program_id, tuple(metas), data),))
    return replay_encode(tx, keys)


def meta(key: bytes, signer: bool = False, writable: bool = True) -> AccountMeta:
    return AccountMeta(key, signer, writable)


@pytest.fixture(scope="session")
def withdraw_program() -> EbpfProgram:
    return corpus_program("withdraw-msc")
