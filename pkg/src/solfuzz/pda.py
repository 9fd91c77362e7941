"""Program-derived address derivation with a pluggable curve predicate."""

from __future__ import annotations

import hashlib
from collections.abc import Callable, Sequence

PDA_MARKER = b"ProgramDerivedAddress"
MAX_SEEDS = 16
MAX_SEED_LEN = 32

CurvePredicate = Callable[[bytes], bool]


class PdaError(ValueError):
    pass


def surrogate_on_curve(key: bytes) -> bool:
    """Deterministic stand-in for the ed25519 point check."""
    return hashlib.sha256(key).digest()[0] < 128


def _check_seeds(seeds: Sequence[bytes]) -> None:
    if len(seeds) > MAX_SEEDS:
        raise PdaError(f"too many seeds: {len(seeds)} > {MAX_SEEDS}")
    for seed in seeds:
        if len(seed) > MAX_SEED_LEN:
            raise PdaError(f"seed longer than {MAX_SEED_LEN} bytes")


def derive_candidate(seeds: Sequence[bytes], program_id: bytes) -> bytes:
    """Hash of seeds, program id and marker, without the curve check."""
    h = hashlib.sha256()
    for seed in seeds:
        h.update(seed)
    h.update(program_id)
    h.update(PDA_MARKER)
    return h.digest()


def create_program_address(
    seeds: Sequence[bytes], program_id: bytes, on_curve: CurvePredicate = surrogate_on_curve
) -> bytes | None:
    """Derived key for the given seeds (bump already included), or None when it lands on the curve."""
    _check_seeds(seeds)
    key = derive_candidate(seeds, program_id)
    return None if on_curve(key) else key


def find_program_address(
    seeds: Sequence[bytes], program_id: bytes, on_curve: CurvePredicate = surrogate_on_curve
) -> tuple[bytes, int] | None:
    """Search bumps 255 down to 0; first off-curve key wins."""
    if len(seeds) >= MAX_SEEDS:
        raise PdaError(f"too many seeds: {len(seeds)} + bump > {MAX_SEEDS}")
    _check_seeds(seeds)
    for bump in range(255, -1, -1):
        key = derive_candidate([*seeds, bytes([bump])], program_id)
        if not on_curve(key):
            return key, bump
    return None
