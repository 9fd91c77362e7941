"""Edge coverage: ``(src + dst) mod s`` into saturating 8-bit counters."""

from __future__ import annotations

from collections.abc import Iterable, Mapping


def is_power_of_two(n: int) -> bool:
    return n > 0 and n & (n - 1) == 0


def coverage_index(src_pc: int, dst_pc: int, s: int) -> int:
    if not is_power_of_two(s):
        raise ValueError(f"coverage size must be a power of two, got {s}")
    return (src_pc + dst_pc) % s


class CoverageMap:
    """Per-execution hit counters plus the campaign-wide seen-edge bitmap."""

    def __init__(self, size: int = 65536) -> None:
        if not is_power_of_two(size):
            raise ValueError(f"coverage size must be a power of two, got {size}")
        self.size = size
        self.hits = bytearray(size)
        self.seen = bytearray(size)
        self.seen_count = 0

    def reset_hits(self) -> None:
        self.hits = bytearray(self.size)

    def record(self, index: int, count: int = 1) -> None:
        self.hits[index] = min(255, self.hits[index] + count)

    def load(self, hits: Mapping[int, int]) -> None:
        """Replace the per-execution counters with ``hits`` (index -> raw count)."""
        self.reset_hits()
        for i, c in hits.items():
            self.hits[i] = min(255, c)

    def novel(self, indices: Iterable[int]) -> list[int]:
        """Indices not yet in the seen bitmap, in first-touch order."""
        seen = self.seen
        return [i for i in indices if not seen[i]]

    def merge(self, indices: Iterable[int]) -> int:
        """Mark ``indices`` as seen; returns how many were new."""
        new = 0
        seen = self.seen
        for i in indices:
            if not seen[i]:
                seen[i] = 1
                new += 1
        self.seen_count += new
        return new

    def covered(self) -> list[int]:
        return [i for i, b in enumerate(self.seen) if b]
