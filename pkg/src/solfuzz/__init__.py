"""Coverage-guided fuzzing of Solana-style eBPF programs with runtime bug oracles."""

__version__ = "0.1.0"
