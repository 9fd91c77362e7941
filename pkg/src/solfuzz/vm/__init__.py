"""Sandboxed eBPF interpreter."""

from .events import EventRecorder, FanOut, VmObserver
from .interpreter import (
    DEFAULT_BUDGET,
    HEAP_START,
    INPUT_START,
    PROGRAM_START,
    STACK_START,
    ExecutionOutcome,
    Status,
    Vm,
    execute,
)
from .loader import (
    EbpfProgram,
    MalformedInstruction,
    ProgramLoadError,
    UnknownSyscall,
    UnresolvableTarget,
    load_program,
)

__all__ = [
    "DEFAULT_BUDGET",
    "HEAP_START",
    "INPUT_START",
    "PROGRAM_START",
    "STACK_START",
    "EbpfProgram",
    "EventRecorder",
    "ExecutionOutcome",
    "FanOut",
    "MalformedInstruction",
    "ProgramLoadError",
    "Status",
    "UnknownSyscall",
    "UnresolvableTarget",
    "Vm",
    "VmObserver",
    "execute",
    "load_program",
]
