"""Command-line frontend.

Exit codes: 0 clean, 1 load or runtime error, 2 usage error, 3 reports emitted
(``fuzz``) or signal not reproduced (``replay``).
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path
from typing import Any

from . import __version__
from .asm import AsmError, assemble_file, disassemble
from .cfg import cfg_complexity
from .corpus import corpus_manifest
from .fuzz.campaign import CampaignConfig, CampaignResult, run_campaign
from .ledger import LedgerSnapshot
from .model import from_b58
from .oracles import ALL_KINDS, MkcConfig, OracleConfig, parse_kinds
from .report import NotReproduced, ReplayError, load_report, program_hash, replay
from .vm.loader import EbpfProgram, ProgramLoadError, load_program

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_USAGE = 2
EXIT_FINDINGS = 3


class UsageError(Exception):
    pass


def _u64(text: str) -> int:
    value = int(text, 0)
    if not 0 <= value < 1 << 64:
        raise argparse.ArgumentTypeError("seed must fit in 64 bits")
    return value


def _pow2(text: str) -> int:
    value = int(text, 0)
    if value <= 0 or value & (value - 1):
        raise argparse.ArgumentTypeError("coverage size must be a power of two")
    return value


def _positive_float(text: str) -> float:
    value = float(text)
    if value <= 0:
        raise argparse.ArgumentTypeError("must be positive")
    return value


def _pubkey(text: str) -> bytes:
    try:
        key = from_b58(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None
    if len(key) != 32:
        raise argparse.ArgumentTypeError("a pubkey decodes to 32 bytes")
    return key


def read_program(path: str | Path, fmt: str = "auto") -> EbpfProgram:
    path = Path(path)
    if fmt == "auto":
        fmt = "asm" if path.suffix in (".s", ".asm") else "flat"
    if fmt == "asm":
        assembled = assemble_file(path)
        return load_program(assembled.text, syscall_table=assembled.syscall_table)
    return load_program(path.read_bytes(), format=fmt)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="solfuzz", description="Snapshot-based fuzzer for emulated eBPF programs.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    fuzz = sub.add_parser("fuzz", help="run a fuzzing campaign")
    fuzz.add_argument("--program", required=True, help="program file (flat bytecode, ELF, or .s source)")
    fuzz.add_argument("--format", choices=["auto", "flat", "elf", "asm"], default="auto")
    fuzz.add_argument("--timeout", type=_positive_float, default=60.0, help="seconds (default 60)")
    fuzz.add_argument("--max-execs", type=int, default=None, help="stop after this many executions")
    fuzz.add_argument("--seed", type=_u64, default=0)
    fuzz.add_argument("--coverage-size", type=_pow2, default=65536)
    fuzz.add_argument("--oracle", default=None, help="comma-separated oracle kinds (default: all)")
    fuzz.add_argument("--mkc-function", default=None, help="pc of the key-sensitive function (hex)")
    fuzz.add_argument("--mkc-key", type=_pubkey, default=None, help="expected key for --mkc-function (base58)")
    fuzz.add_argument("--acpi-key", type=_pubkey, default=None, help="key of the attacker's program (base58)")
    fuzz.add_argument("--snapshot", default=None, help="initial ledger snapshot JSON")
    fuzz.add_argument("--report-dir", default=None, help="default: $SOLFUZZ_REPORT_DIR or ./solfuzz-reports")
    fuzz.add_argument("--jobs", type=int, default=1, help="independent campaigns with seeds seed..seed+n-1")
    fuzz.add_argument("--stop-on-first", action="store_true", help="stop once every enabled kind has a report")
    fuzz.add_argument("--verbose", "-v", action="store_true")

    rep = sub.add_parser("replay", help="re-execute a report and check the signal")
    rep.add_argument("report")
    rep.add_argument("--snapshot", default=None, help="default: snapshots/ next to the report")
    rep.add_argument("--program", default=None, help="default: the program stored in the snapshot")
    rep.add_argument("--format", choices=["auto", "flat", "elf", "asm"], default="auto")
    rep.add_argument("--verbose", "-v", action="store_true", help="emit the taint trace")

    asm = sub.add_parser("asm", help="assemble source into flat bytecode")
    asm.add_argument("source")
    asm.add_argument("-o", "--output", default=None, help="default: source with .bin suffix")

    dis = sub.add_parser("disasm", help="disassemble flat bytecode")
    dis.add_argument("program")
    dis.add_argument("--format", choices=["auto", "flat", "elf", "asm"], default="auto")

    cfg = sub.add_parser("cfg-complexity", help="static control-flow edge estimate")
    cfg.add_argument("program")
    cfg.add_argument("--format", choices=["auto", "flat", "elf", "asm"], default="auto")

    cor = sub.add_parser("corpus", help="list or build the bundled programs")
    cor.add_argument("action", choices=["list", "build"])
    cor.add_argument("--out", default="corpus-build", help="output directory for build")
    return parser


def _oracle_config(args: argparse.Namespace) -> OracleConfig:
    try:
        enabled = parse_kinds(args.oracle) if args.oracle else ALL_KINDS
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    mkc = None
    if (args.mkc_function is None) != (args.mkc_key is None):
        raise UsageError("--mkc-function and --mkc-key must be given together")
    if args.mkc_function is not None:
        try:
            mkc = MkcConfig(int(args.mkc_function, 16), args.mkc_key)
        except ValueError:
            raise UsageError(f"bad --mkc-function {args.mkc_function!r}") from None
    return OracleConfig(enabled=enabled, mkc=mkc, acpi_key=args.acpi_key)


def _campaign(job: tuple[EbpfProgram, CampaignConfig, bool]) -> CampaignResult:
    program, config, verbose = job
    progress = None
    if verbose:

        def progress(stats: dict[str, Any]) -> None:
            print(f"[seed {config.seed}] {json.dumps(stats, sort_keys=True)}", file=sys.stderr)

    return run_campaign(program, config, progress=progress)


def write_result(out: Path, result: CampaignResult, seed: int) -> None:
    snap_dir = out / "snapshots" / f"seed-{seed}"
    for gen, snap in result.snapshots.items():
        snap_dir.mkdir(parents=True, exist_ok=True)
        (snap_dir / f"gen-{gen}.json").write_text(snap.to_json())
    for report in result.reports:
        (out / report.filename).write_text(report.to_json())


def cmd_fuzz(args: argparse.Namespace) -> int:
    if args.jobs < 1:
        raise UsageError("--jobs must be at least 1")
    oracles = _oracle_config(args)
    try:
        program = read_program(args.program, args.format)
    except (OSError, ProgramLoadError, AsmError) as exc:
        print(f"error: cannot load program: {exc}", file=sys.stderr)
        return EXIT_ERROR
    if oracles.mkc is not None and oracles.mkc.function not in program.functions:
        raise UsageError(f"--mkc-function {oracles.mkc.function:#x} is not a function of the program")
    snapshot = None
    if args.snapshot:
        try:
            snapshot = LedgerSnapshot.from_json(Path(args.snapshot).read_text())
        except (OSError, ValueError, KeyError) as exc:
            print(f"error: cannot read snapshot: {exc}", file=sys.stderr)
            return EXIT_ERROR
    out = Path(args.report_dir or os.environ.get("SOLFUZZ_REPORT_DIR") or "solfuzz-reports")
    out.mkdir(parents=True, exist_ok=True)
    base = CampaignConfig(
        seed=args.seed,
        timeout=args.timeout,
        max_execs=args.max_execs,
        coverage_size=args.coverage_size,
        oracles=oracles,
        snapshot=snapshot,
        stop_on=oracles.enabled if args.stop_on_first else None,
    )
    jobs = [(program, replace(base, seed=(args.seed + i) % (1 << 64)), args.verbose) for i in range(args.jobs)]
    if args.jobs == 1:
        results = [_campaign(jobs[0])]
    else:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            results = list(pool.map(_campaign, jobs))

    all_stats = []
    total = 0
    for (_, config, _), result in zip(jobs, results):
        write_result(out, result, config.seed)
        total += len(result.reports)
        all_stats.append({"seed": config.seed, **result.stats})
        for r in result.reports:
            print(f"{r.kind} at pc {r.pc} (seed {r.seed}, generation {r.generation}) -> {out / r.filename}")
    stats = {
        "program": str(args.program),
        "program_hash": program_hash(program.text),
        "campaigns": all_stats,
        "reports": total,
    }
    (out / "stats.json").write_text(json.dumps(stats, indent=2, sort_keys=True) + "\n")
    summary = ", ".join(f"seed {s['seed']}: {s['executions']} execs, {s['exec_per_sec']}/s" for s in all_stats)
    print(f"{total} report(s); {summary}", file=sys.stderr)
    return EXIT_FINDINGS if total else EXIT_OK


def cmd_replay(args: argparse.Namespace) -> int:
    try:
        report = load_report(args.report)
    except (OSError, ValueError, KeyError, TypeError) as exc:
        print(f"error: cannot read report: {exc}", file=sys.stderr)
        return EXIT_ERROR
    snap_path = (
        Path(args.snapshot)
        if args.snapshot
        else Path(args.report).parent / "snapshots" / f"seed-{report.seed}" / f"gen-{report.generation}.json"
    )
    try:
        snapshot = LedgerSnapshot.from_json(snap_path.read_text())
    except (OSError, ValueError, KeyError) as exc:
        print(f"error: snapshot for generation {report.generation} unavailable: {exc}", file=sys.stderr)
        return EXIT_ERROR
    try:
        if args.program:
            program = read_program(args.program, args.format)
        else:
            program = load_program(snapshot.accounts[snapshot.program_id].data)
        trace = (lambda line: print(line, file=sys.stderr)) if args.verbose else None
        verdict, _ = replay(report, program, snapshot, trace=trace)
    except (OSError, ProgramLoadError, AsmError, ReplayError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    print(verdict)
    return EXIT_FINDINGS if isinstance(verdict, NotReproduced) else EXIT_OK


def cmd_asm(args: argparse.Namespace) -> int:
    try:
        assembled = assemble_file(args.source)
    except (OSError, AsmError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    out = Path(args.output) if args.output else Path(args.source).with_suffix(".bin")
    out.write_bytes(assembled.text)
    print(f"{out}: {len(assembled.text) // 8} instructions")
    return EXIT_OK


def cmd_disasm(args: argparse.Namespace) -> int:
    try:
        program = read_program(args.program, args.format)
    except (OSError, ProgramLoadError, AsmError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    sys.stdout.write(disassemble(program.text, program.syscall_table))
    return EXIT_OK


def cmd_cfg_complexity(args: argparse.Namespace) -> int:
    try:
        program = read_program(args.program, args.format)
    except (OSError, ProgramLoadError, AsmError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    print(json.dumps({"edges": cfg_complexity(program)}))
    return EXIT_OK


def cmd_corpus(args: argparse.Namespace) -> int:
    if args.action == "list":
        for prog in corpus_manifest():
            kinds = ",".join(sorted(k.value for k in prog.expected)) or "-"
            print(f"{prog.name:16} {kinds:10} {prog.description}")
        return EXIT_OK
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for prog in corpus_manifest():
        variants = [(prog.name, False)] + ([(f"{prog.name}-patched", True)] if prog.patched else [])
        for name, patched in variants:
            (out / f"{name}.bin").write_bytes(prog.assemble(patched).text)
            mkc = prog.mkc_config(patched)
            if mkc is not None:
                print(f"{name}.bin  --mkc-function {mkc.function:#x}")
            else:
                print(f"{name}.bin")
    return EXIT_OK


COMMANDS = {
    "fuzz": cmd_fuzz,
    "replay": cmd_replay,
    "asm": cmd_asm,
    "disasm": cmd_disasm,
    "cfg-complexity": cmd_cfg_complexity,
    "corpus": cmd_corpus,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"solfuzz {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
