"""Bundled assembly programs with their expected oracle signals."""

from __future__ import annotations

import json
from dataclasses import dataclass
from functools import cache
from importlib import resources
from pathlib import Path

from ..asm import Assembled, assemble_file
from ..model import from_b58
from ..oracles import MkcConfig, OracleConfig, OracleKind

CORPUS_DIR = Path(str(resources.files(__package__)))


@dataclass(frozen=True, slots=True)
class CorpusProgram:
    name: str
    source: str
    patched: str | None
    expected: frozenset[OracleKind]
    description: str = ""
    mkc_function: str | None = None
    mkc_key: str | None = None

    @property
    def source_path(self) -> Path:
        return CORPUS_DIR / self.source

    @property
    def patched_path(self) -> Path | None:
        return CORPUS_DIR / self.patched if self.patched else None

    def assemble(self, patched: bool = False) -> Assembled:
        path = self.patched_path if patched else self.source_path
        if path is None:
            raise ValueError(f"{self.name} has no patched variant")
        return _assemble_cached(str(path))

    def mkc_config(self, patched: bool = False) -> MkcConfig | None:
        if self.mkc_function is None or self.mkc_key is None:
            return None
        pc = self.assemble(patched).symbols[self.mkc_function]
        return MkcConfig(function=pc, expected_key=from_b58(self.mkc_key))

    def oracle_config(self, patched: bool = False, **overrides) -> OracleConfig:
        return OracleConfig(mkc=self.mkc_config(patched), **overrides)


@cache
def _assemble_cached(path: str) -> Assembled:
    return assemble_file(path)


@cache
def corpus_manifest() -> tuple[CorpusProgram, ...]:
    raw = json.loads((CORPUS_DIR / "manifest.json").read_text())
    out = []
    for entry in raw["programs"]:
        mkc = entry.get("mkc") or {}
        out.append(
            CorpusProgram(
                name=entry["name"],
                source=entry["source"],
                patched=entry.get("patched"),
                expected=frozenset(OracleKind[k] for k in entry["expected"]),
                description=entry.get("description", ""),
                mkc_function=mkc.get("function"),
                mkc_key=mkc.get("expected_key"),
            )
        )
    return tuple(out)


def get(name: str) -> CorpusProgram:
    for prog in corpus_manifest():
        if prog.name == name:
            return prog
    raise KeyError(name)


__all__ = ["CORPUS_DIR", "CorpusProgram", "corpus_manifest", "get"]
