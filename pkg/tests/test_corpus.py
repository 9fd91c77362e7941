import pytest

from solfuzz.corpus import corpus_manifest, get
from solfuzz.fuzz.campaign import CampaignConfig, run_campaign
from solfuzz.oracles import OracleKind

from conftest import corpus_program

VULNERABLE = [p for p in corpus_manifest() if p.expected]


def test_manifest_names_are_unique():
    names = [p.name for p in corpus_manifest()]
    assert len(names) == len(set(names))
    for required in (
        "withdraw-msc", "level0-moc", "level1-msc", "level2-ib", "level4-acpi",
        "wormhole-mkc", "lamports-theft", "gamble-msc-ib",
    ):
        assert get(required).expected


def test_every_kind_is_exercised_and_guarded():
    covered = set().union(*(p.expected for p in VULNERABLE))
    assert covered == set(OracleKind)
    for p in VULNERABLE:
        assert p.patched_path is not None and p.patched_path.exists()


def test_every_source_assembles():
    for p in corpus_manifest():
        assert p.assemble().text
        if p.patched:
            assert p.assemble(patched=True).text


def test_mkc_config_resolves_to_a_function():
    p = get("wormhole-mkc")
    cfg = p.mkc_config()
    assert cfg is not None
    assert cfg.function in corpus_program("wormhole-mkc").functions


@pytest.mark.parametrize("program", VULNERABLE, ids=lambda p: p.name)
def test_vulnerable_variant_signals_exactly_its_kinds(program):
    cfg = CampaignConfig(seed=1, timeout=None, max_execs=60_000, stop_on=program.expected,
                         oracles=program.oracle_config())
    result = run_campaign(corpus_program(program.name), cfg)
    assert result.kinds == {k.value for k in program.expected}


@pytest.mark.parametrize("program", VULNERABLE, ids=lambda p: p.name)
def test_patched_variant_is_quiet(program):
    cfg = CampaignConfig(seed=2, timeout=None, max_execs=8_000, oracles=program.oracle_config(patched=True))
    result = run_campaign(corpus_program(program.name, patched=True), cfg)
    assert result.reports == []


def test_wormhole_with_unarmed_oracle_is_quiet():
    cfg = CampaignConfig(seed=1, timeout=None, max_execs=5_000)
    result = run_campaign(corpus_program("wormhole-mkc"), cfg)
    assert "MKC" not in result.kinds
