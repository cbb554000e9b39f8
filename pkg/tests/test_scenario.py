"""Scenario text format: unit parsing, assembly, cross-reference checks."""

import os
from fractions import Fraction

import pytest

from ttnetsim.scenario import (
    ScenarioError,
    load_scenario,
    parse_duration_ps,
    parse_ppm,
    parse_rate_bps,
)
from ttnetsim.tte import SyncRole

SCN_DIR = os.path.join(os.path.dirname(__file__), "..", "src", "ttnetsim",
                       "scenarios")


def _write(tmp_path, text, name="t.scn"):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


MINIMAL = """\
schema_version 1
seed 5
duration 50ms
integration_period 1ms
node sw switch cm tick=250ns
node a es sm tick=250ns drift=100ppm
node b es sc tick=250ns drift=-100ppm
link sw a rate=100M prop=100ns
link sw b rate=100M prop=100ns
ttflow t1 sender=a receivers=b payload=100 period=1ms offsets=200us
"""


# --- unit parsing ----------------------------------------------------------

def test_parse_duration_units():
    assert parse_duration_ps("250ps") == 250
    assert parse_duration_ps("100ns") == 100_000
    assert parse_duration_ps("3.072ms") == 3_072_000_000
    assert parse_duration_ps("5s") == 5 * 10**12
    assert parse_duration_ps("1.5us") == 1_500_000


def test_parse_duration_rejects_junk():
    for bad in ("", "5", "ms", "-1ms", "0.3ps"):
        with pytest.raises(ValueError):
            parse_duration_ps(bad)


def test_parse_rate_suffixes():
    assert parse_rate_bps("1M") == 1_000_000
    assert parse_rate_bps("100M") == 100_000_000
    assert parse_rate_bps("1G") == 10**9
    assert parse_rate_bps("125000") == 125_000


def test_parse_ppm_is_exact_fraction():
    assert parse_ppm("200ppm") == Fraction(200)
    assert parse_ppm("-200ppm") == Fraction(-200)
    assert parse_ppm("12.5ppm") == Fraction(25, 2)


# --- assembly --------------------------------------------------------------

def test_minimal_scenario_round_trip(tmp_path):
    sc = load_scenario(_write(tmp_path, MINIMAL))
    assert sc.name == "t"
    assert sc.seed == 5
    assert sc.duration_ps == 50_000_000_000
    cfg = sc.config
    assert [n.name for n in cfg.nodes] == ["sw", "a", "b"]
    assert cfg.nodes[0].role is SyncRole.CM
    assert cfg.sync.integration_period_ps == 1_000_000_000
    # defaults fill in when the file stays silent
    assert cfg.sync.guard_margin_ps == 2_000_000
    assert cfg.sync.be_queue_cap == 64
    (f,) = cfg.tt_flows
    assert f.flow_id == "t1"
    assert f.receivers == ("b",)
    assert f.offsets_ps == (200_000_000,)


def test_comments_and_blank_lines_ignored(tmp_path):
    noisy = "# banner\n\n" + MINIMAL.replace(
        "seed 5", "seed 5   # trailing comment")
    sc = load_scenario(_write(tmp_path, noisy))
    assert sc.seed == 5


def test_sweep_directive(tmp_path):
    sc = load_scenario(_write(
        tmp_path, MINIMAL + "sweep integration_period 1ms,3ms,10ms\n"))
    assert sc.sweep == {"integration_period": ["1ms", "3ms", "10ms"]}


def test_missing_schema_version_rejected(tmp_path):
    body = MINIMAL.replace("schema_version 1\n", "")
    with pytest.raises(ScenarioError) as ei:
        load_scenario(_write(tmp_path, body))
    assert any("schema_version" in e for e in ei.value.errors)


# --- cross-reference validation --------------------------------------------

def test_unknown_receiver_named_with_line(tmp_path):
    body = MINIMAL.replace("receivers=b", "receivers=ghost")
    with pytest.raises(ScenarioError) as ei:
        load_scenario(_write(tmp_path, body))
    (err,) = [e for e in ei.value.errors if "ghost" in e]
    assert "t1" in err and err.startswith("line ")


def test_duplicate_node_rejected(tmp_path):
    body = MINIMAL + "node a es sc tick=250ns\n"
    with pytest.raises(ScenarioError) as ei:
        load_scenario(_write(tmp_path, body))
    assert any("duplicate node a" in e for e in ei.value.errors)


def test_exactly_one_compression_master(tmp_path):
    body = MINIMAL.replace("node a es sm", "node a switch cm")
    with pytest.raises(ScenarioError) as ei:
        load_scenario(_write(tmp_path, body))
    assert any("cm role" in e for e in ei.value.errors)


def test_flow_period_must_ride_integration_grid(tmp_path):
    body = MINIMAL.replace("period=1ms offsets=200us",
                           "period=1.5ms offsets=200us")
    with pytest.raises(ScenarioError) as ei:
        load_scenario(_write(tmp_path, body))
    assert any("multiple of the integration period" in e
               for e in ei.value.errors)


def test_offset_outside_period_rejected(tmp_path):
    body = MINIMAL.replace("offsets=200us", "offsets=1.2ms")
    with pytest.raises(ScenarioError) as ei:
        load_scenario(_write(tmp_path, body))
    assert any("outside the period" in e for e in ei.value.errors)


def test_link_endpoint_must_exist(tmp_path):
    body = MINIMAL + "link sw ghost rate=100M prop=100ns\n"
    with pytest.raises(ScenarioError) as ei:
        load_scenario(_write(tmp_path, body))
    assert any("endpoint ghost" in e for e in ei.value.errors)


def test_all_errors_reported_at_once(tmp_path):
    body = (MINIMAL
            + "node a es sc tick=250ns\n"
            + "link sw ghost rate=100M prop=100ns\n")
    with pytest.raises(ScenarioError) as ei:
        load_scenario(_write(tmp_path, body))
    assert len(ei.value.errors) >= 2


# --- bundled scenarios -----------------------------------------------------

def test_bundled_scenarios_load_cleanly():
    names = sorted(f for f in os.listdir(SCN_DIR) if f.endswith(".scn"))
    assert names, "no bundled scenarios found"
    for n in names:
        load_scenario(os.path.join(SCN_DIR, n))


def test_fig1_topology_shape():
    sc = load_scenario(os.path.join(SCN_DIR, "fig1.scn"))
    cfg = sc.config
    roles = [n.role for n in cfg.nodes]
    kinds = [n.kind for n in cfg.nodes]
    assert kinds.count("switch") == 2
    assert kinds.count("gateway") == 4
    assert len(cfg.buses) == 4
    assert roles.count(SyncRole.CM) == 1
    # every bus hangs off a gateway that also speaks Ethernet
    gw_names = {n.name for n in cfg.nodes if n.kind == "gateway"}
    for b in cfg.buses:
        assert gw_names & {c.name for c in b.nodes}
