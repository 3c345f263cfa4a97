"""Scenario file tests: parsing, validation, source functions, wiring."""

import pytest

from sensefs.scenario import (
    ScenarioError, load_scenario, make_source, parse_scenario,
)

from conftest import ZOO, FACTORY

MINIMAL = """
[scenario]
seed = 7
warmup = 40

[cluster c1]

[sensor s1]
cluster = c1
source = constant 20.5
tag animal = snake

[sensor s2]
cluster = c1
kind = position
position = 3 4
"""


def test_parse_minimal():
    cfg = parse_scenario(MINIMAL)
    assert cfg.seed == 7 and cfg.warmup == 40
    assert cfg.clusters == {"c1": "c1.head"}
    assert set(cfg.sensors) == {"s1", "s2"}
    assert cfg.sensors["s1"].tags == {"animal": "snake"}
    assert cfg.sensors["s2"].position == (3.0, 4.0)


def test_error_carries_line_number():
    with pytest.raises(ScenarioError, match="line 3"):
        parse_scenario("[scenario]\nseed = 1\nnot a pair\n")
    with pytest.raises(ScenarioError, match="line 2: bad value"):
        parse_scenario("[scenario]\nseed = banana\n")


def test_duplicate_ids_rejected():
    with pytest.raises(ScenarioError, match="duplicate sensor"):
        parse_scenario("[sensor a]\n[sensor a]\n")
    with pytest.raises(ScenarioError, match="duplicate cluster"):
        parse_scenario("[cluster a]\n[cluster a]\n")


def test_dangling_cluster_reference():
    with pytest.raises(ScenarioError, match="unknown cluster"):
        parse_scenario("[sensor s1]\ncluster = ghost\n")


def test_unknown_keys_rejected():
    with pytest.raises(ScenarioError, match="unknown"):
        parse_scenario("[scenario]\nbogus = 1\n")
    with pytest.raises(ScenarioError, match="outside any known section"):
        parse_scenario("stray = 1\n")


def test_comments_and_blanks_ignored():
    cfg = parse_scenario("# hello\n\n[scenario]\nseed = 3  # trailing\n")
    assert cfg.seed == 3


def test_source_constant():
    f = make_source("constant 20.5")
    assert f(0) == f(1000) == 20.5


def test_source_constant_position_pair():
    f = make_source("constant 3 4", kind="position")
    assert f(0) == (3.0, 4.0)
    with pytest.raises(ScenarioError):
        make_source("constant 3 4")    # scalar kinds take one value


def test_source_ramp():
    f = make_source("ramp 10 0.5")
    assert f(0) == 10.0 and f(4) == 12.0


def test_source_table_step_function():
    f = make_source("table 0:1 100:2 200:3")
    assert f(0) == 1 and f(99) == 1 and f(100) == 2 and f(250) == 3


def test_source_unknown():
    with pytest.raises(ScenarioError):
        make_source("noise 1")


def test_link_overrides_apply_both_ways():
    cfg = parse_scenario(MINIMAL + "\n[link c1.head s1]\nlatency = 9\n")
    sim_text = None
    from sensefs.scenario import Simulation
    sim = Simulation(cfg)
    assert sim.net.link_for("c1.head", "s1").latency == 9
    assert sim.net.link_for("s1", "c1.head").latency == 9
    assert sim.net.link_for("s1", "s2").latency == cfg.default_link.latency


def test_simulation_wiring():
    sim = load_scenario(MINIMAL)
    sim.start()
    client = sim.new_client()
    names = [s.name for s in client.ls(("net", "c1.head"), "sensors")]
    assert names == ["s1", "s2"]
    assert client.read(("net", "c1.head"), "sensors/s1/reading") == b"20.500000\n"


def test_bundled_scenarios_parse():
    for path in (ZOO, FACTORY):
        with open(path) as fh:
            cfg = parse_scenario(fh.read())
        assert cfg.clusters
