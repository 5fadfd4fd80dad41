import dataclasses
from importlib import resources

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from adaptsync.control import ConfigError
from adaptsync.scenario import (BUNDLED, ScenarioError, dump_scenario, load_scenario,
                                parse_scenario, scenario_to_dict)


def demo_text(name="theorem1_demo"):
    return resources.files("adaptsync").joinpath("scenarios", f"{name}.yaml").read_text()


def line_of(text, needle):
    return next(k for k, line in enumerate(text.splitlines(), start=1) if needle in line)


@pytest.mark.parametrize("name", BUNDLED)
def test_bundled_scenarios_pass_assumptions(name):
    sc = load_scenario(name)
    rep = sc.assumptions()
    assert rep["all_pass"], rep["failures"]
    assert rep["joint_connectivity"]["holds"]


def test_theorem1_demo_shape():
    sc = load_scenario("theorem1_demo")
    assert [f.order for f in sc.followers] == [1, 2, 2, 3]
    assert np.allclose(sc.L0, [10.0, 0.0])
    # no single graph connects everyone
    assert all(len(g.edges) == 1 for g in sc.schedule.graphs)


def test_load_from_path(tmp_path):
    p = tmp_path / "mine.yaml"
    p.write_text(demo_text())
    assert load_scenario(p).name == "theorem1_demo"


def test_unknown_scenario():
    with pytest.raises(ConfigError, match="no scenario"):
        load_scenario("nope_demo")


def test_non_hurwitz_beta_named_per_agent():
    text = demo_text().replace("beta: [1]", "beta: [-1]", 1)
    with pytest.raises(ConfigError, match="agent 2: beta polynomial not Hurwitz"):
        parse_scenario(text)


def test_switching_not_on_grid():
    text = demo_text().replace("step: 0.001", "step: 0.003")
    with pytest.raises(ConfigError, match="not a multiple of step"):
        parse_scenario(text)


def test_disturbance_breakpoint_not_on_grid():
    text = demo_text("disturbance_demo").replace("period: 4.0", "period: 4.0005", 1)
    with pytest.raises(ConfigError, match="agent 1: disturbance breakpoint"):
        parse_scenario(text)


def test_non_spd_lambda_named_per_agent():
    text = demo_text().replace("    k: 2\n    phi: \"abs(x1)\"",
                               "    k: 2\n    Lambda: [[-1]]\n    phi: \"abs(x1)\"", 1)
    with pytest.raises(ConfigError, match="positive definite"):
        parse_scenario(text)


def test_schema_error_reports_line():
    text = demo_text().replace("  mu1: 1", "  mu1: fast")
    with pytest.raises(ScenarioError) as info:
        parse_scenario(text)
    assert info.value.line == line_of(text, "mu1: fast")
    assert "mu1" in str(info.value)


def test_unknown_key_reports_line():
    text = demo_text().replace("    k: 2\n", "    k: 2\n    gain_typo: 3\n", 1)
    with pytest.raises(ScenarioError, match="unknown key 'gain_typo'") as info:
        parse_scenario(text)
    assert info.value.line == line_of(text, "gain_typo")


def test_missing_section_reports_key():
    text = demo_text().replace("  F: [1, 0]\n", "")
    with pytest.raises(ScenarioError, match="leader.F"):
        parse_scenario(text)


def test_invalid_yaml_reports_line():
    text = demo_text().replace("  mu2: 1", "  mu2: [1")
    with pytest.raises(ScenarioError, match="invalid YAML") as info:
        parse_scenario(text)
    assert info.value.line is not None


def test_bad_expression_named():
    text = demo_text().replace('regressor: ["x1"]', 'regressor: ["x3"]', 1)
    with pytest.raises(ConfigError, match="x3"):
        parse_scenario(text)


def test_weighted_edges_rejected():
    text = demo_text().replace('G1: ["0 -> 1"]', 'G1: [{edge: "0 -> 1", weight: 2}]')
    with pytest.raises(ScenarioError, match="weighted"):
        parse_scenario(text)


@pytest.mark.parametrize("name", BUNDLED)
def test_load_dump_load_round_trip(name):
    sc = load_scenario(name)
    again = parse_scenario(dump_scenario(sc), name)
    assert scenario_to_dict(again) == scenario_to_dict(sc)
    assert again.schedule == sc.schedule
    assert np.array_equal(again.L0, sc.L0)


@given(st.floats(0.1, 50), st.floats(1e-4, 1e-1), st.integers(0, 2**31 - 1))
def test_round_trip_with_overrides(k, eps, seed):
    sc = load_scenario("theorem1_demo")
    fs = [dataclasses.replace(f, k_gain=k) for f in sc.followers]
    sc = sc.replace(followers=tuple(fs), run=dataclasses.replace(sc.run, epsilon=eps))
    sc = sc.with_seed(seed)
    again = parse_scenario(dump_scenario(sc), sc.name)
    assert scenario_to_dict(again) == scenario_to_dict(sc)


def test_with_seed_offsets_per_agent():
    text = demo_text().replace(
        "    x0: [0.5]\n",
        "    x0: [0.5]\n    disturbance: {kind: seeded_bounded_noise, amplitude: 1,"
        " hold_time: 0.5, seed: 0}\n", 1)
    sc = parse_scenario(text).with_seed(42)
    assert sc.seeds() == {"1": 42}


def test_leader_only_scenario():
    text = demo_text()
    head = text[:text.index("graphs:")]
    text = head + "graphs:\n  G0: []\nschedule:\n  intervals: [[0, G0]]\nfollowers: []\n" \
        "run:\n  step: 0.001\n  duration: 1\n"
    sc = parse_scenario(text)
    assert sc.N == 0
