import json
from fractions import Fraction

import numpy as np
import pytest
import yaml
from hypothesis import given, settings, strategies as st

from ucbqr.experiments import (ScenarioError, load_scenario, parse_scenario, prepare,
                               pseudo_regret, regret_decomposition_report, run_experiment,
                               table1_summary)
from ucbqr.experiments.cli import main
from ucbqr.experiments.metrics import mean_ci
from ucbqr.experiments.runner import SERIES, episode_ends
from ucbqr.experiments.scenario import bundled_scenarios
from ucbqr.lp_actions import dual_solution

SMALL_DOC = {
    "name": "tiny",
    "network": {"arrival_rates": [10, 10], "service_rates": [15, 12],
                "lines": [[1, 1], [1, 2], [2, 1], [2, 2]]},
    "theta": [[1, 1, 0.4], [1, 2, 0.1], [2, 1, 0.3], [2, 2, 0.01]],
    "policies": {"names": ["ucbqr", "oracle", "fcfs_alis", "greedy", "random"],
                 "alpha": 10, "h0": 10},
    "run": {"horizon": 60, "replications": 2, "seed": 7, "grid_points": 20, "epsilon": 0.5},
}


def _doc(**patch):
    doc = json.loads(json.dumps(SMALL_DOC))
    for path, value in patch.items():
        d = doc
        keys = path.split("__")
        for k in keys[:-1]:
            d = d[k]
        if value is None:
            del d[keys[-1]]
        else:
            d[keys[-1]] = value
    return doc


def test_bundled_scenarios_load():
    names = bundled_scenarios()
    assert {"small", "changing_theta", "complex_initial", "complex_min_discrepancy",
            "complex_balanced"} <= set(names)
    for n in names:
        sc = load_scenario(n)
        assert sc.epsilon < 2 and sc.horizon > 0
    sc = load_scenario("changing_theta")
    assert sc.changes[0].at(sc.horizon) == pytest.approx(sc.horizon / 3)
    assert sc.changes[0].line == (0, 1)


@pytest.mark.parametrize("patch, match", [
    ({"network__lines": [[1, 1], [2, 2], [1, 2]]}, "lines"),
    ({"network__arrival_rates": [20, 20]}, "unstable"),
    ({"network__service_rates": [15, -1]}, "positive"),
    ({"theta": [[1, 1, 0.4]]}, "theta"),
    ({"theta": [[1, 1, 0.4], [1, 2, 0.1], [2, 1, 0.3], [2, 3, 0.01]]}, "not a compatibility line"),
    ({"theta": [[1, 1, 0.4], [1, 2, 0.1], [2, 1, 0.3], [2, 2, 1.5]]}, "theta"),
    ({"policies__names": ["ucbqr", "lifo"]}, "unknown policy"),
    ({"policies__beta": 1}, "beta"),
    ({"policies__refresh": "some"}, "refresh"),
    ({"run__epsilon": 2}, "insensitivity bound"),
    ({"run__epsilon": -0.1}, "nonnegative"),
    ({"run__horizon": 0}, "horizon"),
    ({"run__replications": 0}, "replications"),
    ({"run": None}, "missing"),
    ({"extra": 1}, "unknown section"),
    ({"schedule": [{"line": [1, 2], "mean": 0.5}]}, "exactly one"),
    ({"schedule": [{"line": [1, 2], "mean": 0.5, "time": 100}]}, "outside"),
    ({"action_order": [[[1, 1], [1, 2]]]}, "action_order"),
])
def test_invalid_scenarios(patch, match):
    with pytest.raises(ScenarioError, match=match):
        parse_scenario(_doc(**patch))


def test_exact_fraction_parsing():
    sc = parse_scenario(_doc(schedule=[{"line": [1, 2], "mean": "1/2", "fraction": "1/3"}]))
    assert sc.changes[0].mean == Fraction(1, 2)
    assert sc.changes[0].fraction == Fraction(1, 3)
    assert sc.theta.mean((0, 0)) == Fraction(2, 5)


def test_cli_exit_codes(tmp_path, capsys):
    bad = tmp_path / "bad.yaml"
    bad.write_text("network: [unclosed\n")
    assert main(["analyze", str(bad)]) == 2
    unstable = tmp_path / "unstable.yaml"
    unstable.write_text(yaml.safe_dump(_doc(network__arrival_rates=[20, 20])))
    assert main(["analyze", str(unstable)]) == 2
    assert main(["analyze", str(tmp_path / "missing.yaml")]) == 2
    big_eps = tmp_path / "eps.yaml"
    big_eps.write_text(yaml.safe_dump(_doc(run__epsilon=3)))
    assert main(["simulate", str(big_eps), "--out", str(tmp_path / "o")]) == 2
    assert main(["analyze", "complex_min_discrepancy", "--json", str(tmp_path / "d.json")]) == 3
    err = capsys.readouterr().err
    assert "degenerate" in err and "invalid scenario" in err


def test_cli_analyze_json(tmp_path, capsys):
    out = tmp_path / "a.json"
    assert main(["analyze", "small", "--json", str(out)]) == 0
    data = json.loads(out.read_text())
    assert data["num_actions"] == 6
    assert data["optimal_action"] == 2
    assert data["max_epsilon"] == 2
    assert data["enumeration"] == {"candidates": 15, "bases": 12, "infeasible": 6, "degenerate": 0}
    assert data["dual"]["suboptimal_lines"] == ["(1,2)"]
    assert data["lower_bound_constant"] == pytest.approx(19.0493404592, rel=1e-9)
    assert "optimal action 2" in capsys.readouterr().out


def test_cli_simulate_and_summarize(tmp_path, capsys):
    scen = tmp_path / "tiny.yaml"
    scen.write_text(yaml.safe_dump(SMALL_DOC))
    out = tmp_path / "res"
    assert main(["simulate", str(scen), "--out", str(out), "--reps", "1", "--horizon", "10"]) == 0
    s = json.loads((out / "summary.json").read_text())
    assert s["replications"] == 1 and s["horizon"] == 10
    assert set(s["policies"]) == set(SMALL_DOC["policies"]["names"])
    for name in s["policies"]:
        for ser in SERIES:
            lines = (out / name / f"{ser}.csv").read_text().splitlines()
            assert lines[0] == "time,mean,ci_halfwidth"
            assert float(lines[-1].split(",")[0]) == 10.0
        assert (out / name / "departures_2_1.csv").exists()
    freq = (out / "ucbqr" / "action_frequencies.csv").read_text().splitlines()
    assert freq[0] == "episode,action_index,count"
    assert not (out / "greedy" / "action_frequencies.csv").exists()
    text = capsys.readouterr().out
    assert "fcfs_alis" in text and "E[N]" in text
    assert main(["summarize", str(out)]) == 0
    assert main(["summarize", str(tmp_path / "nothing")]) == 2


def test_outputs_are_deterministic(tmp_path):
    sc = parse_scenario(SMALL_DOC)
    run_experiment(sc, tmp_path / "a")
    run_experiment(sc, tmp_path / "b")
    files = sorted(p.relative_to(tmp_path / "a") for p in (tmp_path / "a").rglob("*") if p.is_file())
    assert len(files) > 20
    for f in files:
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes(), f


def test_parallel_workers_match_serial():
    sc = parse_scenario(_doc(policies__names=["ucbqr", "random"]))
    a = run_experiment(sc)
    b = run_experiment(sc, workers=2)
    for name in sc.policies:
        assert np.array_equal(a.policies[name].departures, b.policies[name].departures)


def test_common_arrivals_across_policies():
    sc = parse_scenario(SMALL_DOC)
    res = run_experiment(sc)
    totals = {n: r.departures[:, -1].sum(axis=-1) + r.series["system_size"][:, -1]
              for n, r in res.policies.items()}
    # same arrival stream: arrivals = departures + in system, identical for every policy
    ref = totals["ucbqr"]
    for t in totals.values():
        assert np.array_equal(t, ref)


def test_oracle_has_no_suboptimal_departures_term():
    sc = parse_scenario(_doc(policies__names=["oracle"], run__horizon=300))
    res = run_experiment(sc).policies["oracle"]
    assert np.all(res.series["term_I"] >= 0)
    # the oracle only uses lines of the optimal action; departures on the
    # suboptimal lines come solely from the empty start
    assert np.all(res.series["term_I"] == 0)
    assert res.decomposition_error < 1e-9


def test_episode_times_in_grid():
    prep = prepare(parse_scenario(SMALL_DOC))
    ends = episode_ends(prep.episodes, 60.0)
    assert ends[-1] == 60.0 and np.all(np.diff(ends) > 0)
    assert set(ends) <= set(prep.times)
    assert prep.times[0] == 0 and np.all(np.diff(prep.times) > 0)


def test_piecewise_regret_pieces():
    prep = prepare(load_scenario("changing_theta"))
    assert len(prep.pieces) == 2
    a, b = prep.pieces
    assert a.end == b.start == pytest.approx(10000 / 3)
    assert (a.optimal, b.optimal) == (1, 5)


def test_pseudo_regret_trivial(small_net, small_theta, small_actions):
    best = small_actions[1]
    x = np.array([float(v) for v in best.rate_vector()])
    assert pseudo_regret(x * 50, 50, best, small_theta.means) == pytest.approx(0, abs=1e-9)
    assert pseudo_regret(np.zeros(4), 2, best, small_theta.means) == pytest.approx(2 * 5.405)


@settings(max_examples=80, deadline=None)
@given(st.lists(st.integers(0, 10**6), min_size=4, max_size=4), st.floats(0, 1e5))
def test_decomposition_identity(D, t):
    from conftest import SMALL_LINES
    from ucbqr.lp_actions import enumerate_actions
    from ucbqr.model import CompatibilityNetwork, PayoffModel
    net = CompatibilityNetwork([10, 10], [15, 12], SMALL_LINES)
    theta = PayoffModel(net, ["0.4", "0.1", "0.3", "0.01"])
    eps = Fraction(1, 2)
    acts = enumerate_actions(net, eps)
    best = max(acts, key=lambda a: sum(float(x) * float(th) for x, th in
                                       zip(a.rate_vector(), theta.means)))
    cert = dual_solution(best, theta, net, eps)
    dec = regret_decomposition_report(D, t, cert, net, eps)
    R = pseudo_regret(D, t, best, theta.means)
    assert dec.total == pytest.approx(R, rel=1e-9, abs=1e-6 * (1 + t + sum(D)))


def test_table1_summary():
    assert table1_summary([], [], 0.0).mean == 0
    assert table1_summary([5.0], [30.0], 0.0).std_within == 0
    s = table1_summary([10.0, 30.0], [100.0, 1000.0], 10.0)
    assert s.mean == pytest.approx(2.0)
    assert s.std_between == pytest.approx(np.std([1.0, 3.0], ddof=1))
    assert s.std_within == pytest.approx((np.sqrt(10 - 1) + np.sqrt(100 - 9)) / 2)


def test_mean_ci():
    m, c = mean_ci(np.array([[1.0], [3.0]]))
    assert m[0] == 2 and c[0] == pytest.approx(1.959963984540054 * np.sqrt(2) / np.sqrt(2))
    m, c = mean_ci(np.array([[4.0]]))
    assert c[0] == 0
