import math
import warnings
from fractions import Fraction
from itertools import combinations

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.optimize import linprog

from ucbqr.lp_actions import (DegenerateInstanceError, DualInfeasibleError, ForestError, LPError,
                              action_gaps, action_reward, alpha_lower_bound, basic_solution,
                              build_forest, c_beta, dual_solution, enumerate_actions,
                              enumerate_bases, episode_length, h0_lower_bound, is_spanning_forest,
                              lower_bound_constant, max_epsilon, optimal_action)
from ucbqr.model import CompatibilityNetwork

import oracles
from conftest import SMALL_LABELS, random_network

F = Fraction


def test_small_system_rates_and_report(small_net):
    acts, rep = enumerate_actions(small_net, F(1, 2), with_report=True)
    assert (rep.candidates, rep.bases, rep.infeasible, rep.degenerate, rep.actions) == (15, 12, 6, 0, 6)
    assert {a.support for a in acts} == {frozenset(s) for s in SMALL_LABELS}


def test_canonical_order_is_stable(small_net):
    a = enumerate_actions(small_net, F(1, 2))
    b = enumerate_actions(small_net, F(1, 2))
    assert [x.support for x in a] == [x.support for x in b]
    keys = [(tuple(sorted(x.basis.lines)), x.basis.roots) for x in a]
    assert keys == sorted(keys)
    assert [x.index for x in a] == list(range(len(a)))


def test_basic_solution_chain(small_net):
    # root server 2 -> type 2 -> server 1 -> type 1
    basis = build_forest(small_net, [(1, 1), (1, 0), (0, 0)], [1])
    assert basis.parent == (2, 3, 1, -1)
    sol = basic_solution(basis, small_net, F(1, 2))
    rates = dict(zip(small_net.lines, sol.rates))
    assert rates == {(0, 0): 10, (0, 1): 0, (1, 0): F(9, 2), (1, 1): F(11, 2)}
    assert sol.slacks == (0, 6)


def test_basic_solution_two_trees(small_net):
    sol = basic_solution(build_forest(small_net, [(0, 0), (1, 1)], [0, 1]), small_net, F(1, 2))
    assert dict(zip(small_net.lines, sol.rates)) == {(0, 0): 10, (0, 1): 0, (1, 0): 0, (1, 1): 10}
    assert sol.slacks == (F(9, 2), F(3, 2))


def test_basic_solution_degenerate_boundary():
    net = CompatibilityNetwork([F(29, 2), 10], [15, 12], [(0, 0), (0, 1), (1, 0), (1, 1)])
    sol = basic_solution(build_forest(net, [(0, 0), (1, 1)], [0, 1]), net, F(1, 2))
    assert sol.slacks[0] == 0
    assert sol.feasible(net) and not sol.nondegenerate(net)


def test_forest_validation(small_net):
    with pytest.raises(ForestError, match="cycle"):
        build_forest(small_net, [(0, 0), (0, 1), (1, 0), (1, 1)], [])
    with pytest.raises(ForestError, match="same tree"):
        build_forest(small_net, [(0, 0), (0, 1)], [0, 1])
    with pytest.raises(ForestError, match="same tree"):
        build_forest(small_net, [(0, 0), (1, 1)], [0, 0])
    with pytest.raises(ForestError):
        build_forest(small_net, [(0, 0)], [0, 1, 1])
    assert not is_spanning_forest(small_net, [(0, 0), (0, 1)], [0, 1])


def test_max_epsilon(small_net, big_net):
    # the tightest subtree is server 2 alone serving type 2: (12 - 10) / 1
    assert max_epsilon(small_net) == 2
    assert max_epsilon(big_net) > F(1, 20)
    with pytest.raises(LPError):
        enumerate_actions(small_net, 2)
    with warnings.catch_warnings(record=True) as w:
        warnings.simplefilter("always")
        acts = enumerate_actions(small_net, 2, check_eps=False)
    assert len(acts) < 6 and any("degenerate" in str(x.message) for x in w)


def test_max_epsilon_rejects_unstable():
    net = CompatibilityNetwork([10, 20], [15, 12], [(0, 0), (0, 1), (1, 0), (1, 1)])
    with pytest.raises(LPError, match="unstable"):
        max_epsilon(net)


def test_gap_table(small_net, small_theta, small_actions):
    rewards, gaps, best = action_gaps(small_actions, small_theta)
    assert gaps == [F("1.305"), 0, F("1.755"), F("0.055"), F("1.84"), F("1.405")]
    assert best == 1 and rewards[1] == F("5.405")
    assert optimal_action(small_actions, small_theta) is small_actions[1]


def test_equal_means_give_full_allocation_reward(small_net, small_actions):
    rewards = [action_reward(a, [F(3, 10)] * 4) for a in small_actions]
    assert all(r == F(3, 10) * 20 for r in rewards)
    with pytest.raises(DegenerateInstanceError):
        action_gaps(small_actions, [F(3, 10)] * 4)


def test_dual_small_system(small_net, small_theta, small_actions):
    cert = dual_solution(small_actions[1], small_theta, small_net, F(1, 2))
    assert cert.v == (F(11, 100), F(1, 100))
    assert cert.w == (F(29, 100), 0)
    assert cert.gap((0, 1)) == F(1, 100)
    assert cert.suboptimal_lines == {(0, 1)}
    assert cert.objective(small_net, F(1, 2)) == F("5.405")
    with pytest.raises(DualInfeasibleError):
        dual_solution(small_actions[0], small_theta, small_net, F(1, 2))


def test_dual_after_change(small_net, small_theta, small_actions):
    theta = small_theta.with_mean((0, 1), F(1, 2))
    best = optimal_action(small_actions, theta)
    assert best.index == 5
    cert = dual_solution(best, theta, small_net, F(1, 2))
    assert cert.suboptimal_lines == {(0, 0), (1, 1)}


def test_lower_bound_small_system(small_net, small_theta, small_actions):
    lb = lower_bound_constant(small_net, small_theta, F(1, 2), small_actions)
    assert len(lb.terms) == 1
    t = lb.terms[0]
    assert t.line == (0, 1) and t.threshold == F(11, 100)
    with mpmath.workdps(50):
        want = mpmath.mpf("0.01") / oracles.kl("0.1", "0.11")
    assert lb.constant == pytest.approx(float(want), rel=1e-12)
    assert lb.constant == pytest.approx(19.0493404592, rel=1e-10)


def test_lower_bound_threshold_above_one():
    # found by search: line (4,2) would need a mean of 1.1 to become optimal
    net = CompatibilityNetwork([17, 1, 11, 2], [12, 17, 15],
                               [(0, 0), (0, 1), (0, 2), (1, 0), (2, 1), (2, 2), (3, 0), (3, 1), (3, 2)])
    theta = ["0.8", "1", "0.4", "0.7", "1", "0.7", "0.9", "0.7", "0.7"]
    eps = max_epsilon(net) / 2
    with pytest.warns(UserWarning, match="threshold"):
        lb = lower_bound_constant(net, theta, eps)
    high = [t for t in lb.terms if t.threshold > 1]
    assert [(t.line, t.threshold) for t in high] == [((3, 1), F(11, 10))]
    assert math.isnan(high[0].contribution) and high[0].kl == math.inf
    assert lb.constant == pytest.approx(sum(t.contribution for t in lb.terms if t.threshold <= 1))


def test_suboptimal_set_is_never_empty(small_net, small_actions):
    rng = np.random.default_rng(3)
    for _ in range(50):
        theta = [F(int(v), 1000) for v in rng.integers(0, 1001, 4)]
        try:
            best = optimal_action(small_actions, theta)
        except DegenerateInstanceError:
            continue
        cert = dual_solution(best, theta, small_net, F(1, 2))
        assert len(cert.suboptimal_lines) >= small_net.num_lines - 3


def test_alpha_and_episode_constants(small_net, small_actions):
    want = max(oracles.alpha_term(float(l), float(m))
               for a in small_actions
               for l, m in zip(a.server_loads(2), small_net.service_rates) if l > 0)
    assert alpha_lower_bound(small_net, small_actions) == pytest.approx(want, rel=1e-12)
    assert math.ceil(alpha_lower_bound(small_net, small_actions)) == 364
    assert h0_lower_bound(small_actions) == pytest.approx(4 / 1.5)
    with mpmath.workdps(30):
        want = 364 * mpmath.log(4) ** mpmath.mpf("1.01") + 10
    assert episode_length(1, 364, 1.01, 10, 2) == pytest.approx(float(want), rel=1e-13)
    assert episode_length(1, 364, 1.01, 10, 2) == pytest.approx(516.3, abs=0.05)
    lengths = [episode_length(k, 364, 1.01, 10, 2) for k in range(1, 200)]
    assert all(a < b for a, b in zip(lengths, lengths[1:]))
    with mpmath.workdps(30):
        want = mpmath.exp(mpmath.mpf("1.01") ** 100) / 4
    assert c_beta(1.01, 2) == pytest.approx(float(want), rel=1e-12)
    for bad in (1, 0.5):
        with pytest.raises(ValueError):
            episode_length(1, 364, bad, 10, 2)
        with pytest.raises(ValueError):
            c_beta(bad, 2)


def test_alpha_zero_load_limit():
    from ucbqr.lp_actions import _alpha_term
    mu = 7.0
    assert _alpha_term(0.0, mu) == pytest.approx(1.5 / mu)
    # the approach is logarithmically slow
    errs = [abs(_alpha_term(x, mu) - 1.5 / mu) for x in (1e-5, 1e-50, 1e-300)]
    assert errs[0] > errs[1] > errs[2] and errs[2] < 1e-3 * 1.5 / mu


# ---------------------------------------------------------------- oracles

def _exact_check(net, sol, eps):
    for i in range(net.num_types):
        assert sum(x for (k, j), x in zip(net.lines, sol.rates) if k == i) == net.arrival_rates[i]
    for j in range(net.num_servers):
        load = sum(x for (i, k), x in zip(net.lines, sol.rates) if k == j)
        assert load + sol.slacks[j] == net.service_rates[j] - eps


@pytest.mark.parametrize("seed", range(25))
def test_forest_iff_full_rank(seed):
    net = random_network(np.random.default_rng(seed), 3, 3)
    I, J, L = net.num_types, net.num_servers, net.num_lines
    A = oracles.constraint_matrix(net)
    found = set()
    for cols in combinations(range(L + J), I + J):
        lines = [net.lines[k] for k in cols if k < L]
        roots = [k - L for k in cols if k >= L]
        full = np.linalg.matrix_rank(A[:, cols]) == I + J
        assert is_spanning_forest(net, lines, roots) == full
        if full:
            found.add((tuple(sorted(lines)), tuple(sorted(roots))))
    assert {(b.lines, b.roots) for b in enumerate_bases(net)} == found


@pytest.mark.parametrize("seed", range(25))
def test_basic_solutions_solve_the_basis_system(seed):
    net = random_network(np.random.default_rng(100 + seed))
    eps = max_epsilon(net) / 3
    for basis in enumerate_bases(net):
        sol = basic_solution(basis, net, eps)
        _exact_check(net, sol, eps)
        off = set(net.lines) - set(basis.lines)
        assert all(sol.rates[net.line_index(ln)] == 0 for ln in off)
        nonroot = set(range(net.num_servers)) - set(basis.roots)
        assert all(sol.slacks[j] == 0 for j in nonroot)


@pytest.mark.parametrize("seed", range(30))
def test_actions_match_vertex_enumeration(seed):
    net = random_network(np.random.default_rng(200 + seed))
    eps = max_epsilon(net) / 2
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        acts = enumerate_actions(net, eps)
    _, bases = oracles.vertex_lp(net, [0.0] * net.num_lines, eps)
    assert {(a.basis.lines, a.basis.roots) for a in acts} == {(l, s) for l, s, _ in bases}
    for a in acts:
        _exact_check(net, a, eps)
        assert all(x > 0 for x in a.rates if x) and a.support == frozenset(a.basis.lines)
        assert all(a.slacks[j] > 0 for j in a.basis.roots)


@pytest.mark.parametrize("seed", range(20))
def test_epsilon_insensitivity(seed):
    net = random_network(np.random.default_rng(300 + seed))
    bound = max_epsilon(net)
    sets, degenerate = [], []
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        for e in (0, bound / 1000, bound / 4, bound * F(99, 100)):
            acts, rep = enumerate_actions(net, e, with_report=True)
            sets.append({(a.basis.lines, a.basis.roots) for a in acts})
            degenerate.append(rep.degenerate)
    assert sets[1] == sets[2] == sets[3]
    assert degenerate[1:] == [0, 0, 0]
    # zero slack only qualifies when that LP is itself nondegenerate
    if degenerate[0] == 0:
        assert sets[0] == sets[1]


@pytest.mark.parametrize("seed", range(30))
def test_argmax_matches_generic_lp(seed):
    rng = np.random.default_rng(400 + seed)
    net = random_network(rng)
    eps = max_epsilon(net) / 2
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        acts = enumerate_actions(net, eps)
    theta = [F(int(v), 100) for v in rng.integers(0, 101, net.num_lines)]
    try:
        rewards, _, best = action_gaps(acts, theta)
    except DegenerateInstanceError:
        pytest.skip("tied optimum")
    A = oracles.constraint_matrix(net)
    I = net.num_types
    res = linprog(-np.array([float(t) for t in theta]), A_ub=A[I:, :net.num_lines],
                  b_ub=[float(m - eps) for m in net.service_rates],
                  A_eq=A[:I, :net.num_lines], b_eq=[float(l) for l in net.arrival_rates],
                  bounds=(0, None), method="highs")
    assert res.status == 0
    assert float(rewards[best]) == pytest.approx(-res.fun, rel=1e-9, abs=1e-9)
    x = np.array([float(v) for v in acts[best].rates])
    assert np.allclose(x, res.x, atol=1e-7)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.integers(0, 100), min_size=4, max_size=4), st.integers(1, 50))
def test_reward_argmax_invariant_under_scaling(small_actions, th, scale):
    theta = [F(v, 100) for v in th]
    try:
        best = action_gaps(small_actions, theta)[2]
    except DegenerateInstanceError:
        return
    assert action_gaps(small_actions, [t * scale for t in theta])[2] == best
