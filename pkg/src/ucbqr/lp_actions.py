"""Basic feasible solutions of the static routing LP as bandit actions.

A basis of the routing LP is a set of lines plus a set of root servers whose
induced bipartite graph is a spanning forest with exactly one root server per
tree.  Rates of the corresponding basic solution follow directly from
subtree sums of arrival and service rates, so no linear solve is needed.
All LP quantities are exact fractions.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from fractions import Fraction
from itertools import combinations
from typing import Mapping, NamedTuple, Sequence

import numpy as np

from .model import CompatibilityNetwork, Line, PayoffModel, as_fraction, check_stability, kl_bernoulli


class LPError(ValueError):
    pass


class DegenerateInstanceError(LPError):
    """The LP optimum is not unique (tied rewards or a zero reduced cost)."""


class DualInfeasibleError(LPError):
    """Back-substituted duals violate feasibility: the action was not optimal."""


class ForestError(LPError):
    """A (lines, roots) pair does not form a rooted spanning forest."""


class _UnionFind:
    def __init__(self, n):
        self.parent = list(range(n))

    def find(self, a):
        root = a
        while self.parent[root] != root:
            root = self.parent[root]
        while self.parent[a] != root:
            self.parent[a], a = root, self.parent[a]
        return root

    def union(self, a, b):
        ra, rb = self.find(a), self.find(b)
        if ra == rb:
            return False
        self.parent[rb] = ra
        return True


@dataclass(frozen=True)
class SpanningForestBasis:
    """Lines and root servers of a rooted spanning forest.

    Nodes are numbered ``0..I-1`` for customer types and ``I..I+J-1`` for
    servers; ``parent[node]`` is ``-1`` for roots.
    """

    lines: tuple[Line, ...]
    roots: tuple[int, ...]
    parent: tuple[int, ...]
    num_types: int

    def is_type(self, node: int) -> bool:
        return node < self.num_types

    def node_of_server(self, j: int) -> int:
        return self.num_types + j

    def children(self) -> list[list[int]]:
        kids = [[] for _ in self.parent]
        for node, p in enumerate(self.parent):
            if p >= 0:
                kids[p].append(node)
        return kids


def build_forest(network: CompatibilityNetwork, lines: Sequence[Line],
                 roots: Sequence[int]) -> SpanningForestBasis:
    """Validate ``(lines, roots)`` as a rooted spanning forest and orient it."""
    I, J = network.num_types, network.num_servers
    lines = tuple(sorted(tuple(ln) for ln in lines))
    roots = tuple(sorted(roots))
    if len(lines) + len(roots) != I + J:
        raise ForestError("a basis needs exactly I+J columns")
    uf = _UnionFind(I + J)
    adj = [[] for _ in range(I + J)]
    for i, j in lines:
        network.line_index((i, j))
        if not uf.union(i, I + j):
            raise ForestError(f"lines {lines} contain a cycle")
        adj[i].append(I + j)
        adj[I + j].append(i)
    comp_roots: dict[int, int] = {}
    for j in roots:
        c = uf.find(I + j)
        if c in comp_roots:
            raise ForestError(f"servers {comp_roots[c]} and {j} are roots of the same tree")
        comp_roots[c] = j
    if any(uf.find(v) not in comp_roots for v in range(I + J)):
        raise ForestError("some tree has no root server")
    parent = [-2] * (I + J)
    for j in roots:
        parent[I + j] = -1
        stack = [I + j]
        while stack:
            u = stack.pop()
            for w in adj[u]:
                if parent[w] == -2:
                    parent[w] = u
                    stack.append(w)
    return SpanningForestBasis(lines, roots, tuple(parent), I)


def is_spanning_forest(network: CompatibilityNetwork, lines, roots) -> bool:
    try:
        build_forest(network, lines, roots)
    except ForestError:
        return False
    return True


def enumerate_bases(network: CompatibilityNetwork):
    """Yield every rooted spanning forest of the compatibility graph.

    Equivalent to scanning all ``C(L+J, I+J)`` column subsets, but only
    acyclic line subsets are expanded: each of their trees must contain a
    server, and every choice of one root server per tree is a basis.
    """
    I, J = network.num_types, network.num_servers
    for size in range(I, I + J):
        for lines in combinations(network.lines, size):
            uf = _UnionFind(I + J)
            if not all(uf.union(i, I + j) for i, j in lines):
                continue
            comps: dict[int, list[int]] = {}
            for v in range(I + J):
                comps.setdefault(uf.find(v), [])
            for j in range(J):
                comps[uf.find(I + j)].append(j)
            choices = list(comps.values())
            if any(not c for c in choices):
                continue
            for pick in _product(choices):
                yield build_forest(network, lines, pick)


def _product(choices):
    if not choices:
        yield ()
        return
    for head in choices[0]:
        for rest in _product(choices[1:]):
            yield (head,) + rest


class _Subtree(NamedTuple):
    demand: Fraction   # sum of arrival rates of types in the subtree
    capacity: Fraction  # sum of (mu - eps) of servers in the subtree
    servers: int


def _subtrees(basis: SpanningForestBasis, network: CompatibilityNetwork,
              eps: Fraction) -> list[_Subtree]:
    I = network.num_types
    kids = basis.children()
    out: list[_Subtree | None] = [None] * len(basis.parent)

    def visit(node):
        if basis.is_type(node):
            d, c, s = network.arrival_rates[node], Fraction(0), 0
        else:
            d, c, s = Fraction(0), network.service_rates[node - I] - eps, 1
        for k in kids[node]:
            sub = out[k] if out[k] is not None else visit(k)
            d, c, s = d + sub.demand, c + sub.capacity, s + sub.servers
        out[node] = _Subtree(d, c, s)
        return out[node]

    for node, p in enumerate(basis.parent):
        if p == -1:
            visit(node)
    return out


class _Rooted(NamedTuple):
    """One tree of a forest, oriented from a chosen root server.

    Basic values are ``(a + b * eps * S) / S`` for integers ``a`` and ``b``,
    where ``S`` scales every rate to an integer.
    """
    root: int
    values: tuple[tuple[int, int], ...]      # tree lines, then the root slack
    lines: tuple[Line, ...]
    surplus: tuple[tuple[int, int], ...]     # per server: (capacity - demand, servers) at eps = 0


def _scale(network: CompatibilityNetwork) -> int:
    return math.lcm(*(f.denominator for f in network.arrival_rates + network.service_rates))


def _orient(network, adj, comp_lines, root, lam, mu) -> _Rooted:
    I = network.num_types
    start = I + root
    order, parent = [start], {start: -1}
    for v in order:
        for w in adj[v]:
            if w not in parent:
                parent[w] = v
                order.append(w)
    dem, cap, cnt = {}, {}, {}
    for v in reversed(order):
        d, c, n = (lam[v], 0, 0) if v < I else (0, mu[v - I], 1)
        for w in adj[v]:
            if parent.get(w) == v:
                d, c, n = d + dem[w], c + cap[w], n + cnt[w]
        dem[v], cap[v], cnt[v] = d, c, n
    vals = []
    for i, j in comp_lines:
        s = I + j
        if parent[i] == s:      # type below its server: it sends its subtree's excess up
            vals.append((dem[i] - cap[i], cnt[i]))
        else:
            vals.append((cap[s] - dem[s], -cnt[s]))
    vals.append((cap[start] - dem[start], -cnt[start]))
    surplus = tuple((cap[v] - dem[v], cnt[v]) for v in order if v >= I)
    return _Rooted(root, tuple(vals), tuple(comp_lines), surplus)


def _forest_scan(network: CompatibilityNetwork):
    """Yield, per acyclic line set whose trees all hold a server, the list of
    trees with every admissible root orientation."""
    I, J = network.num_types, network.num_servers
    S = _scale(network)
    lam = [int(x * S) for x in network.arrival_rates]
    mu = [int(x * S) for x in network.service_rates]
    for size in range(I, I + J):
        for lines in combinations(network.lines, size):
            uf = _UnionFind(I + J)
            if not all(uf.union(i, I + j) for i, j in lines):
                continue
            comps: dict[int, tuple[list, list]] = {}
            for v in range(I + J):
                comps.setdefault(uf.find(v), ([], []))
            for j in range(J):
                comps[uf.find(I + j)][0].append(j)
            if any(not srv for srv, _ in comps.values()):
                continue
            for ln in lines:
                comps[uf.find(ln[0])][1].append(ln)
            adj = [[] for _ in range(I + J)]
            for i, j in lines:
                adj[i].append(I + j)
                adj[I + j].append(i)
            yield lines, [[_orient(network, adj, cl, r, lam, mu) for r in srv]
                          for srv, cl in comps.values()]


def _sign_counts(rooted: _Rooted, p: int, q: int, S: int) -> tuple[bool, bool]:
    """(feasible, nondegenerate) of one oriented tree at eps = p / q."""
    vals = [a * q + b * p * S for a, b in rooted.values]
    return all(v >= 0 for v in vals), all(v > 0 for v in vals)


class BasicSolution(NamedTuple):
    basis: SpanningForestBasis
    rates: tuple[Fraction, ...]   # aligned with network.lines
    slacks: tuple[Fraction, ...]  # one per server

    def basic_values(self, network: CompatibilityNetwork) -> list[Fraction]:
        vals = [self.rates[network.line_index(ln)] for ln in self.basis.lines]
        return vals + [self.slacks[j] for j in self.basis.roots]

    def feasible(self, network) -> bool:
        return all(v >= 0 for v in self.basic_values(network))

    def nondegenerate(self, network) -> bool:
        return all(v != 0 for v in self.basic_values(network))


def basic_solution(basis: SpanningForestBasis, network: CompatibilityNetwork,
                   eps=0) -> BasicSolution:
    """Routing rates and server slacks of a spanning-forest basis."""
    eps = as_fraction(eps)
    I = network.num_types
    subs = _subtrees(basis, network, eps)
    rates = [Fraction(0)] * network.num_lines
    load = [Fraction(0)] * network.num_servers
    for i, j in basis.lines:
        s = I + j
        if basis.parent[i] == s:
            x = subs[i].demand - subs[i].capacity
        elif basis.parent[s] == i:
            x = subs[s].capacity - subs[s].demand
        else:
            raise ForestError(f"line {(i, j)} is not a tree edge")
        rates[network.line_index((i, j))] = x
        load[j] += x
    slacks = tuple(network.service_rates[j] - eps - load[j] for j in range(network.num_servers))
    return BasicSolution(basis, tuple(rates), slacks)


def _materialize(network, lines, pick, eps: Fraction, S: int) -> BasicSolution:
    basis = build_forest(network, lines, [r.root for r in pick])
    rates = [Fraction(0)] * network.num_lines
    slacks = [Fraction(0)] * network.num_servers
    for r in pick:
        vals = [Fraction(a, S) + b * eps for a, b in r.values]
        for ln, x in zip(r.lines, vals):
            rates[network.line_index(ln)] = x
        slacks[r.root] = vals[-1]
    return BasicSolution(basis, tuple(rates), tuple(slacks))


@dataclass(frozen=True)
class Action:
    """A nondegenerate basic feasible solution used as a bandit arm."""

    index: int
    basis: SpanningForestBasis
    rates: tuple[Fraction, ...]
    slacks: tuple[Fraction, ...]
    lines: tuple[Line, ...] = field(repr=False)

    @property
    def support(self) -> frozenset[Line]:
        return frozenset(self.basis.lines)

    def rate(self, line: Line) -> Fraction:
        return self.rates[self.lines.index(tuple(line))]

    def rate_map(self) -> dict[Line, Fraction]:
        return {ln: x for ln, x in zip(self.lines, self.rates) if x != 0}

    def rate_vector(self) -> np.ndarray:
        return np.array([float(x) for x in self.rates])

    def server_loads(self, num_servers: int) -> list[Fraction]:
        load = [Fraction(0)] * num_servers
        for (i, j), x in zip(self.lines, self.rates):
            load[j] += x
        return load

    def label(self) -> str:
        return " ".join(f"({i + 1},{j + 1})" for i, j in sorted(self.support))


@dataclass
class EnumerationReport:
    candidates: int        # C(L+J, I+J) column subsets
    bases: int             # rooted spanning forests
    infeasible: int
    degenerate: int
    actions: int


def _canonical_key(sol: BasicSolution):
    return (tuple(sorted(sol.basis.lines)), sol.basis.roots)


def enumerate_actions(network: CompatibilityNetwork, eps=0, *, check_eps: bool = True,
                      with_report: bool = False):
    """All nondegenerate basic feasible solutions of the routing LP.

    Actions are ordered by their sorted line set, then by root set, and
    indexed from 0 in that order.
    """
    eps = as_fraction(eps)
    if eps < 0:
        raise LPError("epsilon must be nonnegative")
    if check_eps:
        bound = max_epsilon(network)
        if eps >= bound:
            raise LPError(f"epsilon {eps} is not below the insensitivity bound {bound}")
    S = _scale(network)
    p, q = eps.numerator, eps.denominator
    sols, infeasible, degenerate, bases = [], 0, 0, 0
    for lines, trees in _forest_scan(network):
        good, feas, total = [], 1, 1
        for opts in trees:
            flags = [_sign_counts(r, p, q, S) for r in opts]
            total *= len(opts)
            feas *= sum(f for f, _ in flags)
            good.append([r for r, (_, nd) in zip(opts, flags) if nd])
        bases += total
        infeasible += total - feas
        npos = math.prod(len(g) for g in good)
        degenerate += feas - npos
        for pick in _product(good):
            sols.append(_materialize(network, lines, pick, eps, S))
    if degenerate:
        warnings.warn(f"{degenerate} degenerate basic feasible solution(s) skipped", stacklevel=2)
    sols.sort(key=_canonical_key)
    actions = [Action(k, s.basis, s.rates, s.slacks, network.lines) for k, s in enumerate(sols)]
    if with_report:
        report = EnumerationReport(
            math.comb(network.num_lines + network.num_servers,
                      network.num_types + network.num_servers),
            bases, infeasible, degenerate, len(actions))
        return actions, report
    return actions


def reorder_actions(actions: Sequence[Action], supports) -> list[Action]:
    """Move actions with the given line sets to the front, in that order.

    Remaining actions keep their relative order.  Indices are reassigned.
    """
    supports = [frozenset(tuple(ln) for ln in s) for s in supports]
    front = []
    for s in supports:
        hits = [a for a in actions if a.support == s]
        if len(hits) != 1:
            raise LPError(f"line set {sorted(s)} matches {len(hits)} actions")
        front.append(hits[0])
    rest = [a for a in actions if a not in front]
    return [Action(k, a.basis, a.rates, a.slacks, a.lines) for k, a in enumerate(front + rest)]


def max_epsilon(network: CompatibilityNetwork) -> Fraction:
    """Largest slack below which the set of feasible bases does not change.

    Over every nondegenerate feasible basis of the zero-slack LP, take the
    minimum over servers of the subtree capacity surplus divided by the
    number of servers in the subtree; return the minimum over bases.
    """
    stable, subset = check_stability(network)
    if not stable:
        raise LPError(f"network is unstable: customer types {subset} exceed their capacity")
    S = _scale(network)
    best = None
    for _, trees in _forest_scan(network):
        good = [[r for r in opts if _sign_counts(r, 0, 1, S)[1]] for opts in trees]
        if not all(good):
            continue
        for r in (r for g in good for r in g):
            for surplus, n in r.surplus:
                val = Fraction(surplus, S * n)
                if best is None or val < best:
                    best = val
    if best is None:
        raise LPError("no nondegenerate feasible basis at zero slack")
    return best


def _theta_vector(theta, network: CompatibilityNetwork) -> tuple[Fraction, ...]:
    if isinstance(theta, PayoffModel):
        return theta.means
    if isinstance(theta, Mapping):
        return PayoffModel(network, theta).means
    return tuple(as_fraction(v) for v in theta)


def action_reward(action: Action, theta) -> Fraction:
    """Long-run payoff rate of routing at the action's rates."""
    th = theta.means if isinstance(theta, PayoffModel) else theta
    if isinstance(th, Mapping):
        return sum((x * as_fraction(th[ln]) for ln, x in action.rate_map().items()), Fraction(0))
    return sum((x * as_fraction(t) for x, t in zip(action.rates, th) if x != 0), Fraction(0))


def action_gaps(actions: Sequence[Action], theta):
    """Rewards, suboptimality gaps and the index of the unique best action."""
    if not actions:
        raise LPError("empty action set")
    rewards = [action_reward(a, theta) for a in actions]
    best = max(rewards)
    winners = [k for k, r in enumerate(rewards) if r == best]
    if len(winners) > 1:
        raise DegenerateInstanceError(f"actions {winners} tie for the maximal reward {best}")
    return rewards, [best - r for r in rewards], winners[0]


def optimal_action(actions: Sequence[Action], theta) -> Action:
    return actions[action_gaps(actions, theta)[2]]


@dataclass(frozen=True)
class DualCertificate:
    v: tuple[Fraction, ...]
    w: tuple[Fraction, ...]
    gaps: tuple[Fraction, ...]    # reduced cost per line, aligned with network.lines
    optimal_lines: frozenset
    suboptimal_lines: frozenset
    lines: tuple[Line, ...] = field(repr=False)

    def gap(self, line: Line) -> Fraction:
        return self.gaps[self.lines.index(tuple(line))]

    def objective(self, network: CompatibilityNetwork, eps) -> Fraction:
        eps = as_fraction(eps)
        return (sum(l * v for l, v in zip(network.arrival_rates, self.v))
                + sum((m - eps) * w for m, w in zip(network.service_rates, self.w)))


def dual_solution(action: Action, theta, network: CompatibilityNetwork, eps=0) -> DualCertificate:
    """Duals complementary to ``action``, by back-substitution from the roots.

    Root servers get zero price; along each tree edge the type and server
    prices sum to the line's payoff mean.
    """
    th = _theta_vector(theta, network)
    basis, I = action.basis, network.num_types
    price: list[Fraction | None] = [None] * (I + network.num_servers)
    kids = basis.children()
    stack = []
    for j in basis.roots:
        price[I + j] = Fraction(0)
        stack.append(I + j)
    while stack:
        u = stack.pop()
        for c in kids[u]:
            i, j = (c, u - I) if basis.is_type(c) else (u, c - I)
            price[c] = th[network.line_index((i, j))] - price[u]
            stack.append(c)
    v, w = tuple(price[:I]), tuple(price[I:])
    gaps = tuple(v[i] + w[j] - t for (i, j), t in zip(network.lines, th))
    bad = [ln for ln, g in zip(network.lines, gaps) if g < 0]
    if bad or any(x < 0 for x in w):
        raise DualInfeasibleError(
            f"action {action.index} is not optimal: negative reduced cost on {bad}"
            if bad else f"action {action.index} is not optimal: negative server price")
    support = action.support
    zero_off = [ln for ln, g in zip(network.lines, gaps) if g == 0 and ln not in support]
    if zero_off:
        raise DegenerateInstanceError(f"zero reduced cost on nonbasic lines {zero_off}")
    opt = frozenset(ln for ln, g in zip(network.lines, gaps) if g == 0)
    return DualCertificate(v, w, gaps, opt, frozenset(network.lines) - opt, network.lines)


@dataclass(frozen=True)
class LowerBoundTerm:
    line: Line
    gap: Fraction
    threshold: Fraction   # smallest mean that would make the line optimal
    kl: float
    contribution: float   # gap / kl, nan when the threshold exceeds 1


@dataclass(frozen=True)
class LowerBound:
    constant: float
    terms: tuple[LowerBoundTerm, ...]


def lower_bound_constant(network: CompatibilityNetwork, theta, eps=0,
                         actions: Sequence[Action] | None = None) -> LowerBound:
    """Sum over suboptimal lines of gap / KL(mean, threshold).

    The threshold is ``v_i + w_j``: raising the line's mean above it makes
    the line optimal.  Lines whose threshold exceeds 1 cannot become optimal
    for a Bernoulli mean and are left out with a warning.
    """
    if actions is None:
        actions = enumerate_actions(network, eps)
    th = _theta_vector(theta, network)
    best = optimal_action(actions, th)
    cert = dual_solution(best, th, network, eps)
    terms, total = [], 0.0
    for ln, g, t in zip(network.lines, cert.gaps, th):
        if ln not in cert.suboptimal_lines:
            continue
        a0 = t + g
        if a0 > 1:
            warnings.warn(f"line {ln}: threshold {float(a0):.6g} > 1, no Bernoulli mean makes it optimal",
                          stacklevel=2)
            terms.append(LowerBoundTerm(ln, g, a0, math.inf, math.nan))
            continue
        k = kl_bernoulli(float(t), float(a0))
        contrib = math.inf if k == 0 else float(g) / k
        terms.append(LowerBoundTerm(ln, g, a0, k, contrib))
        total += contrib
    return LowerBound(total, tuple(terms))


def _alpha_term(load: float, mu: float) -> float:
    if load <= 0:
        return 1.5 / mu  # limit of the expression as the load vanishes
    rho = load / mu
    if rho >= 1:
        raise LPError(f"server load {rho} is not below 1")
    lr = math.log(rho)
    num = 3 * (load + mu) * lr - 2 * math.sqrt((mu - load) ** 2 + 9 * load * mu * lr * lr)
    return num / (2 * (mu - load) ** 2 * lr)


def alpha_lower_bound(network: CompatibilityNetwork, actions: Sequence[Action]) -> float:
    """Smallest warm-up scale that makes every episode's queues mix in time."""
    best = 1.0
    mu = [float(m) for m in network.service_rates]
    for a in actions:
        for j, load in enumerate(a.server_loads(network.num_servers)):
            best = max(best, _alpha_term(float(load), mu[j]))
    return best


def min_positive_rate(actions: Sequence[Action]) -> Fraction:
    return min(x for a in actions for x in a.rates if x > 0)


def h0_lower_bound(actions: Sequence[Action]) -> float:
    return max(4 / float(min_positive_rate(actions)), 1.0)


def episode_length(k: int, alpha: float, beta: float, h0: float, num_servers: int) -> float:
    """Length of episode ``k``: warm-up ``alpha * ln(2Jk)**beta`` plus ``h0``."""
    if beta <= 1:
        raise ValueError("beta must exceed 1")
    if k < 1:
        raise ValueError("episodes are numbered from 1")
    return alpha * math.log(2 * num_servers * k) ** beta + h0


def c_beta(beta: float, num_servers: int) -> float:
    if beta <= 1:
        raise ValueError("beta must exceed 1")
    return math.exp(beta ** (1 / (beta - 1))) / (2 * num_servers)
