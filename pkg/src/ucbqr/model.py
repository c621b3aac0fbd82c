"""Skill-based queueing network, Bernoulli payoffs and KL divergence.

Customer types and servers are 0-based internally.  Lines are ``(i, j)``
tuples.  Rates are kept as :class:`fractions.Fraction` so that LP quantities
derived from them are exact; :func:`as_fraction` converts decimal inputs
such as ``0.05`` to ``1/20`` rather than to the nearest binary float.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from itertools import combinations
from typing import Iterable, Sequence

import numpy as np

Line = tuple[int, int]


class ModelError(ValueError):
    """Raised for structurally invalid networks, payoffs or schedules."""


def as_fraction(value) -> Fraction:
    if isinstance(value, Fraction):
        return value
    if isinstance(value, bool):
        raise ModelError(f"expected a number, got {value!r}")
    if isinstance(value, int):
        return Fraction(value)
    if isinstance(value, float):
        if not math.isfinite(value):
            raise ModelError(f"expected a finite number, got {value!r}")
        return Fraction(repr(value))
    if isinstance(value, str):
        try:
            return Fraction(value)
        except ValueError as exc:
            raise ModelError(f"cannot parse {value!r} as a number") from exc
    raise ModelError(f"expected a number, got {type(value).__name__}")


@dataclass(frozen=True)
class CompatibilityNetwork:
    """Customer types, servers, compatibility lines and rates.

    ``lines`` is stored sorted; its order defines the line index used by
    every array-valued quantity in the package.
    """

    num_types: int
    num_servers: int
    lines: tuple[Line, ...]
    arrival_rates: tuple[Fraction, ...]
    service_rates: tuple[Fraction, ...]
    _line_index: dict = field(init=False, repr=False, compare=False)

    def __init__(self, arrival_rates: Sequence, service_rates: Sequence,
                 lines: Iterable[Sequence[int]]):
        lam = tuple(as_fraction(v) for v in arrival_rates)
        mu = tuple(as_fraction(v) for v in service_rates)
        ls = sorted({(int(i), int(j)) for i, j in lines})
        num_types, num_servers = len(lam), len(mu)
        if num_types == 0 or num_servers == 0:
            raise ModelError("need at least one customer type and one server")
        if any(v <= 0 for v in lam + mu):
            raise ModelError("arrival and service rates must be positive")
        for i, j in ls:
            if not (0 <= i < num_types and 0 <= j < num_servers):
                raise ModelError(f"line {(i, j)} refers to an unknown type or server")
        if {i for i, _ in ls} != set(range(num_types)):
            raise ModelError("every customer type needs at least one compatible server")
        if {j for _, j in ls} != set(range(num_servers)):
            raise ModelError("every server needs at least one compatible customer type")
        if len(ls) <= num_types + num_servers - 1:
            raise ModelError(
                f"need more than I+J-1 = {num_types + num_servers - 1} lines, got {len(ls)}")
        object.__setattr__(self, "num_types", num_types)
        object.__setattr__(self, "num_servers", num_servers)
        object.__setattr__(self, "lines", tuple(ls))
        object.__setattr__(self, "arrival_rates", lam)
        object.__setattr__(self, "service_rates", mu)
        object.__setattr__(self, "_line_index", {ln: k for k, ln in enumerate(ls)})

    @property
    def num_lines(self) -> int:
        return len(self.lines)

    def line_index(self, line: Line) -> int:
        try:
            return self._line_index[tuple(line)]
        except KeyError:
            raise ModelError(f"unknown line {tuple(line)}") from None

    def servers_of(self, i: int) -> list[int]:
        """Compatible servers of customer type ``i``."""
        return [j for (k, j) in self.lines if k == i]

    def types_of(self, j: int) -> list[int]:
        """Customer types compatible with server ``j``."""
        return [i for (i, k) in self.lines if k == j]

    def compatibility_matrix(self) -> np.ndarray:
        mask = np.zeros((self.num_types, self.num_servers), dtype=bool)
        for i, j in self.lines:
            mask[i, j] = True
        return mask


def check_stability(network: CompatibilityNetwork) -> tuple[bool, tuple[int, ...] | None]:
    """Check that every set of types has strictly more compatible capacity
    than demand.

    Returns ``(True, None)`` or ``(False, subset)`` with the first violating
    subset in order of increasing size.
    """
    servers = [set(network.servers_of(i)) for i in range(network.num_types)]
    lam, mu = network.arrival_rates, network.service_rates
    for size in range(1, network.num_types + 1):
        for subset in combinations(range(network.num_types), size):
            reach = set().union(*(servers[i] for i in subset))
            if sum(lam[i] for i in subset) >= sum(mu[j] for j in reach):
                return False, subset
    return True, None


def kl_bernoulli(p: float, q: float) -> float:
    """KL divergence between Bernoulli(p) and Bernoulli(q), in nats."""
    if not (0.0 <= p <= 1.0 and 0.0 <= q <= 1.0):
        raise ValueError(f"Bernoulli means must lie in [0, 1], got ({p}, {q})")
    p, q = float(p), float(q)
    total = 0.0
    for a, b in ((p, q), (1.0 - p, 1.0 - q)):
        if a == 0.0:
            continue
        if b == 0.0:
            return math.inf
        total += a * math.log(a / b)
    return max(total, 0.0)


@dataclass(frozen=True)
class PayoffModel:
    """Bernoulli success probability per line."""

    network: CompatibilityNetwork
    means: tuple[Fraction, ...]

    def __init__(self, network: CompatibilityNetwork, means):
        if isinstance(means, dict):
            given = {tuple(k): v for k, v in means.items()}
            if set(given) != set(network.lines):
                missing = set(network.lines) - set(given)
                extra = set(given) - set(network.lines)
                raise ModelError(f"payoff means do not match lines (missing {sorted(missing)}, "
                                 f"unknown {sorted(extra)})")
            vals = [given[ln] for ln in network.lines]
        else:
            vals = list(means)
            if len(vals) != network.num_lines:
                raise ModelError(f"expected {network.num_lines} payoff means, got {len(vals)}")
        vals = tuple(as_fraction(v) for v in vals)
        if any(not 0 <= v <= 1 for v in vals):
            raise ModelError("Bernoulli payoff means must lie in [0, 1]")
        object.__setattr__(self, "network", network)
        object.__setattr__(self, "means", vals)

    def mean(self, line: Line) -> Fraction:
        return self.means[self.network.line_index(line)]

    def as_dict(self) -> dict[Line, Fraction]:
        return dict(zip(self.network.lines, self.means))

    def matrix(self) -> np.ndarray:
        """Means as an I x J float array, zero off the lines."""
        out = np.zeros((self.network.num_types, self.network.num_servers))
        for (i, j), v in zip(self.network.lines, self.means):
            out[i, j] = float(v)
        return out

    def with_mean(self, line: Line, value) -> "PayoffModel":
        vals = list(self.means)
        vals[self.network.line_index(line)] = as_fraction(value)
        return PayoffModel(self.network, vals)


def sample_payoff(model: PayoffModel, line: Line, rng: np.random.Generator) -> int:
    """One Bernoulli payoff draw for ``line``."""
    theta = model.mean(line)
    return int(rng.random() < theta)


@dataclass(frozen=True)
class ParameterChange:
    time: float
    line: Line
    mean: Fraction


class ParameterSchedule(tuple):
    """Ordered payoff-mean changes; change times strictly increasing."""

    def __new__(cls, changes: Iterable[ParameterChange] = ()):
        changes = tuple(changes)
        for c in changes:
            if c.time < 0:
                raise ModelError("change times must be nonnegative")
            if not 0 <= c.mean <= 1:
                raise ModelError("new payoff means must lie in [0, 1]")
        for a, b in zip(changes, changes[1:]):
            if not a.time < b.time:
                raise ModelError("change times must be strictly increasing")
        return super().__new__(cls, changes)

    def apply_until(self, model: PayoffModel, t: float) -> PayoffModel:
        """Payoff model in effect at time ``t`` (changes at ``time <= t`` applied)."""
        for c in self:
            if c.time <= t:
                model = model.with_mean(c.line, c.mean)
        return model
