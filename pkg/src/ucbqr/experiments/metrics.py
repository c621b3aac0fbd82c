"""Regret, its dual decomposition, and across-replication summaries."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ..lp_actions import Action, DualCertificate
from ..model import CompatibilityNetwork

Z95 = 1.959963984540054


def pseudo_regret(D, t: float, optimal: Action, theta) -> float:
    """``t * r_opt - sum theta_ij D_ij`` for cumulative departures ``D``.

    ``D`` and ``theta`` are per-line arrays aligned with the network lines.
    """
    x = optimal.rate_vector()
    th = np.asarray(theta, dtype=float)
    return float(t * (x @ th) - th @ np.asarray(D, dtype=float))


@dataclass(frozen=True)
class Decomposition:
    suboptimal_departures: float    # sum over suboptimal lines of gap * D
    server_slack: float             # sum_j w_j (t (mu_j - eps) - D_.j)
    type_backlog: float             # sum_i v_i (t lambda_i - D_i.)

    @property
    def total(self) -> float:
        return self.suboptimal_departures + self.server_slack + self.type_backlog


class DualArrays:
    """Float copies of a dual certificate for vectorised evaluation."""

    def __init__(self, network: CompatibilityNetwork, cert: DualCertificate, eps):
        lines = network.lines
        self.ti = np.array([i for i, _ in lines])
        self.sj = np.array([j for _, j in lines])
        self.I, self.J = network.num_types, network.num_servers
        self.phi = np.array([float(g) for g in cert.gaps])
        self.sub = np.array([ln in cert.suboptimal_lines for ln in lines])
        self.v = np.array([float(x) for x in cert.v])
        self.w = np.array([float(x) for x in cert.w])
        self.lam = np.array([float(x) for x in network.arrival_rates])
        self.cap = np.array([float(m - eps) for m in network.service_rates])

    def terms(self, D: np.ndarray, t) -> np.ndarray:
        """Decomposition terms for departures ``D`` (..., L) over durations ``t`` (...)."""
        D = np.asarray(D, dtype=float)
        t = np.asarray(t, dtype=float)
        by_type = np.zeros(D.shape[:-1] + (self.I,))
        by_srv = np.zeros(D.shape[:-1] + (self.J,))
        for k in range(D.shape[-1]):
            by_type[..., self.ti[k]] += D[..., k]
            by_srv[..., self.sj[k]] += D[..., k]
        one = (D * np.where(self.sub, self.phi, 0.0)).sum(-1)
        two = ((t[..., None] * self.cap - by_srv) * self.w).sum(-1)
        three = ((t[..., None] * self.lam - by_type) * self.v).sum(-1)
        return np.stack([one, two, three], axis=-1)


def regret_decomposition_report(D, t: float, cert: DualCertificate,
                                network: CompatibilityNetwork, eps) -> Decomposition:
    """Split pseudo-regret into suboptimal-line, server-slack and backlog terms.

    The three terms sum to :func:`pseudo_regret` for any departure counts.
    """
    one, two, three = DualArrays(network, cert, eps).terms(np.asarray(D)[None, :], np.array([t]))[0]
    return Decomposition(float(one), float(two), float(three))


def mean_ci(samples: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Mean over axis 0 and the normal-approximation 95% half-width."""
    samples = np.asarray(samples, dtype=float)
    n = samples.shape[0]
    mean = samples.mean(axis=0)
    if n < 2:
        return mean, np.zeros_like(mean)
    return mean, Z95 * samples.std(axis=0, ddof=1) / math.sqrt(n)


@dataclass(frozen=True)
class SystemSizeSummary:
    mean: float              # replication average of the time-average
    std_between: float       # std of the time-average across replications
    std_within: float        # replication average of the time-weighted std


def table1_summary(areas: Sequence[float], areas_sq: Sequence[float], horizon: float) -> SystemSizeSummary:
    """Time-weighted number-in-system statistics, averaged over replications.

    ``areas`` and ``areas_sq`` are the integrals of N(t) and N(t)^2 per
    replication.  A zero horizon gives zeros.
    """
    a = np.asarray(areas, dtype=float)
    a2 = np.asarray(areas_sq, dtype=float)
    if horizon <= 0 or len(a) == 0:
        return SystemSizeSummary(0.0, 0.0, 0.0)
    means = a / horizon
    within = np.sqrt(np.maximum(a2 / horizon - means ** 2, 0.0))
    between = float(means.std(ddof=1)) if len(a) > 1 else 0.0
    return SystemSizeSummary(float(means.mean()), between, float(within.mean()))
