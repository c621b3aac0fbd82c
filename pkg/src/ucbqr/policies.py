"""Routing policies: the episodic UCB learner, its oracle twin, and three
allocation benchmarks.

Episodic policies pick an action (a basic feasible routing) at the start of
each episode and learn from the payoffs observed during it.  Allocation
policies decide at arrival and completion epochs through the simulator's
hooks; each also names a compiled discipline so long runs stay fast.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .lp_actions import (Action, DegenerateInstanceError, action_gaps, action_reward,
                         episode_length,
                         h0_lower_bound)
from .model import CompatibilityNetwork
from .simulator import _kernel

REFRESH_MODES = ("all", "chosen")
ORACLE_TIE_BREAKS = ("error", "lowest")


class PolicyError(ValueError):
    pass


def rate_matrix(actions: Sequence[Action], network: CompatibilityNetwork) -> np.ndarray:
    """Actions x lines matrix of routing rates."""
    X = np.zeros((len(actions), network.num_lines))
    for a, act in enumerate(actions):
        for line, x in act.rate_map().items():
            X[a, network.line_index(line)] = float(x)
    return X


def line_indices(T: np.ndarray, theta_hat: np.ndarray, k: int) -> np.ndarray:
    """UCB index per line: empirical mean plus sqrt(ln k / T); inf if unsampled."""
    U = np.full(len(T), np.inf)
    seen = T > 0
    U[seen] = theta_hat[seen] + np.sqrt(math.log(k) / T[seen])
    return U


def action_indices(X: np.ndarray, U: np.ndarray) -> np.ndarray:
    """Rate-weighted sum of line indices over each action's support."""
    out = np.empty(X.shape[0])
    for a in range(X.shape[0]):
        on = X[a] > 0
        u = U[on]
        out[a] = np.inf if np.isinf(u).any() else float(X[a, on] @ u)
    return out


@dataclass(frozen=True)
class EpisodeSchedule:
    alpha: float
    beta: float
    h0: float
    num_servers: int

    def __post_init__(self):
        if self.beta <= 1:
            raise PolicyError("beta must exceed 1")
        if self.alpha < 1 or self.h0 < 1:
            raise PolicyError("alpha and H0 must be at least 1")
        if self.num_servers < 1:
            raise PolicyError("need at least one server")

    def length(self, k: int) -> float:
        return episode_length(k, self.alpha, self.beta, self.h0, self.num_servers)

    def warmup(self, k: int) -> float:
        return self.length(k) - self.h0


@dataclass
class LearnerState:
    """Per-line statistics and indices of the UCB learner.

    ``successes / T`` is the empirical mean; storing the integer success
    count keeps it exact.
    """

    k: int
    T: np.ndarray
    successes: np.ndarray
    U_line: np.ndarray
    U_action: np.ndarray
    current_action: int | None = None
    previous_action: int | None = None

    @classmethod
    def initial(cls, num_lines: int, num_actions: int) -> "LearnerState":
        return cls(k=1, T=np.zeros(num_lines, dtype=np.int64),
                   successes=np.zeros(num_lines, dtype=np.int64),
                   U_line=np.full(num_lines, np.inf), U_action=np.full(num_actions, np.inf))

    @property
    def theta_hat(self) -> np.ndarray:
        out = np.zeros(len(self.T))
        seen = self.T > 0
        out[seen] = self.successes[seen] / self.T[seen]
        return out

    def to_dict(self) -> dict:
        enc = lambda a: [None if math.isinf(v) else float(v) for v in a]
        return {"k": self.k, "T": self.T.tolist(), "successes": self.successes.tolist(),
                "U_line": enc(self.U_line), "U_action": enc(self.U_action),
                "current_action": self.current_action, "previous_action": self.previous_action}

    @classmethod
    def from_dict(cls, d: dict) -> "LearnerState":
        dec = lambda a: np.array([np.inf if v is None else v for v in a], dtype=float)
        return cls(k=int(d["k"]), T=np.array(d["T"], dtype=np.int64),
                   successes=np.array(d["successes"], dtype=np.int64),
                   U_line=dec(d["U_line"]), U_action=dec(d["U_action"]),
                   current_action=d["current_action"], previous_action=d["previous_action"])


def choose_action(learner: LearnerState, rng: np.random.Generator) -> int:
    """Argmax of the action indices, ties broken uniformly at random.

    Infinite indices tie with each other and beat every finite one.
    """
    U = learner.U_action
    if len(U) == 0:
        raise PolicyError("empty action set")
    best = np.flatnonzero(U == U.max())
    return int(best[0]) if len(best) == 1 else int(best[rng.integers(len(best))])


def end_of_episode_update(learner: LearnerState, counts, successes, X: np.ndarray,
                          refresh: str = "all") -> LearnerState:
    """Fold one episode's samples into the learner and recompute indices.

    ``counts`` and ``successes`` are per-line arrays for the episode just
    finished, with ``learner.k`` its number.  With ``refresh="all"`` every
    line and action index is recomputed from the shared statistics; with
    ``"chosen"`` only the lines and index of the action just played are.
    The returned learner is ready for episode ``k + 1``.
    """
    if refresh not in REFRESH_MODES:
        raise PolicyError(f"refresh must be one of {REFRESH_MODES}")
    counts = np.asarray(counts, dtype=np.int64)
    successes = np.asarray(successes, dtype=np.int64)
    if counts.shape != learner.T.shape or successes.shape != learner.T.shape:
        raise PolicyError("sample arrays must have one entry per line")
    if (counts < 0).any() or (successes < 0).any():
        raise PolicyError("negative sample counts")
    if (successes > counts).any():
        raise PolicyError("more successes than samples on some line")
    k = learner.k
    T = learner.T + counts
    S = learner.successes + successes
    fresh = LearnerState(k=k, T=T, successes=S, U_line=learner.U_line.copy(),
                         U_action=learner.U_action.copy(),
                         current_action=learner.current_action,
                         previous_action=learner.previous_action)
    U = line_indices(T, fresh.theta_hat, k)
    if refresh == "all":
        fresh.U_line = U
        fresh.U_action = action_indices(X, U)
    else:
        a = learner.current_action
        if a is None:
            raise PolicyError("no action was played this episode")
        on = X[a] > 0
        fresh.U_line[on] = U[on]
        fresh.U_action[a] = action_indices(X[a:a + 1], fresh.U_line)[0]
    fresh.k = k + 1
    return fresh


class EpisodicPolicy:
    """Common episode bookkeeping: fixed action set and episode schedule."""

    kind = "episodic"
    name = "episodic"

    def __init__(self, network: CompatibilityNetwork, actions: Sequence[Action],
                 schedule: EpisodeSchedule):
        if not actions:
            raise PolicyError("empty action set")
        self.network = network
        self.actions = list(actions)
        self.schedule = schedule
        self.X = rate_matrix(self.actions, network)
        self.k = 1

    def episode_length(self, k: int | None = None) -> float:
        return self.schedule.length(self.k if k is None else k)

    def rates(self, a: int) -> np.ndarray:
        return self.X[a]

    def start_episode(self, **context) -> int:
        raise NotImplementedError

    def end_episode(self, counts, successes) -> None:
        self.k += 1


class UCBQRPolicy(EpisodicPolicy):
    """Optimistic action choice from per-line UCB indices.

    It sees only payoff samples; the true means are never passed in.
    """

    name = "ucbqr"

    def __init__(self, network, actions, schedule, rng: np.random.Generator,
                 refresh: str = "all"):
        super().__init__(network, actions, schedule)
        if refresh not in REFRESH_MODES:
            raise PolicyError(f"refresh must be one of {REFRESH_MODES}")
        self.refresh = refresh
        self.rng = rng
        self.state = LearnerState.initial(network.num_lines, len(self.actions))

    def start_episode(self, **context) -> int:
        a = choose_action(self.state, self.rng)
        self.state.previous_action = self.state.current_action
        self.state.current_action = a
        return a

    def end_episode(self, counts, successes) -> None:
        # only lines of the action just played count as its samples
        mask = self.X[self.state.current_action] > 0
        counts = np.where(mask, counts, 0)
        successes = np.where(mask, successes, 0)
        self.state = end_of_episode_update(self.state, counts, successes, self.X, self.refresh)
        self.k = self.state.k


class OraclePolicy(EpisodicPolicy):
    """Same episodes as the learner, but plays the true reward maximiser.

    ``start_episode`` takes the payoff means in force at the episode start.
    A tied maximum raises :class:`DegenerateInstanceError` unless
    ``tie_break="lowest"``, which plays the lowest-indexed maximiser.
    """

    name = "oracle"

    def __init__(self, network, actions, schedule, theta, tie_break: str = "error"):
        super().__init__(network, actions, schedule)
        if tie_break not in ORACLE_TIE_BREAKS:
            raise PolicyError(f"tie_break must be one of {ORACLE_TIE_BREAKS}")
        self.theta = theta
        self.tie_break = tie_break

    def start_episode(self, theta=None, **context) -> int:
        if theta is not None:
            self.theta = theta
        try:
            _, _, best = action_gaps(self.actions, self.theta)
        except DegenerateInstanceError:
            if self.tie_break == "error":
                raise
            rewards = [action_reward(a, self.theta) for a in self.actions]
            best = rewards.index(max(rewards))
        return best


class AllocationBase:
    kind = "allocation"
    name = "allocation"
    discipline: int | None = None


class FCFSALISPolicy(AllocationBase):
    """Longest-waiting customer first, longest-idle server first."""

    name = "fcfs_alis"
    discipline = _kernel.FCFS_ALIS

    def on_arrival(self, customer, idle_servers, sim):
        return min(idle_servers, key=lambda j: (sim.srv_idle[j], j))

    def on_completion(self, server, heads, sim):
        return min(heads, key=lambda i: heads[i].id)


class GreedyPolicy(AllocationBase):
    """Highest mean payoff match at every decision; lowest index on ties.

    Reads the true means from the simulation, so parameter changes are
    seen immediately.
    """

    name = "greedy"
    discipline = _kernel.GREEDY

    def on_arrival(self, customer, idle_servers, sim):
        i = customer.type
        best = idle_servers[0]
        for j in idle_servers[1:]:
            if sim.theta[i, j] > sim.theta[i, best]:
                best = j
        return best

    def on_completion(self, server, heads, sim):
        types = sorted(heads)
        best = types[0]
        for i in types[1:]:
            if sim.theta[i, server] > sim.theta[best, server]:
                best = i
        return best


class RandomPolicy(AllocationBase):
    """Uniform choice among idle servers / nonempty queues."""

    name = "random"
    discipline = _kernel.RANDOM

    def on_arrival(self, customer, idle_servers, sim):
        return idle_servers[int(sim.decision_uniform() * len(idle_servers))]

    def on_completion(self, server, heads, sim):
        types = sorted(heads)
        return types[int(sim.decision_uniform() * len(types))]


POLICY_NAMES = ("ucbqr", "oracle", "fcfs_alis", "greedy", "random")


def default_h0(actions: Sequence[Action]) -> float:
    return h0_lower_bound(actions)


def make_policy(name: str, network, actions, theta, schedule: EpisodeSchedule | None,
                rng: np.random.Generator | None = None, refresh: str = "all",
                oracle_tie_break: str = "error"):
    """Build a policy by its CLI name."""
    if name == "ucbqr":
        return UCBQRPolicy(network, actions, schedule, rng, refresh=refresh)
    if name == "oracle":
        return OraclePolicy(network, actions, schedule, theta, oracle_tie_break)
    if name == "fcfs_alis":
        return FCFSALISPolicy()
    if name == "greedy":
        return GreedyPolicy()
    if name == "random":
        return RandomPolicy()
    raise PolicyError(f"unknown policy {name!r}; choose from {', '.join(POLICY_NAMES)}")
