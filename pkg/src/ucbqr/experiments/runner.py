"""Replication driver and output writer.

Every policy in a scenario is simulated for the same replications, and
replication ``r`` uses the random streams of ``(seed, r)`` whatever the
policy.  That makes comparisons between policies paired.  Metrics are
sampled at a fixed set of times shared by all policies and replications:
an even grid, every episode boundary of the episode schedule, and every
payoff-change time.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..lp_actions import (Action, DegenerateInstanceError, action_gaps, dual_solution)
from ..model import PayoffModel
from ..policies import EpisodeSchedule, make_policy
from ..simulator import RngStreams, Simulation
from .metrics import DualArrays, mean_ci, table1_summary
from .scenario import Scenario

SERIES = ("payoff_rate", "cumulative_payoff", "pseudo_regret", "term_I", "term_II",
          "term_III", "system_size")


@dataclass
class Piece:
    """Interval with constant payoff means and its optimal action."""
    start: float
    end: float
    theta: PayoffModel
    theta_vec: np.ndarray
    optimal: int | None
    r_opt: float
    dual: DualArrays | None


@dataclass
class Prepared:
    scenario: Scenario
    actions: list[Action]
    episodes: EpisodeSchedule
    episode_ends: np.ndarray
    times: np.ndarray
    pieces: list[Piece]


def episode_ends(schedule: EpisodeSchedule, horizon: float) -> np.ndarray:
    ends, t, k = [], 0.0, 1
    while t < horizon:
        t = min(t + schedule.length(k), horizon)
        ends.append(t)
        k += 1
    return np.array(ends)


def prepare(sc: Scenario) -> Prepared:
    actions = sc.actions()
    es = sc.episode_schedule(actions)
    ends = episode_ends(es, sc.horizon)
    sched = sc.schedule()
    change_times = [c.time for c in sched]
    grid = sc.horizon * np.arange(1, sc.grid_points + 1) / sc.grid_points
    times = np.unique(np.concatenate([[0.0], grid, ends, change_times, [sc.horizon]]))
    bounds = [0.0] + change_times + [sc.horizon]
    pieces = []
    for s, e in zip(bounds[:-1], bounds[1:]):
        theta = sched.apply_until(sc.theta, s)
        vec = np.array([float(v) for v in theta.means])
        try:
            rewards, _, best = action_gaps(actions, theta)
            cert = dual_solution(actions[best], theta, sc.network, sc.epsilon)
            dual = DualArrays(sc.network, cert, sc.epsilon)
            r_opt = float(rewards[best])
        except DegenerateInstanceError:
            best, dual = None, None
            r_opt = max(float(sum(float(x) * t for x, t in zip(a.rates, vec))) for a in actions)
        pieces.append(Piece(s, e, theta, vec, best, r_opt, dual))
    return Prepared(sc, actions, es, ends, times, pieces)


@dataclass
class Replication:
    policy: str
    replication: int
    D: np.ndarray          # (S, L) cumulative departures per line
    P: np.ndarray          # (S, L) cumulative unit payoffs per line
    N: np.ndarray          # (S,) customers in system
    area: float
    area_sq: float
    actions: np.ndarray    # chosen action per episode (episodic policies)
    queue_hist: np.ndarray


def simulate_replication(prep: Prepared, policy_name: str, rep: int) -> Replication:
    sc = prep.scenario
    net = sc.network
    streams = RngStreams(sc.seed, rep)
    sim = Simulation(net, sc.theta, streams)
    ti = np.array([i for i, _ in net.lines])
    sj = np.array([j for _, j in net.lines])
    times = prep.times
    S = len(times)
    D = np.zeros((S, net.num_lines), dtype=np.int64)
    P = np.zeros((S, net.num_lines), dtype=np.int64)
    N = np.zeros(S, dtype=np.int64)
    change_at = {p.start: p.theta for p in prep.pieces[1:]}
    policy = make_policy(policy_name, net, prep.actions, sc.theta, prep.episodes,
                         rng=streams.stream("tiebreak"), refresh=sc.refresh,
                         oracle_tie_break=sc.oracle_tie_break)
    state = {"theta": sc.theta}

    def record(si):
        t = times[si]
        if t in change_at:
            state["theta"] = change_at[t]
            sim.set_theta(change_at[t])
        D[si] = sim.departures[ti, sj]
        P[si] = sim.payoffs[ti, sj]
        N[si] = sim.number_in_system

    chosen = []
    if policy.kind == "episodic":
        si, prev = 1, None
        for end in prep.episode_ends:
            a = policy.start_episode(theta=state["theta"])
            x = policy.rates(a)
            if prev is not None and a != prev:
                sim.reallocate(x)
            chosen.append(a)
            D0 = sim.departures[ti, sj]
            P0 = sim.payoffs[ti, sj]
            while si < S and times[si] <= end:
                sim.run_interval(x, times[si] - sim.clock)
                record(si)
                si += 1
            policy.end_episode(sim.departures[ti, sj] - D0, sim.payoffs[ti, sj] - P0)
            prev = a
    else:
        for si in range(1, S):
            sim.run_allocation_policy(policy, times[si] - sim.clock)
            record(si)
    return Replication(policy_name, rep, D, P, N, sim.area, sim.area_sq,
                       np.array(chosen, dtype=np.int64), sim.queue_hist.copy())


def regret_series(prep: Prepared, D: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Piecewise pseudo-regret and its three decomposition terms at every sample time.

    Within each constant-payoff piece the benchmark is that piece's optimal
    rate; terms are nan when a piece has no unique optimum.
    """
    times = prep.times
    R = np.zeros(len(times))
    terms = np.zeros((len(times), 3))
    for p in prep.pieces:
        s_idx = int(np.searchsorted(times, p.start))
        u = np.minimum(times, p.end)
        u_idx = np.searchsorted(times, u)
        active = times > p.start
        dD = (D[u_idx] - D[s_idx]).astype(float)
        dt = np.where(active, u - p.start, 0.0)
        dD[~active] = 0.0
        R += dt * p.r_opt - dD @ p.theta_vec
        if p.dual is None:
            terms[:] = np.nan
        else:
            terms += p.dual.terms(dD, dt)
    return R, terms


@dataclass
class PolicyResult:
    policy: str
    times: np.ndarray
    series: dict            # name -> (R, S) per-replication values
    departures: np.ndarray  # (R, S, L)
    actions: np.ndarray     # (R, K) episode choices, empty for allocation policies
    areas: np.ndarray
    areas_sq: np.ndarray
    queue_hist: np.ndarray  # (R, J, bins)
    decomposition_error: float

    def mean(self, name):
        return mean_ci(self.series[name])


def summarize_policy(prep: Prepared, reps: list[Replication]) -> PolicyResult:
    times = prep.times
    n = len(reps)
    ser = {k: np.zeros((n, len(times))) for k in SERIES}
    worst = 0.0
    for r, rep in enumerate(reps):
        R, terms = regret_series(prep, rep.D)
        pay = rep.P.sum(axis=1).astype(float)
        ser["cumulative_payoff"][r] = pay
        ser["payoff_rate"][r] = np.divide(pay, times, out=np.zeros_like(pay), where=times > 0)
        ser["pseudo_regret"][r] = R
        ser["term_I"][r], ser["term_II"][r], ser["term_III"][r] = terms.T
        ser["system_size"][r] = rep.N
        if not np.isnan(terms).any():
            err = np.abs(terms.sum(axis=1) - R) / (1.0 + np.abs(R))
            worst = max(worst, float(err.max()))
        else:
            worst = math.nan
    return PolicyResult(
        reps[0].policy, times, ser, np.stack([r.D for r in reps]),
        np.stack([r.actions for r in reps]) if len(reps[0].actions) else np.zeros((n, 0), np.int64),
        np.array([r.area for r in reps]), np.array([r.area_sq for r in reps]),
        np.stack([r.queue_hist for r in reps]), worst)


def _job(args):
    prep, name, rep = args
    return simulate_replication(prep, name, rep)


def run_policy(prep: Prepared, name: str, workers: int = 1) -> PolicyResult:
    jobs = [(prep, name, r) for r in range(prep.scenario.replications)]
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            reps = list(pool.map(_job, jobs))   # map keeps replication order
    else:
        reps = [_job(j) for j in jobs]
    return summarize_policy(prep, reps)


@dataclass
class ExperimentResult:
    prepared: Prepared
    policies: dict = field(default_factory=dict)


def run_experiment(sc: Scenario, out_dir=None, workers: int | None = None) -> ExperimentResult:
    """Run every policy of the scenario; write CSVs and a summary if ``out_dir``."""
    prep = prepare(sc)
    result = ExperimentResult(prep)
    for name in sc.policies:
        result.policies[name] = run_policy(prep, name, workers or sc.workers)
    if out_dir is not None:
        write_outputs(result, Path(out_dir))
    return result


def _fmt(v: float) -> str:
    return repr(float(v))


def write_series(path: Path, times, mean, ci) -> None:
    with open(path, "w") as fh:
        fh.write("time,mean,ci_halfwidth\n")
        for t, m, c in zip(times, mean, ci):
            fh.write(f"{_fmt(t)},{_fmt(m)},{_fmt(c)}\n")


def action_frequencies(actions: np.ndarray, num_actions: int) -> np.ndarray:
    """Episode x action counts over replications."""
    K = actions.shape[1]
    out = np.zeros((K, num_actions), dtype=np.int64)
    for k in range(K):
        out[k] = np.bincount(actions[:, k], minlength=num_actions)
    return out


def policy_summary(prep: Prepared, res: PolicyResult) -> dict:
    sc = prep.scenario
    ts = table1_summary(res.areas, res.areas_sq, sc.horizon)
    out = {"replications": int(res.areas.size),
           "system_size": {"mean": ts.mean, "std_between_replications": ts.std_between,
                           "std_within_run": ts.std_within},
           "decomposition_max_relative_error": res.decomposition_error}
    for name in ("payoff_rate", "pseudo_regret", "cumulative_payoff"):
        m, c = res.mean(name)
        out[name] = {"mean": float(m[-1]), "ci_halfwidth": float(c[-1])}
    if res.actions.shape[1]:
        starts = np.concatenate([[0.0], prep.episode_ends[:-1]])
        late = starts >= sc.horizon / 2
        counts = np.bincount(res.actions[:, late].ravel(), minlength=len(prep.actions))
        out["episodes"] = int(res.actions.shape[1])
        out["late_action_share"] = {str(a + 1): float(c / counts.sum())
                                    for a, c in enumerate(counts) if c}
    return out


def write_outputs(result: ExperimentResult, out: Path) -> None:
    prep = result.prepared
    sc = prep.scenario
    net = sc.network
    out.mkdir(parents=True, exist_ok=True)
    summary = {
        "scenario": sc.name, "horizon": sc.horizon, "replications": sc.replications,
        "seed": sc.seed, "epsilon": str(sc.epsilon),
        "alpha": prep.episodes.alpha, "beta": prep.episodes.beta, "h0": prep.episodes.h0,
        "num_actions": len(prep.actions), "episodes": int(len(prep.episode_ends)),
        "optimal_action": [None if p.optimal is None else p.optimal + 1 for p in prep.pieces],
        "optimal_reward": [p.r_opt for p in prep.pieces],
        "change_times": [p.start for p in prep.pieces[1:]],
        "policies": {},
    }
    for name, res in result.policies.items():
        d = out / name
        d.mkdir(exist_ok=True)
        for s in SERIES:
            m, c = res.mean(s)
            write_series(d / f"{s}.csv", res.times, m, c)
        for k, (i, j) in enumerate(net.lines):
            m, c = mean_ci(res.departures[:, :, k])
            write_series(d / f"departures_{i + 1}_{j + 1}.csv", res.times, m, c)
        if res.actions.shape[1]:
            freq = action_frequencies(res.actions, len(prep.actions))
            with open(d / "action_frequencies.csv", "w") as fh:
                fh.write("episode,action_index,count\n")
                for k in range(freq.shape[0]):
                    for a in range(freq.shape[1]):
                        fh.write(f"{k + 1},{a + 1},{freq[k, a]}\n")
        summary["policies"][name] = policy_summary(prep, res)
    with open(out / "summary.json", "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
