"""Scenario files.

A scenario is a YAML document with the sections ``network``, ``theta``,
``schedule`` (optional), ``policies`` and ``run``, plus an optional
``action_order``.  Types, servers and lines are written 1-based, as in the
usual notation; everything is converted to 0-based on load.  See the
shipped files under ``ucbqr/scenarios`` for complete examples.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from fractions import Fraction
from importlib import resources
from pathlib import Path

import yaml

from ..lp_actions import (Action, LPError, enumerate_actions, h0_lower_bound, max_epsilon,
                          reorder_actions, alpha_lower_bound)
from ..model import (CompatibilityNetwork, ModelError, ParameterChange, ParameterSchedule,
                     PayoffModel, as_fraction, check_stability)
from ..policies import ORACLE_TIE_BREAKS, POLICY_NAMES, REFRESH_MODES, EpisodeSchedule

SECTIONS = {"name", "description", "network", "theta", "schedule", "policies", "run",
            "action_order"}


class ScenarioError(ValueError):
    pass


@dataclass(frozen=True)
class ChangeSpec:
    """A payoff change given either at an absolute time or a horizon fraction."""
    line: tuple[int, int]
    mean: Fraction
    time: float | None = None
    fraction: Fraction | None = None

    def at(self, horizon: float) -> float:
        return float(self.time) if self.time is not None else float(self.fraction) * horizon


@dataclass(frozen=True)
class Scenario:
    name: str
    network: CompatibilityNetwork
    theta: PayoffModel
    changes: tuple[ChangeSpec, ...]
    policies: tuple[str, ...]
    alpha: float | str
    beta: float
    h0: float | str
    refresh: str
    horizon: float
    replications: int
    seed: int
    grid_points: int
    epsilon: Fraction
    workers: int = 1
    action_order: tuple | None = None
    oracle_tie_break: str = "error"

    def schedule(self) -> ParameterSchedule:
        chg = [ParameterChange(c.at(self.horizon), c.line, c.mean) for c in self.changes]
        try:
            return ParameterSchedule(chg)
        except ModelError as exc:
            raise ScenarioError(str(exc)) from None

    def actions(self) -> list[Action]:
        acts = enumerate_actions(self.network, self.epsilon, check_eps=False)
        if self.action_order:
            acts = reorder_actions(acts, self.action_order)
        return acts

    def episode_schedule(self, actions) -> EpisodeSchedule:
        alpha = alpha_lower_bound(self.network, actions) if self.alpha == "auto" else self.alpha
        h0 = h0_lower_bound(actions) if self.h0 == "auto" else self.h0
        return EpisodeSchedule(float(alpha), float(self.beta), float(h0),
                               self.network.num_servers)

    def with_overrides(self, **kw) -> "Scenario":
        kw = {k: v for k, v in kw.items() if v is not None}
        if "policies" in kw:
            kw["policies"] = _policy_names(kw["policies"])
        out = dataclasses.replace(self, **kw)
        _check_run(out)
        return out


def _require(d, key, where):
    if not isinstance(d, dict) or key not in d:
        raise ScenarioError(f"{where}: missing required key {key!r}")
    return d[key]


def _number(v, where, positive=False, nonneg=False) -> Fraction:
    try:
        f = as_fraction(v)
    except ModelError as exc:
        raise ScenarioError(f"{where}: {exc}") from None
    if positive and f <= 0:
        raise ScenarioError(f"{where}: must be positive, got {v!r}")
    if nonneg and f < 0:
        raise ScenarioError(f"{where}: must be nonnegative, got {v!r}")
    return f


def _line(v, where, net: CompatibilityNetwork | None = None) -> tuple[int, int]:
    if not (isinstance(v, (list, tuple)) and len(v) == 2 and all(isinstance(x, int) for x in v)):
        raise ScenarioError(f"{where}: a line is a pair of 1-based integers, got {v!r}")
    ln = (v[0] - 1, v[1] - 1)
    if net is not None and ln not in net.lines:
        raise ScenarioError(f"{where}: {tuple(v)} is not a compatibility line")
    return ln


def _policy_names(names) -> tuple[str, ...]:
    if isinstance(names, str):
        names = [n.strip() for n in names.split(",") if n.strip()]
    names = tuple(names)
    if not names:
        raise ScenarioError("policies: at least one policy is required")
    for n in names:
        if n not in POLICY_NAMES:
            raise ScenarioError(f"policies: unknown policy {n!r}; choose from {', '.join(POLICY_NAMES)}")
    return names


def _check_run(sc: Scenario) -> None:
    if not sc.horizon > 0:
        raise ScenarioError("run.horizon must be positive")
    if sc.replications < 1:
        raise ScenarioError("run.replications must be at least 1")
    if sc.seed < 0:
        raise ScenarioError("run.seed must be nonnegative")
    if sc.grid_points < 1:
        raise ScenarioError("run.grid_points must be at least 1")
    if sc.workers < 1:
        raise ScenarioError("run.workers must be at least 1")
    for c in sc.changes:
        t = c.at(sc.horizon)
        if not 0 < t < sc.horizon:
            raise ScenarioError(f"schedule: change time {t} lies outside (0, horizon)")
    sc.schedule()


def parse_scenario(doc: dict, default_name: str = "scenario") -> Scenario:
    if not isinstance(doc, dict):
        raise ScenarioError("scenario must be a mapping")
    unknown = set(doc) - SECTIONS
    if unknown:
        raise ScenarioError(f"unknown section(s): {', '.join(sorted(unknown))}")

    nd = _require(doc, "network", "scenario")
    lam = [_number(v, "network.arrival_rates", positive=True)
           for v in _require(nd, "arrival_rates", "network")]
    mu = [_number(v, "network.service_rates", positive=True)
          for v in _require(nd, "service_rates", "network")]
    lines = [_line(v, "network.lines") for v in _require(nd, "lines", "network")]
    try:
        net = CompatibilityNetwork(lam, mu, lines)
    except ModelError as exc:
        raise ScenarioError(f"network: {exc}") from None
    ok, subset = check_stability(net)
    if not ok:
        raise ScenarioError(f"network: unstable, customer types {[i + 1 for i in subset]} "
                            "demand at least their compatible capacity")

    th = _require(doc, "theta", "scenario")
    if not isinstance(th, list):
        raise ScenarioError("theta: expected a list of [type, server, mean] entries")
    means = {}
    for e in th:
        if not (isinstance(e, list) and len(e) == 3):
            raise ScenarioError(f"theta: entry {e!r} is not [type, server, mean]")
        ln = _line(e[:2], "theta", net)
        if ln in means:
            raise ScenarioError(f"theta: line {tuple(e[:2])} given twice")
        means[ln] = _number(e[2], "theta")
    try:
        theta = PayoffModel(net, means)
    except ModelError as exc:
        raise ScenarioError(f"theta: {exc}") from None

    changes = []
    for e in doc.get("schedule") or []:
        line = _line(_require(e, "line", "schedule"), "schedule", net)
        mean = _number(_require(e, "mean", "schedule"), "schedule.mean")
        if not 0 <= mean <= 1:
            raise ScenarioError("schedule.mean must lie in [0, 1]")
        if ("time" in e) == ("fraction" in e):
            raise ScenarioError("schedule: give exactly one of 'time' or 'fraction'")
        if "time" in e:
            changes.append(ChangeSpec(line, mean, time=float(_number(e["time"], "schedule.time",
                                                                      positive=True))))
        else:
            changes.append(ChangeSpec(line, mean, fraction=_number(e["fraction"], "schedule.fraction",
                                                                   positive=True)))

    pd = _require(doc, "policies", "scenario")
    names = _policy_names(_require(pd, "names", "policies"))
    alpha = pd.get("alpha", "auto")
    h0 = pd.get("h0", "auto")
    if alpha != "auto":
        alpha = float(_number(alpha, "policies.alpha", positive=True))
    if h0 != "auto":
        h0 = float(_number(h0, "policies.h0", positive=True))
    beta = float(_number(pd.get("beta", 1.01), "policies.beta"))
    if beta <= 1:
        raise ScenarioError("policies.beta must exceed 1")
    refresh = pd.get("refresh", "all")
    if refresh not in REFRESH_MODES:
        raise ScenarioError(f"policies.refresh must be one of {REFRESH_MODES}")
    tie = pd.get("oracle_tie_break", "error")
    if tie not in ORACLE_TIE_BREAKS:
        raise ScenarioError(f"policies.oracle_tie_break must be one of {ORACLE_TIE_BREAKS}")

    rd = _require(doc, "run", "scenario")
    eps = _number(_require(rd, "epsilon", "run"), "run.epsilon", nonneg=True)
    try:
        bound = max_epsilon(net)
    except LPError as exc:
        raise ScenarioError(f"network: {exc}") from None
    if eps >= bound:
        raise ScenarioError(f"run.epsilon = {eps} must be below the insensitivity bound {bound}")

    order = doc.get("action_order")
    if order is not None:
        order = tuple(tuple(_line(ln, "action_order", net) for ln in s) for s in order)

    try:
        sc = Scenario(
            name=str(doc.get("name", default_name)), network=net, theta=theta,
            changes=tuple(changes), policies=names, alpha=alpha, beta=beta, h0=h0,
            refresh=refresh, horizon=float(_number(_require(rd, "horizon", "run"), "run.horizon")),
            replications=int(_require(rd, "replications", "run")),
            seed=int(_require(rd, "seed", "run")), grid_points=int(rd.get("grid_points", 1000)),
            epsilon=eps, workers=int(rd.get("workers", 1)), action_order=order,
            oracle_tie_break=tie)
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ScenarioError):
            raise
        raise ScenarioError(f"run: {exc}") from None
    _check_run(sc)
    if order is not None:
        try:
            sc.actions()
        except LPError as exc:
            raise ScenarioError(f"action_order: {exc}") from None
    return sc


def load_scenario(path) -> Scenario:
    """Load a scenario from a file path, or a bundled scenario by name."""
    p = Path(path)
    if not p.exists() and not p.suffix:
        bundled = resources.files("ucbqr") / "scenarios" / f"{path}.yaml"
        if bundled.is_file():
            return parse_scenario(yaml.safe_load(bundled.read_text()), str(path))
    try:
        text = p.read_text()
    except OSError as exc:
        raise ScenarioError(f"cannot read scenario {path}: {exc.strerror}") from None
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ScenarioError(f"{path}: invalid YAML: {exc}") from None
    return parse_scenario(doc, p.stem)


def bundled_scenarios() -> list[str]:
    d = resources.files("ucbqr") / "scenarios"
    return sorted(f.name[:-5] for f in d.iterdir() if f.name.endswith(".yaml"))
