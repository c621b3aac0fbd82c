"""Command line: ``ucbqr analyze | simulate | summarize``.

Exit codes: 0 on success, 2 for an invalid scenario, 3 when the payoff
means do not single out one optimal action.
"""

from __future__ import annotations

import argparse
import json
import sys
from fractions import Fraction
from pathlib import Path

from ..lp_actions import (DegenerateInstanceError, LPError, action_gaps, alpha_lower_bound,
                          c_beta, dual_solution, enumerate_actions, h0_lower_bound,
                          lower_bound_constant, max_epsilon)
from .runner import run_experiment
from .scenario import ScenarioError, bundled_scenarios, load_scenario

EXIT_OK, EXIT_INVALID, EXIT_DEGENERATE = 0, 2, 3


def _num(x):
    if isinstance(x, Fraction):
        return int(x) if x.denominator == 1 else float(x)
    return x


def _line(ln):
    return f"({ln[0] + 1},{ln[1] + 1})"


def analyze(sc) -> tuple[dict, str]:
    """LP report for a scenario as (structured data, text)."""
    net = sc.network
    _, report = enumerate_actions(net, sc.epsilon, check_eps=False, with_report=True)
    actions = sc.actions()
    rewards, gaps, best = action_gaps(actions, sc.theta)
    cert = dual_solution(actions[best], sc.theta, net, sc.epsilon)
    lb = lower_bound_constant(net, sc.theta, sc.epsilon, actions)
    data = {
        "scenario": sc.name,
        "epsilon": _num(sc.epsilon),
        "max_epsilon": _num(max_epsilon(net)),
        "enumeration": {"candidates": report.candidates, "bases": report.bases,
                        "infeasible": report.infeasible, "degenerate": report.degenerate},
        "num_actions": len(actions),
        "actions": [{"index": a.index + 1,
                     "rates": {_line(ln): _num(x) for ln, x in sorted(a.rate_map().items())},
                     "reward": _num(r), "gap": _num(g)}
                    for a, r, g in zip(actions, rewards, gaps)],
        "optimal_action": best + 1,
        "optimal_reward": _num(rewards[best]),
        "dual": {"v": [_num(x) for x in cert.v], "w": [_num(x) for x in cert.w],
                 "gaps": {_line(ln): _num(g) for ln, g in zip(net.lines, cert.gaps)},
                 "suboptimal_lines": [_line(ln) for ln in sorted(cert.suboptimal_lines)]},
        "alpha_lower_bound": alpha_lower_bound(net, actions),
        "h0_lower_bound": h0_lower_bound(actions),
        "c_beta": c_beta(sc.beta, net.num_servers),
        "lower_bound_constant": lb.constant,
        "lower_bound_terms": [{"line": _line(t.line), "gap": _num(t.gap),
                               "threshold": _num(t.threshold), "kl": t.kl,
                               "contribution": t.contribution} for t in lb.terms],
    }
    out = [f"scenario {sc.name}: {net.num_types} types, {net.num_servers} servers, "
           f"{net.num_lines} lines",
           f"epsilon {data['epsilon']} (insensitivity bound {data['max_epsilon']})",
           f"candidate column sets {report.candidates}, spanning forests {report.bases}, "
           f"infeasible {report.infeasible}, degenerate {report.degenerate}",
           f"{len(actions)} actions; optimal action {best + 1}, reward {float(rewards[best]):.6g}",
           "", "action  reward      gap         rates"]
    for a in data["actions"]:
        rates = " ".join(f"{k}={v:g}" for k, v in a["rates"].items())
        out.append(f"{a['index']:>6}  {float(a['reward']):<10.6g}  {float(a['gap']):<10.6g}  {rates}")
    out += ["", "dual prices",
            "  v: " + " ".join(f"{x:g}" for x in data["dual"]["v"]),
            "  w: " + " ".join(f"{x:g}" for x in data["dual"]["w"]),
            "line gaps: " + " ".join(f"{k}={v:g}" for k, v in data["dual"]["gaps"].items()),
            "suboptimal lines: " + " ".join(data["dual"]["suboptimal_lines"]),
            "", f"alpha lower bound {data['alpha_lower_bound']:.6g}",
            f"H0 lower bound {data['h0_lower_bound']:.6g}",
            f"C_beta {data['c_beta']:.6g}",
            f"regret lower-bound constant {lb.constant:.6g}"]
    return data, "\n".join(out)


def cmd_analyze(args) -> int:
    sc = load_scenario(args.scenario)
    data, text = analyze(sc)
    print(text)
    path = Path(args.json) if args.json else Path(f"{sc.name}_analysis.json")
    path.write_text(json.dumps(data, indent=2) + "\n")
    print(f"\nwrote {path}")
    return EXIT_OK


def cmd_simulate(args) -> int:
    sc = load_scenario(args.scenario).with_overrides(
        policies=args.policies, seed=args.seed, replications=args.reps, horizon=args.horizon,
        workers=args.workers)
    run_experiment(sc, args.out)
    print(f"wrote results for {', '.join(sc.policies)} to {args.out}")
    return cmd_summarize(argparse.Namespace(dir=args.out))


def cmd_summarize(args) -> int:
    path = Path(args.dir) / "summary.json"
    try:
        s = json.loads(path.read_text())
    except (OSError, ValueError) as exc:
        print(f"error: cannot read {path}: {exc}", file=sys.stderr)
        return EXIT_INVALID
    print(f"scenario {s['scenario']}, horizon {s['horizon']:g}, {s['replications']} replications, "
          f"{s['episodes']} episodes")
    print(f"{'policy':<10} {'E[N]':>10} {'sd(reps)':>10} {'sd(time)':>10} "
          f"{'payoff rate':>12} {'regret':>12}")
    for name, p in s["policies"].items():
        n = p["system_size"]
        print(f"{name:<10} {n['mean']:>10.4g} {n['std_between_replications']:>10.4g} "
              f"{n['std_within_run']:>10.4g} {p['payoff_rate']['mean']:>12.5g} "
              f"{p['pseudo_regret']['mean']:>12.5g}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ucbqr", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    scen_help = ("scenario file, or the name of a bundled scenario ("
                 + ", ".join(bundled_scenarios()) + ")")

    a = sub.add_parser("analyze", help="print the LP, action and dual report")
    a.add_argument("scenario", help=scen_help)
    a.add_argument("--json", help="structured output path (default <name>_analysis.json)")
    a.set_defaults(func=cmd_analyze)

    s = sub.add_parser("simulate", help="run replications and write CSV series")
    s.add_argument("scenario", help=scen_help)
    s.add_argument("--out", required=True, help="output directory")
    s.add_argument("--policies", help="comma-separated policy names")
    s.add_argument("--seed", type=int)
    s.add_argument("--reps", type=int)
    s.add_argument("--horizon", type=float)
    s.add_argument("--workers", type=int, help="parallel worker processes")
    s.set_defaults(func=cmd_simulate)

    m = sub.add_parser("summarize", help="system-size and payoff table for a results directory")
    m.add_argument("dir")
    m.set_defaults(func=cmd_summarize)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ScenarioError as exc:
        print(f"invalid scenario: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except DegenerateInstanceError as exc:
        print(f"degenerate instance: {exc}", file=sys.stderr)
        return EXIT_DEGENERATE
    except LPError as exc:
        print(f"invalid scenario: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
