"""Command-line interface.

Subcommands: solve, oracle, evaluate, demo, check, gen-tree.  Reports are
JSON with sorted keys (CSV for curves via --format csv) and contain no
timestamps, so identical inputs give byte-identical outputs.  Exit codes:
0 success, 1 failed check or internal disagreement, 2 invalid input,
3 numeric failure, 4 enumeration capacity exceeded.
"""

from __future__ import annotations

import argparse
import json
import sys
from typing import Sequence

from .analysis import indirect_utility_demo, nonconvexity_demo
from .oracle import ActionGrid, CapacityError, brute_force_solve, history_dp
from .solver import SolveConfig, SolverNumericError, evaluate_strategy, solve
from .tree import (
    PredictableAssignment,
    ScenarioTree,
    generate,
    monotone_depth_check,
    preset,
)
from .utility import check_assumptions, parse_utility

__all__ = ["main"]

GEN_NAMES = ("det-example", "zero-price", "binomial", "notconvex")


def _add_source(p: argparse.ArgumentParser) -> None:
    g = p.add_mutually_exclusive_group(required=True)
    g.add_argument("--tree", metavar="PATH", help="scenario tree JSON file")
    g.add_argument("--gen", choices=GEN_NAMES, help="generate a built-in tree")
    p.add_argument(
        "--seed",
        type=int,
        metavar="INT",
        help="seed recorded on a generated tree (built-in generators are "
        "deterministic; the seed is echoed in the report)",
    )


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--utility", default="exp:alpha=1.0", help="utility spec string")
    p.add_argument("--z", type=float, default=0.0, help="cash endowment")
    p.add_argument("--out", metavar="PATH", help="write the report here instead of stdout")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="impactdp",
        description="Optimal trade execution with transient impact on scenario trees.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("solve", help="grid solver: value functions plus an extracted strategy")
    _add_source(p)
    _add_common(p)
    p.add_argument("--grid-xi", type=int, default=41, help="cash grid points")
    p.add_argument("--grid-zeta", type=int, default=21, help="spread grid points")
    p.add_argument("--grid-x", type=int, default=21, help="position grid points")
    p.add_argument("--actions", type=int, default=201, help="action grid points (odd)")
    p.add_argument("--k0", type=float, default=1.0, help="initial action half-width")
    p.add_argument("--k-factor", type=float, default=2.0, help="half-width expansion factor")

    p = sub.add_parser("oracle", help="exhaustive solvers on a finite action grid")
    _add_source(p)
    _add_common(p)
    p.add_argument(
        "--oracle-grid",
        default="-1,-0.5,0,0.5,1",
        help="comma-separated admissible trades (must contain 0)",
    )

    p = sub.add_parser("evaluate", help="exact expected utility of a stored strategy")
    _add_source(p)
    _add_common(p)
    p.add_argument("--strategy", required=True, metavar="PATH", help="strategy JSON file")

    p = sub.add_parser("demo", help="worked counterexamples")
    p.add_argument("which", choices=("nonconvex", "indirect-utility"))
    p.add_argument("--format", choices=("json", "csv"), default="json")
    p.add_argument("--out", metavar="PATH")

    p = sub.add_parser("check", help="validate a tree, its depth profile and a utility")
    _add_source(p)
    _add_common(p)

    p = sub.add_parser("gen-tree", help="write a built-in scenario tree as JSON")
    p.add_argument("--gen", choices=GEN_NAMES, required=True)
    p.add_argument("--seed", type=int, metavar="INT")
    p.add_argument("--out", metavar="PATH")

    return parser


def _load_tree(args) -> tuple[ScenarioTree, dict]:
    seed = getattr(args, "seed", None)
    if args.tree is not None:
        if seed is not None:
            raise ValueError("--seed only applies to generated trees (--gen)")
        return ScenarioTree.load(args.tree), {"tree": args.tree}
    source = {"gen": args.gen}
    if seed is not None:
        source["seed"] = seed
    return generate(preset(args.gen, seed=seed)), source


def _emit(text: str, out: str | None) -> None:
    if out is None:
        sys.stdout.write(text)
    else:
        with open(out, "w", encoding="utf-8") as fh:
            fh.write(text)


def _emit_json(obj: dict, out: str | None) -> None:
    _emit(json.dumps(obj, indent=2, sort_keys=True) + "\n", out)


def _cmd_solve(args) -> int:
    tree, source = _load_tree(args)
    u = parse_utility(args.utility)
    config = SolveConfig(
        xi_count=args.grid_xi,
        zeta_count=args.grid_zeta,
        x_count=args.grid_x,
        action_count=args.actions,
        k0=args.k0,
        k_factor=args.k_factor,
    )
    report = solve(tree, u, args.z, config)
    payload = {
        "command": "solve",
        "source": source,
        "utility": u.describe(),
        "z": args.z,
        "config": config.echo(),
    }
    payload.update(report.to_dict())
    _emit_json(payload, args.out)
    return 0


def _cmd_oracle(args) -> int:
    tree, source = _load_tree(args)
    u = parse_utility(args.utility)
    grid = ActionGrid.from_text(args.oracle_grid)
    bf = brute_force_solve(tree, u, args.z, grid)
    hd = history_dp(tree, u, args.z, grid)
    identical = bf.value == hd.value
    payload = {
        "command": "oracle",
        "source": source,
        "utility": u.describe(),
        "z": args.z,
        "grid": list(grid.values),
        "value": bf.value,
        "strategy": bf.strategy.to_report(),
        "enumerated": bf.candidates,
        "recursion_evaluations": hd.candidates,
        "methods_identical": identical,
    }
    _emit_json(payload, args.out)
    if not identical:
        print("enumeration and recursion disagree; this is a bug", file=sys.stderr)
        return 1
    return 0


def _cmd_evaluate(args) -> int:
    tree, source = _load_tree(args)
    u = parse_utility(args.utility)
    with open(args.strategy, "r", encoding="utf-8") as fh:
        raw = json.load(fh)
    if isinstance(raw, dict) and "strategy" in raw:
        raw = raw["strategy"]
    assignment = PredictableAssignment.from_report(raw)
    value = evaluate_strategy(tree, assignment, u, args.z)
    payload = {
        "command": "evaluate",
        "source": source,
        "utility": u.describe(),
        "z": args.z,
        "strategy": assignment.to_report(),
        "value": value,
    }
    _emit_json(payload, args.out)
    return 0


def _cmd_demo(args) -> int:
    if args.which == "nonconvex":
        if args.format == "csv":
            raise ValueError("csv output is only available for the indirect-utility curve")
        rep = nonconvexity_demo()
        _emit_json({"command": "demo", "which": "nonconvex", **rep.to_dict()}, args.out)
        return 0 if rep.margin > 0.0 else 1
    rep = indirect_utility_demo()
    if args.format == "csv":
        lines = ["z,value"] + [f"{float(z)!r},{float(v)!r}" for z, v in zip(rep.z, rep.values)]
        _emit("\n".join(lines) + "\n", args.out)
    else:
        _emit_json({"command": "demo", "which": "indirect-utility", **rep.to_dict()}, args.out)
    return 0 if rep.kink_detected else 1


def _cmd_check(args) -> int:
    tree, source = _load_tree(args)
    failures: list[str] = []
    validation = tree.validate()
    if not validation.ok:
        failures.append("tree-invalid")
    depth = monotone_depth_check(tree)
    if not depth.holds:
        failures.append("monotone-condition")
    payload = {
        "command": "check",
        "source": source,
        "valid": validation.ok,
        "violations": list(validation.violations),
        "monotone_depth": {
            "holds": depth.holds,
            "violations": [[int(a), int(b)] for a, b in depth.violations],
        },
        "utility_assumptions": None,
    }
    if args.utility:
        u = parse_utility(args.utility)
        rep = check_assumptions(u)
        payload["utility_assumptions"] = {
            "ok": rep.ok,
            "bound": rep.c_u,
            "monotonicity_violations": rep.monotonicity_violations,
            "bound_violations": rep.bound_violations,
            "lower_limit_ok": rep.lower_limit_ok,
        }
        if not rep.ok:
            failures.append("utility-assumptions")
    payload["failures"] = failures
    _emit_json(payload, args.out)
    return 0 if not failures else 1


def _cmd_gen_tree(args) -> int:
    tree = generate(preset(args.gen, seed=args.seed))
    _emit(tree.to_json(), args.out)
    return 0


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    handlers = {
        "solve": _cmd_solve,
        "oracle": _cmd_oracle,
        "evaluate": _cmd_evaluate,
        "demo": _cmd_demo,
        "check": _cmd_check,
        "gen-tree": _cmd_gen_tree,
    }
    try:
        return handlers[args.command](args)
    except CapacityError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4
    except SolverNumericError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except (ValueError, OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
