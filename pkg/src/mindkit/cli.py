"""mind-kit command line: predict, tree, plan, sim, bench.

Exit codes: 0 success, 1 internal error, 2 input error, 3 resource budget exceeded.
"""

from __future__ import annotations

import argparse
import csv
import io
import sys
from pathlib import Path

from . import fixtures, viz
from .aime import BudgetExceeded, bench_strategies, build_tree, tree_to_dict
from .config import ConfigError, RunConfig, resolve
from .planner import VARIANTS, Planner, make_predictor
from .sim import compare_planners, make_planner, run_episode
from .world import ScenarioError, canonical_json, load_scenario, resolve_command

EXIT_OK, EXIT_INTERNAL, EXIT_INPUT, EXIT_BUDGET = 0, 1, 2, 3
FIXTURE_PREFIX = "fixture:"


class InputError(Exception):
    pass


def _scenario(spec: str):
    if spec.startswith(FIXTURE_PREFIX):
        name = spec[len(FIXTURE_PREFIX):]
        if name not in fixtures.BUILDERS:
            raise InputError(f"unknown bundled fixture {name!r}; choose from {', '.join(sorted(fixtures.BUILDERS))}")
        return fixtures.BUILDERS[name]()
    return load_scenario(spec)


def _config(args) -> RunConfig:
    flags = {}
    aime = {k: v for k, v in (("beta", args.beta), ("delta", args.delta), ("d_max", args.dmax)) if v is not None}
    planner = {k: v for k, v in (("p", args.p), ("gamma", args.gamma)) if v is not None}
    if aime:
        flags["aime"] = aime
    if planner:
        flags["planner"] = planner
    for key in ("seed", "strategy", "horizon"):
        val = getattr(args, key, None)
        if val is not None:
            flags[key] = val
    return resolve(args.config, flags)


def _command(sc, args):
    if not args.command:
        return sc.ego_route
    return resolve_command(sc.lane_graph, sc.history.ego.current, args.command)


def _write(out: Path, name: str, text: str) -> Path:
    out.mkdir(parents=True, exist_ok=True)
    path = out / name
    path.write_text(text, encoding="utf-8")
    return path


def _prediction_dict(pred, command) -> dict:
    return {
        "command": list(command.lane_ids) if command else None,
        "dt": pred.dt,
        "entities": list(pred.entity_ids),
        "scenarios": [
            {"weight": s.weight, "label": s.label,
             "entities": {eid: {"mean": s.means[:, i], "cov": [[c[0, 0], c[0, 1], c[1, 1]] for c in s.covs[:, i]]}
                          for i, eid in enumerate(s.entity_ids)}}
            for s in pred.scenarios
        ],
    }


def cmd_predict(args) -> int:
    sc = _scenario(args.scenario)
    cfg = _config(args)
    command = _command(sc, args)
    predictor = make_predictor("intention", sc.lane_graph, cfg.predictor)
    pred = predictor(sc.history, command, horizon=cfg.horizon)
    doc = {"config": cfg.to_dict(), **_prediction_dict(pred, command)}
    path = _write(Path(args.out), "prediction.json", canonical_json(doc))
    if args.svg:
        _write(Path(args.out), "prediction.svg", viz.render_prediction(sc.lane_graph, pred))
    print(f"wrote {path} ({len(pred)} scenarios)")
    return EXIT_OK


def cmd_tree(args) -> int:
    sc = _scenario(args.scenario)
    cfg = _config(args)
    command = _command(sc, args)
    predictor = make_predictor("intention", sc.lane_graph, cfg.predictor)
    tree = build_tree(sc.history, sc.lane_graph, command, predictor, cfg.aime, cfg.horizon, strategy=cfg.strategy)
    doc = {"config": cfg.to_dict(), **tree_to_dict(tree, include_gaussians=not args.no_gaussians)}
    path = _write(Path(args.out), "tree.json", canonical_json(doc))
    if args.svg:
        _write(Path(args.out), "tree.svg", viz.render_tree(sc.lane_graph, tree))
    mods = sorted(tree.leaf_modalities())
    print(f"leaves: {len(tree.leaves)}")
    print(f"depth: {tree.depth}")
    print(f"predictor calls: {tree.predictor_calls}")
    print(f"modalities: {' '.join(str(list(m)) for m in mods)}")
    print(f"wrote {path}")
    return EXIT_OK


def cmd_plan(args) -> int:
    sc = _scenario(args.scenario)
    cfg = _config(args)
    command = _command(sc, args)
    variant = VARIANTS["MIND"] if cfg.strategy == "aime" else VARIANTS["NN+CP"]
    if cfg.strategy == "bf":
        raise InputError("planning over a brute-force tree is not supported; use --strategy aime or ss")
    planner = Planner(sc.lane_graph, command, variant, cfg.aime, cfg.predictor, cfg.planner, cfg.reward,
                      cfg.horizon, cfg.chance_samples)
    res = planner.plan(sc.history, seed=cfg.seed)
    plan = {"config": cfg.to_dict(), "policy_id": res.best.policy_node, "degraded": res.degraded,
            **res.best.to_dict()}
    if res.degraded:
        plan["warning"] = "degraded selection: no candidate passed the chance check"
    out = Path(args.out)
    p1 = _write(out, "plan.json", canonical_json(plan))
    p2 = _write(out, "report.json", canonical_json({"config": cfg.to_dict(), **res.report()}))
    if args.svg:
        _write(out, "plan.svg", viz.render_plan(sc.lane_graph, res.tree, res.best))
    print(f"candidates: {len(res.candidates)}  selected: {res.selected}  degraded: {res.degraded}")
    print(f"wrote {p1} and {p2}")
    return EXIT_OK


def cmd_sim(args) -> int:
    sc = _scenario(args.scenario)
    cfg = _config(args)
    if args.command:
        sc = _replace_route(sc, _command(sc, args))
    planner = make_planner(sc, args.planner, cfg)
    log, metrics = run_episode(sc, planner, cfg.seed, cfg.sim)
    out = Path(args.out)
    p1 = _write(out, "episode.jsonl", log.to_jsonl())
    doc = {"config": cfg.to_dict(), "planner": args.planner, "seed": cfg.seed, "reason": log.reason,
           **metrics.to_dict()}
    p2 = _write(out, "metrics.json", canonical_json(doc))
    print(f"{args.planner}: {log.reason} after {metrics.steps} steps; avgSpd {metrics.avg_speed:.3f} "
          f"maxAbsAcc {metrics.max_abs_acc:.3f} rmsAcc {metrics.rms_acc:.3f}")
    print(f"wrote {p1} and {p2}")
    return EXIT_OK


def _replace_route(sc, command):
    from dataclasses import replace

    return replace(sc, ego_route=command)


def cmd_bench(args) -> int:
    cfg = _config(args)
    out = Path(args.out)
    if args.table in ("2", "all"):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["fixture", "strategy", "coverage_pct", "scenarios", "predictor_calls", "comp_cost"])
        for name in args.fixtures.split(","):
            sc = _scenario(FIXTURE_PREFIX + name if ":" not in name and not name.endswith(".json") else name)
            rows = bench_strategies(sc.history, sc.lane_graph, sc.ego_route,
                                    lambda: make_predictor("intention", sc.lane_graph, cfg.predictor),
                                    cfg.aime, cfg.horizon)
            for strat, label in (("ss", "SS"), ("aime", "AIME"), ("bf", "BF-SRCH")):
                r = rows[strat]
                w.writerow([name, label, f"{r.coverage:.1f}", r.scenarios, r.calls, f"{r.cost_ratio:.1f}x"])
        path = _write(out, "table2.csv", buf.getvalue())
        print(buf.getvalue(), end="")
        print(f"wrote {path}")
    if args.table in ("3", "all"):
        sc = _scenario(args.scenario or FIXTURE_PREFIX + "adversarial_intersection")
        variants = tuple(args.variants.split(","))
        for v in variants:
            if v not in VARIANTS:
                raise InputError(f"unknown planner variant {v!r}")
        table = compare_planners(sc, variants, range(args.seeds), cfg, jobs=args.jobs)
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["planner", "seed", "avgSpd", "maxAbsAcc", "rmsAcc", "collision"])
        for v in variants:
            for seed, m in table[v]["seeds"].items():
                w.writerow([v, seed, f"{m.avg_speed:.4f}", f"{m.max_abs_acc:.4f}", f"{m.rms_acc:.4f}", int(m.collision)])
            mean = table[v]["mean"]
            w.writerow([v, "mean", f"{mean['avgSpd']:.4f}", f"{mean['maxAbsAcc']:.4f}", f"{mean['rmsAcc']:.4f}",
                        mean["collisions"]])
        path = _write(out, "table3.csv", buf.getvalue())
        print(buf.getvalue(), end="")
        print(f"wrote {path}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--scenario", help=f"scenario JSON path, or {FIXTURE_PREFIX}NAME for a bundled fixture")
    common.add_argument("--out", default="out", help="output directory (default: out)")
    common.add_argument("--seed", type=int)
    common.add_argument("--strategy", choices=("ss", "aime", "bf"))
    common.add_argument("--command", help="left, straight, right, or comma-separated lane ids")
    common.add_argument("--beta", type=float)
    common.add_argument("--delta", type=float)
    common.add_argument("--dmax", type=int)
    common.add_argument("--horizon", type=int)
    common.add_argument("--p", type=float)
    common.add_argument("--gamma", type=float)
    common.add_argument("--jobs", type=int, default=1)
    common.add_argument("--config", help="JSON config file (falls back to $MIND_KIT_CONFIG)")
    common.add_argument("--svg", action="store_true", help="also write an SVG figure")

    parser = argparse.ArgumentParser(prog="mind-kit", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="cmd", required=True)
    p = sub.add_parser("predict", parents=[common], help="write a scene prediction")
    p.set_defaults(func=cmd_predict, needs_scenario=True)
    p = sub.add_parser("tree", parents=[common], help="build a scenario tree")
    p.add_argument("--no-gaussians", action="store_true", help="omit per-node mean/cov sequences")
    p.set_defaults(func=cmd_tree, needs_scenario=True)
    p = sub.add_parser("plan", parents=[common], help="plan one contingency trajectory tree")
    p.set_defaults(func=cmd_plan, needs_scenario=True)
    p = sub.add_parser("sim", parents=[common], help="run one closed-loop episode")
    p.add_argument("--planner", default="MIND", choices=(*VARIANTS, "none"))
    p.set_defaults(func=cmd_sim, needs_scenario=True)
    p = sub.add_parser("bench", parents=[common], help="strategy and planner comparison tables")
    p.add_argument("--table", choices=("2", "3", "all"), default="2")
    p.add_argument("--fixtures", default=",".join(fixtures.BENCH_FIXTURES))
    p.add_argument("--variants", default="MIND,NN+CP,MB+CP")
    p.add_argument("--seeds", type=int, default=10)
    p.set_defaults(func=cmd_bench, needs_scenario=False)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_INPUT if exc.code not in (0, None) else EXIT_OK
    if args.needs_scenario and not args.scenario:
        print("error: --scenario is required", file=sys.stderr)
        return EXIT_INPUT
    try:
        return args.func(args)
    except BudgetExceeded as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_BUDGET
    except (ScenarioError, ConfigError, InputError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except Exception as exc:  # noqa: BLE001 - surface anything else as an internal error
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
