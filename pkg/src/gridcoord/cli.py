"""Command-line entry point: ``gridcoord <command> CASE [options]``.

Exit codes: 0 success, 1 domain error (bad case, infeasible instance,
invalid parameter), 2 usage error, 3 iteration limit reached.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from . import __version__
from .centralized import brute_force_plan, solve_centralized
from .config import RunConfig
from .errors import ConvergenceError, DomainError, GridcoordError
from .netmodel import Network, load_case, validate
from .serialize import write_csv, write_json

COMMANDS = ("validate", "centralized", "stage1", "stage2", "pipeline", "game", "bruteforce")
STAGE1_HEADER = ["nu", "region", "u_prop", "u_tpc", "LB", "UB", "gap"]
STAGE2_HEADER = ["sigma", "max_residual", "objective"]

EXIT_OK, EXIT_DOMAIN, EXIT_USAGE, EXIT_LIMIT = 0, 1, 2, 3

# flag dest -> (config section, field)
_OVERRIDES = {
    "eps": ("stage1", "eps"),
    "consensus_tol": ("stage1", "consensus_tol_flow"),
    "consensus_tol_angle": ("stage1", "consensus_tol_angle"),
    "rel_gap": ("stage1", "rel_gap"),
    "alpha0": ("stage1", "alpha0"),
    "nu0": ("stage1", "nu0"),
    "beta": ("stage1", "beta"),
    "flow_mode": ("stage1", "flow_mode"),
    "step_rule": ("stage1", "step_rule"),
    "stable_rounds": ("stage1", "stable_rounds"),
    "max_iter_stage1": ("stage1", "max_iter"),
    "eps_app": ("stage2", "eps_app"),
    "eta": ("stage2", "eta"),
    "gamma": ("stage2", "gamma"),
    "delta": ("stage2", "delta"),
    "max_iter_stage2": ("stage2", "max_iter"),
    "mode": ("schedule", "mode"),
    "p": ("schedule", "p"),
    "seed": ("schedule", "seed"),
    "staleness": ("schedule", "staleness"),
}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="gridcoord", description=__doc__.split("\n")[0])
    ap.add_argument("--version", action="version", version=f"gridcoord {__version__}")
    ap.add_argument("command", choices=COMMANDS)
    ap.add_argument("case", help="JSON case file")
    ap.add_argument("--config", help="JSON run configuration; flags override its values")
    ap.add_argument("--out", dest="output_dir", help="output directory (default: config value or .)")

    g1 = ap.add_argument_group("stage 1")
    g1.add_argument("--eps", type=float, help="duality-gap tolerance")
    g1.add_argument("--consensus-tol", type=float, help="flow consensus tolerance (MW)")
    g1.add_argument("--consensus-tol-angle", type=float, help="angle consensus tolerance (rad)")
    g1.add_argument("--rel-gap", type=float, help="branch-and-bound relative gap")
    g1.add_argument("--alpha0", type=float, help="diminishing step scale")
    g1.add_argument("--nu0", type=float, help="diminishing step decay constant")
    g1.add_argument("--beta", type=float, help="BCD divisor (default: number of regions)")
    g1.add_argument("--flow-mode", choices=("signed", "magnitude"))
    g1.add_argument("--step-rule", choices=("polyak", "diminishing"))
    g1.add_argument("--stable-rounds", type=int, help="build-agreement rounds to stop (0 disables)")
    g1.add_argument("--max-iter-stage1", type=int)

    g2 = ap.add_argument_group("stage 2")
    g2.add_argument("--eps-app", type=float, help="consensus residual tolerance")
    g2.add_argument("--eta", type=float)
    g2.add_argument("--gamma", type=float)
    g2.add_argument("--delta", type=float)
    g2.add_argument("--max-iter-stage2", type=int)
    g2.add_argument("--u", help="build vector for stage2, e.g. k1=1,k2=0 (default: centralized optimum)")

    gs = ap.add_argument_group("schedule")
    gs.add_argument("--mode", choices=("synchronous", "asynchronous"))
    gs.add_argument("--p", type=float, help="skip probability in asynchronous mode")
    gs.add_argument("--seed", type=int)
    gs.add_argument("--staleness", type=int, help="max consecutive skipped rounds")

    ap.add_argument("--max-iter", type=int, help="iteration limit for both stages")

    gg = ap.add_argument_group("game")
    gg.add_argument("--convention", default="plain", help="plain | bribe | bribe(B)")
    gg.add_argument("--congestion-rent", action="store_true", help="credit half of each shared line's rent")
    gg.add_argument("--format", choices=("text", "json"), default="text", help="stdout rendering")
    return ap


def resolve_config(args: argparse.Namespace) -> RunConfig:
    """Config file values, then flag overrides."""
    cfg = RunConfig.load(args.config) if args.config else RunConfig()
    cfg.case = args.case
    cfg.command = args.command
    if args.output_dir is not None:
        cfg.output_dir = args.output_dir
    if args.max_iter is not None:
        cfg.stage1.max_iter = cfg.stage2.max_iter = args.max_iter
    for dest, (section, name) in _OVERRIDES.items():
        v = getattr(args, dest)
        if v is not None:
            setattr(getattr(cfg, section), name, v)
    cfg.check()
    return cfg


def parse_u(text: str | None, net: Network) -> dict[str, int]:
    ids = [k.id for k in net.candidate_lines]
    if text is None:
        return dict(solve_centralized(net).build)
    out = dict.fromkeys(ids, 0)
    for item in filter(None, (t.strip() for t in text.split(","))):
        key, sep, val = item.partition("=")
        if not sep or key not in out or val not in ("0", "1"):
            raise DomainError(f"bad build entry {item!r}", "--u")
        out[key] = int(val)
    return out


def _stage1_summary(r) -> dict:
    return {"u": r.u, "LB": r.LB, "UB": r.UB, "UB_recovery": r.UB_recovery, "gap": r.gap, "iterations": r.iterations,
            "reason": r.reason, "build_consensus": r.build_consensus,
            "plan": r.plan.to_dict() if r.plan else None}


def _stage2_summary(r) -> dict:
    return {"iterations": r.iterations, "reason": r.reason,
            "residual": r.residuals[-1] if r.residuals else None, "plan": r.plan.to_dict()}


def _run(cfg: RunConfig, args: argparse.Namespace) -> int:
    from .gametool import game_matrix
    from .runtime import Bus, run_pipeline
    from .stage1 import run_stage1
    from .stage2 import run_stage2

    out = Path(cfg.output_dir)
    net = load_case(cfg.case)
    cmd = cfg.command

    if cmd == "validate":
        rep = validate(net)
        for w in rep.warnings:
            print(f"warning: {w}", file=sys.stderr)
        for v in rep.violations:
            print(f"error: {v}", file=sys.stderr)
        out.mkdir(parents=True, exist_ok=True)
        write_json({"ok": rep.ok, "violations": [str(v) for v in rep.violations],
                    "warnings": [str(w) for w in rep.warnings]}, out / "result.json")
        return EXIT_OK if rep.ok else EXIT_DOMAIN

    if cmd in ("centralized", "bruteforce"):
        plan = solve_centralized(net, cfg.stage1.rel_gap) if cmd == "centralized" else brute_force_plan(net)
        if not plan.feasible:
            raise DomainError(f"instance is {plan.status}", cfg.case)
        out.mkdir(parents=True, exist_ok=True)
        write_json(plan.to_dict(), out / "result.json")
        print(f"objective {plan.objective:.12g} build {plan.build}")
        return EXIT_OK

    if cmd == "game":
        gm = game_matrix(net, args.convention, args.congestion_rent)
        out.mkdir(parents=True, exist_ok=True)
        write_json(gm.to_dict(), out / "result.json")
        print(gm.to_json() if args.format == "json" else gm.to_text(), end="" if args.format == "text" else "\n")
        return EXIT_OK

    bus = Bus()
    if cmd == "stage1":
        r = run_stage1(net, cfg.stage1, cfg.schedule, bus)
        out.mkdir(parents=True, exist_ok=True)
        write_json(_stage1_summary(r), out / "result.json")
        write_csv(STAGE1_HEADER, r.trace, out / "stage1_trace.csv")
        bus.write(out / "messages.jsonl")
        print(f"stage 1: {r.reason} after {r.iterations} rounds, u = {r.u}, gap {r.gap:.3g}")
        return EXIT_OK if r.converged else EXIT_LIMIT

    if cmd == "stage2":
        u = parse_u(args.u, net)
        r = run_stage2(net, u, cfg.stage2, cfg.schedule, bus)
        out.mkdir(parents=True, exist_ok=True)
        write_json({"u": u, **_stage2_summary(r)}, out / "result.json")
        write_csv(STAGE2_HEADER, r.trace, out / "stage2_trace.csv")
        bus.write(out / "messages.jsonl")
        print(f"stage 2: {r.reason} after {r.iterations} iterations, objective {r.plan.objective:.12g}")
        return EXIT_OK if r.converged else EXIT_LIMIT

    # pipeline
    code = EXIT_OK
    try:
        res = run_pipeline(net, cfg)
    except ConvergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        res, code = exc.partial, EXIT_LIMIT
    out.mkdir(parents=True, exist_ok=True)
    body = {"reason": res.reason, "u": res.u, "plan": res.plan.to_dict() if res.plan else None,
            "stage1": _stage1_summary(res.stage1) if res.stage1 else None,
            "stage2": _stage2_summary(res.stage2) if res.stage2 else None}
    write_json(body, out / "result.json")
    if res.stage1 is not None:
        write_csv(STAGE1_HEADER, res.stage1.trace, out / "stage1_trace.csv")
    if res.stage2 is not None:
        write_csv(STAGE2_HEADER, res.stage2.trace, out / "stage2_trace.csv")
    res.bus.write(out / "messages.jsonl")
    if code == EXIT_OK:
        print(f"pipeline: u = {res.u}, objective {res.plan.objective:.12g}")
    return code


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    try:
        cfg = resolve_config(args)
        return _run(cfg, args)
    except GridcoordError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DOMAIN


if __name__ == "__main__":
    sys.exit(main())
