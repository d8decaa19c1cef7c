"""Command-line entry point: run the method on a problem file or the train benchmark."""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from .criticality import verify_criticality
from .driver import (
    AdaptiveStep,
    ConstantStep,
    NuAdaptive,
    NuSequence,
    NuStepScaled,
    PreviousStep,
    SolverConfig,
    Termination,
    records_to_csv,
    run,
    summary_to_json,
)
from .penalty import BoxMode, PenaltyConfig
from .problem import ProblemLoadError, load_problem, validate
from .subsolver import InfeasibleBaseSet, UnboundedSubproblem
from .train import VARIANTS, build_train, warm_start
from .transcription import DiscreteTrajectory, Grid, trajectory_to_csv

logger = logging.getLogger("bstepdca")

EXIT_OK, EXIT_ERROR, EXIT_NOT_CONVERGED = 0, 1, 2


class UsageError(Exception):
    pass


def _parse_nu(text: str):
    kind, _, arg = text.partition(":")
    try:
        if kind == "s1":
            raw = Path(arg).read_text().replace(",", " ").split()
            return NuSequence(tuple(float(v) for v in raw))
        if kind == "s2":
            return NuAdaptive(float(arg))
        if kind == "s3":
            return NuStepScaled(float(arg) if arg else 0.1)
    except (OSError, ValueError) as exc:
        raise UsageError(f"bad --nu value {text!r}: {exc}") from exc
    raise UsageError(f"--nu expects s1:FILE, s2:DELTA or s3:GAMMA0, got {text!r}")


def _parse_trial(text: str):
    kind, _, arg = text.partition(":")
    try:
        if kind == "const":
            return ConstantStep(float(arg) if arg else 0.0)
        if kind == "prev":
            return PreviousStep(float(arg) if arg else 1.0)
        if kind == "adaptive":
            return AdaptiveStep(float(arg) if arg else 0.5)
    except ValueError as exc:
        raise UsageError(f"bad --trial-step value {text!r}: {exc}") from exc
    raise UsageError(f"--trial-step expects const:A, prev or adaptive:G, got {text!r}")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="bstepdca", description=__doc__)
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--problem", metavar="FILE", help="problem JSON document")
    src.add_argument("--train", metavar="VARIANT", choices=list(VARIANTS) + ["all"], help="built-in train benchmark")
    p.add_argument("--grid", type=int, default=None, help="number of subintervals N (default 480)")
    p.add_argument("--box", choices=[m.value for m in BoxMode], default=None, help="control box handling (problem files)")
    p.add_argument("--c0", type=float)
    p.add_argument("--rho", type=float)
    p.add_argument("--c-max", type=float)
    p.add_argument("--eta1", type=float)
    p.add_argument("--eta2", type=float)
    p.add_argument("--sigma", type=float)
    p.add_argument("--zeta", type=float)
    p.add_argument("--eps-phi", type=float)
    p.add_argument("--eps-feas", type=float)
    p.add_argument("--eps-f", type=float)
    p.add_argument("--eps-x", type=float)
    p.add_argument("--eps-sub", type=float)
    p.add_argument("--nu", help="s1:FILE | s2:DELTA | s3:GAMMA0")
    p.add_argument("--trial-step", help="const:A | prev | adaptive:G")
    p.add_argument("--stopping", type=int, choices=[1, 2])
    p.add_argument("--max-iters", type=int)
    p.add_argument("--warm-start", action="store_true", help="train only: start from a hand-shaped profile")
    p.add_argument("--out", default="results", help="output directory")
    p.add_argument("--jobs", type=int, default=1, help="parallel runs for --train all")
    p.add_argument("--verify-criticality", action="store_true")
    p.add_argument("--log-level", default="WARNING")
    return p


def _override(args, pcfg: PenaltyConfig, scfg: SolverConfig):
    pmap = {"c0": args.c0, "rho": args.rho, "c_max": args.c_max}
    if args.box is not None:
        pmap["control_box_mode"] = BoxMode(args.box)
    smap = {
        "eta1": args.eta1,
        "eta2": args.eta2,
        "sigma": args.sigma,
        "zeta": args.zeta,
        "eps_phi": args.eps_phi,
        "eps_feas": args.eps_feas,
        "eps_f": args.eps_f,
        "eps_x": args.eps_x,
        "eps_sub": args.eps_sub,
        "stopping": args.stopping,
        "max_outer_iters": args.max_iters,
    }
    if args.nu:
        smap["nu_strategy"] = _parse_nu(args.nu)
    if args.trial_step:
        smap["trial_step"] = _parse_trial(args.trial_step)
    try:
        pcfg = dataclasses.replace(pcfg, **{k: v for k, v in pmap.items() if v is not None})
        scfg = dataclasses.replace(scfg, **{k: v for k, v in smap.items() if v is not None})
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    return pcfg, scfg


def _jobs(args):
    """List of ``(name, spec, base, pcfg, scfg, initial)`` to run."""
    if args.train:
        names = VARIANTS if args.train == "all" else (args.train,)
        N = args.grid or 480
        out = []
        for v in names:
            spec, base, pcfg, scfg, init = build_train(v, N)
            if args.warm_start:
                init = warm_start(N)
            pcfg, scfg = _override(args, pcfg, scfg)
            out.append((v, spec, base, pcfg, scfg, init))
        return out
    if args.warm_start:
        raise UsageError("--warm-start applies to the train benchmark only")
    spec, base = load_problem(args.problem)
    problems = validate(spec, base)
    if problems:
        raise ProblemLoadError("; ".join(problems))
    N = args.grid or spec.table_rows or 480
    if spec.table_rows is not None and N != spec.table_rows:
        raise UsageError(f"--grid {N} does not match the problem's coefficient tables ({spec.table_rows} rows)")
    Grid(spec.T, N)
    pcfg, scfg = _override(args, PenaltyConfig(), SolverConfig())
    name = spec.name or Path(args.problem).stem
    return [(name, spec, base, pcfg, scfg, DiscreteTrajectory.zeros(N, spec.n, spec.m))]


def _run_one(job, out_dir: str, verify: bool, log_level: str):
    logging.basicConfig(level=log_level, format="%(levelname)s %(name)s: %(message)s")
    name, spec, base, pcfg, scfg, init = job
    out = Path(out_dir)
    summary = run(spec, base, pcfg, scfg, init)
    grid = Grid(spec.T, init.N)
    (out / f"{name}_iterations.csv").write_text(records_to_csv(summary.records))
    (out / f"{name}_trajectory.csv").write_text(trajectory_to_csv(summary.traj, grid))
    (out / f"{name}_summary.json").write_text(summary_to_json(summary))
    (out / f"{name}_timing.json").write_text(json.dumps({"wall_time_s": summary.wall_time}) + "\n")
    row = {"name": name, "time": summary.wall_time, **summary.to_dict()}
    if verify:
        rep = verify_criticality(summary.traj, spec, base, pcfg, summary.c, scfg.eps_f + scfg.eps_sub, scfg.eps_phi)
        (out / f"{name}_criticality.json").write_text(rep.to_json())
        row["criticality"] = rep.verdict.value
        row["Q_gap"] = rep.Q_gap
    return row


def format_table(rows) -> str:
    head = f"{'method':<14} {'time[s]':>9} {'k':>5} {'c_k':>9} {'J':>10} {'phi':>10}  termination"
    lines = [head, "-" * len(head)]
    for r in rows:
        lines.append(
            f"{r['name']:<14} {r['time']:>9.2f} {r['iterations']:>5d} {r['final_c']:>9g} "
            f"{r['J']:>10.4f} {r['phi']:>10.4g}  {r['termination']}"
        )
    return "\n".join(lines) + "\n"


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_ERROR
    logging.basicConfig(level=args.log_level.upper(), format="%(levelname)s %(name)s: %(message)s")
    try:
        jobs = _jobs(args)
    except (UsageError, ProblemLoadError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    level = args.log_level.upper()
    try:
        if args.jobs > 1 and len(jobs) > 1:
            with ProcessPoolExecutor(max_workers=args.jobs) as pool:
                rows = list(pool.map(_run_one, jobs, *zip(*[(str(out), args.verify_criticality, level)] * len(jobs))))
        else:
            rows = [_run_one(j, str(out), args.verify_criticality, level) for j in jobs]
    except (InfeasibleBaseSet, UnboundedSubproblem) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    table = format_table(rows)
    (out / "table.txt").write_text(table)
    print(table, end="")
    for r in rows:
        if "criticality" in r:
            print(f"{r['name']}: criticality {r['criticality']} (Q gap {r['Q_gap']:.3g})")
    ok = all(r["termination"] in (Termination.CONVERGED.value, Termination.ASSUMPTION2_CRITICAL.value) for r in rows)
    return EXIT_OK if ok else EXIT_NOT_CONVERGED


if __name__ == "__main__":
    sys.exit(main())

