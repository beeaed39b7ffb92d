"""``gfne`` command line: run a solver on a scenario or diff two trajectory files.

Exit codes: 0 success, 1 solver failure (a ``FAILED`` file is left in the
output directory), 2 invalid input or incompatible solver choice.
"""
from __future__ import annotations

import argparse
import csv
import logging
import math
import sys
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .active_set import solve_inequality_lq
from .iterlog import IterationLog, MajorRecord, MinorRow
from .lq import solve_equality_lq
from .model import validate
from .plotting import render_vehicles, write_vehicle_csvs
from .scenario import ScenarioError, lq_game_of, load_scenario
from .sqp import SqpOptions, solve_gfqne
from .verification import DegenerateCone, check_sufficiency, residual

SOLVERS = ("eq-lq", "ineq-lq", "gfqne")
LEVELS = {"quiet": logging.WARNING, "info": logging.INFO, "debug": logging.DEBUG}

log = logging.getLogger("gfne")


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    scenario: Path
    solver: str
    tol: float = 1e-6
    max_iters: int = 100
    out: Path = Path("out")
    snapshots: bool = False

    def __post_init__(self):
        if self.solver not in SOLVERS:
            raise ConfigError(f"unknown solver '{self.solver}'")
        if not (self.tol > 0 and math.isfinite(self.tol)):
            raise ConfigError("--tol must be a positive number")
        if self.max_iters < 1:
            raise ConfigError("--max-iters must be at least 1")


# --------------------------------------------------------------------------
# output files


def trajectory_header(n: int, m) -> list[str]:
    head = ["stage"] + [f"x{k + 1}" for k in range(n)]
    for i, mi in enumerate(m):
        head += [f"u{i + 1}_{k + 1}" for k in range(mi)]
    return head


def write_trajectory(path: Path, xs, us, m) -> None:
    n = len(xs[0])
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(trajectory_header(n, m))
        for t, x in enumerate(xs):
            row = [t + 1] + [repr(float(v)) for v in x]
            if t < len(us):
                row += [repr(float(v)) for v in us[t]]
            else:
                row += [""] * sum(m)
            w.writerow(row)


def read_trajectory(path: Path):
    with Path(path).open(newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ValueError(f"{path}: empty file")
    head, body = rows[0], rows[1:]
    data = np.full((len(body), len(head)), np.nan)
    for r, row in enumerate(body):
        if len(row) != len(head):
            raise ValueError(f"{path}: row {r + 2} has {len(row)} fields, header has {len(head)}")
        for c, v in enumerate(row):
            if v != "":
                data[r, c] = float(v)
    return head, data


def compare_files(a: Path, b: Path):
    """Per-column max absolute difference; cells empty in both files match."""
    ha, da = read_trajectory(a)
    hb, db = read_trajectory(b)
    if ha != hb or da.shape != db.shape:
        raise ValueError(f"shape mismatch: {a} has {da.shape} with {len(ha)} columns, {b} has {db.shape}")
    diffs = {}
    for c, name in enumerate(ha):
        x, y = da[:, c], db[:, c]
        if np.any(np.isnan(x) != np.isnan(y)):
            diffs[name] = math.inf
            continue
        ok = ~np.isnan(x)
        diffs[name] = float(np.max(np.abs(x[ok] - y[ok]))) if ok.any() else 0.0
    return diffs


# --------------------------------------------------------------------------
# solve


def _check_compatible(spec, solver: str):
    d = spec.dims
    if solver in ("eq-lq", "ineq-lq"):
        if spec.family != "custom-lq":
            raise ConfigError(f"solver {solver} needs a linear-quadratic scenario, got family '{spec.family}'")
    if solver == "eq-lq" and any(b for row in d.b for b in row):
        raise ConfigError("solver eq-lq cannot handle inequality rows; use ineq-lq")


def run(cfg: RunConfig) -> int:
    out = Path(cfg.out)
    try:
        spec = load_scenario(cfg.scenario)
        _check_compatible(spec, cfg.solver)
        game = lq_game_of(spec) if cfg.solver != "gfqne" else spec
        issues = validate(game)
        if issues:
            raise ConfigError("invalid game: " + "; ".join(issues))
    except (ScenarioError, ConfigError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    out.mkdir(parents=True, exist_ok=True)
    failed = out / "FAILED"
    if failed.exists():
        failed.unlink()
    try:
        return _solve(cfg, spec, game, out)
    except Exception as e:   # any solver failure leaves a marker with the diagnostic
        msg = f"{type(e).__name__}: {e}"
        failed.write_text(msg + "\n")
        print(f"solver failed: {msg}", file=sys.stderr)
        log.debug("failure", exc_info=True)
        return 1


def _solve(cfg: RunConfig, spec, game, out: Path) -> int:
    x1 = spec.x1
    ok, note = True, ""
    if cfg.solver == "eq-lq":
        t0 = time.perf_counter()
        sol = solve_equality_lq(game, x1)
        lg = IterationLog(majors=[MajorRecord(1, [MinorRow("1", [], "solution")])])
        lg.total_time = lg.solve_time = time.perf_counter() - t0
        solved, it, K = sol.game, sol.as_iterate(), sol.quasigrads
        xs, us = sol.expanded()
    elif cfg.solver == "ineq-lq":
        t0 = time.perf_counter()
        sol = solve_inequality_lq(game, x1, max_iter=cfg.max_iters)
        sol.log.total_time = sol.log.solve_time = time.perf_counter() - t0
        lg, solved, it, K = sol.log, sol.game, sol.as_iterate(), sol.quasigrads
        xs, us = sol.expanded()
    else:
        snap = None
        if cfg.snapshots:
            sdir = out / "snapshots"
            sdir.mkdir(exist_ok=True)

            def snap(k, sp, itr):
                sx, su = sp.expand_trajectory(itr.xs, itr.us)
                write_trajectory(sdir / f"iter_{k:03d}.csv", sx, su, spec.stages[0].m)

        res = solve_gfqne(spec, SqpOptions(tol=cfg.tol, max_iters=cfg.max_iters), on_iterate=snap,
                          raise_on_failure=False)
        lg, solved, it, K = res.log, res.spec, res.iterate, res.quasigrads
        xs, us = res.expanded()
        ok, note = res.converged, res.message

    m = spec.stages[0].m
    write_trajectory(out / "trajectory.csv", xs, us, m)
    (out / "iterations.txt").write_text(lg.to_text())
    br = residual(solved, it, K)
    (out / "residuals.txt").write_text(br.to_text())
    try:
        suff = check_sufficiency(solved, it, K).to_text()
    except DegenerateCone as e:
        suff = f"overall: inconclusive ({e})\n"
    (out / "sufficiency.txt").write_text(suff)
    if spec.family == "unicycle-drive":
        write_vehicle_csvs(out, xs, spec.N)
        render_vehicles(out / "vehicles.png", xs, spec.N, lanes=tuple(sorted(set(spec.params["lane"]))[:2]))
    if not ok:
        (out / "FAILED").write_text(note + "\n")
        print(f"solver failed: {note}", file=sys.stderr)
        return 1
    log.info("wrote results to %s", out)
    return 0


# --------------------------------------------------------------------------
# entry point


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="gfne", description="Feedback equilibrium solvers for constrained dynamic games.")
    sub = p.add_subparsers(dest="command", required=True)
    s = sub.add_parser("solve", help="solve a scenario")
    s.add_argument("--scenario", required=True, type=Path)
    s.add_argument("--solver", required=True, choices=SOLVERS)
    s.add_argument("--tol", type=float, default=1e-6)
    s.add_argument("--max-iters", type=int, default=100)
    s.add_argument("--out", type=Path, default=Path("out"))
    s.add_argument("--snapshots", action="store_true", help="write the trajectory after every major iteration")
    s.add_argument("--log-level", choices=tuple(LEVELS), default="quiet")
    c = sub.add_parser("compare", help="compare two trajectory files")
    c.add_argument("a", type=Path)
    c.add_argument("b", type=Path)
    c.add_argument("--tol", type=float, default=1e-8)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "compare":
        try:
            diffs = compare_files(args.a, args.b)
        except (OSError, ValueError) as e:
            print(f"error: {e}", file=sys.stderr)
            return 2
        width = max(len(k) for k in diffs)
        for k, v in diffs.items():
            print(f"{k.ljust(width)}  {v:.3e}")
        worst = max(diffs.values())
        print(f"max difference {worst:.3e} (tol {args.tol:.1e})")
        return 0 if worst < args.tol else 1
    logging.basicConfig(level=LEVELS[args.log_level], format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = RunConfig(args.scenario, args.solver, args.tol, args.max_iters, args.out, args.snapshots)
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    return run(cfg)


if __name__ == "__main__":
    sys.exit(main())
