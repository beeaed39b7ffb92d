"""Sequential LQ solver for nonlinear constrained games.

Each major iteration expands the game to an LQ game around the current
iterate, solves it with the active-set method for a step and new
multipliers, and backtracks on a residual merit function.
"""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from .active_set import Trajectory, solve_inequality_lq
from .iterlog import IterationLog, MajorRecord
from .lq import SingularStageMatrix
from .model import GameSpec, TrajectoryIterate, combine_iterate, combine_stages, local_lq, \
    others_index, player_slices, zero_multipliers

log = logging.getLogger(__name__)

MERIT_BLOCKS = (
    "control_stationarity", "state_stationarity", "cross_control_stationarity",
    "terminal_stationarity", "dynamics", "equality", "inequality", "multiplier_sign",
)


class LineSearchFailure(RuntimeError):
    pass


class MaxIterations(RuntimeError):
    pass


@dataclass
class SqpOptions:
    tol: float = 1e-6
    max_iters: int = 100
    backtrack: float = 0.5
    armijo: float = 1e-4
    alpha_min: float = 1e-8
    reuse_quasigrads: bool = True
    max_merges: int | None = None    # stage merges allowed; defaults to the state dimension

    def __post_init__(self):
        if not (self.tol > 0 and self.max_iters > 0 and self.armijo > 0 and self.alpha_min > 0):
            raise ValueError("solver options must be positive")
        if not 0 < self.backtrack < 1:
            raise ValueError("backtracking factor must lie in (0, 1)")


@dataclass
class SqpResult:
    spec: GameSpec                   # possibly with merged stages
    iterate: TrajectoryIterate
    quasigrads: list
    working: list                    # root-indexed (t, i, j), 0-based
    log: IterationLog
    merit: float
    blocks: dict
    converged: bool
    message: str = ""
    alphas: list = field(default_factory=list)
    merits: list = field(default_factory=list)

    def expanded(self):
        return self.spec.expand_trajectory(self.iterate.xs, self.iterate.us)


# --------------------------------------------------------------------------
# merit


def merit_blocks(spec: GameSpec, it: TrajectoryIterate, quasigrads) -> dict:
    """Squared residual of each condition family; sums to the merit value.

    Every stage is evaluated once and all players' Lagrangian gradients are
    formed together by stacking their multipliers as matrix columns.
    """
    n, N, T = spec.n, spec.N, spec.T
    out = dict.fromkeys(MERIT_BLOCKS, 0.0)
    for s, st in enumerate(spec.stages):
        z = np.concatenate([it.xs[s], it.us[s]]) if s < T else np.asarray(it.xs[s], dtype=float)
        grads = np.column_stack([st.costs[i](z, 1).jac[0] for i in range(N)])
        if s < T:
            fd = st.dynamics(z, 1)
            out["dynamics"] += float(np.sum((it.xs[s + 1] - fd.value) ** 2))
            grads += fd.jac.T @ np.column_stack(it.lam[s])
        for i in range(N):
            he, ge = st.eqs[i](z, 1), st.ineqs[i](z, 1)
            if he.value.size:
                grads[:, i] -= he.jac.T @ it.mu[s][i]
                out["equality"] += float(he.value @ he.value)
            if ge.value.size:
                gam = np.asarray(it.gam[s][i], dtype=float)
                grads[:, i] -= ge.jac.T @ gam
                out["inequality"] += float(np.sum(np.minimum(ge.value, 0.0) ** 2))
                out["multiplier_sign"] += float(np.sum(np.minimum(gam, 0.0) ** 2)) + abs(float(ge.value @ gam))
        gx = grads[:n]
        if s == T:
            out["terminal_stationarity"] += float(np.sum((gx - np.column_stack(it.lam[T - 1])) ** 2))
            continue
        gu = grads[n:]
        sl = player_slices(st.m)
        out["control_stationarity"] += float(sum(np.sum(gu[sl[i], i] ** 2) for i in range(N)))
        if s == 0:
            continue
        K = np.asarray(quasigrads[s])
        for i in range(N):
            o = others_index(st.m, i)
            rx = gx[:, i] - it.lam[s - 1][i] + K[o].T @ it.psi[s][i]
            out["state_stationarity"] += float(rx @ rx)
            ru = gu[o, i] - it.psi[s][i]
            out["cross_control_stationarity"] += float(ru @ ru)
    return out


def merit(spec: GameSpec, it: TrajectoryIterate, quasigrads) -> float:
    return float(sum(merit_blocks(spec, it, quasigrads).values()))


# --------------------------------------------------------------------------
# line search


def _blend(a, b, alpha):
    if isinstance(a, list):
        return [_blend(x, y, alpha) for x, y in zip(a, b)]
    a = np.asarray(a, dtype=float)
    return a + alpha * (np.asarray(b, dtype=float) - a)


def trial_iterate(it: TrajectoryIterate, step: Trajectory, target: TrajectoryIterate, alpha: float):
    """``X + alpha P`` with multipliers moved ``alpha`` of the way to ``target``."""
    X = Trajectory(it.xs, it.us).axpy(alpha, step)
    return TrajectoryIterate(X.xs, X.us, _blend(it.lam, target.lam, alpha), _blend(it.mu, target.mu, alpha),
                             _blend(it.gam, target.gam, alpha), _blend(it.psi, target.psi, alpha))


def _is_zero(v) -> bool:
    if isinstance(v, list):
        return all(_is_zero(x) for x in v)
    return not np.any(np.asarray(v))


def line_search(spec: GameSpec, it: TrajectoryIterate, step: Trajectory, target: TrajectoryIterate,
                quasigrads, options: SqpOptions, m0: float | None = None):
    """Backtracking search on the merit with the quasi-gradients held fixed.

    Returns ``(alpha, merit at the accepted point)``; ``alpha == 0`` when no
    trial point gives sufficient decrease.
    """
    if m0 is None:
        m0 = merit(spec, it, quasigrads)
    no_move = _is_zero(step.xs) and _is_zero(step.us) and all(
        np.array_equal(a, b) for f in ("lam", "mu", "gam", "psi")
        for a, b in zip(_flat(getattr(it, f)), _flat(getattr(target, f))))
    if no_move:
        return 1.0, m0
    alpha = 1.0
    while alpha >= options.alpha_min:
        try:
            mt = merit(spec, trial_iterate(it, step, target, alpha), quasigrads)
        except (FloatingPointError, ValueError):
            mt = np.inf
        if mt <= m0 - options.armijo * alpha * m0:
            return alpha, mt
        alpha *= options.backtrack
    return 0.0, m0


def _flat(v):
    if isinstance(v, list):
        for x in v:
            yield from _flat(x)
    else:
        yield v


# --------------------------------------------------------------------------
# main loop


def initial_iterate(spec: GameSpec) -> TrajectoryIterate:
    """Zero controls rolled out from the initial state, all multipliers zero."""
    it = zero_multipliers(spec)
    it.xs = spec.rollout(it.us)
    return it


def _warm_rows(sol) -> list:
    """Working rows whose multiplier is not negative; these seed the next
    major iteration's phase one."""
    keep = []
    for t, i, j in sol.working:
        if sol.gam[t][i][j] >= 0.0:
            keep.append((t, i, j))
    return keep


def solve_gfqne(spec: GameSpec, options: SqpOptions | None = None, start: TrajectoryIterate | None = None,
                on_iterate=None, raise_on_failure: bool = True) -> SqpResult:
    """Iterate LQ approximations until the merit drops below ``options.tol``.

    ``on_iterate(k, spec, iterate)`` is called after every accepted step.
    Raises :class:`LineSearchFailure` or :class:`MaxIterations` unless
    ``raise_on_failure`` is off, in which case the last iterate is returned
    with ``converged`` false.
    """
    opts = options or SqpOptions()
    t_start = time.perf_counter()
    lg = IterationLog()
    it = initial_iterate(spec) if start is None else start.copy()
    working: list = []
    alphas, merits = [], []
    solve_time = eval_time = 0.0
    K = None
    message = ""
    converged = False

    def finish(m, blocks):
        lg.total_time = time.perf_counter() - t_start
        lg.solve_time, lg.eval_time = solve_time, eval_time
        root_w = sorted(spec.ineq_label(*w) for w in working)
        return SqpResult(spec, it, K, root_w, lg, m, blocks, converged, message, alphas, merits)

    merge_cap = spec.n if opts.max_merges is None else opts.max_merges
    merges = 0
    k = 0
    while k < opts.max_iters:
        k += 1
        rec = MajorRecord(k)
        t0 = time.perf_counter()
        lq = local_lq(spec, it.xs, it.us, it.lam, it.mu, it.gam)
        eval_time += time.perf_counter() - t0
        t0 = time.perf_counter()
        try:
            sol = solve_inequality_lq(lq, np.zeros(spec.n), working, accept_cycle=True,
                                      reference=Trajectory([np.zeros(spec.n) for _ in it.xs],
                                                           [np.zeros_like(u) for u in it.us]),
                                      combine=False, record=rec, log_obj=lg)
        except SingularStageMatrix as err:
            solve_time += time.perf_counter() - t0
            if err.t == 0 or merges >= merge_cap:
                raise
            if rec in lg.majors:
                lg.majors.remove(rec)
            log.info("stage %d system singular; combining it with stage %d", err.t + 1, err.t)
            it = combine_iterate(spec, err.t, it)
            spec = combine_stages(spec, err.t)
            working = []
            merges += 1
            k -= 1
            continue
        solve_time += time.perf_counter() - t0
        K = sol.quasigrads
        target = sol.as_iterate()
        step = Trajectory(sol.xs, sol.us)
        t0 = time.perf_counter()
        m0 = merit(spec, it, K)
        alpha, m1 = line_search(spec, it, step, target, K, opts, m0)
        eval_time += time.perf_counter() - t0
        rec.alpha = alpha
        if alpha == 0.0:
            rec.merit = m0
            rec.note = "line search failed"
            message = f"line search failed at major iteration {k}"
            if raise_on_failure:
                lg.total_time = time.perf_counter() - t_start
                raise LineSearchFailure(message)
            return finish(m0, merit_blocks(spec, it, K))
        it = trial_iterate(it, step, target, alpha)
        rec.merit = m1
        alphas.append(alpha)
        merits.append(m1)
        working = _warm_rows(sol)
        log.info("major %d: alpha %.3g merit %.6g (%s)", k, alpha, m1, sol.status)
        if on_iterate is not None:
            on_iterate(k, spec, it)
        if m1 < opts.tol:
            converged = True
            return finish(m1, merit_blocks(spec, it, K))
    message = f"no convergence in {opts.max_iters} major iterations"
    if raise_on_failure:
        raise MaxIterations(message)
    m = merit(spec, it, K) if K is not None else float("nan")
    return finish(m, merit_blocks(spec, it, K) if K is not None else {})
