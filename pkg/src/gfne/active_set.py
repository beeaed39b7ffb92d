"""Active-set solver for inequality-constrained LQ games.

Inequality rows in the working set are appended to the owning player's
equality rows; each minor iteration solves the resulting equality game for a
step from the current iterate, clips it with a ratio test, then adds the
blocking row or drops the row with the most negative multiplier.
"""
from __future__ import annotations

import logging
import time
import warnings
from dataclasses import dataclass, field

import numpy as np

from .iterlog import IterationLog, MajorRecord, MinorRow
from .lq import FeedbackSolution, SingularStageMatrix, backward_recursion, rollout
from .model import LQGame, combine_stages

log = logging.getLogger(__name__)

FEAS_TOL = 1e-8
MULT_RTOL = 1e-8
STEP_RTOL = 1e-9
PHASE1_CAP = 50


class InfeasibleGame(RuntimeError):
    pass


class CycleFailure(RuntimeError):
    pass


class MaxIterations(RuntimeError):
    pass


class DegeneracyWarning(RuntimeWarning):
    pass


@dataclass
class Trajectory:
    xs: list
    us: list

    def axpy(self, beta: float, step: "Trajectory") -> "Trajectory":
        return Trajectory([x + beta * p for x, p in zip(self.xs, step.xs)],
                          [u + beta * p for u, p in zip(self.us, step.us)])

    def norm(self) -> float:
        parts = [np.abs(v).max() for v in self.xs + self.us if v.size]
        return float(max(parts)) if parts else 0.0


@dataclass
class InequalitySolution:
    """Result of the active-set solve on ``game``.

    ``solution`` is the last equality solve (in step coordinates around the
    final iterate when ``status == 'cycle'``), ``xs, us`` the final iterate.
    Multipliers are split into equality (``mu``) and inequality (``gam``)
    parts; rows outside the working set have zero multipliers.
    """

    game: LQGame
    xs: list
    us: list
    working: list
    lam: list
    mu: list
    gam: list
    psi: list
    gains: list
    status: str
    log: IterationLog
    max_violation: float = 0.0
    history: list = field(default_factory=list)

    @property
    def quasigrads(self):
        return [g.K for g in self.gains]

    def as_feedback(self) -> FeedbackSolution:
        return FeedbackSolution(self.game, self.gains, self.xs, self.us, self.lam, self.mu, self.psi, self.gam)

    def as_iterate(self):
        return self.as_feedback().as_iterate()

    def expanded(self):
        return self.game.expand_trajectory(self.xs, self.us)

    def root_working(self):
        return sorted(self.game.ineq_label(*w) for w in self.working)


# --------------------------------------------------------------------------
# row evaluation


def inequality_values(game: LQGame, xs, us):
    """``g`` for every inequality row as ``{(t, i, j): value}`` in lexicographic order."""
    out = {}
    for t in range(game.T + 1):
        for i in range(game.N):
            if not game.b(t, i):
                continue
            v = game.Gx[t][i] @ xs[t] + game.g[t][i]
            if t < game.T:
                v = v + game.Gu[t][i] @ us[t]
            for j, val in enumerate(v):
                out[(t, i, j)] = float(val)
    return out


def directional(game: LQGame, step: Trajectory):
    out = {}
    for t in range(game.T + 1):
        for i in range(game.N):
            if not game.b(t, i):
                continue
            v = game.Gx[t][i] @ step.xs[t]
            if t < game.T:
                v = v + game.Gu[t][i] @ step.us[t]
            for j, val in enumerate(v):
                out[(t, i, j)] = float(val)
    return out


def max_violation(game: LQGame, xs, us) -> float:
    """Largest violation of dynamics, equality and inequality rows."""
    worst = 0.0
    for t in range(game.T):
        worst = max(worst, float(np.abs(game.step(t, xs[t], us[t]) - xs[t + 1]).max()))
    for t in range(game.T + 1):
        for i in range(game.N):
            if game.a(t, i):
                v = game.Hx[t][i] @ xs[t] + game.h[t][i]
                if t < game.T:
                    v = v + game.Hu[t][i] @ us[t]
                worst = max(worst, float(np.abs(v).max()))
    g = inequality_values(game, xs, us)
    if g:
        worst = max(worst, -min(0.0, min(g.values())))
    return worst


def ratio_test(game: LQGame, X: Trajectory, P: Trajectory, working=()):
    """Largest ``beta`` in ``[0, 1]`` keeping every inequality row feasible.

    Only rows outside ``working`` with a negative directional derivative can
    block; ties go to the lexicographically smallest ``(t, i, j)``.
    """
    g = inequality_values(game, X.xs, X.us)
    d = directional(game, P)
    beta, block = 1.0, None
    ws = set(working)
    for key in sorted(g):
        if key in ws or d[key] >= 0.0:
            continue
        b = max(0.0, -g[key] / d[key])
        if b < beta:
            beta, block = b, key
    return beta, block


# --------------------------------------------------------------------------
# subproblems


def step_subproblem(game: LQGame, X: Trajectory) -> LQGame:
    """LQ game in step variables around ``X``: recentred linear cost terms and
    offsets equal to the current residuals (zero at a feasible iterate)."""
    T, N = game.T, game.N
    q, r, h, g = [], [], [], []
    c = [game.step(t, X.xs[t], X.us[t]) - X.xs[t + 1] for t in range(T)]
    for t in range(T + 1):
        x = X.xs[t]
        qt, rt, ht, gt = [], [], [], []
        for i in range(N):
            if t < T:
                u = X.us[t]
                qt.append(game.Q[t][i] @ x + game.S[t][i].T @ u + game.q[t][i])
                rt.append(game.S[t][i] @ x + game.R[t][i] @ u + game.r[t][i])
                ht.append(game.Hx[t][i] @ x + game.Hu[t][i] @ u + game.h[t][i])
                gt.append(game.Gx[t][i] @ x + game.Gu[t][i] @ u + game.g[t][i])
            else:
                qt.append(game.Q[t][i] @ x + game.q[t][i])
                ht.append(game.Hx[t][i] @ x + game.h[t][i])
                gt.append(game.Gx[t][i] @ x + game.g[t][i])
        q.append(qt), h.append(ht), g.append(gt)
        if t < T:
            r.append(rt)
    return game.shifted(c=c, h=h, q=q, r=r, g=g)


def _solve_with(game: LQGame, working, x1) -> FeedbackSolution:
    g = game.with_rows(working)
    return rollout(g, backward_recursion(g), x1)


def _split_multipliers(game: LQGame, sol: FeedbackSolution, working):
    """Split ``mu`` of a working-set solve into equality and inequality parts."""
    mu, gam = [], []
    for t in range(game.T + 1):
        mt, gt = [], []
        for i in range(game.N):
            a = game.a(t, i)
            full = sol.mu[t][i]
            mt.append(full[:a])
            gi = np.zeros(game.b(t, i))
            js = sorted(j for (tt, ii, j) in working if tt == t and ii == i)
            gi[js] = full[a:]
            gt.append(gi)
        mu.append(mt)
        gam.append(gt)
    return mu, gam


def _traj(sol: FeedbackSolution) -> Trajectory:
    return Trajectory(list(sol.xs), list(sol.us))


def find_feasible_start(game: LQGame, x1, working=(), reference: Trajectory | None = None,
                        record: MajorRecord | None = None, labeler=None):
    """Phase one: solve with the working set, and while the result violates an
    inequality add one more row.

    With a ``reference`` trajectory the added row is the first one crossed on
    the segment from the reference to the solution; otherwise it is the most
    violated row.  Returns ``(trajectory, working set, solution)``.
    """
    W = sorted(set(working))
    labeler = labeler or (lambda w: w)
    added = None
    for it in range(1, PHASE1_CAP + 1):
        try:
            sol = _solve_with(game, W, x1)
        except SingularStageMatrix as err:
            # a violated row dependent on first-stage working rows cannot be
            # met by merging; the working rows contradict it
            if added is not None and err.t == 0 and added[0] == 0:
                raise InfeasibleGame(f"row {added} is violated and dependent on the working rows") from err
            raise
        if record is not None:
            record.minors.append(MinorRow(f"F{it}", [labeler(w) for w in W]))
        X = _traj(sol)
        g = inequality_values(game, X.xs, X.us)
        scale = max([1.0] + [abs(v) for v in g.values()])
        bad = [k for k in sorted(g) if g[k] < -FEAS_TOL * scale and k not in W]
        if not bad:
            return X, W, sol
        if reference is not None:
            g0 = inequality_values(game, reference.xs, reference.us)
            best, pick = np.inf, None
            for k in bad:
                frac = 0.0 if g0[k] <= 0.0 else g0[k] / (g0[k] - g[k])
                if frac < best:
                    best, pick = frac, k
        else:
            pick = min(bad, key=lambda k: (g[k], k))
        W = sorted(set(W) | {pick})
        added = pick
        log.debug("phase one adds %s", pick)
    raise InfeasibleGame(f"no feasible working set found within {PHASE1_CAP} solves")


def solve_inequality_lq(game: LQGame, x1, working=(), accept_cycle: bool = False,
                        reference: Trajectory | None = None, max_iter: int = 200,
                        combine: bool = True, record: MajorRecord | None = None,
                        log_obj: IterationLog | None = None) -> InequalitySolution:
    """Active-set equilibrium solve.

    ``working`` warm-starts phase one.  With ``accept_cycle`` a detected cycle
    returns the current iterate (status ``'cycle'``) instead of raising
    :class:`CycleFailure`.  When a stage system becomes singular and
    ``combine`` is set, the offending stage is merged and the solve restarts.
    """
    merges = 0
    while True:
        rec = MajorRecord(1) if record is None else record
        n_before = len(rec.minors)
        try:
            return _active_set(game, x1, working, accept_cycle, reference, max_iter, rec, log_obj)
        except SingularStageMatrix as err:
            if not combine or err.t == 0 or merges >= game.n:
                raise
            del rec.minors[n_before:]
            log.info("combining stage %d into stage %d", err.t + 1, err.t)
            game = combine_stages(game, err.t)
            working = ()
            if reference is not None:
                reference = None
            merges += 1


def _active_set(game, x1, working, accept_cycle, reference, max_iter, rec, log_obj):
    lg = log_obj or IterationLog()
    lg.row_counts.update({(t, i): game.base.b(t, i) for t in range(game.base.T + 1)
                          for i in range(game.N) if game.base.b(t, i)})
    if rec not in lg.majors:
        lg.majors.append(rec)

    def lab(w):
        return game.ineq_label(*w)

    X, W, sol = find_feasible_start(game, x1, working, reference, rec, lab)
    viol = max_violation(game, X.xs, X.us)
    dropped = None
    pending_cycle = False
    reblocked: set = set()
    history = [(list(W), 1.0)]
    status = "solution"
    for k in range(1, max_iter + 1):
        sub = step_subproblem(game, X)
        sol = _solve_with(sub, W, np.zeros(game.n))
        row = MinorRow(str(k), [lab(w) for w in W])
        rec.minors.append(row)
        P = _traj(sol)
        mu, gam = _split_multipliers(game, sol, W)
        mscale = max([1.0] + [float(np.abs(v).max()) for row_ in mu + gam for v in row_ if v.size])
        xscale = max(1.0, X.norm())
        if P.norm() <= STEP_RTOL * xscale:
            neg = sorted(((gam[t][i][j], (t, i, j)) for (t, i, j) in W), key=lambda p: (p[0], p[1]))
            neg = [p for p in neg if p[0] < -MULT_RTOL * mscale]
            if not neg:
                small = [w for w in W if abs(gam[w[0]][w[1]][w[2]]) <= MULT_RTOL * mscale]
                if small:
                    warnings.warn(f"multipliers near zero on active rows {[lab(w) for w in small]}",
                                  DegeneracyWarning, stacklevel=3)
                row.comment = "solution"
                X = X.axpy(1.0, P)
                break
            if pending_cycle:
                reblocked.add(dropped)
            options = [p[1] for p in neg if p[1] not in reblocked]
            if not options:
                row.comment = "cycle"
                if accept_cycle:
                    status = "cycle"
                    X = X.axpy(1.0, P)
                    break
                raise CycleFailure(f"dropping {[lab(w) for w in sorted(reblocked)]} re-blocks "
                                   "and no other multiplier is negative")
            cand = options[0]
            row.comment = f"{'cycle, ' if pending_cycle else ''}drop {_fmt(lg, lab(cand))}"
            dropped = cand
            pending_cycle = False
            W = sorted(set(W) - {cand})
            history.append((list(W), 1.0))
            continue
        beta, block = ratio_test(game, X, P, W)
        row.beta = beta
        X = X.axpy(beta, P)
        viol = max(viol, max_violation(game, X.xs, X.us))
        if block is None or (block != dropped and beta > 0.0):
            reblocked.clear()
        if block is None:
            row.comment = "step"
            history.append((list(W), beta))
            continue
        if block == dropped:
            pending_cycle = True
            row.comment = f"re-add {_fmt(lg, lab(block))}"
        else:
            row.comment = f"add {_fmt(lg, lab(block))}"
        W = sorted(set(W) | {block})
        history.append((list(W), beta))
    else:
        raise MaxIterations(f"active-set solve did not finish in {max_iter} iterations")

    # absolute multipliers and trajectory; the step solve shares its gains
    # with the working-set game because offsets do not enter the gains
    return InequalitySolution(game, X.xs, X.us, list(W), sol.lam, mu, gam, sol.psi, sol.gains,
                              status, lg, viol, history)


def _fmt(lg: IterationLog, w) -> str:
    return lg.format_set([w])[1:-1]
