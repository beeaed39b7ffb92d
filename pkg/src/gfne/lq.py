"""Feedback Nash equilibria of equality-constrained LQ games.

The stationarity conditions of all players at stage ``t`` are written as one
block system in the unknowns ``[u_t, mu_t, lam_t, psi_{t+1}, x_{t+1}]``
(the last stage carries the terminal multipliers in place of ``psi``).  The
affine maps found for stage ``t + 1`` are substituted into the state and
cross-control rows, so each stage costs one dense factorization of modest
width, and the whole solve runs backward in linear time.
"""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from .model import LQGame, ModelError, TrajectoryIterate, combine_stages, others_index, player_slices

log = logging.getLogger(__name__)

PIVOT_RTOL = 1e-10


class SingularStageMatrix(np.linalg.LinAlgError):
    """Raised when a stage block system is (numerically) rank deficient."""

    def __init__(self, t: int, ratio: float):
        super().__init__(f"stage {t + 1} matrix is singular (pivot ratio {ratio:.3e})")
        self.t = t
        self.ratio = ratio


@dataclass
class StageGains:
    """Affine maps of ``x_t`` for one stage.  ``psi`` gains describe the
    next stage's cross-control multipliers; ``mu_T`` gains are only present on
    the last control stage."""

    K: np.ndarray
    k: np.ndarray
    K_lam: np.ndarray
    k_lam: np.ndarray
    K_mu: np.ndarray
    k_mu: np.ndarray
    K_psi: np.ndarray
    k_psi: np.ndarray
    K_muT: np.ndarray | None = None
    k_muT: np.ndarray | None = None
    min_pivot: float = 0.0


@dataclass
class FeedbackSolution:
    game: LQGame
    gains: list[StageGains]
    xs: list[np.ndarray]
    us: list[np.ndarray]
    lam: list[list[np.ndarray]]          # [t][i], t < T
    mu: list[list[np.ndarray]]           # [t][i], t <= T (includes working rows)
    psi: list[list[np.ndarray]]          # [t][i], empty at t = 0
    gam: list[list[np.ndarray]] = field(default_factory=list)

    @property
    def quasigrads(self) -> list[np.ndarray]:
        return [g.K for g in self.gains]

    def as_iterate(self) -> TrajectoryIterate:
        """Multiplier bundle in the solver's iterate layout (``mu`` holds only
        equality multipliers when ``gam`` was split off)."""
        gam = self.gam or [[np.zeros(self.game.b(t, i)) for i in range(self.game.N)] for t in range(self.game.T + 1)]
        return TrajectoryIterate(list(self.xs), list(self.us), self.lam, self.mu, gam, self.psi)

    def expanded(self):
        """States and controls on the original (uncombined) stage grid."""
        return self.game.expand_trajectory(self.xs, self.us)


def _split(vec, sizes):
    out, o = [], 0
    for s in sizes:
        out.append(vec[o:o + s])
        o += s
    return out


def _offsets(sizes):
    o = [0]
    for s in sizes:
        o.append(o[-1] + s)
    return o


def stage_layout(game: LQGame, t: int):
    """Column/row sizes of the stage-``t`` block system."""
    N, n = game.N, game.n
    last = t == game.T - 1
    sizes = {
        "u": game.mt(t),
        "mu": sum(game.a(t, i) for i in range(N)),
        "lam": N * n,
        "psi": 0 if last else sum(game.mt(t + 1) - game.m[t + 1][i] for i in range(N)),
        "x": n,
        "muT": sum(game.a(game.T, i) for i in range(N)) if last else 0,
    }
    off = dict(zip(sizes, _offsets(list(sizes.values()))))
    return sizes, off


def assemble_stage(game: LQGame, t: int, nxt: StageGains | None):
    """Return ``(M, Nx, nc)`` with ``M z + Nx x_t + nc = 0`` for stage ``t``."""
    n, N, T = game.n, game.N, game.T
    last = t == T - 1
    sizes, off = stage_layout(game, t)
    W = sum(sizes.values())
    M = np.zeros((W, W))
    Nx = np.zeros((W, n))
    nc = np.zeros(W)
    sl = player_slices(game.m[t])
    a_off = _offsets([game.a(t, i) for i in range(N)])
    u0, mu0, l0, p0, x0, mT0 = (off[k] for k in ("u", "mu", "lam", "psi", "x", "muT"))

    # own-control stationarity
    for i in range(N):
        rows = np.arange(u0, u0 + game.mt(t))[sl[i]]
        M[rows, u0:u0 + game.mt(t)] = game.R[t][i][sl[i], :]
        M[rows, mu0 + a_off[i]:mu0 + a_off[i + 1]] = -game.Hu[t][i][:, sl[i]].T
        M[rows, l0 + i * n:l0 + (i + 1) * n] = game.B[t][:, sl[i]].T
        Nx[rows] = game.S[t][i][sl[i], :]
        nc[rows] = game.r[t][i][sl[i]]
    # equality rows
    r0 = u0 + game.mt(t)
    for i in range(N):
        rows = slice(r0 + a_off[i], r0 + a_off[i + 1])
        M[rows, u0:u0 + game.mt(t)] = game.Hu[t][i]
        Nx[rows] = game.Hx[t][i]
        nc[rows] = game.h[t][i]
    # dynamics
    r0 += a_off[-1]
    M[r0:r0 + n, u0:u0 + game.mt(t)] = -game.B[t]
    M[r0:r0 + n, x0:x0 + n] = np.eye(n)
    Nx[r0:r0 + n] = -game.A[t]
    nc[r0:r0 + n] = -game.c[t]
    r0 += n
    # next-state stationarity
    if last:
        aT = _offsets([game.a(T, i) for i in range(N)])
        for i in range(N):
            rows = slice(r0 + i * n, r0 + (i + 1) * n)
            M[rows, l0 + i * n:l0 + (i + 1) * n] = -np.eye(n)
            M[rows, x0:x0 + n] = game.Q[T][i]
            M[rows, mT0 + aT[i]:mT0 + aT[i + 1]] = -game.Hx[T][i].T
            nc[rows] = game.q[T][i]
        r0 += N * n
        for i in range(N):
            rows = slice(r0 + aT[i], r0 + aT[i + 1])
            M[rows, x0:x0 + n] = game.Hx[T][i]
            nc[rows] = game.h[T][i]
        return M, Nx, nc

    s = t + 1
    K, k = nxt.K, nxt.k
    an = _offsets([game.a(s, i) for i in range(N)])
    psz = [game.mt(s) - game.m[s][i] for i in range(N)]
    poff = _offsets(psz)
    Klam, klam, Kmu, kmu = [], [], [], []
    for i in range(N):
        Klam.append(nxt.K_lam[i * n:(i + 1) * n])
        klam.append(nxt.k_lam[i * n:(i + 1) * n])
        Kmu.append(nxt.K_mu[an[i]:an[i + 1]])
        kmu.append(nxt.k_mu[an[i]:an[i + 1]])
    for i in range(N):
        rows = slice(r0 + i * n, r0 + (i + 1) * n)
        o = others_index(game.m[s], i)
        M[rows, l0 + i * n:l0 + (i + 1) * n] = -np.eye(n)
        M[rows, p0 + poff[i]:p0 + poff[i + 1]] = K[o].T
        M[rows, x0:x0 + n] = (game.Q[s][i] + game.S[s][i].T @ K + game.A[s].T @ Klam[i]
                              - game.Hx[s][i].T @ Kmu[i])
        nc[rows] = game.q[s][i] + game.S[s][i].T @ k + game.A[s].T @ klam[i] - game.Hx[s][i].T @ kmu[i]
    r0 += N * n
    # cross-control stationarity at the next stage
    for i in range(N):
        o = others_index(game.m[s], i)
        rows = slice(r0 + poff[i], r0 + poff[i + 1])
        M[rows, p0 + poff[i]:p0 + poff[i + 1]] = -np.eye(len(o))
        Bo, Huo = game.B[s][:, o], game.Hu[s][i][:, o]
        M[rows, x0:x0 + n] = (game.R[s][i][o, :] @ K + game.S[s][i][o, :] + Bo.T @ Klam[i] - Huo.T @ Kmu[i])
        nc[rows] = game.R[s][i][o, :] @ k + game.r[s][i][o] + Bo.T @ klam[i] - Huo.T @ kmu[i]
    return M, Nx, nc


def factor_solve(M: np.ndarray, rhs: np.ndarray, t: int):
    """LU solve with partial pivoting plus a relative pivot check."""
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        lu, piv = sla.lu_factor(M, check_finite=False)
    d = np.abs(np.diag(lu))
    top = d.max() if d.size else 1.0
    ratio = d.min() / top if top > 0 else 0.0
    if not np.isfinite(ratio) or ratio < PIVOT_RTOL:
        raise SingularStageMatrix(t, float(ratio))
    return sla.lu_solve((lu, piv), rhs, check_finite=False), float(d.min())


def backward_recursion(game: LQGame) -> list[StageGains]:
    """Gains for every stage, computed from the last stage backward."""
    T = game.T
    gains: list[StageGains | None] = [None] * T
    nxt = None
    for t in range(T - 1, -1, -1):
        M, Nx, nc = assemble_stage(game, t, nxt)
        sol, pmin = factor_solve(M, -np.column_stack([Nx, nc]), t)
        log.debug("stage %d: width %d, min pivot %.3e", t + 1, M.shape[0], pmin)
        sizes, off = stage_layout(game, t)

        def blk(name):
            return sol[off[name]:off[name] + sizes[name]]

        g = StageGains(
            K=blk("u")[:, :-1], k=blk("u")[:, -1],
            K_lam=blk("lam")[:, :-1], k_lam=blk("lam")[:, -1],
            K_mu=blk("mu")[:, :-1], k_mu=blk("mu")[:, -1],
            K_psi=blk("psi")[:, :-1], k_psi=blk("psi")[:, -1],
            min_pivot=pmin,
        )
        if t == T - 1:
            g.K_muT, g.k_muT = blk("muT")[:, :-1], blk("muT")[:, -1]
        gains[t] = nxt = g
    return gains


def solve_terminal(game: LQGame) -> StageGains:
    """Gains of the last control stage alone."""
    return backward_recursion(game.subgame(game.T - 1))[0]


def rollout(game: LQGame, gains: list[StageGains], x1) -> FeedbackSolution:
    n, N, T = game.n, game.N, game.T
    x = np.asarray(x1, dtype=float)
    xs, us, lam, mu, psi = [x], [], [], [], [[np.zeros(0)] * N]
    for t in range(T):
        g = gains[t]
        u = g.K @ x + g.k
        us.append(u)
        lam.append(_split(g.K_lam @ x + g.k_lam, [n] * N))
        mu.append(_split(g.K_mu @ x + g.k_mu, [game.a(t, i) for i in range(N)]))
        if t < T - 1:
            psi.append(_split(g.K_psi @ x + g.k_psi, [game.mt(t + 1) - game.m[t + 1][i] for i in range(N)]))
        else:
            mu_T = _split(g.K_muT @ x + g.k_muT, [game.a(T, i) for i in range(N)])
        x = game.step(t, x, u)
        xs.append(x)
    mu.append(mu_T)
    return FeedbackSolution(game, gains, xs, us, lam, mu, psi)


def solve_equality_lq(game: LQGame, x1, combine: bool = True, max_merges: int | None = None) -> FeedbackSolution:
    """Solve an equality-constrained LQ game.

    When a stage system is singular the stage is merged into its predecessor
    and the solve restarts, up to ``max_merges`` (default ``n``) times.  The
    returned solution refers to the (possibly combined) game it was solved on.
    """
    limit = game.n if max_merges is None else max_merges
    merges = 0
    while True:
        try:
            gains = backward_recursion(game)
            return rollout(game, gains, x1)
        except SingularStageMatrix as err:
            if not combine or err.t == 0 or merges >= limit:
                raise
            log.info("combining stage %d into stage %d", err.t + 1, err.t)
            game = combine_stages(game, err.t)
            merges += 1


def stage_residual(game: LQGame, t: int, nxt: StageGains | None, g: StageGains, x) -> float:
    """Max-norm of the stage system residual for the gains ``g`` at ``x``."""
    M, Nx, nc = assemble_stage(game, t, nxt)
    sizes, off = stage_layout(game, t)
    z = np.concatenate([g.K @ x + g.k, g.K_mu @ x + g.k_mu, g.K_lam @ x + g.k_lam, g.K_psi @ x + g.k_psi])
    xn = game.step(t, x, g.K @ x + g.k)
    z = np.concatenate([z, xn])
    if g.K_muT is not None:
        z = np.concatenate([z, g.K_muT @ x + g.k_muT])
    return float(np.max(np.abs(M @ z + Nx @ x + nc)))


__all__ = [
    "FeedbackSolution", "ModelError", "SingularStageMatrix", "StageGains", "assemble_stage",
    "backward_recursion", "rollout", "solve_equality_lq", "solve_terminal", "stage_residual",
]
