"""Independent checks: condition residuals, second-order test, finite-difference
policy gradients and brute-force oracles for small LQ games."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .model import GameSpec, LQGame, TrajectoryIterate, local_lq, others_index, player_slices

BLOCKS = (
    "control_stationarity",
    "state_stationarity",
    "cross_control_stationarity",
    "terminal_stationarity",
    "dynamics",
    "equality",
    "inequality",
    "multiplier_sign",
)


class DegenerateCone(ValueError):
    pass


class OracleTooLarge(ValueError):
    pass


@dataclass
class ResidualBreakdown:
    """Squared-norm residual per condition family; ``total`` is their sum."""

    blocks: dict[str, float]
    complementarity: float = 0.0      # max(|min(g,0)|, |min(gam,0)|, |gam'g|) over rows

    @property
    def total(self) -> float:
        return float(sum(self.blocks.values()))

    def to_text(self) -> str:
        lines = [f"{k}: {v:.6e}" for k, v in self.blocks.items()]
        lines.append(f"total: {self.total:.6e}")
        lines.append(f"max_complementarity: {self.complementarity:.6e}")
        return "\n".join(lines) + "\n"


def _as_spec(game) -> GameSpec:
    return game.as_spec() if isinstance(game, LQGame) else game


def residual(game, it: TrajectoryIterate, quasigrads) -> ResidualBreakdown:
    """Evaluate every necessary condition term by term.

    ``quasigrads[s]`` is the policy (quasi-)gradient of stage ``s``; only
    stages ``s >= 1`` use it.
    """
    spec = _as_spec(game)
    n, N, T = spec.n, spec.N, spec.T
    b = {k: 0.0 for k in BLOCKS}
    comp = 0.0
    for s in range(T + 1):
        st = spec.stages[s]
        z = np.concatenate([it.xs[s], it.us[s]]) if s < T else np.asarray(it.xs[s], dtype=float)
        fd = st.dynamics(z, 1) if s < T else None
        if fd is not None:
            b["dynamics"] += float(np.sum((it.xs[s + 1] - fd.value) ** 2))
        sl = player_slices(st.m)
        for i in range(N):
            lg = st.costs[i](z, 1).jac[0].copy()
            he = st.eqs[i](z, 1)
            ge = st.ineqs[i](z, 1)
            if fd is not None:
                lg += fd.jac.T @ it.lam[s][i]
            if he.value.size:
                lg -= he.jac.T @ it.mu[s][i]
            if ge.value.size:
                lg -= ge.jac.T @ it.gam[s][i]
            gx, gu = lg[:n], lg[n:]
            if s < T:
                b["control_stationarity"] += float(np.sum(gu[sl[i]] ** 2))
                if s >= 1:
                    o = others_index(st.m, i)
                    K = np.asarray(quasigrads[s])
                    rx = gx - it.lam[s - 1][i] + K[o].T @ it.psi[s][i]
                    b["state_stationarity"] += float(np.sum(rx ** 2))
                    b["cross_control_stationarity"] += float(np.sum((gu[o] - it.psi[s][i]) ** 2))
            else:
                b["terminal_stationarity"] += float(np.sum((gx - it.lam[T - 1][i]) ** 2))
            b["equality"] += float(np.sum(he.value ** 2))
            g = ge.value
            gam = np.asarray(it.gam[s][i], dtype=float)
            b["inequality"] += float(np.sum(np.minimum(g, 0.0) ** 2))
            if g.size:
                cg = abs(float(g @ gam))
                b["multiplier_sign"] += float(np.sum(np.minimum(gam, 0.0) ** 2)) + cg
                comp = max(comp, float(np.max(np.abs(np.minimum(g, 0.0)))),
                           float(np.max(np.abs(np.minimum(gam, 0.0)))), cg)
    return ResidualBreakdown(b, comp)


# --------------------------------------------------------------------------
# second-order check


def _null_space(C: np.ndarray, k: int, rtol: float = 1e-10) -> np.ndarray:
    if C.shape[0] == 0:
        return np.eye(k)
    u, sv, vt = np.linalg.svd(C)
    rank = int(np.sum(sv > rtol * max(1.0, sv[0] if sv.size else 0.0)))
    return vt[rank:].T


@dataclass
class SufficiencyReport:
    min_value: list[float]             # per player, smallest reduced-form eigenvalue
    worst_stage: list[int]
    verdict: list[str]
    threshold: float = 0.0
    per_stage: list[list[float]] = field(default_factory=list)

    @property
    def satisfied(self) -> bool:
        return all(v == "satisfied" for v in self.verdict)

    def to_text(self) -> str:
        lines = [f"threshold: {self.threshold:.6e}"]
        for i, (v, s, verdict) in enumerate(zip(self.min_value, self.worst_stage, self.verdict)):
            lines.append(f"player_{i + 1}_min_value: {v:.6e}")
            lines.append(f"player_{i + 1}_worst_stage: {s + 1}")
            lines.append(f"player_{i + 1}_verdict: {verdict}")
        lines.append(f"overall: {'satisfied' if self.satisfied else 'not satisfied'}")
        return "\n".join(lines) + "\n"


def check_sufficiency(game, it: TrajectoryIterate, quasigrads, rtol: float = 1e-8,
                      active_rows: bool = False) -> SufficiencyReport:
    """Second-order test along feedback deviations.

    For player ``i`` at stage ``t`` the deviation is a free ``d u_t^i`` with
    ``d x_t = 0`` and the other players fixed at ``t``; afterwards every
    control follows the policy gradients and states follow the linearized
    dynamics.  The stage Lagrangian Hessians are accumulated along these
    directions and the smallest eigenvalue of the reduced form decides the
    verdict.

    With ``active_rows`` the deviations are further restricted to those that
    keep the player's equality rows and strongly active inequality rows
    (positive multiplier) satisfied to first order, a weaker test.
    """
    spec = _as_spec(game)
    n, N, T = spec.n, spec.N, spec.T
    lq = local_lq(spec, it.xs, it.us, it.lam, it.mu, it.gam, order=2)
    term = [spec.stages[T].costs[i](np.asarray(it.xs[T], dtype=float), 2).hess[0] for i in range(N)]
    Ks = [np.asarray(k) for k in quasigrads]
    gscale = max([1.0] + [float(np.abs(v).max()) for row in it.gam for v in row if np.size(v)])
    active = [[np.asarray(it.gam[s][i], dtype=float) > rtol * gscale for i in range(N)] for s in range(T + 1)]
    values = [[None] * T for _ in range(N)]
    scale = 1.0
    for i in range(N):
        for t in range(T):
            sl = player_slices(lq.m[t])[i]
            mi = sl.stop - sl.start
            if mi == 0:
                continue
            du = np.zeros((lq.mt(t), mi))
            du[sl] = np.eye(mi)
            dx = np.zeros((n, mi))
            W = np.zeros((mi, mi))
            C = [np.zeros((0, mi))]
            for s in range(t, T):
                if s > t:
                    du = Ks[s] @ dx
                H = np.block([[lq.Q[s][i], lq.S[s][i].T], [lq.S[s][i], lq.R[s][i]]])
                D = np.vstack([dx, du])
                W += D.T @ H @ D
                C.append(lq.Hx[s][i] @ dx + lq.Hu[s][i] @ du)
                act = active[s][i]
                C.append(lq.Gx[s][i][act] @ dx + lq.Gu[s][i][act] @ du)
                dx = lq.A[s] @ dx + lq.B[s] @ du
            W += dx.T @ term[i] @ dx
            C.append(lq.Hx[T][i] @ dx)
            C.append(lq.Gx[T][i][active[T][i]] @ dx)
            Z = _null_space(np.vstack(C), mi) if active_rows else np.eye(mi)
            if Z.shape[1] == 0:
                continue
            W = Z.T @ (0.5 * (W + W.T)) @ Z
            scale = max(scale, float(np.max(np.abs(W))))
            values[i][t] = float(np.linalg.eigvalsh(W).min())
    if all(v is None for row in values for v in row):
        raise DegenerateCone("no player has a control deviation to test")
    thr = rtol * scale
    mins, worst, verdicts = [], [], []
    for i in range(N):
        pairs = [(v, t) for t, v in enumerate(values[i]) if v is not None]
        if not pairs:
            mins.append(float("nan"))
            worst.append(-1)
            verdicts.append("inconclusive")
            continue
        v, t = min(pairs)
        mins.append(v)
        worst.append(spec.stage_groups[t][0])   # first root stage of a merged group
        verdicts.append("satisfied" if v > thr else ("violated" if v < -thr else "inconclusive"))
    return SufficiencyReport(mins, worst, verdicts, thr, [[v for v in row] for row in values])


# --------------------------------------------------------------------------
# finite-difference policy gradient


def fd_policy_gradient(game, t: int, x_t, h: float = 1e-6, solver=None) -> np.ndarray:
    """Central-difference derivative of the stage-``t`` equilibrium control
    with respect to ``x_t``, from ``2 n`` subgame solves."""
    from .active_set import solve_inequality_lq
    from .lq import solve_equality_lq

    x_t = np.asarray(x_t, dtype=float)
    sub = game.subgame(t)

    def first_control(x):
        if solver is not None:
            return np.asarray(solver(sub, x))
        if isinstance(sub, LQGame):
            sol = solve_inequality_lq(sub, x) if sub.has_inequalities else solve_equality_lq(sub, x)
            return sol.expanded()[1][0]
        from .sqp import SqpOptions, solve_gfqne
        res = solve_gfqne(sub.with_x1(x), SqpOptions(tol=1e-14))
        return res.expanded()[1][0]

    cols = []
    for j in range(len(x_t)):
        e = np.zeros_like(x_t)
        e[j] = h
        cols.append((first_control(x_t + e) - first_control(x_t - e)) / (2 * h))
    return np.column_stack(cols)


# --------------------------------------------------------------------------
# oracles


def riccati_oracle(game: LQGame, x1):
    """Gains and trajectory of a single-player unconstrained LQ problem by the
    textbook value-function recursion."""
    if game.N != 1:
        raise ValueError("riccati oracle needs a single player")
    T = game.T
    V, v = game.Q[T][0].copy(), game.q[T][0].copy()
    Ks, ks = [None] * T, [None] * T
    for t in range(T - 1, -1, -1):
        A, B, c = game.A[t], game.B[t], game.c[t]
        Huu = game.R[t][0] + B.T @ V @ B
        Hux = game.S[t][0] + B.T @ V @ A
        hu = game.r[t][0] + B.T @ (V @ c + v)
        K = -np.linalg.solve(Huu, Hux)
        k = -np.linalg.solve(Huu, hu)
        v = game.q[t][0] + A.T @ (V @ c + v) + Hux.T @ k
        V = game.Q[t][0] + A.T @ V @ A + Hux.T @ K
        V = 0.5 * (V + V.T)
        Ks[t], ks[t] = K, k
    xs, us = [np.asarray(x1, dtype=float)], []
    for t in range(T):
        us.append(Ks[t] @ xs[-1] + ks[t])
        xs.append(game.step(t, xs[-1], us[-1]))
    return Ks, ks, xs, us


@dataclass
class _Level:
    M: np.ndarray
    Nx: np.ndarray
    nc: np.ndarray
    cols: dict        # stage -> {block: (start, stop)}


def _literal_system(game: LQGame, t: int, memo: dict) -> _Level:
    """Full system for the subgame starting at stage ``t`` with unknowns
    ``[u_t, mu_t, lam_t, psi_{t+1}, x_{t+1}, z_{t+1}]`` (last stage:
    ``[u, mu, lam, x_T, mu_T]``).  Next-stage rows are kept verbatim instead
    of substituting gains."""
    if t in memo:
        return memo[t]
    n, N, T = game.n, game.N, game.T
    mt = game.mt(t)
    a = [game.a(t, i) for i in range(N)]
    last = t == T - 1
    s = t + 1
    if last:
        aT = [game.a(T, i) for i in range(N)]
        local = [("u", mt), ("mu", sum(a)), ("lam", N * n), ("x", n), ("muT", sum(aT))]
    else:
        psz = [game.mt(s) - game.m[s][i] for i in range(N)]
        local = [("u", mt), ("mu", sum(a)), ("lam", N * n), ("psi", sum(psz)), ("x", n)]
    cols, o = {}, 0
    for name, size in local:
        cols[name] = (o, o + size)
        o += size
    width_local = o
    nxt = None if last else _literal_system(game, s, memo)
    width = width_local + (nxt.M.shape[0] if nxt else 0)
    M = np.zeros((width, width))
    Nx = np.zeros((width, n))
    nc = np.zeros(width)
    U, MU, L, X = cols["u"], cols["mu"], cols["lam"], cols["x"]
    sl = player_slices(game.m[t])
    r = 0
    ao = np.cumsum([0] + a)
    for i in range(N):
        for p in range(sl[i].start, sl[i].stop):
            M[r, U[0]:U[1]] = game.R[t][i][p]
            M[r, MU[0] + ao[i]:MU[0] + ao[i + 1]] = -game.Hu[t][i][:, p]
            M[r, L[0] + i * n:L[0] + (i + 1) * n] = game.B[t][:, p]
            Nx[r] = game.S[t][i][p]
            nc[r] = game.r[t][i][p]
            r += 1
    for i in range(N):
        for p in range(a[i]):
            M[r, U[0]:U[1]] = game.Hu[t][i][p]
            Nx[r] = game.Hx[t][i][p]
            nc[r] = game.h[t][i][p]
            r += 1
    for p in range(n):
        M[r, U[0]:U[1]] = -game.B[t][p]
        M[r, X[0] + p] = 1.0
        Nx[r] = -game.A[t][p]
        nc[r] = -game.c[t][p]
        r += 1
    if last:
        MT = cols["muT"]
        aTo = np.cumsum([0] + aT)
        for i in range(N):
            for p in range(n):
                M[r, L[0] + i * n + p] = -1.0
                M[r, X[0]:X[1]] = game.Q[T][i][p]
                M[r, MT[0] + aTo[i]:MT[0] + aTo[i + 1]] = -game.Hx[T][i][:, p]
                nc[r] = game.q[T][i][p]
                r += 1
        for i in range(N):
            for p in range(aT[i]):
                M[r, X[0]:X[1]] = game.Hx[T][i][p]
                nc[r] = game.h[T][i][p]
                r += 1
        lvl = _Level(M, Nx, nc, {t: cols})
        memo[t] = lvl
        return lvl

    # gains of the next stage from its own dense solve
    sol = -np.linalg.solve(nxt.M, nxt.Nx)
    U1 = nxt.cols[s]["u"]
    K1 = sol[U1[0]:U1[1]]
    sh = width_local
    U1s = (sh + U1[0], sh + U1[1])
    MU1 = nxt.cols[s]["mu"]
    L1 = nxt.cols[s]["lam"]
    an = np.cumsum([0] + [game.a(s, i) for i in range(N)])
    P = cols["psi"]
    po = np.cumsum([0] + psz)
    for i in range(N):
        o = others_index(game.m[s], i)
        for p in range(n):
            M[r, L[0] + i * n + p] = -1.0
            M[r, P[0] + po[i]:P[0] + po[i + 1]] = K1[o][:, p]
            M[r, X[0]:X[1]] = game.Q[s][i][p]
            M[r, U1s[0]:U1s[1]] = game.S[s][i][:, p]
            M[r, sh + MU1[0] + an[i]:sh + MU1[0] + an[i + 1]] = -game.Hx[s][i][:, p]
            M[r, sh + L1[0] + i * n:sh + L1[0] + (i + 1) * n] = game.A[s][:, p]
            nc[r] = game.q[s][i][p]
            r += 1
    for i in range(N):
        o = others_index(game.m[s], i)
        for jj, p in enumerate(o):
            M[r, P[0] + po[i] + jj] = -1.0
            M[r, X[0]:X[1]] = game.S[s][i][p]
            M[r, U1s[0]:U1s[1]] = game.R[s][i][p]
            M[r, sh + MU1[0] + an[i]:sh + MU1[0] + an[i + 1]] = -game.Hu[s][i][:, p]
            M[r, sh + L1[0] + i * n:sh + L1[0] + (i + 1) * n] = game.B[s][:, p]
            nc[r] = game.r[s][i][p]
            r += 1
    assert r == width_local
    # lower block row: next-stage system, whose state argument is x_{t+1}
    M[sh:, sh:] = nxt.M
    M[sh:, X[0]:X[1]] = nxt.Nx
    nc[sh:] = nxt.nc
    allcols = {t: cols}
    for st, c in nxt.cols.items():
        allcols[st] = {k: (v[0] + sh, v[1] + sh) for k, v in c.items()}
    lvl = _Level(M, Nx, nc, allcols)
    memo[t] = lvl
    return lvl


def monolithic_oracle(game: LQGame, x1, max_width: int = 5000):
    """One dense solve of the fully assembled system from the first stage.

    Returns ``(gains, xs, us, lam, mu, psi)`` where ``gains[t] = (K_t, k_t)``
    come from each subgame's own dense solve.
    """
    n, N, T = game.n, game.N, game.T
    width = 0
    for t in range(T):
        width += game.mt(t) + sum(game.a(t, i) for i in range(N)) + N * n + n
        if t < T - 1:
            width += sum(game.mt(t + 1) - game.m[t + 1][i] for i in range(N))
    width += sum(game.a(T, i) for i in range(N))
    if width > max_width:
        raise OracleTooLarge(f"system width {width} exceeds {max_width}")
    memo: dict = {}
    top = _literal_system(game, 0, memo)
    z = np.linalg.solve(top.M, -(top.Nx @ np.asarray(x1, dtype=float) + top.nc))
    gains = []
    for t in range(T):
        lvl = memo[t]
        sol = -np.linalg.solve(lvl.M, np.column_stack([lvl.Nx, lvl.nc]))
        U = lvl.cols[t]["u"]
        gains.append((sol[U[0]:U[1], :-1], sol[U[0]:U[1], -1]))
    xs, us, lam, mu, psi = [np.asarray(x1, dtype=float)], [], [], [], [[np.zeros(0)] * N]
    for t in range(T):
        c = top.cols[t]
        us.append(z[slice(*c["u"])])
        xs.append(z[slice(*c["x"])])
        lv = z[slice(*c["lam"])]
        lam.append([lv[i * n:(i + 1) * n] for i in range(N)])
        mv = z[slice(*c["mu"])]
        ao = np.cumsum([0] + [game.a(t, i) for i in range(N)])
        mu.append([mv[ao[i]:ao[i + 1]] for i in range(N)])
        if t < T - 1:
            pv = z[slice(*c["psi"])]
            po = np.cumsum([0] + [game.mt(t + 1) - game.m[t + 1][i] for i in range(N)])
            psi.append([pv[po[i]:po[i + 1]] for i in range(N)])
        else:
            mv = z[slice(*c["muT"])]
            ao = np.cumsum([0] + [game.a(T, i) for i in range(N)])
            mu.append([mv[ao[i]:ao[i + 1]] for i in range(N)])
    return gains, xs, us, lam, mu, psi
