"""Random game generators shared by the test modules."""
import numpy as np

from gfne.model import LQGame


def psd(rng, k, floor=0.0):
    X = rng.standard_normal((k, k))
    return X @ X.T / k + floor * np.eye(k)


def random_lq(rng, n, m, T, a=None, aT=None, b=None, bT=None, offsets=True, regular=True):
    """Convex game: every player's joint cost block is PSD with a PD own-control block.

    ``a``/``b`` give per-player equality/inequality rows at control stages,
    ``aT``/``bT`` the terminal rows.
    """
    N = len(m)
    mt = sum(m)
    A = [np.eye(n) + 0.3 * rng.standard_normal((n, n)) for _ in range(T)]
    B = [rng.standard_normal((n, mt)) for _ in range(T)]
    c = [0.3 * rng.standard_normal(n) if offsets else np.zeros(n) for _ in range(T)]
    Q, S, R, q, r = [], [], [], [], []
    for t in range(T):
        Qt, St, Rt, qt, rt = [], [], [], [], []
        for i in range(N):
            W = psd(rng, n + mt)
            sl = slice(n + sum(m[:i]), n + sum(m[:i + 1]))
            W[sl, sl] += np.eye(m[i])
            Qt.append(W[:n, :n])
            St.append(W[n:, :n])
            Rt.append(W[n:, n:])
            qt.append(rng.standard_normal(n) if offsets else np.zeros(n))
            rt.append(rng.standard_normal(mt) if offsets else np.zeros(mt))
        Q.append(Qt), S.append(St), R.append(Rt), q.append(qt), r.append(rt)
    Q.append([psd(rng, n) for _ in range(N)])
    q.append([rng.standard_normal(n) if offsets else np.zeros(n) for _ in range(N)])

    def rows(cnt, cntT, scale):
        if cnt is None and cntT is None:
            return None, None, None
        cnt = cnt or [0] * N
        cntT = cntT or [0] * N
        Hx, Hu, h = [], [], []
        for t in range(T + 1):
            k = cnt if t < T else cntT
            Hx.append([rng.standard_normal((k[i], n)) for i in range(N)])
            if t < T:
                Hu.append([rng.standard_normal((k[i], mt)) for i in range(N)])
            h.append([scale * rng.standard_normal(k[i]) if offsets else np.zeros(k[i]) for i in range(N)])
        return Hx, Hu, h

    Hx, Hu, h = rows(a, aT, 1.0)
    Gx, Gu, g = rows(b, bT, 1.0)
    return LQGame.build(n, tuple(m), A, B, c, Q, S, R, q, r, Hx, Hu, h, Gx, Gu, g, regular=regular)


def own_control_rows(game):
    """Keep only each player's own-control columns in control-stage inequality
    rows and drop their state columns; terminal rows are left untouched."""
    from dataclasses import replace

    from gfne.model import player_slices

    Gu, Gx = [], []
    for t in range(game.T):
        sl = player_slices(game.m[t])
        row_u, row_x = [], []
        for i in range(game.N):
            M = np.zeros_like(game.Gu[t][i])
            M[:, sl[i]] = game.Gu[t][i][:, sl[i]]
            row_u.append(M)
            row_x.append(np.zeros_like(game.Gx[t][i]))
        Gu.append(tuple(row_u))
        Gx.append(tuple(row_x))
    Gx.append(game.Gx[game.T])
    return replace(game, Gu=tuple(Gu), Gx=tuple(Gx))


def brute_force(game, x1, tol=1e-9):
    """Every working set whose equality solution is feasible with nonnegative
    inequality multipliers, as ``(rows, solution)`` pairs."""
    import itertools

    from gfne.active_set import _split_multipliers, inequality_values
    from gfne.lq import SingularStageMatrix, solve_equality_lq

    rows = game.inequality_rows()
    found = []
    for r in range(len(rows) + 1):
        for W in itertools.combinations(rows, r):
            try:
                s = solve_equality_lq(game.with_rows(W), x1, combine=False)
            except SingularStageMatrix:
                continue
            g = inequality_values(game, s.xs, s.us)
            _, gam = _split_multipliers(game, s, W)
            if min(g.values(), default=0.0) >= -tol and all(gam[t][i][j] >= -tol for t, i, j in W):
                found.append((list(W), s))
    return found
