"""Game data model: nonlinear games, LQ games, validation and stage combination.

Indexing is 0-based throughout the code.  A game with horizon ``T`` has
control stages ``0..T-1`` and a terminal (state-only) stage ``T``; states are
``x_0..x_T``.  Text reports convert to the 1-based labels used in tables
(stage ``t`` is printed as ``t + 1``).
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Any, Sequence

import numpy as np

from .functions import Affine, Chain, Concat, Fn, Quadratic, Sum, empty_map, selector

SYM_TOL = 1e-10


class ModelError(ValueError):
    pass


def player_slices(m: Sequence[int]) -> list[slice]:
    out, o = [], 0
    for mi in m:
        out.append(slice(o, o + mi))
        o += mi
    return out


def others_index(m: Sequence[int], i: int) -> np.ndarray:
    """Positions of every control except player ``i``'s in the stacked vector."""
    sl = player_slices(m)
    idx = [np.arange(s.start, s.stop) for j, s in enumerate(sl) if j != i]
    return np.concatenate(idx) if idx else np.zeros(0, dtype=int)


@dataclass(frozen=True)
class Dimensions:
    n: int
    T: int
    N: int
    m: tuple[tuple[int, ...], ...]   # m[t][i], t < T
    a: tuple[tuple[int, ...], ...]   # a[t][i], t <= T
    b: tuple[tuple[int, ...], ...]

    def mt(self, t: int) -> int:
        return sum(self.m[t])


# --------------------------------------------------------------------------
# nonlinear games


@dataclass(frozen=True)
class Stage:
    """Evaluators for one stage.  All maps take ``z = [x; u]``; the terminal
    stage has ``m == ()`` per player entries of 0 and no dynamics."""

    m: tuple[int, ...]
    dynamics: Fn | None
    costs: tuple[Fn, ...]
    eqs: tuple[Fn, ...]
    ineqs: tuple[Fn, ...]

    @property
    def nu(self) -> int:
        return sum(self.m)


@dataclass(frozen=True)
class GameSpec:
    n: int
    x1: np.ndarray
    stages: tuple[Stage, ...]
    family: str = "custom"
    params: dict = field(default_factory=dict)
    regular: bool | None = None
    groups: tuple[tuple[int, ...], ...] | None = None
    root: Any = None

    @property
    def N(self) -> int:
        return len(self.stages[0].costs)

    @property
    def T(self) -> int:
        return len(self.stages) - 1

    @property
    def dims(self) -> Dimensions:
        return Dimensions(
            n=self.n, T=self.T, N=self.N,
            m=tuple(tuple(s.m) for s in self.stages[:-1]),
            a=tuple(tuple(f.nout for f in s.eqs) for s in self.stages),
            b=tuple(tuple(f.nout for f in s.ineqs) for s in self.stages),
        )

    @property
    def stage_groups(self):
        return self.groups if self.groups is not None else tuple((t,) for t in range(self.T))

    @property
    def base(self):
        return self.root if self.root is not None else self

    def with_x1(self, x1) -> "GameSpec":
        return replace(self, x1=np.asarray(x1, dtype=float))

    def subgame(self, t: int) -> "GameSpec":
        """Game played over stages ``t..T`` (initial state left as a placeholder)."""
        if not 0 <= t < self.T:
            raise ModelError(f"subgame start {t} out of range")
        return GameSpec(self.n, np.zeros(self.n), self.stages[t:], self.family, self.params, self.regular)

    def step(self, t, x, u):
        return self.stages[t].dynamics(np.concatenate([x, u]), 0).value

    def b(self, t: int, i: int) -> int:
        return self.stages[t].ineqs[i].nout

    def rollout(self, us) -> list[np.ndarray]:
        xs = [np.asarray(self.x1, dtype=float)]
        for t in range(self.T):
            xs.append(self.step(t, xs[-1], us[t]))
        return xs

    def expand_trajectory(self, xs, us):
        """Map a trajectory of a combined game back to the root stage indexing."""
        return _expand(self, xs, us, self.base.step)

    def ineq_label(self, t: int, i: int, j: int) -> tuple[int, int, int]:
        return _row_label(self, t, i, j, self.base.b)


def _expand(game, xs, us, step):
    groups = game.stage_groups
    if game.groups is None:
        return [np.asarray(x) for x in xs], [np.asarray(u) for u in us]
    base = game.base
    out_x, out_u = [], []
    for tg, grp in enumerate(groups):
        x = np.asarray(xs[tg], dtype=float)
        splits = _split_group_controls(base, grp, us[tg])
        for s, u in zip(grp, splits):
            out_x.append(x)
            out_u.append(u)
            x = step(s, x, u)
    out_x.append(np.asarray(xs[-1], dtype=float))
    return out_x, out_u


def _root_m(base, s):
    return tuple(base.m[s]) if isinstance(base, LQGame) else tuple(base.stages[s].m)


def _split_group_controls(base, grp, u_hat):
    """Split a combined control vector (player-major, then stage) per root stage."""
    N = base.N
    per_stage = {s: [None] * N for s in grp}
    o = 0
    for i in range(N):
        for s in grp:
            mi = _root_m(base, s)[i]
            per_stage[s][i] = u_hat[o:o + mi]
            o += mi
    return [np.concatenate(per_stage[s]) if N else np.zeros(0) for s in grp]


def _row_label(game, t, i, j, count):
    if game.groups is None or t >= game.T:
        root_t = game.base.T if t >= game.T else t
        return (root_t, i, j)
    grp = game.stage_groups[t]
    for s in grp:
        b = count(s, i)
        if j < b:
            return (s, i, j)
        j -= b
    raise ModelError("row index out of range")


@dataclass
class TrajectoryIterate:
    """Primal trajectory plus multipliers, all indexed ``[t][i]``.

    ``lam`` has one entry per control stage, ``mu`` and ``gam`` one per stage
    including the terminal one, ``psi[0]`` is empty for every player.
    """

    xs: list
    us: list
    lam: list
    mu: list
    gam: list
    psi: list

    def copy(self) -> "TrajectoryIterate":
        def dup(v):
            return [dup(x) for x in v] if isinstance(v, list) else np.array(v, dtype=float)
        return TrajectoryIterate(*(dup(list(getattr(self, f))) for f in ("xs", "us", "lam", "mu", "gam", "psi")))


def zero_multipliers(game) -> TrajectoryIterate:
    """Zero multipliers with shapes matching ``game`` (spec or LQ) and a zero trajectory."""
    d = game.dims
    n, N, T = d.n, d.N, d.T
    z = np.zeros
    return TrajectoryIterate(
        xs=[z(n) for _ in range(T + 1)],
        us=[z(sum(d.m[t])) for t in range(T)],
        lam=[[z(n) for _ in range(N)] for _ in range(T)],
        mu=[[z(d.a[t][i]) for i in range(N)] for t in range(T + 1)],
        gam=[[z(d.b[t][i]) for i in range(N)] for t in range(T + 1)],
        psi=[[z(0) for _ in range(N)]] + [[z(sum(d.m[t]) - d.m[t][i]) for i in range(N)] for t in range(1, T)],
    )


# --------------------------------------------------------------------------
# LQ games


def _arr(x, shape):
    a = np.zeros(shape) if x is None else np.array(x, dtype=float)
    if a.ndim == 1 and len(shape) == 2 and a.size == 0:
        a = a.reshape(shape)
    return a


@dataclass(frozen=True)
class LQGame:
    """Linear-quadratic game.

    Costs for player ``i`` at stage ``t``:
    ``1/2 [x;u]' [[Q, S'], [S, R]] [x;u] + [x;u]' [q; r]`` with ``u`` the
    stacked control of all players.  Constraint rows for player ``i`` read
    ``Hx x + Hu u + h = 0`` and ``Gx x + Gu u + g >= 0``; terminal rows have
    no control block.
    """

    n: int
    m: tuple[tuple[int, ...], ...]
    A: tuple
    B: tuple
    c: tuple
    Q: tuple
    S: tuple
    R: tuple
    q: tuple
    r: tuple
    Hx: tuple
    Hu: tuple
    h: tuple
    Gx: tuple
    Gu: tuple
    g: tuple
    regular: bool | None = None
    groups: tuple[tuple[int, ...], ...] | None = None
    root: Any = None

    @classmethod
    def build(cls, n, m, A, B, c=None, Q=None, S=None, R=None, q=None, r=None,
              Hx=None, Hu=None, h=None, Gx=None, Gu=None, g=None, regular=None):
        """Fill missing blocks with zeros.  ``m`` is either one tuple of player
        dimensions (time-invariant) or one per stage.  Per-player lists are
        indexed ``[t][i]``."""
        T = len(A)
        if isinstance(m[0], (int, np.integer)):
            m = [tuple(int(v) for v in m)] * T
        m = tuple(tuple(int(v) for v in mt) for mt in m)
        N = len(m[0])
        mt = [sum(x) for x in m]

        def per(src, t, i, shape):
            if src is None:
                return np.zeros(shape)
            return _arr(src[t][i], shape)

        def rows_of(src, t, i):
            if src is None:
                return 0
            return np.atleast_1d(np.asarray(src[t][i], dtype=float)).shape[0]

        c = tuple(np.zeros(n) if c is None else np.asarray(c[t], dtype=float) for t in range(T))
        Qs = tuple(tuple(per(Q, t, i, (n, n)) for i in range(N)) for t in range(T + 1))
        Ss = tuple(tuple(per(S, t, i, (mt[t], n)) for i in range(N)) for t in range(T))
        Rs = tuple(tuple(per(R, t, i, (mt[t], mt[t])) for i in range(N)) for t in range(T))
        qs = tuple(tuple(per(q, t, i, (n,)) for i in range(N)) for t in range(T + 1))
        rs = tuple(tuple(per(r, t, i, (mt[t],)) for i in range(N)) for t in range(T))

        def cons(Xx, Xu, xo):
            ox, ou, oo = [], [], []
            for t in range(T + 1):
                rx, ru, ro = [], [], []
                for i in range(N):
                    k = rows_of(xo, t, i)
                    rx.append(per(Xx, t, i, (k, n)) if k else np.zeros((0, n)))
                    if t < T:
                        ru.append(per(Xu, t, i, (k, mt[t])) if k else np.zeros((0, mt[t])))
                    ro.append(per(xo, t, i, (k,)) if k else np.zeros(0))
                ox.append(tuple(rx))
                if t < T:
                    ou.append(tuple(ru))
                oo.append(tuple(ro))
            return tuple(ox), tuple(ou), tuple(oo)

        Hx_, Hu_, h_ = cons(Hx, Hu, h)
        Gx_, Gu_, g_ = cons(Gx, Gu, g)
        return cls(n, m, tuple(np.asarray(a, dtype=float) for a in A),
                   tuple(np.asarray(b, dtype=float).reshape(n, mt[t]) for t, b in enumerate(B)),
                   c, Qs, Ss, Rs, qs, rs, Hx_, Hu_, h_, Gx_, Gu_, g_, regular)

    @property
    def T(self) -> int:
        return len(self.A)

    @property
    def N(self) -> int:
        return len(self.m[0]) if self.m else len(self.Q[0])

    def mt(self, t: int) -> int:
        return sum(self.m[t])

    def a(self, t: int, i: int) -> int:
        return self.h[t][i].shape[0]

    def b(self, t: int, i: int) -> int:
        return self.g[t][i].shape[0]

    @property
    def dims(self) -> Dimensions:
        T, N = self.T, self.N
        return Dimensions(self.n, T, N, self.m,
                          tuple(tuple(self.a(t, i) for i in range(N)) for t in range(T + 1)),
                          tuple(tuple(self.b(t, i) for i in range(N)) for t in range(T + 1)))

    @property
    def has_inequalities(self) -> bool:
        return any(self.b(t, i) for t in range(self.T + 1) for i in range(self.N))

    @property
    def stage_groups(self):
        return self.groups if self.groups is not None else tuple((t,) for t in range(self.T))

    @property
    def base(self):
        return self.root if self.root is not None else self

    def inequality_rows(self) -> list[tuple[int, int, int]]:
        return [(t, i, j) for t in range(self.T + 1) for i in range(self.N) for j in range(self.b(t, i))]

    def with_rows(self, rows) -> "LQGame":
        """Append the selected inequality rows ``(t, i, j)`` to the equality rows.

        Appended rows follow the player's own equality rows, sorted by ``j``.
        """
        rows = sorted(set(rows))
        if not rows:
            return self
        Hx = [list(r) for r in self.Hx]
        Hu = [list(r) for r in self.Hu]
        h = [list(r) for r in self.h]
        for t in range(self.T + 1):
            for i in range(self.N):
                js = [j for (tt, ii, j) in rows if tt == t and ii == i]
                if not js:
                    continue
                Hx[t][i] = np.vstack([self.Hx[t][i], self.Gx[t][i][js]])
                if t < self.T:
                    Hu[t][i] = np.vstack([self.Hu[t][i], self.Gu[t][i][js]])
                h[t][i] = np.concatenate([self.h[t][i], self.g[t][i][js]])
        return replace(self, Hx=tuple(map(tuple, Hx)), Hu=tuple(map(tuple, Hu)), h=tuple(map(tuple, h)))

    def shifted(self, c=None, h=None, q=None, r=None, g=None) -> "LQGame":
        """Copy with replaced offset vectors."""
        kw = {}
        if c is not None:
            kw["c"] = tuple(c)
        for name, v in (("h", h), ("q", q), ("r", r), ("g", g)):
            if v is not None:
                kw[name] = tuple(tuple(x) for x in v)
        return replace(self, **kw)

    def scaled_offsets(self, s: float) -> "LQGame":
        return self.shifted(
            c=[s * x for x in self.c],
            h=[[s * x for x in row] for row in self.h],
            q=[[s * x for x in row] for row in self.q],
            r=[[s * x for x in row] for row in self.r],
            g=[[s * x for x in row] for row in self.g],
        )

    def subgame(self, t: int) -> "LQGame":
        if not 0 <= t < self.T:
            raise ModelError(f"subgame start {t} out of range")
        return LQGame(self.n, self.m[t:], self.A[t:], self.B[t:], self.c[t:], self.Q[t:], self.S[t:],
                      self.R[t:], self.q[t:], self.r[t:], self.Hx[t:], self.Hu[t:], self.h[t:],
                      self.Gx[t:], self.Gu[t:], self.g[t:], self.regular)

    def step(self, t, x, u):
        return self.A[t] @ x + self.B[t] @ u + self.c[t]

    def rollout(self, x1, us) -> list[np.ndarray]:
        xs = [np.asarray(x1, dtype=float)]
        for t in range(self.T):
            xs.append(self.step(t, xs[-1], us[t]))
        return xs

    def expand_trajectory(self, xs, us):
        return _expand(self, xs, us, self.base.step)

    def ineq_label(self, t, i, j):
        return _row_label(self, t, i, j, self.base.b)

    def stage_cost(self, t, i, x, u=None) -> float:
        if t == self.T:
            return float(0.5 * x @ self.Q[t][i] @ x + x @ self.q[t][i])
        z = np.concatenate([x, u])
        W = np.block([[self.Q[t][i], self.S[t][i].T], [self.S[t][i], self.R[t][i]]])
        return float(0.5 * z @ W @ z + z @ np.concatenate([self.q[t][i], self.r[t][i]]))

    def as_spec(self, x1=None) -> GameSpec:
        """Wrap as a :class:`GameSpec` with exact linear/quadratic evaluators."""
        n, N, T = self.n, self.N, self.T
        stages = []
        for t in range(T):
            W = [np.block([[self.Q[t][i], self.S[t][i].T], [self.S[t][i], self.R[t][i]]]) for i in range(N)]
            stages.append(Stage(
                m=tuple(self.m[t]),
                dynamics=Affine(np.hstack([self.A[t], self.B[t]]), self.c[t]),
                costs=tuple(Quadratic(W[i], np.concatenate([self.q[t][i], self.r[t][i]])) for i in range(N)),
                eqs=tuple(Affine(np.hstack([self.Hx[t][i], self.Hu[t][i]]), self.h[t][i]) for i in range(N)),
                ineqs=tuple(Affine(np.hstack([self.Gx[t][i], self.Gu[t][i]]), self.g[t][i]) for i in range(N)),
            ))
        stages.append(Stage(
            m=(0,) * N,
            dynamics=None,
            costs=tuple(Quadratic(self.Q[T][i], self.q[T][i]) for i in range(N)),
            eqs=tuple(Affine(self.Hx[T][i], self.h[T][i]) for i in range(N)),
            ineqs=tuple(Affine(self.Gx[T][i], self.g[T][i]) for i in range(N)),
        ))
        x1 = np.zeros(n) if x1 is None else np.asarray(x1, dtype=float)
        return GameSpec(n, x1, tuple(stages), family="custom-lq", regular=self.regular,
                        groups=self.groups, root=self.root)


def is_regular(game: LQGame) -> bool:
    return not _regularity_issues(game)


def _regularity_issues(game: LQGame) -> list[str]:
    out = []
    for t in range(game.T):
        sl = player_slices(game.m[t])
        for i in range(game.N):
            Rii = game.R[t][i][sl[i], sl[i]]
            if Rii.size == 0:
                continue
            if np.linalg.eigvalsh(0.5 * (Rii + Rii.T)).min() <= 0.0:
                out.append(f"R not PD at ({t + 1},{i + 1})")
    return out


# --------------------------------------------------------------------------
# local LQ expansion of a nonlinear game


def local_lq(spec: GameSpec, xs, us, lam=None, mu=None, gam=None, order: int = 2) -> LQGame:
    """LQ game describing steps around the trajectory ``(xs, us)``.

    Dynamics and constraints are linearized, the defect ``f(x_t, u_t) - x_{t+1}``
    becomes the dynamics offset, ``q, r`` are cost gradients and ``Q, S, R`` are
    Hessians of each player's Lagrangian (dynamics curvature weighted by
    ``+lam``, constraint curvature by ``-mu`` and ``-gam``).
    """
    n, N, T = spec.n, spec.N, spec.T
    A, B, c = [], [], []
    Q, S, R, q, r = [], [], [], [], []
    Hx, Hu, h, Gx, Gu, g = [], [], [], [], [], []
    m = []
    for t, st in enumerate(spec.stages):
        z = np.concatenate([xs[t], us[t]]) if t < T else np.asarray(xs[t], dtype=float)
        nu = st.nu
        fd = None
        if t < T:
            m.append(tuple(st.m))
            fd = st.dynamics(z, order)
            A.append(fd.jac[:, :n])
            B.append(fd.jac[:, n:])
            c.append(fd.value - xs[t + 1])
        rowsQ, rowsS, rowsR, rowsq, rowsr = [], [], [], [], []
        rHx, rHu, rh, rGx, rGu, rg = [], [], [], [], [], []
        for i in range(N):
            ld = st.costs[i](z, order)
            hd = st.eqs[i](z, order)
            gd = st.ineqs[i](z, order)
            if order >= 2:
                H = ld.hess[0].copy()
                if fd is not None and lam is not None:
                    H += np.einsum("k,kab->ab", lam[t][i], fd.hess)
                if mu is not None and hd.value.size:
                    H -= np.einsum("k,kab->ab", mu[t][i], hd.hess)
                if gam is not None and gd.value.size:
                    H -= np.einsum("k,kab->ab", gam[t][i], gd.hess)
                H = 0.5 * (H + H.T)
            else:
                H = np.zeros((n + nu, n + nu))
            rowsQ.append(H[:n, :n])
            rowsq.append(ld.jac[0, :n])
            rHx.append(hd.jac[:, :n])
            rh.append(hd.value)
            rGx.append(gd.jac[:, :n])
            rg.append(gd.value)
            if t < T:
                rowsS.append(H[n:, :n])
                rowsR.append(H[n:, n:])
                rowsr.append(ld.jac[0, n:])
                rHu.append(hd.jac[:, n:])
                rGu.append(gd.jac[:, n:])
        Q.append(tuple(rowsQ))
        q.append(tuple(rowsq))
        Hx.append(tuple(rHx))
        h.append(tuple(rh))
        Gx.append(tuple(rGx))
        g.append(tuple(rg))
        if t < T:
            S.append(tuple(rowsS))
            R.append(tuple(rowsR))
            r.append(tuple(rowsr))
            Hu.append(tuple(rHu))
            Gu.append(tuple(rGu))
    return LQGame(n, tuple(m), tuple(A), tuple(B), tuple(c), tuple(Q), tuple(S), tuple(R), tuple(q), tuple(r),
                  tuple(Hx), tuple(Hu), tuple(h), tuple(Gx), tuple(Gu), tuple(g),
                  regular=spec.regular, groups=spec.groups, root=spec.root)


def lq_from_spec(spec: GameSpec) -> LQGame:
    """Exact LQ coefficients of a game whose evaluators are linear/quadratic."""
    T = spec.T
    xs = [np.zeros(spec.n) for _ in range(T + 1)]
    us = [np.zeros(st.nu) for st in spec.stages[:-1]]
    game = local_lq(spec, xs, us)
    return game


# --------------------------------------------------------------------------
# validation


def validate(game) -> list[str]:
    """Return a list of violated invariants; empty when the game is well formed."""
    if isinstance(game, LQGame):
        return _validate_lq(game)
    if isinstance(game, GameSpec):
        return _validate_spec(game)
    return [f"unsupported game type {type(game).__name__}"]


def _shape(issues, label, arr, shape):
    if np.shape(arr) != tuple(shape):
        issues.append(f"shape mismatch: {label} expected {tuple(shape)} got {np.shape(arr)}")
        return False
    return True


def _sym(issues, label, M):
    if M.size and np.max(np.abs(M - M.T)) > SYM_TOL * max(1.0, np.max(np.abs(M))):
        issues.append(f"asymmetric {label}")


def _validate_lq(game: LQGame) -> list[str]:
    issues: list[str] = []
    n, N, T = game.n, game.N, game.T
    if n < 1 or T < 1 or N < 1:
        issues.append("dimensions must satisfy n >= 1, T >= 1, N >= 1")
        return issues
    if any(len(mt) != N or min(mt) < 0 for mt in game.m) or len(game.m) != T:
        issues.append("control dimensions inconsistent with player count")
        return issues
    for t in range(T + 1):
        lab = f"stage {t + 1}"
        if t < T:
            mt = game.mt(t)
            _shape(issues, f"A at {lab}", game.A[t], (n, n))
            _shape(issues, f"B at {lab}", game.B[t], (n, mt))
            _shape(issues, f"c at {lab}", game.c[t], (n,))
        for i in range(N):
            pl = f"{lab} player {i + 1}"
            if _shape(issues, f"Q at {pl}", game.Q[t][i], (n, n)):
                _sym(issues, f"Q at {pl}", game.Q[t][i])
            _shape(issues, f"q at {pl}", game.q[t][i], (n,))
            a, b = len(game.h[t][i]), len(game.g[t][i])
            _shape(issues, f"Hx at {pl}", game.Hx[t][i], (a, n))
            _shape(issues, f"Gx at {pl}", game.Gx[t][i], (b, n))
            if t < T:
                mt = game.mt(t)
                _shape(issues, f"S at {pl}", game.S[t][i], (mt, n))
                if _shape(issues, f"R at {pl}", game.R[t][i], (mt, mt)):
                    _sym(issues, f"R at {pl}", game.R[t][i])
                _shape(issues, f"r at {pl}", game.r[t][i], (mt,))
                _shape(issues, f"Hu at {pl}", game.Hu[t][i], (a, mt))
                _shape(issues, f"Gu at {pl}", game.Gu[t][i], (b, mt))
    if issues:
        return issues
    if game.regular:
        issues.extend(_regularity_issues(game))
    return issues


def _validate_spec(spec: GameSpec) -> list[str]:
    issues: list[str] = []
    n, T = spec.n, spec.T
    if n < 1 or T < 1:
        issues.append("dimensions must satisfy n >= 1, T >= 1")
        return issues
    if np.shape(spec.x1) != (n,):
        issues.append(f"x1 has length {np.size(spec.x1)}, expected {n}")
    N = spec.N
    for t, st in enumerate(spec.stages):
        lab = f"stage {t + 1}"
        nz = n + st.nu
        if len(st.costs) != N or len(st.eqs) != N or len(st.ineqs) != N or len(st.m) != N:
            issues.append(f"{lab}: per-player evaluator count differs from N={N}")
            continue
        if t < T:
            if st.dynamics is None or st.dynamics.nin != nz or st.dynamics.nout != n:
                issues.append(f"{lab}: dynamics must map R^{nz} to R^{n}")
        elif st.nu != 0 or st.dynamics is not None:
            issues.append("terminal stage must be state-only")
        for i in range(N):
            if st.costs[i].nin != nz or st.costs[i].nout != 1:
                issues.append(f"{lab} player {i + 1}: cost must map R^{nz} to R")
            for kind, f in (("equality", st.eqs[i]), ("inequality", st.ineqs[i])):
                if f.nin != nz:
                    issues.append(f"{lab} player {i + 1}: {kind} map input must have length {nz}")
    if not issues and spec.regular and spec.family == "custom-lq":
        issues.extend(_regularity_issues(lq_from_spec(spec)))
    return issues


# --------------------------------------------------------------------------
# stage combination


def combine_stages(game, t: int):
    """Merge control stage ``t`` into stage ``t - 1`` (``1 <= t <= T - 1``).

    The merged stage takes ``[u_{t-1}^i; u_t^i]`` as player ``i``'s control,
    composes the dynamics, stacks both stages' constraints and adds both
    stages' costs.  Works for :class:`GameSpec` and :class:`LQGame`.
    """
    if isinstance(game, LQGame):
        spec = combine_stages(game.as_spec(), t)
        out = lq_from_spec(spec)
        return replace(out, regular=game.regular, groups=spec.groups, root=game.base)
    if not isinstance(game, GameSpec):
        raise TypeError(type(game).__name__)
    T = game.T
    if not 1 <= t <= T - 1:
        raise ModelError(f"cannot combine stage {t}: valid range is 1..{T - 1}")
    first, second = game.stages[t - 1], game.stages[t]
    n, N = game.n, game.N
    m_hat = tuple(first.m[i] + second.m[i] for i in range(N))
    nz = n + sum(m_hat)
    idx_first, idx_second = list(range(n)), []
    o = n
    for i in range(N):
        idx_first.extend(range(o, o + first.m[i]))
        o += first.m[i]
        idx_second.extend(range(o, o + second.m[i]))
        o += second.m[i]
    E1 = selector(nz, idx_first)
    E2 = selector(nz, idx_second)
    inner = Concat([Chain(first.dynamics, E1), E2])

    def stacked(f1, f2):
        parts = [p for p in (Chain(f1, E1) if f1.nout else None, Chain(f2, inner) if f2.nout else None) if p]
        return Concat(parts) if parts else empty_map(nz)

    merged = Stage(
        m=m_hat,
        dynamics=Chain(second.dynamics, inner),
        costs=tuple(Sum([Chain(first.costs[i], E1), Chain(second.costs[i], inner)]) for i in range(N)),
        eqs=tuple(stacked(first.eqs[i], second.eqs[i]) for i in range(N)),
        ineqs=tuple(stacked(first.ineqs[i], second.ineqs[i]) for i in range(N)),
    )
    groups = list(game.stage_groups)
    groups[t - 1] = groups[t - 1] + groups[t]
    del groups[t]
    stages = game.stages[:t - 1] + (merged,) + game.stages[t + 1:]
    return replace(game, stages=stages, groups=tuple(groups), root=game.base)


def combine_iterate(spec: GameSpec, t: int, it):
    """Re-index a trajectory iterate for ``combine_stages(spec, t)``.

    Controls of the two stages are interleaved per player, the intermediate
    state is dropped and the later dynamics multiplier is kept.
    """
    N = spec.N
    m1, m2 = spec.stages[t - 1].m, spec.stages[t].m
    s1, s2 = player_slices(m1), player_slices(m2)
    u = np.concatenate([np.concatenate([it.us[t - 1][s1[i]], it.us[t][s2[i]]]) for i in range(N)]) if N else np.zeros(0)
    us = list(it.us[:t - 1]) + [u] + list(it.us[t + 1:])
    xs = list(it.xs[:t]) + list(it.xs[t + 1:])
    lam = list(it.lam[:t - 1]) + [it.lam[t]] + list(it.lam[t + 1:])
    mu = list(it.mu[:t - 1]) + [[np.concatenate([it.mu[t - 1][i], it.mu[t][i]]) for i in range(N)]] + list(it.mu[t + 1:])
    gam = list(it.gam[:t - 1]) + [[np.concatenate([it.gam[t - 1][i], it.gam[t][i]]) for i in range(N)]] + list(it.gam[t + 1:])
    merged_psi = []
    for i in range(N):
        if t - 1 == 0:
            merged_psi.append(np.zeros(0))   # the first stage carries no psi
            continue
        blocks = []
        o1 = o2 = 0
        for j in range(N):
            if j == i:
                continue
            blocks.append(it.psi[t - 1][i][o1:o1 + m1[j]])
            blocks.append(it.psi[t][i][o2:o2 + m2[j]])
            o1 += m1[j]
            o2 += m2[j]
        merged_psi.append(np.concatenate(blocks) if blocks else np.zeros(0))
    psi = list(it.psi[:t - 1]) + [merged_psi] + list(it.psi[t + 1:])
    return TrajectoryIterate(xs, us, lam, mu, gam, psi)
