import numpy as np
import pytest
from games import random_lq

from gfne.active_set import Trajectory
from gfne.functions import Quadratic, Unicycle, empty_map
from gfne.model import GameSpec, Stage, TrajectoryIterate, zero_multipliers
from gfne.scenario import bundled_path, load_scenario
from gfne.sqp import (MERIT_BLOCKS, LineSearchFailure, MaxIterations, SqpOptions, initial_iterate, line_search,
                      merit, merit_blocks, solve_gfqne, trial_iterate)
from gfne.verification import fd_policy_gradient, residual


def random_iterate(spec, rng):
    it = zero_multipliers(spec)

    def fill(v):
        return [fill(x) for x in v] if isinstance(v, list) else rng.standard_normal(np.shape(v))
    return TrajectoryIterate(*(fill(getattr(it, f)) for f in ("xs", "us", "lam", "mu", "gam", "psi")))


def lq_spec(seed, **rows):
    rng = np.random.default_rng(seed)
    g = random_lq(rng, 3, (1, 2), 4, **rows)
    return g, g.as_spec(rng.standard_normal(3))


def test_options_validated():
    with pytest.raises(ValueError):
        SqpOptions(backtrack=1.5)
    with pytest.raises(ValueError):
        SqpOptions(tol=0.0)


def test_lq_game_converges_in_one_major_iteration():
    g, spec = lq_spec(0, a=[1, 0], aT=[0, 1])
    res = solve_gfqne(spec, SqpOptions(tol=1e-12))
    assert res.converged and len(res.log.majors) == 1
    assert res.merit < 1e-12
    assert res.alphas == [1.0]


def test_quasigrads_agree_with_finite_differences_on_lq_input():
    g, spec = lq_spec(1, a=[1, 0], aT=[0, 1])
    res = solve_gfqne(spec, SqpOptions(tol=1e-12))
    for t in range(g.T):
        fd = fd_policy_gradient(g, t, res.iterate.xs[t])
        assert np.allclose(fd, res.quasigrads[t], atol=1e-5)


@pytest.mark.parametrize("seed", range(3))
def test_merit_equals_residual_total(seed):
    g, spec = lq_spec(seed, a=[1, 0], aT=[0, 1], b=[1, 1], bT=[1, 0])
    rng = np.random.default_rng(seed)
    it = random_iterate(spec, rng)
    K = [rng.standard_normal((g.mt(t), 3)) for t in range(g.T)]
    m, r = merit(spec, it, K), residual(spec, it, K).total
    assert abs(m - r) <= 1e-12 * max(1.0, r)


def test_merit_blocks_on_driving_game_match_residual_blocks():
    spec = load_scenario(bundled_path("lane_change"))
    rng = np.random.default_rng(3)
    it = initial_iterate(spec)
    it.lam = [[rng.standard_normal(12) for _ in range(3)] for _ in range(spec.T)]
    K = [rng.standard_normal((6, 12)) for _ in range(spec.T)]
    mb, rb = merit_blocks(spec, it, K), residual(spec, it, K).blocks
    for k in MERIT_BLOCKS:
        assert mb[k] == pytest.approx(rb[k], rel=1e-12, abs=1e-14)


def test_zero_step_is_accepted_vacuously():
    g, spec = lq_spec(2)
    it = initial_iterate(spec)
    zero = Trajectory([np.zeros(3) for _ in it.xs], [np.zeros_like(u) for u in it.us])
    K = [np.zeros((g.mt(t), 3)) for t in range(g.T)]
    alpha, m = line_search(spec, it, zero, it.copy(), K, SqpOptions())
    assert alpha == 1.0 and m == merit(spec, it, K)


def test_multiplier_interpolation_is_exact():
    g, spec = lq_spec(3, a=[1, 0], aT=[0, 1], b=[1, 1], bT=[1, 0])
    rng = np.random.default_rng(3)
    a, b = random_iterate(spec, rng), random_iterate(spec, rng)
    step = Trajectory([rng.standard_normal(3) for _ in a.xs], [rng.standard_normal(3) for _ in a.us])
    out = trial_iterate(a, step, b, 0.25)
    for f in ("lam", "mu", "gam"):
        for ra, rb_, ro in zip(getattr(a, f), getattr(b, f), getattr(out, f)):
            for x, y, z in zip(ra, rb_, ro):
                assert np.array_equal(z, x + 0.25 * (y - x))
    assert np.array_equal(out.us[1], a.us[1] + 0.25 * step.us[1])


def unicycle_stabilization(T=20):
    dyn = Unicycle(1, 0.1)
    goal = np.array([2.0, 1.0, 0.0, 0.0])
    W = np.diag([1.0, 1.0, 0.1, 0.1, 0.5, 0.5])
    w = np.concatenate([-np.diag(W)[:4] * goal, np.zeros(2)])
    stage = Stage((2,), dyn, (Quadratic(W, w),), (empty_map(6),), (empty_map(6),))
    WT = 10 * np.eye(4)
    term = Stage((0,), None, (Quadratic(WT, -WT @ goal),), (empty_map(4),), (empty_map(4),))
    return GameSpec(4, np.array([0.0, 0.0, 0.5, 0.3]), (stage,) * T + (term,))


def newton_kkt(spec, iters=50):
    """Plain Newton on the optimality system of the single-player problem,
    unknowns ordered [u_0, x_1, lam_0, u_1, x_2, lam_1, ...]."""
    n, T = spec.n, spec.T
    m = spec.stages[0].nu
    blk = m + 2 * n
    us = [np.zeros(m) for _ in range(T)]
    xs = spec.rollout(us)
    lam = [np.zeros(n) for _ in range(T)]
    for _ in range(iters):
        F = np.zeros(T * blk)
        J = np.zeros((T * blk, T * blk))
        for t in range(T):
            st = spec.stages[t]
            z = np.concatenate([xs[t], us[t]])
            fd, ld = st.dynamics(z), st.costs[0](z)
            H = ld.hess[0] + np.einsum("k,kab->ab", lam[t], fd.hess)
            o = t * blk
            iu, ix, il = slice(o, o + m), slice(o + m, o + m + n), slice(o + m + n, o + blk)
            F[iu] = ld.jac[0, n:] + fd.jac[:, n:].T @ lam[t]
            J[iu, iu] = H[n:, n:]
            J[iu, il] = fd.jac[:, n:].T
            F[il] = fd.value - xs[t + 1]
            J[il, iu] = fd.jac[:, n:]
            J[il, ix] = -np.eye(n)
            if t > 0:
                px = slice(o - blk + m, o - blk + m + n)
                J[iu, px] = H[n:, :n]
                J[il, px] = fd.jac[:, :n]
                # stationarity in x_t lives in the previous block's x rows
                F[px] = ld.jac[0, :n] + fd.jac[:, :n].T @ lam[t] - lam[t - 1]
                J[px, px] = H[:n, :n]
                J[px, iu] = H[:n, n:]
                J[px, il] = fd.jac[:, :n].T
                J[px, slice(o - blk + m + n, o)] = -np.eye(n)
        lt = spec.stages[T].costs[0](xs[T])
        ix = slice((T - 1) * blk + m, (T - 1) * blk + m + n)
        F[ix] = lt.jac[0] - lam[T - 1]
        J[ix, ix] = lt.hess[0]
        J[ix, slice((T - 1) * blk + m + n, T * blk)] = -np.eye(n)
        if np.abs(F).max() < 1e-13:
            break
        d = np.linalg.solve(J, -F)
        for t in range(T):
            o = t * blk
            us[t] = us[t] + d[o:o + m]
            xs[t + 1] = xs[t + 1] + d[o + m:o + m + n]
            lam[t] = lam[t] + d[o + m + n:o + blk]
    return xs, us


def test_single_player_unicycle_matches_newton_oracle():
    spec = unicycle_stabilization()
    res = solve_gfqne(spec, SqpOptions(tol=1e-20, max_iters=50))
    xs, us = res.expanded()
    oxs, ous = newton_kkt(spec)
    assert max(np.abs(a - b).max() for a, b in zip(xs, oxs)) < 1e-6
    assert max(np.abs(a - b).max() for a, b in zip(us, ous)) < 1e-6


@pytest.fixture(scope="module")
def drive():
    spec = load_scenario(bundled_path("lane_change"))
    return spec, solve_gfqne(spec, SqpOptions(tol=1e-6))


def test_driving_game_converges_with_small_blocks(drive):
    spec, res = drive
    assert res.converged
    assert all(v < 1e-6 for v in res.blocks.values())
    assert all(b <= a for a, b in zip(res.merits, res.merits[1:]))


def test_driving_game_merges_last_stage(drive):
    spec, res = drive
    assert res.spec.T == spec.T - 1
    xs, us = res.expanded()
    assert len(xs) == spec.T + 1
    assert np.allclose(spec.rollout(us)[-1], xs[-1], atol=1e-6)


def test_driving_game_reaches_target_lanes(drive):
    _, res = drive
    xT = res.expanded()[0][-1]
    assert xT[1] == pytest.approx(-2.0, abs=1e-6)
    assert xT[5] == pytest.approx(-2.0, abs=1e-6)
    assert xT[9] == pytest.approx(2.0, abs=1e-6)


def test_snapshot_callback_sees_every_accepted_step():
    spec = load_scenario(bundled_path("lane_change"))
    seen = []
    res = solve_gfqne(spec, SqpOptions(tol=1e-4), on_iterate=lambda k, sp, it: seen.append(k))
    assert seen == list(range(1, len(res.log.majors) + 1))


def test_line_search_failure_is_reported():
    spec = load_scenario(bundled_path("lane_change"))
    with pytest.raises(LineSearchFailure):
        solve_gfqne(spec, SqpOptions(armijo=1.0, alpha_min=0.9))
    res = solve_gfqne(spec, SqpOptions(armijo=1.0, alpha_min=0.9), raise_on_failure=False)
    assert not res.converged and res.log.majors[-1].alpha == 0.0


def test_iteration_limit():
    spec = load_scenario(bundled_path("lane_change"))
    with pytest.raises(MaxIterations):
        solve_gfqne(spec, SqpOptions(tol=1e-30, max_iters=2))
