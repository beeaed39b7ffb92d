import numpy as np
import pytest
from games import random_lq
from hypothesis import given, settings, strategies as st

from gfne.lq import SingularStageMatrix, backward_recursion, solve_equality_lq, stage_residual
from gfne.model import LQGame
from gfne.verification import monolithic_oracle, residual, riccati_oracle


def scalar_game(T=1, terminal_row=False):
    kw = {}
    if terminal_row:
        kw = dict(Hx=[[np.zeros((0, 1))]] * T + [[np.eye(1)]], Hu=[[np.zeros((0, 1))]] * T,
                  h=[[np.zeros(0)]] * T + [[np.zeros(1)]])
    return LQGame.build(1, ((1,),) * T, [np.eye(1)] * T, [np.eye(1)] * T,
                        Q=[[np.eye(1)]] * (T + 1), R=[[np.eye(1)]] * T, **kw)


def test_scalar_closed_form():
    sol = solve_equality_lq(scalar_game(), np.array([2.0]))
    assert sol.gains[0].K[0, 0] == pytest.approx(-0.5)
    assert sol.us[0][0] == pytest.approx(-1.0)
    assert sol.xs[1][0] == pytest.approx(1.0)


def test_scalar_terminal_constraint():
    sol = solve_equality_lq(scalar_game(terminal_row=True), np.array([2.0]))
    assert sol.gains[0].K[0, 0] == pytest.approx(-1.0)
    assert sol.xs[1][0] == pytest.approx(0.0, abs=1e-14)
    # stationarity in u: u + lam = 0 and in x_2: x_2 - lam - mu = 0, so mu = -lam = u
    assert sol.mu[1][0][0] == pytest.approx(sol.us[0][0])


@pytest.mark.parametrize("seed", range(5))
def test_matches_riccati(seed):
    rng = np.random.default_rng(seed)
    g = random_lq(rng, 4, (2,), 12)
    x1 = rng.standard_normal(4)
    sol = solve_equality_lq(g, x1)
    Ks, ks, xs, us = riccati_oracle(g, x1)
    assert max(np.abs(a.K - K).max() for a, K in zip(sol.gains, Ks)) < 1e-8
    assert max(np.abs(a - b).max() for a, b in zip(sol.xs, xs)) < 1e-8


@pytest.mark.parametrize("seed", range(4))
def test_matches_monolithic_oracle(seed):
    rng = np.random.default_rng(100 + seed)
    g = random_lq(rng, 3, (1, 2, 1), 4, a=[0, 1, 0], aT=[1, 0, 1])
    x1 = rng.standard_normal(3)
    sol = solve_equality_lq(g, x1)
    gains, xs, us, lam, mu, psi = monolithic_oracle(g, x1)
    assert max(np.abs(a.K - K).max() for a, (K, _) in zip(sol.gains, gains)) < 1e-8
    assert max(np.abs(a - b).max() for a, b in zip(sol.us, us)) < 1e-8
    for t in range(1, g.T):
        for i in range(g.N):
            assert np.allclose(sol.psi[t][i], psi[t][i], atol=1e-8)


def test_conditions_hold_at_solution():
    rng = np.random.default_rng(7)
    g = random_lq(rng, 3, (2, 1), 6, a=[1, 0], aT=[0, 1])
    sol = solve_equality_lq(g, rng.standard_normal(3))
    assert residual(g, sol.as_iterate(), sol.quasigrads).total < 1e-18
    x = rng.standard_normal(3)
    for t in range(g.T):
        nxt = sol.gains[t + 1] if t + 1 < g.T else None
        assert stage_residual(g, t, nxt, sol.gains[t], x) < 1e-10


def full_state_terminal(n=3, T=4, seed=0):
    rng = np.random.default_rng(seed)
    g = random_lq(rng, n, (1,), T, aT=[n])
    Hx = list(g.Hx)
    Hx[-1] = (np.eye(n),)
    return LQGame(**{**g.__dict__, "Hx": tuple(Hx)}), rng.standard_normal(n)


def test_singular_stage_detected_without_combining():
    g, x1 = full_state_terminal()
    with pytest.raises(SingularStageMatrix) as err:
        solve_equality_lq(g, x1, combine=False)
    assert err.value.t == g.T - 1


def test_singular_stage_resolved_by_combining():
    g, x1 = full_state_terminal()
    sol = solve_equality_lq(g, x1)
    assert sol.game.T < g.T
    xs, us = sol.expanded()
    assert len(xs) == g.T + 1
    assert np.allclose(xs[-1], -g.h[-1][0], atol=1e-9)
    assert np.allclose(g.rollout(x1, us)[-1], xs[-1], atol=1e-9)


def test_merge_limit():
    g, x1 = full_state_terminal()
    with pytest.raises(SingularStageMatrix):
        solve_equality_lq(g, x1, max_merges=1)


def test_gains_do_not_depend_on_initial_state():
    rng = np.random.default_rng(3)
    g = random_lq(rng, 3, (1, 1), 5, a=[1, 0], aT=[0, 1])
    a = backward_recursion(g)
    s1 = solve_equality_lq(g, rng.standard_normal(3))
    assert all(np.array_equal(x.K, y.K) for x, y in zip(a, s1.gains))


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 10_000), T=st.integers(1, 6), players=st.integers(1, 3))
def test_policy_is_affine_in_initial_state(seed, T, players):
    rng = np.random.default_rng(seed)
    g = random_lq(rng, 3, (1,) * players, T)
    x, y = rng.standard_normal(3), rng.standard_normal(3)
    sx, sy, sm = (solve_equality_lq(g, v) for v in (x, y, 0.5 * (x + y)))
    for t in range(T):
        assert np.allclose(sm.us[t], 0.5 * (sx.us[t] + sy.us[t]), atol=1e-8)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_residual_vanishes_on_random_equality_games(seed):
    rng = np.random.default_rng(seed)
    g = random_lq(rng, 3, (1, 2), 4, a=[1, 0], aT=[0, 1])
    sol = solve_equality_lq(g, rng.standard_normal(3))
    assert residual(g, sol.as_iterate(), sol.quasigrads).total < 1e-14
