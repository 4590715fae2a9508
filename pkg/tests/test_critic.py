import math

import numpy as np
import pytest

from ctac.approx import INTEGRATED, MVPolicyFamily, MVValueFamily, Policy
from ctac.critic import (DISCOUNT_ONLY, TD0, ZERO, ConditioningError, TDLambda, TestFn, TraceAccumulator,
                         episode_td, fit_martingale_loss, gtd_objective, martingale_loss, martingale_loss_delta,
                         orthogonality_moments, pe_offline_orthogonality_delta, solve_orthogonality, td_error,
                         test_fn_eval, test_fn_path)
from ctac.meanvar import REG_SIGN, family_consistent_phi3, mv_true_theta
from ctac.sim import GBMMarket, InvalidInput, RandomSource, TimeGrid, Trajectory, rollout_episode


class Linear:
    """J(t, x) = theta0 * x, for hand-checked examples."""

    dim = 1

    def value(self, theta, t, x):
        return theta[0] * np.asarray(x, dtype=float)

    def grad_theta(self, theta, t, x):
        return np.asarray(x, dtype=float)[..., None] * np.ones(1)

    def terminal(self, x):
        return 0.0 * np.asarray(x)


class Const:
    dim = 1

    def value(self, theta, t, x):
        return theta[0] + 0.0 * np.asarray(x, dtype=float)

    def grad_theta(self, theta, t, x):
        return np.ones(np.shape(x) + (1,))

    def terminal(self, x):
        return 1.0 + 0.0 * np.asarray(x)


# a fixed MV policy whose exact value lies in the family
MU, SIG, DT, GAM, W, Z = 0.3, 0.2, 0.02, 0.1, 2.0, 1.4
PHI = np.array([0.5, -2.0, family_consistent_phi3(0.5, MU, SIG, 0.0, DT)])
TRUTH = mv_true_theta(PHI, W, Z, MU, SIG, 0.0, 1.0, DT, GAM)
VF = MVValueFamily(1.0, W, Z)


def mv_batch(n, seed):
    pol = Policy(MVPolicyFamily(1.0, W), PHI, INTEGRATED, REG_SIGN)
    return rollout_episode(GBMMarket(MU, SIG), pol, TimeGrid(1.0, DT), RandomSource(seed, 5), x0=1.0, n=n)


# TD error

def test_constant_value_zero_reward():
    assert td_error(Const(), [3.0], 0, 1.0, 0.0, 5.0, 0.1, 2.0, 0.0, 0.0, 0.1) == 0.0


def test_td_plug_in():
    d = td_error(Linear(), [1.0], 0, 1.0, 2.0, 0.0, 0.1, 1.5, 0.0, 0.0, 0.1)
    assert d == pytest.approx(0.7)


def test_td_rejects_bad_dt():
    with pytest.raises(InvalidInput):
        td_error(Linear(), [1.0], 0, 1.0, 2.0, 0.0, 0.1, 1.5, 0.0, 0.0, 0.0)


def test_td_near_zero_mean_at_truth():
    traj = mv_batch(10_000, 1)
    delta, _ = episode_td(VF, TRUTH, traj, GAM)
    per_ep = delta.sum(-1)
    # the true value makes the TD increments a martingale difference
    assert abs(per_ep.mean()) < 4 * per_ep.std() / math.sqrt(per_ep.size)


# test functions

def test_td0_is_zero_at_terminal_time():
    g = VF.grad_theta(TRUTH, np.array([1.0]), np.array([1.7]))
    assert np.all(test_fn_eval(TD0, g, np.array([1.0]), DT) == 0.0)


def test_lambda_one_accumulates():
    g = np.tile([0.3, -1.0], (2, 1))
    out = test_fn_eval(TDLambda(1.0), g, np.array([0.0, 0.1]), 0.1)
    np.testing.assert_allclose(out, 2 * 0.1 * np.array([0.3, -1.0]))


def test_discount_only_without_discounting():
    g = np.random.default_rng(0).normal(size=(5, 3))
    np.testing.assert_array_equal(test_fn_path(DISCOUNT_ONLY, g, np.linspace(0, 1, 5), 0.25), np.ones((5, 3)))


def test_lambda_range_checked():
    with pytest.raises(InvalidInput):
        TDLambda(0.0)
    with pytest.raises(InvalidInput):
        TestFn("gaussian")


def test_lagged_path_is_adapted():
    g = np.arange(1.0, 5.0)[:, None]
    np.testing.assert_array_equal(test_fn_path(TD0, g, np.arange(4.0), 1.0, lag=1)[:, 0], [0, 1, 2, 3])


@pytest.mark.parametrize("spec", [TD0, TDLambda(0.5), DISCOUNT_ONLY, ZERO])
def test_trace_accumulator_matches_path(spec):
    g = np.random.default_rng(3).normal(size=(20, 3))
    t = np.arange(20) * 0.05
    path = test_fn_path(spec, g, t, 0.05, beta=0.3)
    acc = TraceAccumulator(spec, 3, 0.05, beta=0.3)
    np.testing.assert_allclose(np.array([acc(g[k], t[k]) for k in range(20)]), path, rtol=1e-13)


# orthogonality and martingale deltas

def _one_step(state0, state1, reward):
    g = TimeGrid(0.1, 0.1)
    return Trajectory(g, np.array([state0, state1]), np.array([0.0]), np.array([reward]), np.array([0.0]))


def test_orthogonality_zero_when_all_td_zero():
    traj = _one_step(1.0, 1.0, 0.0)
    assert pe_offline_orthogonality_delta(Const(), [0.5], traj, TD0, 0.0)[0] == 0.0


def test_orthogonality_one_term():
    # xi = x0 = 1, delta = 0.7
    traj = _one_step(1.0, 1.5, 2.0)
    np.testing.assert_allclose(pe_offline_orthogonality_delta(Linear(), [1.0], traj, TD0, 0.0), [0.7])


def test_martingale_delta_one_step():
    # h = 1, J(t0, x0) = 0, no rewards, dJ/dtheta = 1
    class Zero(Const):
        def value(self, theta, t, x):
            return 0.0 * np.asarray(x, dtype=float)

    traj = _one_step(1.0, 1.0, 0.0)
    np.testing.assert_allclose(martingale_loss_delta(Zero(), [0.0], traj, 0.0), [0.1])


def test_martingale_delta_zero_when_interpolating():
    traj = _one_step(1.0, 1.0, 0.0)
    np.testing.assert_allclose(martingale_loss_delta(Const(), [1.0], traj, 0.0), [0.0])
    assert martingale_loss(Const(), [1.0], traj, 0.0) == 0.0


def test_orthogonality_at_truth_within_4se():
    traj = mv_batch(1000, 2)
    for spec in (TD0, TDLambda(0.5)):
        d = pe_offline_orthogonality_delta(VF, TRUTH, traj, spec, GAM, per_episode=True)
        se = d.std(0, ddof=1) / math.sqrt(len(d))
        assert np.all(np.abs(d.mean(0)) < 4 * se), spec


def test_truth_is_a_fixed_point_in_expectation():
    traj = mv_batch(200, 4)
    fitted = fit_martingale_loss(VF, mv_batch(20_000, 3), GAM)
    d = pe_offline_orthogonality_delta(VF, fitted, traj, TD0, GAM, per_episode=True)
    assert np.all(np.abs(d.mean(0)) < 3 * d.std(0, ddof=1) / math.sqrt(len(d)))


def test_batch_solvers_recover_truth():
    traj = mv_batch(20_000, 6)
    for th in (fit_martingale_loss(VF, traj, GAM), solve_orthogonality(VF, traj, TD0, GAM)):
        # third component is pinned tightly; the drift terms are noisier
        assert abs(th[2] - TRUTH[2]) < 0.02
        assert np.all(np.abs(th[:2] - TRUTH[:2]) < 0.02)


# GTD objective

def test_gtd_zero_at_root():
    traj = mv_batch(500, 7)
    root = solve_orthogonality(VF, traj, TD0, GAM)
    obj, _ = gtd_objective(VF, root, traj, TD0, "identity", GAM)
    assert obj < 1e-20


def test_gtd_scalar_arithmetic():
    traj = _one_step(1.0, 1.5, 2.0)
    # m = 0.7 here; use theta giving m = 0.5: delta = 0.5 theta + 0.2 = 0.5 -> theta = 0.6
    obj, _ = gtd_objective(Linear(), [0.6], traj, TD0, "identity", 0.0)
    assert obj == pytest.approx(0.25)


def test_weightings_share_zero_set():
    # Linear family with two parameters: m(theta) is affine
    class Lin2:
        dim = 2

        def value(self, th, t, x):
            return th[0] * x + th[1] * np.asarray(t) + 0.0 * x

        def grad_theta(self, th, t, x):
            x = np.asarray(x, float)
            return np.stack([x, np.asarray(t) + 0.0 * x], -1)

        def terminal(self, x):
            return 0.0 * x

    traj = mv_batch(300, 8)
    root = solve_orthogonality(Lin2(), traj, TD0, GAM)
    for wt in ("identity", "inverse_gram"):
        obj, grad = gtd_objective(Lin2(), root, traj, TD0, wt, GAM)
        assert obj < 1e-16
        assert np.all(np.abs(grad) < 1e-6)
    # away from the root both are strictly positive
    assert gtd_objective(Lin2(), root + 0.1, traj, TD0, "inverse_gram", GAM)[0] > 0


def test_inverse_gram_without_ridge_refuses_singular():
    traj = _one_step(1.0, 1.5, 2.0)

    class Dup(Linear):
        dim = 2

        def grad_theta(self, theta, t, x):
            x = np.asarray(x, float)
            return np.stack([x, x], -1)

        def value(self, theta, t, x):
            return (theta[0] + theta[1]) * np.asarray(x, float)

    with pytest.raises(ConditioningError):
        gtd_objective(Dup(), [0.1, 0.2], traj, TD0, "inverse_gram", 0.0, ridge=False)
    m, G = orthogonality_moments(Dup(), [0.1, 0.2], traj, TD0, 0.0)
    assert G.shape == (2, 2)
