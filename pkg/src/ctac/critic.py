"""Policy evaluation: TD errors, test functions and the three PE objectives.

Trajectory arrays may carry a leading batch axis; per-step quantities then have
shape (n, K) and per-step vectors (n, K, d).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import least_squares, root

from .sim import InvalidInput, Trajectory


class ConditioningError(np.linalg.LinAlgError):
    pass


@dataclass(frozen=True)
class TestFn:
    """Which test process multiplies the TD error."""

    kind: str  # td0 | lambda | discount | zero
    lam: float = 1.0

    __test__ = False  # not a pytest class

    def __post_init__(self):
        if self.kind not in ("td0", "lambda", "discount", "zero"):
            raise InvalidInput(f"unknown test function kind {self.kind!r}")
        if self.kind == "lambda" and not 0 < self.lam <= 1:
            raise InvalidInput("lambda must lie in (0, 1]")


TD0 = TestFn("td0")
DISCOUNT_ONLY = TestFn("discount")
ZERO = TestFn("zero")


def TDLambda(lam):
    return TestFn("lambda", lam)


def test_fn_path(spec: TestFn, grads, times, dt, beta=0.0, lag=0):
    """Test-function values at every step given per-step gradients (..., K, d).

    `lag=1` feeds the recursion with the previous step's gradient, which is how the
    score-based shift is kept adapted (it must not see the current action).
    """
    grads = np.asarray(grads, dtype=float)
    if lag:
        g = np.zeros_like(grads)
        g[..., lag:, :] = grads[..., :-lag, :]
        grads = g
    if spec.kind == "td0":
        return grads
    if spec.kind == "zero":
        return np.zeros_like(grads)
    if spec.kind == "discount":
        return np.exp(-beta * np.asarray(times))[:, None] * np.ones_like(grads)
    decay = spec.lam**dt
    out = np.empty_like(grads)
    acc = np.zeros(grads.shape[:-2] + grads.shape[-1:])
    for k in range(grads.shape[-2]):
        acc = decay * acc + grads[..., k, :] * dt
        out[..., k, :] = acc
    return out


test_fn_path.__test__ = False


def test_fn_eval(spec: TestFn, grad_history, times, dt, beta=0.0, lag=0):
    """Current test-function value from the history of gradients up to now."""
    return test_fn_path(spec, grad_history, times, dt, beta, lag)[..., -1, :]


test_fn_eval.__test__ = False


class TraceAccumulator:
    """Step-by-step version of test_fn_path for online learners."""

    def __init__(self, spec: TestFn, dim: int, dt: float, beta=0.0):
        self.spec, self.dt, self.beta = spec, dt, beta
        self.acc = np.zeros(dim)
        self.prev = np.zeros(dim)

    def reset(self):
        self.acc[:] = 0.0
        self.prev[:] = 0.0

    def __call__(self, grad, t, lag=0):
        g = self.prev if lag else grad
        s = self.spec
        if s.kind == "td0":
            out = np.array(g, dtype=float)
        elif s.kind == "zero":
            out = np.zeros_like(self.acc)
        elif s.kind == "discount":
            out = np.full_like(self.acc, np.exp(-self.beta * t))
        else:
            self.acc = s.lam**self.dt * self.acc + np.asarray(g) * self.dt
            out = self.acc.copy()
        if lag:
            self.prev = np.array(grad, dtype=float)
        return out


def td_error(vfam, theta, t, x, r, p, t1, x1, gamma, beta, dt):
    """delta = J(t1, x1) - J(t, x) + (r + gamma p - beta J(t, x)) dt."""
    if not dt > 0:
        raise InvalidInput("dt must be positive")
    J0 = vfam.value(theta, t, x)
    return vfam.value(theta, t1, x1) - J0 + (r + gamma * p - beta * J0) * dt


def episode_td(vfam, theta, traj: Trajectory, gamma, beta=0.0):
    """TD errors along a trajectory, plus the value path used to build them."""
    t, dt = traj.times, traj.grid.dt
    J = vfam.value(theta, t, traj.states)
    delta = J[..., 1:] - J[..., :-1] + (traj.rewards + gamma * traj.regularizers - beta * J[..., :-1]) * dt
    return delta, J


def _batch_mean(v):
    return v if v.ndim == 1 else v.mean(axis=0)


def pe_offline_orthogonality_delta(vfam, theta, traj: Trajectory, xi_spec: TestFn, gamma, beta=0.0,
                                   per_episode=False):
    """Sum over the episode of xi * delta; averaged over episodes for a batch."""
    delta, _ = episode_td(vfam, theta, traj, gamma, beta)
    t = traj.times[:-1]
    grads = vfam.grad_theta(theta, t, traj.states[..., :-1])
    xi = test_fn_path(xi_spec, grads, t, traj.grid.dt, beta)
    d = (xi * delta[..., None]).sum(axis=-2)
    return d if per_episode else _batch_mean(d)


def martingale_loss(vfam, theta, traj: Trajectory, gamma, beta=0.0):
    """Sum over steps of the squared gap between realized discounted return-to-go and the value."""
    R = martingale_residuals(vfam, theta, traj, gamma, beta)
    return np.mean(np.sum(R**2, axis=-1) * traj.grid.dt)


def martingale_residuals(vfam, theta, traj, gamma, beta=0.0):
    """Realized discounted return-to-go minus the discounted value, per step."""
    t, dt = traj.times, traj.grid.dt
    disc = np.exp(-beta * t)
    flow = disc[:-1] * (traj.rewards + gamma * traj.regularizers) * dt
    # reverse cumulative sum gives the return from step i onward
    to_go = np.flip(np.cumsum(np.flip(flow, -1), -1), -1)
    hT = disc[-1] * vfam.terminal(traj.states[..., -1])
    J = vfam.value(theta, t[:-1], traj.states[..., :-1])
    return np.asarray(hT)[..., None] + to_go - disc[:-1] * J


def martingale_loss_delta(vfam, theta, traj: Trajectory, gamma, beta=0.0, per_episode=False):
    """Descent direction for the martingale loss (factor 2 dropped)."""
    t, dt = traj.times[:-1], traj.grid.dt
    R = martingale_residuals(vfam, theta, traj, gamma, beta)
    g = vfam.grad_theta(theta, t, traj.states[..., :-1])
    d = ((R * np.exp(-beta * t))[..., None] * g).sum(axis=-2) * dt
    return d if per_episode else _batch_mean(d)


def orthogonality_moments(vfam, theta, traj, xi_spec, gamma, beta=0.0):
    """Batch estimate of E sum xi delta and the Gram matrix E sum xi xi^T dt."""
    delta, _ = episode_td(vfam, theta, traj, gamma, beta)
    t = traj.times[:-1]
    xi = test_fn_path(xi_spec, vfam.grad_theta(theta, t, traj.states[..., :-1]), t, traj.grid.dt, beta)
    m = (xi * delta[..., None]).sum(axis=-2)
    G = np.einsum("...ki,...kj->...ij", xi, xi) * traj.grid.dt
    if m.ndim > 1:
        m, G = m.mean(0), G.mean(0)
    return m, G


def _weight(G, weighting, ridge=True):
    if weighting == "identity":
        return np.eye(G.shape[0])
    if weighting != "inverse_gram":
        raise InvalidInput(f"unknown weighting {weighting!r}")
    if ridge:
        G = G + 1e-8 * np.trace(G) / G.shape[0] * np.eye(G.shape[0])
    elif np.linalg.cond(G) > 1e12:
        raise ConditioningError("Gram matrix is singular; enable the ridge")
    return np.linalg.inv(G)


def gtd_objective(vfam, theta, traj, xi_spec, weighting="identity", gamma=0.0, beta=0.0,
                  ridge=True, h=1e-6):
    """Quadratic form m^T A m of the orthogonality condition and its gradient in theta.

    The gradient is a central difference of the full objective (A included).
    """
    theta = np.asarray(theta, dtype=float)

    def obj(th):
        m, G = orthogonality_moments(vfam, th, traj, xi_spec, gamma, beta)
        return float(m @ _weight(G, weighting, ridge) @ m)

    grad = np.empty_like(theta)
    for i in range(theta.size):
        e = np.zeros_like(theta)
        e[i] = h * max(1.0, abs(theta[i]))
        grad[i] = (obj(theta + e) - obj(theta - e)) / (2 * e[i])
    return obj(theta), grad


def fit_martingale_loss(vfam, traj, gamma, beta=0.0, theta0=None):
    """Minimize the sample martingale loss on a fixed batch (Gauss-Newton via least squares)."""
    theta0 = np.zeros(vfam.dim) if theta0 is None else np.asarray(theta0, dtype=float)
    sq = np.sqrt(traj.grid.dt)
    res = least_squares(lambda th: (martingale_residuals(vfam, th, traj, gamma, beta) * sq).ravel(),
                        theta0, xtol=1e-12, ftol=1e-12)
    return res.x


def solve_orthogonality(vfam, traj, xi_spec: TestFn, gamma, beta=0.0, theta0=None):
    """Root of the sample orthogonality condition sum xi delta = 0 on a fixed batch."""
    theta0 = np.zeros(vfam.dim) if theta0 is None else np.asarray(theta0, dtype=float)
    res = root(lambda th: pe_offline_orthogonality_delta(vfam, th, traj, xi_spec, gamma, beta), theta0,
               tol=1e-12)
    if not res.success:
        raise ConditioningError(f"orthogonality solve failed: {res.message}")
    return res.x


def pe_sgd(vfam, sampler, n_iter, alpha, gamma, beta=0.0, method="td0", xi_spec: TestFn = TD0,
           power=0.51, theta0=None, average_from=0.5):
    """Stochastic-approximation PE: theta += l(j) alpha Delta theta on fresh batches from sampler(j).

    Returns the final iterate and the Polyak average over the last part of the run.
    """
    th = np.zeros(vfam.dim) if theta0 is None else np.asarray(theta0, dtype=float)
    avg, na = np.zeros_like(th), 0
    for j in range(1, n_iter + 1):
        traj = sampler(j)
        if method == "td0":
            d = pe_offline_orthogonality_delta(vfam, th, traj, xi_spec, gamma, beta)
        elif method == "martingale":
            d = martingale_loss_delta(vfam, th, traj, gamma, beta)
        else:
            raise InvalidInput(f"unknown PE method {method!r}")
        th = th + alpha * j ** -power * d
        if not np.all(np.isfinite(th)):
            raise FloatingPointError(f"PE iterate diverged at iteration {j}")
        if j > average_from * n_iter:
            avg += th
            na += 1
    return th, avg / max(na, 1)
