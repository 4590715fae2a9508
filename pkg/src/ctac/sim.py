"""Time grids, random streams, the two SDE environments and episode rollout."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


class InvalidInput(ValueError):
    pass


class EpisodeDiverged(RuntimeError):
    """Raised when a simulated state leaves the finite reals."""

    def __init__(self, msg, trajectory=None):
        super().__init__(msg)
        self.trajectory = trajectory


class TrainingDiverged(RuntimeError):
    """Raised when learned parameters blow up; carries the iteration index."""

    def __init__(self, msg, iteration=None):
        super().__init__(msg)
        self.iteration = iteration


def _check_finite(*vals):
    for v in vals:
        if not np.all(np.isfinite(v)):
            raise InvalidInput("non-finite input")


@dataclass(frozen=True)
class TimeGrid:
    T: float
    dt: float
    t0: float = 0.0

    def __post_init__(self):
        if not self.dt > 0:
            raise InvalidInput("dt must be positive")
        if self.T < self.t0:
            raise InvalidInput("horizon before start time")

    @property
    def K(self) -> int:
        # small slack so that 1/(1/252) counts as 252 steps
        return int(math.floor((self.T - self.t0) / self.dt + 1e-9))

    @property
    def times(self) -> np.ndarray:
        return self.t0 + self.dt * np.arange(self.K + 1)


class RandomSource:
    """A reproducible stream keyed by (seed, stream id)."""

    def __init__(self, seed: int, stream: int = 0):
        self.seed = int(seed)
        self.stream = int(stream)
        ss = np.random.SeedSequence(self.seed, spawn_key=(self.stream,))
        self.gen = np.random.Generator(np.random.PCG64(ss))

    def child(self, stream: int) -> "RandomSource":
        # children of stream s live at stream ids that cannot collide with top-level ids
        return RandomSource(self.seed, (self.stream + 1) * 1_000_003 + int(stream))

    def normal(self, size=None):
        return self.gen.standard_normal(size)

    def integers(self, low, high, size=None):
        return self.gen.integers(low, high, size=size)

    def __repr__(self):
        return f"RandomSource(seed={self.seed}, stream={self.stream})"


@dataclass
class EnvStep:
    next_state: float | np.ndarray
    reward: float | np.ndarray


@dataclass
class Trajectory:
    """One episode, or a stack of episodes when the arrays carry a leading batch axis."""

    grid: TimeGrid
    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    regularizers: np.ndarray
    noise: np.ndarray | None = None

    def __post_init__(self):
        K = self.grid.K
        if self.states.shape[-1] != K + 1 or self.actions.shape[-1] != K:
            raise InvalidInput("trajectory lengths inconsistent with grid")
        if self.rewards.shape != self.actions.shape or self.regularizers.shape != self.actions.shape:
            raise InvalidInput("reward/regularizer shape mismatch")

    @property
    def times(self):
        return self.grid.times

    @property
    def n_episodes(self):
        return 1 if self.states.ndim == 1 else self.states.shape[0]

    def episode(self, i):
        if self.states.ndim == 1:
            return self
        return Trajectory(self.grid, self.states[i], self.actions[i], self.rewards[i],
                          self.regularizers[i], None if self.noise is None else self.noise[i])


def gbm_gross_return(mu, sigma, r_free, dt, z):
    return np.exp((mu - r_free - 0.5 * sigma**2) * dt + sigma * np.sqrt(dt) * z)


def gbm_market_step(t, x, a, mu, sigma, r_free, dt, rng=None, z=None) -> EnvStep:
    """Discounted wealth after holding dollar amount `a` in the stock for one step.

    The stock is an exact log-normal increment, so only the policy is discretized.
    """
    _check_finite(t, x, a, mu, sigma, r_free, dt)
    if not sigma > 0 or not dt > 0:
        raise InvalidInput("need sigma > 0 and dt > 0")
    if z is None:
        if rng is None:
            raise InvalidInput("need an rng or an explicit draw z")
        z = rng.normal(np.shape(x) or None)
    G = gbm_gross_return(mu, sigma, r_free, dt, z)
    return EnvStep(x + a * (G - 1.0), np.zeros_like(np.asarray(x, dtype=float)))


def lq_reward(x, a, M, R, N, P, Q):
    return -(0.5 * M * x * x + R * x * a + 0.5 * N * a * a + P * x + Q * a)


def lq_env_step(x, a, coeffs, reward_coeffs, dt, rng=None, z=None) -> EnvStep:
    """Euler-Maruyama step of dX = (AX + Ba)dt + (CX + Da)dW with the quadratic running reward."""
    A, B, C, D = coeffs
    _check_finite(x, a, dt, *coeffs, *reward_coeffs)
    if not dt > 0:
        raise InvalidInput("dt must be positive")
    if z is None:
        if rng is None:
            raise InvalidInput("need an rng or an explicit draw z")
        z = rng.normal(np.shape(x) or None)
    xn = x + (A * x + B * a) * dt + (C * x + D * a) * np.sqrt(dt) * z
    return EnvStep(xn, lq_reward(x, a, *reward_coeffs))


@dataclass(frozen=True)
class GBMMarket:
    mu: float
    sigma: float
    r_free: float = 0.0

    def step(self, t, x, a, dt, rng=None, z=None):
        return gbm_market_step(t, x, a, self.mu, self.sigma, self.r_free, dt, rng, z)


@dataclass(frozen=True)
class LQEnv:
    A: float = -1.0
    B: float = 0.0
    C: float = 0.0
    D: float = 1.0
    M: float = 2.0
    R: float = 1.0
    N: float = 2.0
    P: float = 1.0
    Q: float = 2.0

    @property
    def coeffs(self):
        return (self.A, self.B, self.C, self.D)

    @property
    def reward_coeffs(self):
        return (self.M, self.R, self.N, self.P, self.Q)

    def step(self, t, x, a, dt, rng=None, z=None):
        return lq_env_step(x, a, self.coeffs, self.reward_coeffs, dt, rng, z)


def rollout_episode(env, policy, grid: TimeGrid, rng: RandomSource, x0=0.0, n=None,
                    noise_off=False, noise=None) -> Trajectory:
    """Roll a policy forward on the grid.

    `policy` must expose mean_var(t, x) and regularizer(t, x, a); `n` gives a stacked batch.
    Actions are mean + sqrt(var)*eps so that parameter perturbations can reuse the same noise;
    pass a previous trajectory's `noise` array (shape (..., K, 2)) to replay it.
    """
    K = grid.K
    shape = () if n is None else (n,)
    times = grid.times
    xs = np.empty(shape + (K + 1,))
    acts = np.empty(shape + (K,))
    rews = np.empty(shape + (K,))
    regs = np.empty(shape + (K,))
    eps = np.zeros(shape + (K, 2))
    if noise is not None:
        eps[...] = noise
    elif not noise_off:
        eps[...] = rng.normal(shape + (K, 2))
    xs[..., 0] = x0
    for k in range(K):
        t, x = times[k], xs[..., k]
        m, v = policy.mean_var(t, x)
        a = m + np.sqrt(v) * eps[..., k, 0]
        if not np.all(np.isfinite(a)):
            raise EpisodeDiverged(f"action became non-finite at step {k}",
                                  Trajectory(grid, xs, acts, rews, regs))
        step = env.step(t, x, a, grid.dt, z=eps[..., k, 1])
        acts[..., k] = a
        rews[..., k] = step.reward
        regs[..., k] = policy.regularizer(t, x, a)
        xs[..., k + 1] = step.next_state
        if not np.all(np.isfinite(step.next_state)):
            raise EpisodeDiverged(f"state became non-finite at step {k}",
                                  Trajectory(grid, xs, acts, rews, regs))
    return Trajectory(grid, xs, acts, rews, regs, eps)
