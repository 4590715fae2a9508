"""Policy-gradient estimates and actor increments."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .approx import INTEGRATED, grad_log_pdf, regularizer_grad_phi
from .critic import ZERO, TestFn, test_fn_path
from .sim import InvalidInput, Trajectory


@dataclass
class PGEstimate:
    g: np.ndarray
    n_episodes: int
    se: np.ndarray
    g1: np.ndarray
    g2: np.ndarray


def delta_phi_offline(vfam, pfam, theta, phi, traj: Trajectory, gamma, beta=0.0, zeta: TestFn = ZERO,
                      baseline=False, kind=INTEGRATED, sign=1.0, split=False):
    """Single-episode policy-gradient summand (per episode if the trajectory is batched).

    Sum_i e^{-beta t_i} { [score_i + zeta_i] (dJ_i + (r_i + gamma p_i - beta J_i - B_i) dt) + gamma q_i dt }
    with B_i = J_i when `baseline` is set. With `split` the score part and the
    regularizer part are returned separately.
    """
    phi = np.asarray(phi, dtype=float)
    t, dt = traj.times, traj.grid.dt
    ti, xi = t[:-1], traj.states[..., :-1]
    J = vfam.value(theta, t, traj.states)
    J0 = J[..., :-1]
    bracket = J[..., 1:] - J0 + (traj.rewards + gamma * traj.regularizers - beta * J0) * dt
    if baseline:
        bracket = bracket - J0 * dt
    score = grad_log_pdf(pfam, phi, ti, xi, traj.actions)
    z = test_fn_path(zeta, score, ti, dt, beta, lag=1)
    q = regularizer_grad_phi(kind, pfam, phi, ti, xi, traj.actions, sign)
    disc = np.exp(-beta * ti)[:, None]
    g1 = (disc * (score + z) * bracket[..., None]).sum(axis=-2)
    g2 = (disc * gamma * q * dt).sum(axis=-2) * np.ones_like(g1)
    return (g1, g2) if split else g1 + g2


def pg_offline_estimate(vfam, pfam, theta, phi, traj: Trajectory, gamma, beta=0.0, zeta: TestFn = ZERO,
                        baseline=False, kind=INTEGRATED, sign=1.0) -> PGEstimate:
    """Monte-Carlo policy gradient over a batch of episodes."""
    if traj.states.size == 0 or traj.n_episodes == 0:
        raise InvalidInput("empty batch")
    g1, g2 = delta_phi_offline(vfam, pfam, theta, phi, traj, gamma, beta, zeta, baseline, kind, sign, split=True)
    d = np.asarray(phi).size
    g1, g2 = g1.reshape(-1, d), g2.reshape(-1, d)
    g = g1 + g2
    n = g.shape[0]
    se = g.std(axis=0, ddof=1) / np.sqrt(n) if n > 1 else np.full(d, np.inf)
    return PGEstimate(g.mean(0), n, se, g1.mean(0), g2.mean(0))


def delta_phi_online(score, zeta, delta, q, gamma, eta, dt):
    """eta { [score + zeta] delta + gamma q dt }."""
    if not dt > 0:
        raise InvalidInput("dt must be positive")
    return eta * ((np.asarray(score) + zeta) * delta + gamma * np.asarray(q) * dt)


def fd_gradient(objective, phi, h=1e-2):
    """Central finite differences of objective(phi), one component at a time.

    The objective is expected to reuse its random numbers across calls.
    """
    phi = np.asarray(phi, dtype=float)
    g = np.empty_like(phi)
    for i in range(phi.size):
        e = np.zeros_like(phi)
        e[i] = h
        g[i] = (objective(phi + e) - objective(phi - e)) / (2 * h)
    return g
