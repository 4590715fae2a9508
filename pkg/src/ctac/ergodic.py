"""Actor-critic for long-run-average tasks: joint updates of (theta, V, phi)."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .approx import INTEGRATED, grad_log_pdf, regularizer_grad_phi, regularizer_value
from .critic import TD0, ZERO, TestFn, TraceAccumulator
from .schedules import ergodic_rate
from .sim import EpisodeDiverged


@dataclass
class ErgodicLearnerState:
    theta: np.ndarray
    V: float
    phi: np.ndarray
    x: float = 0.0
    k: int = 0
    dt: float = 0.01
    cum_reward: float = 0.0
    cum_reg_reward: float = 0.0
    traces: dict = field(default_factory=dict)

    @classmethod
    def zeros(cls, theta_dim=2, phi_dim=3, x0=0.0, dt=0.01):
        return cls(np.zeros(theta_dim), 0.0, np.zeros(phi_dim), x0, dt=dt)

    @property
    def avg_reward(self):
        return self.cum_reward / (self.k * self.dt) if self.k else 0.0

    @property
    def avg_reg_reward(self):
        return self.cum_reg_reward / (self.k * self.dt) if self.k else 0.0


@dataclass(frozen=True)
class ErgodicRates:
    theta: float = 0.001
    V: float | None = None  # defaults to the theta rate
    phi: float | tuple = 0.001

    def vec(self, phi_dim):
        a_V = self.theta if self.V is None else self.V
        return self.theta, a_V, np.broadcast_to(np.asarray(self.phi, dtype=float), (phi_dim,))


def ergodic_td(vfam, theta, V, x, r, p, x1, gamma, dt):
    """delta = J(x') - J(x) + (r + gamma p - V) dt."""
    return vfam.value(theta, 0.0, x1) - vfam.value(theta, 0.0, x) + (r + gamma * p - V) * dt


def ergodic_pg_update_direct(score, zeta, delta, q, gamma, dt):
    return (np.asarray(score) + zeta) * delta + gamma * np.asarray(q) * dt


def ergodic_step(state: ErgodicLearnerState, env, vfam, pfam, gamma, dt, rates: ErgodicRates,
                 schedule=ergodic_rate, xi_spec: TestFn = TD0, eta_spec: TestFn | None = None,
                 zeta_spec: TestFn = ZERO, rng=None, eps=None, kind=INTEGRATED):
    """One observation-update cycle. `eps` = (action noise, env noise) overrides rng draws.

    eta_spec None means eta = 1.
    """
    th, phi, x = state.theta, state.phi, state.x
    state.dt = dt
    if eps is None:
        eps = rng.normal(2)
    m, v = pfam.mean_var(phi, 0.0, x)
    a = m + np.sqrt(v) * eps[0]
    step = env.step(0.0, x, a, dt, z=eps[1])
    x1, r = float(step.next_state), float(step.reward)
    if not np.isfinite(x1):
        raise EpisodeDiverged(f"state became non-finite at step {state.k}")
    p = float(regularizer_value(kind, pfam, phi, 0.0, x, a))
    delta = float(ergodic_td(vfam, th, state.V, x, r, p, x1, gamma, dt))

    tr = state.traces
    if not tr:
        tr["xi"] = TraceAccumulator(xi_spec, th.size, dt)
        tr["zeta"] = TraceAccumulator(zeta_spec, phi.size, dt)
    t = state.k * dt
    xi = tr["xi"](vfam.grad_theta(th, 0.0, x), t)
    score = grad_log_pdf(pfam, phi, 0.0, x, a)
    zeta = tr["zeta"](score, t, lag=1)
    q = regularizer_grad_phi(kind, pfam, phi, 0.0, x, a)
    # no discounting in the ergodic setting, so the only non-unit choice is the zero test process
    eta = 0.0 if eta_spec is not None and eta_spec.kind == "zero" else 1.0
    dphi = eta * ergodic_pg_update_direct(score, zeta, delta, q, gamma, dt)

    a_th, a_V, a_phi = rates.vec(phi.size)
    lr = schedule((state.k + 1) * dt)  # right end of the step, keeps the argument positive
    state.theta = th + lr * a_th * xi * delta
    state.V = state.V + lr * a_V * delta
    state.phi = phi + lr * a_phi * dphi
    state.x = x1
    state.k += 1
    state.cum_reward += r * dt
    state.cum_reg_reward += (r + gamma * p) * dt
    return state
