"""Gaussian policy families and parametric value families, with their derivatives.

Every function broadcasts over arrays of (t, x, a); parameter gradients are returned
with the parameter index on the last axis.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

LOG_2PI = np.log(2 * np.pi)
LOG_2PIE = np.log(2 * np.pi * np.e)

INTEGRATED = "integrated"
POINTWISE = "pointwise"


def _stack(*cols):
    cols = np.broadcast_arrays(*[np.asarray(c, dtype=float) for c in cols])
    return np.stack(cols, axis=-1)


class GaussianFamily:
    """Policy N(mean(phi; t, x), exp(logvar(phi; t, x))) with mean and log-variance affine in phi."""

    dim = 3

    def mean_logvar(self, phi, t, x):
        raise NotImplementedError

    def grad_mean(self, phi, t, x):
        raise NotImplementedError

    def grad_logvar(self, phi, t, x):
        raise NotImplementedError

    def mean_var(self, phi, t, x):
        m, lv = self.mean_logvar(phi, t, x)
        return m, np.exp(lv)


@dataclass(frozen=True)
class MVPolicyFamily(GaussianFamily):
    """Dollar amount in the stock: N(-phi1 (x - w), exp(phi2 + phi3 (T - t)))."""

    T: float = 1.0
    w: float = 0.0
    dim = 3

    def mean_logvar(self, phi, t, x):
        return -phi[0] * (x - self.w), phi[1] + phi[2] * (self.T - t)

    def grad_mean(self, phi, t, x):
        return _stack(-(np.asarray(x) - self.w), 0.0 * np.asarray(t), 0.0)

    def grad_logvar(self, phi, t, x):
        return _stack(0.0 * np.asarray(x), 1.0, self.T - np.asarray(t, dtype=float))

    def with_w(self, w):
        return MVPolicyFamily(self.T, w)


@dataclass(frozen=True)
class LQPolicyFamily(GaussianFamily):
    """N(phi1 x + phi2, exp(phi3)), time-homogeneous."""

    dim = 3

    def mean_logvar(self, phi, t, x):
        x = np.asarray(x, dtype=float)
        return phi[0] * x + phi[1], phi[2] + 0.0 * x

    def grad_mean(self, phi, t, x):
        return _stack(x, 1.0, 0.0)

    def grad_logvar(self, phi, t, x):
        return _stack(0.0 * np.asarray(x), 0.0, 1.0)


def policy_mean_var(family, phi, t, x):
    return family.mean_var(np.asarray(phi, dtype=float), t, x)


def sample_action(family, phi, t, x, rng, eps=None):
    m, v = policy_mean_var(family, phi, t, x)
    if eps is None:
        eps = rng.normal(np.shape(m) or None)
    return m + np.sqrt(v) * eps


def log_pdf(family, phi, t, x, a):
    m, lv = family.mean_logvar(np.asarray(phi, dtype=float), t, x)
    return -0.5 * (LOG_2PI + lv) - 0.5 * (a - m) ** 2 * np.exp(-lv)


def grad_log_pdf(family, phi, t, x, a):
    phi = np.asarray(phi, dtype=float)
    m, lv = family.mean_logvar(phi, t, x)
    iv = np.exp(-lv)
    u = np.asarray(a - m)
    gm = family.grad_mean(phi, t, x)
    gl = family.grad_logvar(phi, t, x)
    return (u * iv)[..., None] * gm + (-0.5 + 0.5 * u * u * iv)[..., None] * gl


def regularizer_value(kind, family, phi, t, x, a=None, sign=1.0):
    """Entropy-type regularizer p. Integrated: 0.5 log(2 pi e var); pointwise: -log pi(a).

    `sign=-1` gives the cost orientation used by minimization problems.
    """
    phi = np.asarray(phi, dtype=float)
    if kind == INTEGRATED:
        _, lv = family.mean_logvar(phi, t, x)
        return sign * 0.5 * (LOG_2PIE + lv)
    if kind == POINTWISE:
        return -sign * log_pdf(family, phi, t, x, a)
    raise ValueError(f"unknown regularizer kind {kind!r}")


def regularizer_grad_phi(kind, family, phi, t, x, a=None, sign=1.0):
    phi = np.asarray(phi, dtype=float)
    if kind == INTEGRATED:
        return sign * 0.5 * family.grad_logvar(phi, t, x)
    if kind == POINTWISE:
        return -sign * grad_log_pdf(family, phi, t, x, a)
    raise ValueError(f"unknown regularizer kind {kind!r}")


@dataclass(frozen=True)
class Policy:
    """A family with its parameters fixed; what rollout_episode consumes."""

    family: GaussianFamily
    phi: np.ndarray
    kind: str = INTEGRATED
    sign: float = 1.0

    def mean_var(self, t, x):
        return policy_mean_var(self.family, self.phi, t, x)

    def regularizer(self, t, x, a):
        return regularizer_value(self.kind, self.family, self.phi, t, x, a, self.sign)

    def sample(self, t, x, rng):
        return sample_action(self.family, self.phi, t, x, rng)


# value families

@dataclass(frozen=True)
class MVValueFamily:
    """J(t,x) = (x-w)^2 exp(-th3 (T-t)) + th2 (t^2 - T^2) + th1 (t - T) - (w - z)^2."""

    T: float = 1.0
    w: float = 0.0
    z: float = 1.4
    dim = 3

    def value(self, theta, t, x):
        tau = self.T - np.asarray(t, dtype=float)
        return ((x - self.w) ** 2 * np.exp(-theta[2] * tau) + theta[1] * (t**2 - self.T**2)
                + theta[0] * (t - self.T) - (self.w - self.z) ** 2)

    def grad_theta(self, theta, t, x):
        t = np.asarray(t, dtype=float)
        tau = self.T - t
        return _stack(t - self.T, t**2 - self.T**2, (x - self.w) ** 2 * np.exp(-theta[2] * tau) * (t - self.T))

    def terminal(self, x):
        return (x - self.w) ** 2 - (self.w - self.z) ** 2

    def with_w(self, w):
        return MVValueFamily(self.T, w, self.z)


@dataclass(frozen=True)
class LQValueFamily:
    """J(x) = 0.5 th0 x^2 + th1 x (relative value, no constant)."""

    dim = 2

    def value(self, theta, t, x):
        return 0.5 * theta[0] * x * x + theta[1] * x

    def grad_theta(self, theta, t, x):
        return _stack(0.5 * np.asarray(x, dtype=float) ** 2, x)

    def terminal(self, x):
        return 0.0 * x


def value_eval(family, theta, t, x):
    return family.value(np.asarray(theta, dtype=float), t, x)


def value_grad_theta(family, theta, t, x):
    return family.grad_theta(np.asarray(theta, dtype=float), t, x)
