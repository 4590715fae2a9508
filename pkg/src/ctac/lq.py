"""Ergodic linear-quadratic control: benchmark solver, brute-force oracle and learner runs."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numba
import numpy as np
from scipy.optimize import minimize_scalar

from .sim import InvalidInput, LQEnv, RandomSource


class Infeasible(ValueError):
    pass


@dataclass(frozen=True)
class LQBenchmark:
    k2: float
    k1: float
    V: float
    V_tilde: float
    policy_slope: float
    policy_intercept: float
    policy_variance: float
    stable: bool = True

    @property
    def phi_star(self):
        return np.array([self.policy_slope, self.policy_intercept, math.log(self.policy_variance)])

    @property
    def theta_star(self):
        return np.array([self.k2, self.k1])


def lq_residuals(env: LQEnv, k2, k1, V):
    A, B, C, D, M, R, N, P, Q = _coefs(env)
    nt = N - k2 * D * D
    s = k2 * (B + C * D) - R
    return np.array([
        k2 * (2 * A + C * C) - M + s * s / nt,
        k1 * A - P + s * (k1 * B - Q) / nt,
        V - (k1 * B - Q) ** 2 / (2 * nt),
    ])


def _coefs(env):
    return env.A, env.B, env.C, env.D, env.M, env.R, env.N, env.P, env.Q


def _from_k2(env, k2, gamma):
    A, B, C, D, M, R, N, P, Q = _coefs(env)
    nt = N - k2 * D * D
    s = k2 * (B + C * D) - R
    denom = A + s * B / nt
    if denom == 0:
        raise Infeasible("linear equation for k1 is singular")
    k1 = (P + s * Q / nt) / denom
    V = (k1 * B - Q) ** 2 / (2 * nt)
    u = s / nt
    alpha, c = A + B * u, C + D * u
    stable = alpha < 0 and 2 * alpha + c * c < 0
    return LQBenchmark(k2, k1, V, V - gamma / 2, u, (k1 * B - Q) / nt, gamma / nt, stable)


def lq_candidate_roots(env: LQEnv):
    """Roots of the k2 equation with N - k2 D^2 > 0."""
    A, B, C, D, M, R, N, P, Q = _coefs(env)
    e = 2 * A + C * C
    c2 = -e * D * D + (B + C * D) ** 2
    c1 = e * N + M * D * D - 2 * R * (B + C * D)
    c0 = R * R - M * N
    if abs(c2) < 1e-14:
        roots = [] if c1 == 0 else [-c0 / c1]
    else:
        disc = c1 * c1 - 4 * c2 * c0
        if disc < 0:
            roots = []
        else:
            sq = math.sqrt(disc)
            # numerically stable pair
            qq = -0.5 * (c1 + math.copysign(sq, c1))
            roots = sorted({qq / c2, c0 / qq} if qq != 0 else {0.0})
    return [k for k in roots if N - k * D * D > 0]


def lq_benchmark_solve(env: LQEnv, gamma, verify=False) -> LQBenchmark:
    """Quadratic-in-k2 system for the relative value 0.5 k2 x^2 + k1 x and the optimal Gaussian policy.

    The admissible root is the most concave one (largest curvature penalty) unless
    `verify` asks the brute-force oracle to arbitrate.
    """
    if not env.N > 0:
        raise InvalidInput("need N > 0")
    roots = lq_candidate_roots(env)
    if not roots:
        raise Infeasible("no root with N - k2 D^2 > 0")
    sols = [_from_k2(env, k, gamma) for k in roots]
    if verify:
        _, _, V_bf = lq_bruteforce_oracle(env)
        best = min(sols, key=lambda s: abs(s.V - V_bf))
    else:
        stable = [s for s in sols if s.stable]
        best = min(stable or sols, key=lambda s: s.k2)
    if not best.stable:
        warnings.warn("optimal closed loop is not mean-square stable", RuntimeWarning)
    return best


def stationary_reward(env: LQEnv, u, v):
    """Long-run average reward of a = u x + v from closed-form stationary moments; nan if unstable."""
    A, B, C, D, M, R, N, P, Q = _coefs(env)
    alpha, c = A + B * u, C + D * u
    b0, d0 = B * v, D * v
    if not (alpha < 0 and 2 * alpha + c * c < 0):
        return np.nan
    m1 = -b0 / alpha
    m2 = -(2 * b0 * m1 + 2 * c * d0 * m1 + d0 * d0) / (2 * alpha + c * c)
    return -(0.5 * M * m2 + R * (u * m2 + v * m1) + 0.5 * N * (u * u * m2 + 2 * u * v * m1 + v * v)
             + P * m1 + Q * (u * m1 + v))


def _feasible_u_interval(env, span=1e3):
    """Gains u with A + B u < 0 and 2(A + B u) + (C + D u)^2 < 0, clipped to [-span, span]."""
    A, B, C, D = env.A, env.B, env.C, env.D
    lo, hi = -span, span

    def linear(a1, a0):
        # a1 u + a0 < 0
        nonlocal lo, hi
        if a1 > 0:
            hi = min(hi, -a0 / a1)
        elif a1 < 0:
            lo = max(lo, -a0 / a1)
        elif a0 >= 0:
            lo, hi = 1.0, -1.0

    linear(B, A)
    qa, qb, qc = D * D, 2 * (B + C * D), 2 * A + C * C
    if qa == 0:
        linear(qb, qc)
    else:
        disc = qb * qb - 4 * qa * qc
        if disc <= 0:
            lo, hi = 1.0, -1.0
        else:
            sq = math.sqrt(disc)
            lo, hi = max(lo, (-qb - sq) / (2 * qa)), min(hi, (-qb + sq) / (2 * qa))
    if not lo < hi:
        raise Infeasible("no linear feedback gives a stationary second moment")
    return lo, hi


def lq_bruteforce_oracle(env: LQEnv, tol=1e-10):
    """Best deterministic linear feedback a = u x + v by direct search over stationary moments."""
    lo, hi = _feasible_u_interval(env)

    def best_v(u):
        r = minimize_scalar(lambda v: -stationary_reward(env, u, v), bracket=(-1.0, 1.0),
                            options={"xtol": tol})
        return r.x, -r.fun

    grid = np.linspace(lo, hi, 401)[1:-1]
    vals = np.array([best_v(u)[1] for u in grid])
    i = int(np.nanargmax(vals))
    a, b = grid[max(i - 1, 0)], grid[min(i + 1, len(grid) - 1)]
    r = minimize_scalar(lambda u: -best_v(u)[1], bounds=(a, b), method="bounded",
                        options={"xatol": tol})
    u = r.x
    v, V = best_v(u)
    return u, v, V


# learner

@numba.njit(cache=True)
def _ergodic_lq_kernel(st, rates, coefs, gamma, dt, noise, every, out, pointwise):
    # st = [th0, th1, V, p1, p2, p3, x, k, cum_r, cum_reg]
    A, B, C, D, M, R, N, P, Q = coefs[0], coefs[1], coefs[2], coefs[3], coefs[4], coefs[5], coefs[6], coefs[7], coefs[8]
    a_th, a_V, a_p1, a_p2, a_p3 = rates[0], rates[1], rates[2], rates[3], rates[4]
    th0, th1, V, p1, p2, p3, x = st[0], st[1], st[2], st[3], st[4], st[5], st[6]
    k = int(st[7])
    cum_r, cum_reg = st[8], st[9]
    sq = np.sqrt(dt)
    n_out = 0
    c2pie = np.log(2.0 * np.pi * np.e)
    c2pi = np.log(2.0 * np.pi)
    for i in range(noise.shape[0]):
        m = p1 * x + p2
        v = np.exp(p3)
        sd = np.sqrt(v)
        a = m + sd * noise[i, 0]
        xn = x + (A * x + B * a) * dt + (C * x + D * a) * sq * noise[i, 1]
        r = -(0.5 * M * x * x + R * x * a + 0.5 * N * a * a + P * x + Q * a)
        e = (a - m) / v
        s1 = e * x
        s2 = e
        s3 = -0.5 + 0.5 * (a - m) * (a - m) / v
        if pointwise:
            p = 0.5 * (c2pi + p3) + 0.5 * (a - m) * (a - m) / v
            q1, q2, q3 = -s1, -s2, -s3
        else:
            p = 0.5 * (c2pie + p3)
            q1, q2, q3 = 0.0, 0.0, 0.5
        d = 0.5 * th0 * xn * xn + th1 * xn - (0.5 * th0 * x * x + th1 * x) + (r + gamma * p - V) * dt
        t1 = (k + 1) * dt
        lr = 1.0
        if t1 > np.e:
            lr = 1.0 / np.log(t1)
        g0 = 0.5 * x * x
        g1 = x
        th0 += lr * a_th * g0 * d
        th1 += lr * a_th * g1 * d
        V += lr * a_V * d
        p1 += lr * a_p1 * (s1 * d + gamma * q1 * dt)
        p2 += lr * a_p2 * (s2 * d + gamma * q2 * dt)
        p3 += lr * a_p3 * (s3 * d + gamma * q3 * dt)
        x = xn
        k += 1
        cum_r += r * dt
        cum_reg += (r + gamma * p) * dt
        bad = not (np.isfinite(x) and np.isfinite(p1) and np.isfinite(p2) and np.isfinite(p3)
                   and np.isfinite(th0) and np.isfinite(th1) and np.isfinite(V))
        big = abs(p1) > 1e6 or abs(p2) > 1e6 or abs(p3) > 1e6 or abs(th0) > 1e6 or abs(th1) > 1e6
        if bad or big:
            st[0], st[1], st[2], st[3], st[4], st[5], st[6], st[7], st[8], st[9] = th0, th1, V, p1, p2, p3, x, k, cum_r, cum_reg
            return n_out, True
        if every > 0 and k % every == 0:
            out[n_out, 0] = k * dt
            out[n_out, 1] = p1
            out[n_out, 2] = p2
            out[n_out, 3] = p3
            out[n_out, 4] = V
            out[n_out, 5] = th0
            out[n_out, 6] = th1
            out[n_out, 7] = cum_r
            out[n_out, 8] = cum_reg
            n_out += 1
    st[0], st[1], st[2], st[3], st[4], st[5], st[6], st[7], st[8], st[9] = th0, th1, V, p1, p2, p3, x, k, cum_r, cum_reg
    return n_out, False


TRACE_COLS = ("t", "phi1", "phi2", "phi3", "V", "theta0", "theta1", "cum_reward", "cum_reg_reward")


@dataclass
class LQRunResult:
    theta: np.ndarray
    V: float
    phi: np.ndarray
    trace: np.ndarray  # columns TRACE_COLS
    avg_reward: float
    tail_avg_reward: float
    diverged: bool = False
    diverged_step: int | None = None
    extra: dict = field(default_factory=dict)


def lq_run(env: LQEnv, gamma, dt, T, rates, rng: RandomSource, checkpoint_every=1000,
           chunk=1_000_000, pointwise=False, tail_frac=0.2, init=None, noise=None) -> LQRunResult:
    """Ergodic actor-critic with TD(0) test functions, eta = 1, zeta = 0.

    rates = (alpha_theta, alpha_V, alpha_phi) where alpha_phi is a scalar or a 3-vector.
    `noise` (n, 2) replaces the rng draws, mainly for cross-checking against ergodic_step.
    """
    n_steps = int(round(T / dt)) if noise is None else noise.shape[0]
    a_th, a_V, a_phi = rates
    a_V = a_th if a_V is None else a_V
    r = np.empty(5)
    r[0], r[1] = a_th, a_V
    r[2:] = np.broadcast_to(np.asarray(a_phi, dtype=float), (3,))
    coefs = np.array([env.A, env.B, env.C, env.D, env.M, env.R, env.N, env.P, env.Q], dtype=float)
    st = np.zeros(10)
    if init is not None:
        st[:7] = init
    every = checkpoint_every if checkpoint_every else 0
    out = np.zeros((n_steps // every if every else 0, len(TRACE_COLS)))
    done, n_out, diverged = 0, 0, False
    while done < n_steps and not diverged:
        m = min(chunk, n_steps - done)
        z = rng.normal((m, 2)) if noise is None else noise[done:done + m]
        c, diverged = _ergodic_lq_kernel(st, r, coefs, gamma, dt, z, every, out[n_out:], pointwise)
        n_out += c
        done += m
    trace = out[:n_out]
    k = int(st[7])
    avg = st[8] / (k * dt) if k else 0.0
    tail = np.nan
    if n_out >= 2 and not diverged:
        # tail average from the checkpoint nearest to (1 - tail_frac) of the run
        j = int(round((1 - tail_frac) * n_out)) - 1
        if j < 0:
            tail = avg
        else:
            tail = (st[8] - trace[j, 7]) / ((k * dt) - trace[j, 0])
    elif not diverged:
        tail = avg
    return LQRunResult(st[:2].copy(), float(st[2]), st[3:6].copy(), trace, avg, tail,
                       diverged, k if diverged else None)


# finite-horizon discounted toy, used to check policy gradients

@dataclass
class TabulatedQuadValue:
    """J_k(x) = 0.5 P_k x^2 + q_k x + s_k on a time grid; duck-types a value family."""

    P: np.ndarray
    q: np.ndarray
    s: np.ndarray
    dt: float
    dim = 0

    def value(self, theta, t, x):
        k = np.rint(np.asarray(t) / self.dt).astype(int)
        return 0.5 * self.P[k] * x * x + self.q[k] * x + self.s[k]

    def grad_theta(self, theta, t, x):
        return np.zeros(np.shape(x) + (0,))

    def terminal(self, x):
        return 0.0 * x


def lq_discounted_exact_value(env: LQEnv, phi, gamma, beta, T, dt) -> TabulatedQuadValue:
    """Exact value of the Euler-discretized LQ problem with discounting
    J_k = [E(r + gamma p) dt + E J_{k+1}(x')] / (1 + beta dt), zero terminal reward,
    under a = phi1 x + phi2 + exp(phi3 / 2) eps and the integrated regularizer.
    """
    A, B, C, D, M, R, N, P, Q = _coefs(env)
    K = int(math.floor(T / dt + 1e-9))
    u, v0, var = phi[0], phi[1], math.exp(phi[2])
    al, c = A + B * u, C + D * u
    p = 0.5 * (math.log(2 * math.pi * math.e) + phi[2])
    Pk, qk, sk = np.zeros(K + 1), np.zeros(K + 1), np.zeros(K + 1)
    f = 1.0 / (1.0 + beta * dt)
    for k in range(K - 1, -1, -1):
        P1, q1, s1 = Pk[k + 1], qk[k + 1], sk[k + 1]
        Pk[k] = f * (-(M + 2 * R * u + N * u * u) * dt + P1 * ((1 + al * dt) ** 2 + dt * c * c))
        qk[k] = f * (-(R * v0 + N * u * v0 + P + Q * u) * dt
                     + P1 * ((1 + al * dt) * B * v0 * dt + dt * c * D * v0) + q1 * (1 + al * dt))
        sk[k] = f * (-(0.5 * N * (v0 * v0 + var) + Q * v0) * dt + gamma * p * dt
                     + 0.5 * P1 * ((B * v0 * dt) ** 2 + dt * D * D * (v0 * v0 + var)) + q1 * B * v0 * dt + s1)
    return TabulatedQuadValue(Pk, qk, sk, dt)


@numba.njit(cache=True)
def _lq_frozen_kernel(th, V, ph, coefs, gamma, dt, noise, n_batches, x0):
    A, B, C, D, M, R, N, P, Q = coefs[0], coefs[1], coefs[2], coefs[3], coefs[4], coefs[5], coefs[6], coefs[7], coefs[8]
    n = noise.shape[0]
    per = n // n_batches
    out = np.zeros((n_batches, 4))  # batch means of dphi (3) and delta
    x = x0
    v = np.exp(ph[2])
    sd = np.sqrt(v)
    sq = np.sqrt(dt)
    p = 0.5 * (np.log(2.0 * np.pi * np.e) + ph[2])
    for b in range(n_batches):
        for i in range(b * per, (b + 1) * per):
            m = ph[0] * x + ph[1]
            a = m + sd * noise[i, 0]
            xn = x + (A * x + B * a) * dt + (C * x + D * a) * sq * noise[i, 1]
            r = -(0.5 * M * x * x + R * x * a + 0.5 * N * a * a + P * x + Q * a)
            d = 0.5 * th[0] * (xn * xn - x * x) + th[1] * (xn - x) + (r + gamma * p - V) * dt
            e = (a - m) / v
            out[b, 0] += e * x * d
            out[b, 1] += e * d
            out[b, 2] += (-0.5 + 0.5 * (a - m) * (a - m) / v) * d + gamma * 0.5 * dt
            out[b, 3] += d
            x = xn
        for j in range(4):
            out[b, j] /= per
    return out


def lq_frozen_update_stats(env: LQEnv, gamma, dt, theta, V, phi, n_steps, rng: RandomSource, n_batches=100, x0=0.0):
    """Long-run mean of the per-step actor increment and of delta with all parameters frozen.

    Standard errors come from batch means, which absorbs the serial correlation of the state.
    """
    coefs = np.array(_coefs(env), dtype=float)
    noise = rng.normal((n_steps, 2))
    bm = _lq_frozen_kernel(np.asarray(theta, float), float(V), np.asarray(phi, float), coefs, gamma, dt, noise,
                           n_batches, x0)
    mean = bm.mean(0)
    se = bm.std(0, ddof=1) / math.sqrt(n_batches)
    return mean[:3], se[:3], mean[3], se[3]


def regularized_value(bm: LQBenchmark, gamma):
    """Long-run average of r + gamma p under the optimal Gaussian policy, p the integrated regularizer."""
    return bm.V_tilde + gamma * 0.5 * math.log(2 * math.pi * math.e * bm.policy_variance)
