"""Mean-variance portfolio selection by entropy-regularized actor-critic.

Wealth is discounted, the agent holds a dollar amount in one GBM stock, and the
constraint E[X_T] = z is handled by a learned Lagrange multiplier w.  The problem
is a minimization, so the regularizer enters in cost orientation (sign -1) and the
actor takes descent steps.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, replace

import numba
import numpy as np

from .approx import MVPolicyFamily, MVValueFamily
from .sim import InvalidInput, RandomSource, TrainingDiverged, gbm_gross_return

REG_SIGN = -1.0
LOG_2PIE = math.log(2 * math.pi * math.e)


@dataclass(frozen=True)
class MVConfig:
    mu: float = -0.5
    sigma: float = 0.1
    r_free: float = 0.0
    x0: float = 1.0
    z: float = 1.4
    T: float = 1.0
    dt: float = 1 / 252
    gamma: float = 0.1
    m: int = 10
    N: int = 20000
    alpha_w: float = 0.05
    alpha_theta: float = 0.1
    alpha_phi: float = 0.1
    power: float = 0.51
    mode: str = "offline"
    batch: int = 128
    years: int = 20
    w0: float = 0.0
    literal_lagrange: bool = False
    clip: float | None = None
    log_every: int = 0

    def __post_init__(self):
        if not self.sigma > 0:
            raise InvalidInput("sigma must be positive")
        if self.m < 1 or self.batch < 1 or self.N < 1:
            raise InvalidInput("m, batch and N must be >= 1")
        if self.mode not in ("offline", "online"):
            raise InvalidInput(f"unknown mode {self.mode!r}")

    @property
    def K(self):
        return int(math.floor(self.T / self.dt + 1e-9))

    def to_dict(self):
        return asdict(self)


# benchmark

@dataclass(frozen=True)
class MVBenchmark:
    w_star: float
    variance_no_explore: float
    variance_with_explore: float
    sharpe_no_explore: float
    slope: float
    rho2: float
    gamma: float
    sigma: float
    T: float

    def policy_variance(self, t):
        return self.gamma / (2 * self.sigma**2) * np.exp(self.rho2 * (self.T - np.asarray(t)))


def mv_benchmark(mu, sigma, r_free=0.0, x0=1.0, z=1.4, T=1.0, gamma=0.1) -> MVBenchmark:
    """Closed-form optimum of the exploratory mean-variance problem with known coefficients."""
    rho2 = (mu - r_free) ** 2 / sigma**2
    if rho2 == 0:
        raise InvalidInput("zero market price of risk: the multiplier is undefined")
    e = math.expm1(rho2 * T)
    w = (z * (e + 1) - x0) / e
    var0 = (x0 - z) ** 2 / e
    sharpe = (z - x0) / math.sqrt(var0) if var0 > 0 else math.inf
    return MVBenchmark(w, var0, var0 + gamma * T / 2, sharpe, -(mu - r_free) / sigma**2, rho2, gamma, sigma, T)


def simulate_mv_policy(slope_fn, var_fn, w, mu, sigma, r_free, x0, T, dt, n, rng, z_market=None):
    """Terminal wealth of n paths under a = slope(t) (x - w) + sqrt(var(t)) eps."""
    K = int(math.floor(T / dt + 1e-9))
    x = np.full(n, float(x0))
    for k in range(K):
        t = k * dt
        a = slope_fn(t) * (x - w) + np.sqrt(var_fn(t)) * rng.normal(n)
        zk = rng.normal(n) if z_market is None else z_market[:, k]
        x = x + a * (gbm_gross_return(mu, sigma, r_free, dt, zk) - 1.0)
    return x


def benchmark_policy_terminal(bm: MVBenchmark, mu, sigma, r_free, x0, dt, n, rng, explore=True):
    var = bm.policy_variance if explore else (lambda t: 0.0)
    return simulate_mv_policy(lambda t: bm.slope, var, bm.w_star, mu, sigma, r_free, x0, bm.T, dt, n, rng)


# multiplier

def lagrange_update(w, terminal_wealths, z, alpha_w, literal=False):
    """w' = w - alpha_w (mean X_T - z); `literal` drops the -z term."""
    mean = float(np.mean(terminal_wealths))
    return w - alpha_w * (mean if literal else mean - z)


# exact discrete-time value of a policy in the family

def _g_moments(mu, sigma, r_free, dt):
    ex = mu - r_free
    g1 = math.expm1(ex * dt)
    g2 = math.exp((2 * ex + sigma**2) * dt) - 2 * math.exp(ex * dt) + 1
    return g1, g2


def mv_exact_coeffs(phi, w, mu, sigma, r_free, T, dt, gamma):
    """Coefficients with J_k(x) = c_k (x - w)^2 + d_k - (w - z)^2 for the Euler-in-time policy.

    Exact for the discrete-time problem (GBM returns are exact); used as an oracle.
    """
    K = int(math.floor(T / dt + 1e-9))
    g1, g2 = _g_moments(mu, sigma, r_free, dt)
    rho = 1 - 2 * phi[0] * g1 + phi[0] ** 2 * g2
    c = np.empty(K + 1)
    d = np.empty(K + 1)
    c[K], d[K] = 1.0, 0.0
    for k in range(K - 1, -1, -1):
        tau = T - k * dt
        lv = phi[1] + phi[2] * tau
        phat = REG_SIGN * 0.5 * (LOG_2PIE + lv)
        c[k] = c[k + 1] * rho
        d[k] = d[k + 1] + c[k + 1] * math.exp(lv) * g2 + gamma * phat * dt
    return c, d


@dataclass
class TabulatedMVValue:
    """Exact value of a fixed policy on the time grid; duck-types a value family."""

    c: np.ndarray
    d: np.ndarray
    w: float
    z: float
    dt: float
    dim = 0

    def _k(self, t):
        return np.rint(np.asarray(t) / self.dt).astype(int)

    def value(self, theta, t, x):
        k = self._k(t)
        return self.c[k] * (x - self.w) ** 2 + self.d[k] - (self.w - self.z) ** 2

    def grad_theta(self, theta, t, x):
        return np.zeros(np.shape(x) + (0,))

    def terminal(self, x):
        return (x - self.w) ** 2 - (self.w - self.z) ** 2


def mv_exact_value(phi, w, z, mu, sigma, r_free, T, dt, gamma):
    c, d = mv_exact_coeffs(phi, w, mu, sigma, r_free, T, dt, gamma)
    return TabulatedMVValue(c, d, w, z, dt)


def family_consistent_phi3(phi1, mu, sigma, r_free, dt):
    """phi3 for which the exact discrete value lies inside the parametric value family."""
    g1, g2 = _g_moments(mu, sigma, r_free, dt)
    rho = 1 - 2 * phi1 * g1 + phi1**2 * g2
    return -math.log(rho) / dt


def mv_true_theta(phi, w, z, mu, sigma, r_free, T, dt, gamma):
    """theta reproducing the exact discrete value; requires phi3 = family_consistent_phi3(phi1)."""
    c, d = mv_exact_coeffs(phi, w, mu, sigma, r_free, T, dt, gamma)
    K = len(c) - 1
    t = np.arange(K + 1) * dt
    th3 = phi[2]
    if not np.allclose(c, np.exp(-th3 * (T - t)), rtol=1e-9, atol=1e-12):
        raise InvalidInput("phi3 is not family-consistent; the true value is outside the family")
    X = np.stack([t - T, t**2 - T**2], axis=1)
    sol, *_ = np.linalg.lstsq(X[:-1], d[:-1], rcond=None)
    if not np.allclose(X @ sol, d, atol=1e-10):
        raise InvalidInput("drift part of the value is not in the family")
    return np.array([sol[0], sol[1], th3])


# learners

@numba.njit(cache=True)
def _mv_batch_grads(th, ph, w, T, dt, gamma, x0, G, eps, clip, XT):
    """Offline increments summed over each episode and averaged over the batch."""
    B, K = G.shape
    dth = np.zeros(3)
    dph = np.zeros(3)
    c2pie = np.log(2.0 * np.pi * np.e)
    for b in range(B):
        x = x0
        for k in range(K):
            t = k * dt
            tau = T - t
            y = x - w
            mean = -ph[0] * y
            lv = ph[1] + ph[2] * tau
            v = np.exp(lv)
            a = mean + np.sqrt(v) * eps[b, k]
            if clip > 0:
                a = min(max(a, -clip), clip)
            xn = x + a * (G[b, k] - 1.0)
            e0 = np.exp(-th[2] * tau)
            J0 = y * y * e0 + th[1] * (t * t - T * T) + th[0] * (t - T)
            t1 = t + dt
            tau1 = T - t1
            yn = xn - w
            J1 = yn * yn * np.exp(-th[2] * tau1) + th[1] * (t1 * t1 - T * T) + th[0] * (t1 - T)
            phat = -0.5 * (c2pie + lv)
            d = J1 - J0 + gamma * phat * dt
            dth[0] += (t - T) * d
            dth[1] += (t * t - T * T) * d
            dth[2] += y * y * e0 * (t - T) * d
            u = a - mean
            iv = 1.0 / v
            s2 = -0.5 + 0.5 * u * u * iv
            dph[0] += -u * y * iv * d
            dph[1] += s2 * d - gamma * 0.5 * dt
            dph[2] += s2 * tau * d - gamma * 0.5 * tau * dt
            x = xn
        XT[b] = x
    return dth / B, dph / B


@numba.njit(cache=True)
def _mv_online_episode(th, ph, w, T, dt, gamma, x0, G, eps, clip, a_th, a_ph):
    """Per-step updates along one episode; returns terminal wealth. th, ph updated in place."""
    K = G.shape[0]
    x = x0
    c2pie = np.log(2.0 * np.pi * np.e)
    for k in range(K):
        t = k * dt
        tau = T - t
        y = x - w
        mean = -ph[0] * y
        lv = ph[1] + ph[2] * tau
        v = np.exp(lv)
        a = mean + np.sqrt(v) * eps[k]
        if clip > 0:
            a = min(max(a, -clip), clip)
        xn = x + a * (G[k] - 1.0)
        e0 = np.exp(-th[2] * tau)
        J0 = y * y * e0 + th[1] * (t * t - T * T) + th[0] * (t - T)
        t1 = t + dt
        tau1 = T - t1
        yn = xn - w
        J1 = yn * yn * np.exp(-th[2] * tau1) + th[1] * (t1 * t1 - T * T) + th[0] * (t1 - T)
        d = J1 - J0 + gamma * (-0.5 * (c2pie + lv)) * dt
        x0_, x1_, x2_ = (t - T), (t * t - T * T), y * y * e0 * (t - T)
        u = a - mean
        iv = 1.0 / v
        s2 = -0.5 + 0.5 * u * u * iv
        g0 = -u * y * iv * d
        g1 = s2 * d - gamma * 0.5 * dt
        g2 = s2 * tau * d - gamma * 0.5 * tau * dt
        th[0] += a_th * x0_ * d
        th[1] += a_th * x1_ * d
        th[2] += a_th * x2_ * d
        ph[0] -= a_ph * g0
        ph[1] -= a_ph * g1
        ph[2] -= a_ph * g2
        x = xn
    return x


@dataclass
class MVTrainResult:
    theta: np.ndarray
    phi: np.ndarray
    w: float
    log: np.ndarray  # rows: iteration, theta1..3, phi1..3, w, mean X_T of the batch
    cfg: MVConfig = None
    extra: dict = field(default_factory=dict)


LOG_COLS = ("iteration", "theta1", "theta2", "theta3", "phi1", "phi2", "phi3", "w", "mean_XT")


def training_history(cfg: MVConfig, rng: RandomSource):
    """Standard normals driving a finite simulated price history of cfg.years years."""
    return rng.normal(cfg.years * cfg.K)


def _guard(th, ph, j):
    if not (np.all(np.isfinite(th)) and np.all(np.isfinite(ph))) or max(np.abs(th).max(), np.abs(ph).max()) > 1e6:
        raise TrainingDiverged(f"parameters diverged at iteration {j}", j)


def mv_offline_train(cfg: MVConfig, rng: RandomSource) -> MVTrainResult:
    """Batched episodic actor-critic on 1-year windows bootstrapped from a finite history."""
    K, dt = cfg.K, cfg.dt
    hist = training_history(cfg, rng)
    G_hist = gbm_gross_return(cfg.mu, cfg.sigma, cfg.r_free, dt, hist)
    th, ph, w = np.zeros(3), np.zeros(3), float(cfg.w0)
    clip = cfg.clip or 0.0
    XT = np.empty(cfg.batch)
    pool = []
    logs = []
    offs = np.arange(K)
    for j in range(1, cfg.N + 1):
        starts = rng.integers(0, len(hist) - K + 1, size=cfg.batch)
        G = G_hist[starts[:, None] + offs]
        eps = rng.normal((cfg.batch, K))
        dth, dph = _mv_batch_grads(th, ph, w, cfg.T, dt, cfg.gamma, cfg.x0, G, eps, clip, XT)
        lr = j ** -cfg.power
        th = th + lr * cfg.alpha_theta * dth
        ph = ph - lr * cfg.alpha_phi * dph
        _guard(th, ph, j)
        pool.append(XT.copy())
        # every m iterations, using all terminal wealths seen since the last move
        if j % cfg.m == 0:
            w = lagrange_update(w, np.concatenate(pool), cfg.z, cfg.alpha_w, cfg.literal_lagrange)
            pool = []
        if cfg.log_every and j % cfg.log_every == 0:
            logs.append([j, *th, *ph, w, XT.mean()])
    return MVTrainResult(th, ph, w, np.array(logs).reshape(-1, len(LOG_COLS)), cfg)


def mv_online_train(cfg: MVConfig, rng: RandomSource) -> MVTrainResult:
    """Per-step updates along episodes taken in order from the finite history.

    Episode j uses year (j - 1) mod cfg.years, so N > years cycles the history.
    The multiplier is updated after every m episodes.
    """
    K, dt = cfg.K, cfg.dt
    hist = training_history(cfg, rng)
    G_hist = gbm_gross_return(cfg.mu, cfg.sigma, cfg.r_free, dt, hist).reshape(cfg.years, K)
    th, ph, w = np.zeros(3), np.zeros(3), float(cfg.w0)
    clip = cfg.clip or 0.0
    recent = []
    logs = []
    for j in range(1, cfg.N + 1):
        eps = rng.normal(K)
        lr = j ** -cfg.power
        xT = _mv_online_episode(th, ph, w, cfg.T, dt, cfg.gamma, cfg.x0, G_hist[(j - 1) % cfg.years], eps,
                                clip, lr * cfg.alpha_theta, lr * cfg.alpha_phi)
        _guard(th, ph, j)
        recent.append(xT)
        if len(recent) == cfg.m:
            w = lagrange_update(w, recent, cfg.z, cfg.alpha_w, cfg.literal_lagrange)
            recent = []
        if cfg.log_every and j % cfg.log_every == 0:
            logs.append([j, *th, *ph, w, xT])
    return MVTrainResult(th.copy(), ph.copy(), w, np.array(logs).reshape(-1, len(LOG_COLS)), cfg)


def mv_train(cfg: MVConfig, rng: RandomSource) -> MVTrainResult:
    return (mv_offline_train if cfg.mode == "offline" else mv_online_train)(cfg, rng)


@dataclass
class MVEvaluation:
    mean: float
    variance: float
    sharpe: float
    zero_variance: bool = False


def mv_evaluate(phi, w, mu, sigma, r_free=0.0, x0=1.0, T=1.0, dt=1 / 252, n_paths=10_000, rng=None,
                terminal=None) -> MVEvaluation:
    """Out-of-sample terminal-wealth statistics of the learned stochastic policy."""
    if terminal is None:
        if n_paths < 2:
            raise InvalidInput("need at least two paths")
        fam = MVPolicyFamily(T, w)
        K = int(math.floor(T / dt + 1e-9))
        x = np.full(n_paths, float(x0))
        for k in range(K):
            m, v = fam.mean_var(np.asarray(phi, dtype=float), k * dt, x)
            a = m + np.sqrt(v) * rng.normal(n_paths)
            x = x + a * (gbm_gross_return(mu, sigma, r_free, dt, rng.normal(n_paths)) - 1.0)
        terminal = x
    x = np.asarray(terminal, dtype=float)
    mean, var = float(x.mean()), float(x.var(ddof=1))
    if var == 0:
        return MVEvaluation(mean, 0.0, math.inf, True)
    return MVEvaluation(mean, var, (mean - x0) / math.sqrt(var))


def mv_families(cfg: MVConfig, w):
    return MVValueFamily(cfg.T, w, cfg.z), MVPolicyFamily(cfg.T, w)


def with_market(cfg: MVConfig, mu, sigma):
    return replace(cfg, mu=mu, sigma=sigma)



def mv_mc_value(phi, w, z, mu, sigma, r_free, T, dt, gamma, t, x, n, rng):
    """Direct Monte-Carlo cost-to-go of the fixed policy from (t, x); returns (mean, standard error)."""
    K = int(math.floor(T / dt + 1e-9))
    k0 = int(round(t / dt))
    fam = MVPolicyFamily(T, w)
    phi = np.asarray(phi, dtype=float)
    xs = np.full(n, float(x))
    reg = 0.0
    for k in range(k0, K):
        tk = k * dt
        m, v = fam.mean_var(phi, tk, xs)
        a = m + np.sqrt(v) * rng.normal(n)
        reg += gamma * REG_SIGN * 0.5 * (LOG_2PIE + phi[1] + phi[2] * (T - tk)) * dt
        xs = xs + a * (gbm_gross_return(mu, sigma, r_free, dt, rng.normal(n)) - 1.0)
    cost = (xs - w) ** 2 - (w - z) ** 2 + reg
    return float(cost.mean()), float(cost.std(ddof=1) / math.sqrt(n))
