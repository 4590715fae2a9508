"""Experiment configuration, presets, seeded repetitions, aggregation and file output."""

from __future__ import annotations

import copy
import csv
import dataclasses
import hashlib
import io
import json
import math
import os
import platform
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import __version__
from .actor import fd_gradient, pg_offline_estimate
from .approx import INTEGRATED, LQPolicyFamily, MVPolicyFamily, MVValueFamily, Policy
from .critic import TD0, fit_martingale_loss, pe_offline_orthogonality_delta, solve_orthogonality
from .lq import (TRACE_COLS, LQBenchmark, lq_benchmark_solve, lq_bruteforce_oracle, lq_discounted_exact_value,
                 lq_frozen_update_stats, lq_residuals, lq_run, regularized_value)
from .meanvar import (LOG_COLS, REG_SIGN, MVConfig, family_consistent_phi3, mv_benchmark, mv_evaluate,
                      mv_exact_value, mv_mc_value, mv_train, mv_true_theta)
from .sim import (GBMMarket, InvalidInput, LQEnv, RandomSource, TimeGrid, TrainingDiverged, gbm_gross_return,
                  rollout_episode)

TASKS = ("mv-offline", "mv-online", "lq-ergodic", "benchmark", "gradcheck", "pe-check")

LQ_DEFAULT_ENV = dict(A=-1.0, B=0.0, C=0.0, D=1.0, M=2.0, R=1.0, N=2.0, P=1.0, Q=2.0)

PRESETS = {
    "mv-paper": dict(task="mv-offline", reps=10, params=dict(
        markets=[[-0.5, 0.1]], N=20000, batch=128, m=10, alpha_theta=0.1, alpha_phi=0.1, alpha_w=0.05,
        gamma=0.1, years=20, n_eval=10000, log_every=200)),
    "mv-desk": dict(task="mv-offline", reps=10, params=dict(
        markets=[[-0.5, 0.1]], N=5000, batch=32, m=10, alpha_theta=0.1, alpha_phi=0.1, alpha_w=0.05,
        gamma=0.1, years=20, n_eval=10000, log_every=100)),
    "mv-online-paper": dict(task="mv-online", reps=10, params=dict(
        markets=[[0.5, 0.1]], N=20000, m=1, alpha_theta=0.1, alpha_phi=0.1, alpha_w=0.05,
        gamma=0.1, years=20, n_eval=10000, log_every=200)),
    "mv-online-desk": dict(task="mv-online", reps=10, params=dict(
        markets=[[0.5, 0.1]], N=2000, m=1, alpha_theta=0.1, alpha_phi=0.1, alpha_w=0.05,
        gamma=0.1, years=20, n_eval=10000, log_every=20)),
    "lq-paper": dict(task="lq-ergodic", reps=100, params=dict(
        env=LQ_DEFAULT_ENV, gamma=0.1, dt=0.01, T=1e6, x0=0.0,
        alpha_theta=0.001, alpha_V=None, alpha_phi=0.001, checkpoint_every=10000)),
    "lq-desk": dict(task="lq-ergodic", reps=10, params=dict(
        env=LQ_DEFAULT_ENV, gamma=0.1, dt=0.01, T=1e5, x0=0.0,
        alpha_theta=0.003, alpha_V=0.003, alpha_phi=[0.0007, 0.0007, 0.005], checkpoint_every=1000)),
    "benchmark": dict(task="benchmark", reps=1, params=dict(
        env=LQ_DEFAULT_ENV, gamma=0.1, markets=[[-0.5, 0.1], [0.5, 0.1], [0.1, 0.2]], x0=1.0, z=1.4, T=1.0,
        oracle=True)),
    "gradcheck": dict(task="gradcheck", reps=1, params=dict(
        mv=dict(mu=0.3, sigma=0.2, r_free=0.0, T=1.0, dt=0.1, gamma=0.1, w=1.2, z=1.4, x0=1.0,
                phi=[0.5, -3.0, -1.0], episodes=10000, h=1e-2),
        lq_discounted=dict(env=LQ_DEFAULT_ENV, gamma=0.1, beta=0.5, T=1.0, dt=0.01, x0=1.0,
                           phi=[-0.3, -0.5, -2.0], episodes=10000, h=1e-2),
        lq_ergodic=dict(env=LQ_DEFAULT_ENV, gamma=0.1, dt=0.01, steps=1_000_000, batches=100),
        tolerance=0.05)),
    "pe-check": dict(task="pe-check", reps=10, params=dict(
        mu=0.3, sigma=0.2, r_free=0.0, T=1.0, dt=0.02, gamma=0.1, w=2.0, z=1.4, x0=1.0,
        phi1=0.5, phi2=-2.0, episodes=20000, check_episodes=5000, mc_paths=100000,
        probes=[[0.0, 1.0], [0.2, 0.8], [0.5, 1.5], [0.8, 2.5], [0.5, 0.5]])),
}

DEFAULT_PRESET = {"mv-offline": "mv-desk", "mv-online": "mv-online-desk", "lq-ergodic": "lq-desk",
                  "benchmark": "benchmark", "gradcheck": "gradcheck", "pe-check": "pe-check"}


@dataclass
class ExperimentConfig:
    task: str
    params: dict = field(default_factory=dict)
    seed: int = 0
    reps: int = 1
    workers: int = 1
    out: str | None = None
    preset: str | None = None

    def __post_init__(self):
        if self.task not in TASKS:
            raise InvalidInput(f"unknown task {self.task!r}")
        if self.reps < 1:
            raise InvalidInput("repetitions must be >= 1")
        if self.workers < 1:
            raise InvalidInput("workers must be >= 1")

    def digest(self):
        blob = json.dumps({"task": self.task, "params": self.params, "seed": self.seed, "reps": self.reps},
                          sort_keys=True, default=str)
        return hashlib.sha256(blob.encode()).hexdigest()[:12]


def _merge(base, over):
    out = copy.deepcopy(base)
    for k, v in (over or {}).items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


def load_config(task=None, preset=None, path=None, seed=None, reps=None, workers=None, out=None,
                overrides=None) -> ExperimentConfig:
    """Preset, then JSON file, then explicit arguments; later sources win."""
    doc = {}
    if path:
        with open(path) as f:
            doc = json.load(f)
    task = task or doc.get("task")
    preset = preset or doc.get("preset") or (DEFAULT_PRESET.get(task) if task else None)
    if preset is not None and preset not in PRESETS:
        raise InvalidInput(f"unknown preset {preset!r}; choose from {sorted(PRESETS)}")
    base = PRESETS[preset] if preset else {"params": {}, "reps": 1}
    task = task or base.get("task")
    if base.get("task") and base["task"] != task:
        raise InvalidInput(f"preset {preset!r} is for task {base['task']!r}, not {task!r}")
    params = _merge(_merge(base["params"], doc.get("params")), overrides)
    return ExperimentConfig(
        task=task, params=params,
        seed=int(seed if seed is not None else doc.get("seed", 0)),
        reps=int(reps if reps is not None else doc.get("reps", base.get("reps", 1))),
        workers=int(workers if workers is not None else doc.get("workers", 1)),
        out=out if out is not None else doc.get("out"),
        preset=preset)


# per-repetition workers (module level so they pickle)

_MV_FIELDS = {f.name for f in dataclasses.fields(MVConfig)}


def mv_config_from(params, mode, mu, sigma) -> MVConfig:
    kw = {k: v for k, v in params.items() if k in _MV_FIELDS}
    kw.update(mode=mode, mu=mu, sigma=sigma)
    return MVConfig(**kw)


def _mv_rep(args):
    params, mode, seed, rep, gi, mu, sigma = args
    cfg = mv_config_from(params, mode, mu, sigma)
    rng = RandomSource(seed, rep * 1000 + gi)
    try:
        res = mv_train(cfg, rng)
    except TrainingDiverged as e:
        return {"ok": False, "error": str(e), "iteration": e.iteration}
    ev = mv_evaluate(res.phi, res.w, mu, sigma, cfg.r_free, cfg.x0, cfg.T, cfg.dt,
                     params.get("n_eval", 10000), rng.child(1))
    se_mean = math.sqrt(ev.variance / params.get("n_eval", 10000))
    metrics = {"mean": (ev.mean, se_mean), "variance": (ev.variance, None), "sharpe": (ev.sharpe, None),
               "w": (res.w, None)}
    metrics.update({f"theta{i + 1}": (res.theta[i], None) for i in range(3)})
    metrics.update({f"phi{i + 1}": (res.phi[i], None) for i in range(3)})
    return {"ok": True, "metrics": metrics, "trace": res.log, "zero_variance": ev.zero_variance}


def _lq_rep(args):
    params, seed, rep = args
    env = LQEnv(**params["env"])
    rates = (params["alpha_theta"], params.get("alpha_V"), params["alpha_phi"])
    r = lq_run(env, params["gamma"], params["dt"], params["T"], rates, RandomSource(seed, rep),
               checkpoint_every=params.get("checkpoint_every", 1000), pointwise=params.get("pointwise", False),
               init=None if params.get("x0", 0.0) == 0.0 else [0, 0, 0, 0, 0, 0, params["x0"]])
    if r.diverged:
        return {"ok": False, "error": f"diverged at step {r.diverged_step}", "iteration": r.diverged_step,
                "trace": r.trace}
    metrics = {"phi1": (r.phi[0], None), "phi2": (r.phi[1], None), "phi3": (r.phi[2], None),
               "V": (r.V, None), "theta0": (r.theta[0], None), "theta1": (r.theta[1], None),
               "avg_reward": (r.avg_reward, None), "tail_avg_reward": (r.tail_avg_reward, None)}
    return {"ok": True, "metrics": metrics, "trace": r.trace}


def _map(fn, jobs, workers):
    if workers <= 1 or len(jobs) <= 1:
        return [fn(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(fn, jobs))  # preserves job order


@dataclass
class RunResult:
    cfg: ExperimentConfig
    metrics: list  # dict rows
    traces: list
    trace_cols: tuple
    summary: list  # dict rows (wide table)
    manifest: dict
    extra: dict = field(default_factory=dict)


def _aggregate(rows_by_group, names):
    """Mean and sample SD over surviving repetitions for each metric."""
    agg = {}
    for g, reps in rows_by_group.items():
        ok = [r for r in reps if r["ok"]]
        d = {"n_ok": len(ok), "n_failed": len(reps) - len(ok)}
        for n in names:
            vals = np.array([r["metrics"][n][0] for r in ok], dtype=float)
            d[n] = float(vals.mean()) if len(vals) else math.nan
            d["sd_" + n] = float(vals.std(ddof=1)) if len(vals) > 1 else math.nan
        agg[g] = d
    return agg


def _run_mv(cfg: ExperimentConfig, mode):
    p = cfg.params
    jobs = [(p, mode, cfg.seed, rep, gi, float(mu), float(sig))
            for gi, (mu, sig) in enumerate(p["markets"]) for rep in range(cfg.reps)]
    outs = _map(_mv_rep, jobs, cfg.workers)
    metrics, traces, by_group = [], [], {}
    for job, o in zip(jobs, outs):
        _, _, _, rep, gi, mu, sig = job
        g = f"mu={mu:g},sigma={sig:g}"
        by_group.setdefault(g, []).append(o)
        if o["ok"]:
            for n, (v, se) in o["metrics"].items():
                metrics.append(dict(group=g, rep=rep, metric=n, value=v, se=se))
            for row in o["trace"]:
                traces.append([g, rep, *row])
        else:
            metrics.append(dict(group=g, rep=rep, metric="failed", value=o.get("iteration"), se=None,
                                note=o["error"]))
    names = ["mean", "variance", "sharpe", "w", "phi1", "phi2", "phi3", "theta1", "theta2", "theta3"]
    agg = _aggregate(by_group, names)
    summary = []
    for gi, (mu, sig) in enumerate(p["markets"]):
        g = f"mu={float(mu):g},sigma={float(sig):g}"
        a = agg[g]
        summary.append(dict(mu=mu, sigma=sig, mean=a["mean"], variance=a["variance"], sharpe=a["sharpe"],
                            sd_mean=a["sd_mean"], sd_variance=a["sd_variance"], sd_sharpe=a["sd_sharpe"],
                            w=a["w"], n_ok=a["n_ok"], n_failed=a["n_failed"]))
        for n in names:
            metrics.append(dict(group=g, rep="agg", metric=n + ".mean", value=a[n], se=None))
            metrics.append(dict(group=g, rep="agg", metric=n + ".sd", value=a["sd_" + n], se=None))
        metrics.append(dict(group=g, rep="agg", metric="n_ok", value=a["n_ok"], se=None))
        metrics.append(dict(group=g, rep="agg", metric="n_failed", value=a["n_failed"], se=None))
    return metrics, traces, ("group", "rep") + LOG_COLS, summary, {}


def lq_targets(params):
    env = LQEnv(**params["env"])
    bm = lq_benchmark_solve(env, params["gamma"])
    return env, bm


def _run_lq(cfg: ExperimentConfig):
    p = cfg.params
    env, bm = lq_targets(p)
    outs = _map(_lq_rep, [(p, cfg.seed, rep) for rep in range(cfg.reps)], cfg.workers)
    metrics, traces = [], []
    g = "lq"
    for rep, o in enumerate(outs):
        if o["ok"]:
            for n, (v, se) in o["metrics"].items():
                metrics.append(dict(group=g, rep=rep, metric=n, value=v, se=se))
        else:
            metrics.append(dict(group=g, rep=rep, metric="failed", value=o["iteration"], se=None, note=o["error"]))
        for row in o.get("trace", []):
            traces.append([g, rep, *row, row[7] / row[0] if row[0] > 0 else math.nan])
    names = ["phi1", "phi2", "phi3", "V", "theta0", "theta1", "avg_reward", "tail_avg_reward"]
    a = _aggregate({g: outs}, names)[g]
    for n in names:
        metrics.append(dict(group=g, rep="agg", metric=n + ".mean", value=a[n], se=None))
        metrics.append(dict(group=g, rep="agg", metric=n + ".sd", value=a["sd_" + n], se=None))
    metrics.append(dict(group=g, rep="agg", metric="n_ok", value=a["n_ok"], se=None))
    metrics.append(dict(group=g, rep="agg", metric="n_failed", value=a["n_failed"], se=None))
    summary = [dict(metric=n, mean=a[n], sd=a["sd_" + n]) for n in names]
    summary += [dict(metric="target_" + k, mean=v, sd=0.0) for k, v in
                (("phi1", bm.policy_slope), ("phi2", bm.policy_intercept), ("phi3", math.log(bm.policy_variance)),
                 ("V", bm.V), ("V_tilde", bm.V_tilde))]
    cols = ("group", "rep") + TRACE_COLS + ("running_avg_reward",)
    return metrics, traces, cols, summary, {"benchmark": dataclasses.asdict(bm)}


def _run_benchmark(cfg: ExperimentConfig):
    p = cfg.params
    env, bm = lq_targets(p)
    metrics, summary = [], []
    g = "lq"
    res = lq_residuals(env, bm.k2, bm.k1, bm.V)
    vals = {"k2": bm.k2, "k1": bm.k1, "V": bm.V, "V_tilde": bm.V_tilde, "u_star": bm.policy_slope,
            "v_star": bm.policy_intercept, "policy_variance": bm.policy_variance,
            "phi3_star": math.log(bm.policy_variance), "max_residual": float(np.abs(res).max())}
    if p.get("oracle", True):
        u, v, V = lq_bruteforce_oracle(env)
        vals.update(oracle_u=u, oracle_v=v, oracle_V=V)
    for n, v in vals.items():
        metrics.append(dict(group=g, rep=0, metric=n, value=v, se=None))
    summary.append(dict(group=g, **vals))
    for mu, sig in p.get("markets", []):
        b = mv_benchmark(mu, sig, p.get("r_free", 0.0), p.get("x0", 1.0), p.get("z", 1.4), p.get("T", 1.0),
                         p["gamma"])
        gg = f"mu={float(mu):g},sigma={float(sig):g}"
        d = {"w_star": b.w_star, "variance_no_explore": b.variance_no_explore,
             "variance_with_explore": b.variance_with_explore, "sharpe_no_explore": b.sharpe_no_explore,
             "policy_slope": b.slope}
        for n, v in d.items():
            metrics.append(dict(group=gg, rep=0, metric=n, value=v, se=None))
        summary.append(dict(group=gg, **d))
    return metrics, [], (), summary, {}


# gradient check

def mv_gradcheck(q, seed):
    """Score-based estimator with the exact critic against central differences under common noise."""
    T, dt, w, z, x0, g = q["T"], q["dt"], q["w"], q["z"], q["x0"], q["gamma"]
    mu, sig, r = q["mu"], q["sigma"], q.get("r_free", 0.0)
    phi = np.asarray(q["phi"], dtype=float)
    n = q["episodes"]
    fam = MVPolicyFamily(T, w)
    env = GBMMarket(mu, sig, r)
    grid = TimeGrid(T, dt)
    traj = rollout_episode(env, Policy(fam, phi, INTEGRATED, REG_SIGN), grid, RandomSource(seed, 0), x0=x0, n=n)
    critic = mv_exact_value(phi, w, z, mu, sig, r, T, dt, g)
    est = pg_offline_estimate(critic, fam, None, phi, traj, g, 0.0, sign=REG_SIGN)
    eps = traj.noise

    def objective(p):
        x = np.full(n, float(x0))
        cost = 0.0
        for k in range(grid.K):
            t = k * dt
            m, v = fam.mean_var(p, t, x)
            a = m + np.sqrt(v) * eps[:, k, 0]
            cost += g * REG_SIGN * 0.5 * (np.log(2 * np.pi * np.e) + p[1] + p[2] * (T - t)) * dt
            x = x + a * (gbm_gross_return(mu, sig, r, dt, eps[:, k, 1]) - 1.0)
        return float(np.mean((x - w) ** 2 - (w - z) ** 2) + cost)

    fd = fd_gradient(objective, phi, q["h"])
    exact = fd_gradient(lambda p: float(mv_exact_value(p, w, z, mu, sig, r, T, dt, g).value(None, 0.0, x0)),
                        phi, 1e-6)
    return est, fd, exact


def lq_discounted_gradcheck(q, seed):
    env = LQEnv(**q["env"])
    phi = np.asarray(q["phi"], dtype=float)
    T, dt, g, beta, x0, n = q["T"], q["dt"], q["gamma"], q["beta"], q["x0"], q["episodes"]
    grid = TimeGrid(T, dt)
    fam = LQPolicyFamily()
    traj = rollout_episode(env, Policy(fam, phi), grid, RandomSource(seed, 1), x0=x0, n=n)
    critic = lq_discounted_exact_value(env, phi, g, beta, T, dt)
    est = pg_offline_estimate(critic, fam, None, phi, traj, g, beta)
    eps = traj.noise
    disc = np.exp(-beta * grid.times[:-1])

    def objective(p):
        tr = rollout_episode(env, Policy(fam, p), grid, None, x0=x0, n=n, noise=eps)
        return float(((tr.rewards + g * tr.regularizers) * disc * dt).sum(-1).mean())

    fd = fd_gradient(objective, phi, q["h"])
    exact = fd_gradient(lambda p: float(lq_discounted_exact_value(env, p, g, beta, T, dt).value(None, 0.0, x0)),
                        phi, 1e-6)
    return est, fd, exact


def gradcheck_report(cfg: ExperimentConfig):
    """Rows of (toy, component, estimate, se, fd, exact, rel_err)."""
    p = cfg.params
    rows = []
    toys = [("mv", mv_gradcheck), ("lq_discounted", lq_discounted_gradcheck)]
    for name, fn in toys:
        if name not in p:
            continue
        est, fd, exact = fn(p[name], cfg.seed)
        for i in range(len(fd)):
            denom = abs(fd[i]) if fd[i] != 0 else 1.0
            rel = 0.0 if est.g[i] == fd[i] else abs(est.g[i] - fd[i]) / denom
            rows.append(dict(toy=name, component=f"phi{i + 1}", estimate=float(est.g[i]), se=float(est.se[i]),
                             fd=float(fd[i]), exact=float(exact[i]), rel_err=float(rel)))
    if "lq_ergodic" in p:
        q = p["lq_ergodic"]
        env = LQEnv(**q["env"])
        bm = lq_benchmark_solve(env, q["gamma"])
        mean, se, dmean, dse = lq_frozen_update_stats(env, q["gamma"], q["dt"], bm.theta_star,
                                                      regularized_value(bm, q["gamma"]), bm.phi_star, q["steps"],
                                                      RandomSource(cfg.seed, 2), q.get("batches", 100))
        for i in range(3):
            rows.append(dict(toy="lq_ergodic", component=f"phi{i + 1}", estimate=float(mean[i]), se=float(se[i]),
                             fd=0.0, exact=0.0, rel_err=math.nan))
        rows.append(dict(toy="lq_ergodic", component="delta", estimate=float(dmean), se=float(dse),
                         fd=0.0, exact=0.0, rel_err=math.nan))
    return rows


def _run_gradcheck(cfg):
    rows = gradcheck_report(cfg)
    metrics = []
    for r in rows:
        for k in ("estimate", "fd", "exact", "rel_err"):
            metrics.append(dict(group=f"{r['toy']}.{r['component']}", rep=0, metric=k, value=r[k],
                                se=r["se"] if k == "estimate" else None))
    return metrics, [], (), rows, {}


# policy-evaluation check

def pe_check_setup(p):
    mu, sig, r, T, dt, g = p["mu"], p["sigma"], p.get("r_free", 0.0), p["T"], p["dt"], p["gamma"]
    phi = np.array([p["phi1"], p["phi2"], family_consistent_phi3(p["phi1"], mu, sig, r, dt)])
    truth = mv_true_theta(phi, p["w"], p["z"], mu, sig, r, T, dt, g)
    vf = MVValueFamily(T, p["w"], p["z"])
    pol = Policy(MVPolicyFamily(T, p["w"]), phi, INTEGRATED, REG_SIGN)
    return phi, truth, vf, pol, GBMMarket(mu, sig, r), TimeGrid(T, dt)


def _pe_rep(args):
    p, seed, rep = args
    phi, truth, vf, pol, env, grid = pe_check_setup(p)
    traj = rollout_episode(env, pol, grid, RandomSource(seed, 100 + rep), x0=p["x0"], n=p["episodes"])
    th_m = fit_martingale_loss(vf, traj, p["gamma"])
    th_o = solve_orthogonality(vf, traj, TD0, p["gamma"])
    return th_m, th_o


def pe_check(cfg: ExperimentConfig):
    """Both PE methods against a direct Monte-Carlo oracle of the value at probe points."""
    p = cfg.params
    phi, truth, vf, pol, env, grid = pe_check_setup(p)
    outs = _map(_pe_rep, [(p, cfg.seed, rep) for rep in range(cfg.reps)], cfg.workers)
    thetas = {"martingale": np.array([o[0] for o in outs]), "td0": np.array([o[1] for o in outs])}
    rng = RandomSource(cfg.seed, 7)
    exact = mv_exact_value(phi, p["w"], p["z"], p["mu"], p["sigma"], p.get("r_free", 0.0), p["T"], p["dt"],
                           p["gamma"])
    probes = []
    for t, x in p["probes"]:
        mc, mc_se = mv_mc_value(phi, p["w"], p["z"], p["mu"], p["sigma"], p.get("r_free", 0.0), p["T"], p["dt"],
                                p["gamma"], t, x, p["mc_paths"], rng)
        row = dict(t=t, x=x, oracle=mc, oracle_se=mc_se, exact=float(exact.value(None, t, x)))
        for name, th in thetas.items():
            vals = vf.value(th.T, t, x)
            m, se = float(vals.mean()), float(vals.std(ddof=1) / math.sqrt(len(vals))) if len(vals) > 1 else math.inf
            row[name] = m
            row[name + "_se"] = se
            row[name + "_z"] = (m - mc) / math.sqrt(se**2 + mc_se**2)
        probes.append(row)
    check = rollout_episode(env, pol, grid, RandomSource(cfg.seed, 8), x0=p["x0"], n=p["check_episodes"])
    ortho = {}
    for name, th in thetas.items():
        d = pe_offline_orthogonality_delta(vf, th.mean(0), check, TD0, p["gamma"], per_episode=True)
        ortho[name] = (d.mean(0), d.std(0, ddof=1) / math.sqrt(len(d)))
    return dict(phi=phi, truth=truth, thetas=thetas, probes=probes, orthogonality=ortho)


def _run_pe(cfg):
    res = pe_check(cfg)
    metrics = []
    for i, r in enumerate(res["probes"]):
        g = f"probe{i}(t={r['t']:g},x={r['x']:g})"
        for k, v in r.items():
            if k in ("t", "x") or k.endswith("_se"):
                continue
            metrics.append(dict(group=g, rep="agg", metric=k, value=v, se=r.get(k + "_se")))
    for name, (m, se) in res["orthogonality"].items():
        for i in range(len(m)):
            metrics.append(dict(group="orthogonality." + name, rep="agg", metric=f"xi{i + 1}", value=float(m[i]),
                                se=float(se[i])))
    for name, th in res["thetas"].items():
        for rep, row in enumerate(th):
            for i, v in enumerate(row):
                metrics.append(dict(group="theta." + name, rep=rep, metric=f"theta{i + 1}", value=float(v), se=None))
    for i, v in enumerate(res["truth"]):
        metrics.append(dict(group="theta.truth", rep="agg", metric=f"theta{i + 1}", value=float(v), se=None))
    return metrics, [], (), res["probes"], {"pe": res}


RUNNERS = {
    "mv-offline": lambda c: _run_mv(c, "offline"),
    "mv-online": lambda c: _run_mv(c, "online"),
    "lq-ergodic": _run_lq,
    "benchmark": _run_benchmark,
    "gradcheck": _run_gradcheck,
    "pe-check": _run_pe,
}


def run_experiment(cfg: ExperimentConfig) -> RunResult:
    started = time.time()
    metrics, traces, trace_cols, summary, extra = RUNNERS[cfg.task](cfg)
    digest = cfg.digest()
    for m in metrics:
        m["task"] = cfg.task
        m["config_digest"] = digest
    manifest = {
        "task": cfg.task, "preset": cfg.preset, "seed": cfg.seed, "reps": cfg.reps, "workers": cfg.workers,
        "params": cfg.params, "config_digest": digest, "version": __version__,
        "python": platform.python_version(), "numpy": np.__version__,
        "started": time.strftime("%Y-%m-%dT%H:%M:%S", time.localtime(started)),
        "elapsed_seconds": round(time.time() - started, 3),
    }
    if "benchmark" in extra:
        manifest["benchmark"] = extra["benchmark"]
    res = RunResult(cfg, metrics, traces, trace_cols, summary, manifest, extra)
    if cfg.out:
        write_outputs(res, cfg.out)
    return res


# output

METRIC_COLS = ("task", "rep", "config_digest", "group", "metric", "value", "se", "note")


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return "%.17g" % v
    return str(v)


def _csv(header, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([_fmt(x) for x in r])
    return buf.getvalue()


def metrics_csv(res: RunResult):
    return _csv(METRIC_COLS, [[m.get(c) for c in METRIC_COLS] for m in res.metrics])


def summary_csv(res: RunResult):
    if not res.summary:
        return ""
    cols = list(res.summary[0].keys())
    for r in res.summary[1:]:
        cols += [k for k in r if k not in cols]
    return _csv(cols, [[r.get(c) for c in cols] for r in res.summary])


def pretty_table(res: RunResult, digits=4):
    if not res.summary:
        return ""
    cols = list(res.summary[0].keys())
    for r in res.summary[1:]:
        cols += [k for k in r if k not in cols]

    def f(v):
        if isinstance(v, (float, np.floating)):
            return f"{v:.{digits}g}"
        return "" if v is None else str(v)

    cells = [cols] + [[f(r.get(c)) for c in cols] for r in res.summary]
    widths = [max(len(row[i]) for row in cells) for i in range(len(cols))]
    return "\n".join("  ".join(c.rjust(wd) for c, wd in zip(row, widths)) for row in cells) + "\n"


def write_outputs(res: RunResult, out):
    os.makedirs(out, exist_ok=True)
    with open(os.path.join(out, "metrics.csv"), "w") as f:
        f.write(metrics_csv(res))
    with open(os.path.join(out, "traces.csv"), "w") as f:
        f.write(_csv(res.trace_cols or ("group", "rep"), res.traces))
    with open(os.path.join(out, "summary.csv"), "w") as f:
        f.write(summary_csv(res))
    with open(os.path.join(out, "summary.txt"), "w") as f:
        f.write(pretty_table(res))
    with open(os.path.join(out, "manifest.json"), "w") as f:
        json.dump(res.manifest, f, indent=2, sort_keys=True, default=_json_default)
        f.write("\n")


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    raise TypeError(type(o))


def lq_benchmark_for(params) -> LQBenchmark:
    return lq_targets(params)[1]
