"""Train the offline mean-variance learner once and compare with the known-model optimum."""

import sys

from ctac.meanvar import MVConfig, mv_benchmark, mv_evaluate, mv_train
from ctac.sim import RandomSource

mu, sigma = (float(sys.argv[1]), float(sys.argv[2])) if len(sys.argv) > 2 else (-0.5, 0.1)
cfg = MVConfig(mu=mu, sigma=sigma, N=5000, batch=32, log_every=500)
res = mv_train(cfg, RandomSource(0))
ev = mv_evaluate(res.phi, res.w, mu, sigma, n_paths=10_000, rng=RandomSource(0, 1))
bm = mv_benchmark(mu, sigma, z=cfg.z, gamma=cfg.gamma)

print("iter      phi1     phi2     phi3        w")
for row in res.log:
    print(f"{row[0]:4.0f} {row[4]:9.3f} {row[5]:8.3f} {row[6]:8.3f} {row[7]:8.4f}")
print(f"learned:   mean {ev.mean:.4f}  var {ev.variance:.5f}  sharpe {ev.sharpe:.3f}")
print(f"optimum:   w* {bm.w_star:.4f}  slope {bm.slope:.2f}  var (explore) {bm.variance_with_explore:.5f}")
