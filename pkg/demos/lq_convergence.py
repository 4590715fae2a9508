"""Ergodic LQ actor-critic: watch the policy parameters settle on the closed-form optimum.

    python3 demos/lq_convergence.py [T] [seed]
"""

import sys

from ctac.lq import lq_benchmark_solve, lq_run
from ctac.sim import LQEnv, RandomSource

T = float(sys.argv[1]) if len(sys.argv) > 1 else 1e5
seed = int(sys.argv[2]) if len(sys.argv) > 2 else 0

env = LQEnv()
bm = lq_benchmark_solve(env, 0.1)
res = lq_run(env, 0.1, 0.01, T, (0.003, 0.003, (0.0007, 0.0007, 0.005)), RandomSource(seed),
             checkpoint_every=int(T / 0.01) // 10)

print(f"{'t':>10} {'phi1':>9} {'phi2':>9} {'phi3':>9} {'avg r':>8}")
for row in res.trace:
    t, p1, p2, p3 = row[:4]
    print(f"{t:10.0f} {p1:9.4f} {p2:9.4f} {p3:9.4f} {row[7] / t:8.4f}")
print(f"{'target':>10} {bm.phi_star[0]:9.4f} {bm.phi_star[1]:9.4f} {bm.phi_star[2]:9.4f} {bm.V_tilde:8.4f}")
