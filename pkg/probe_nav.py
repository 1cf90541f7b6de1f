"""Dev probe: nav-quick scale runs across seeds for both safety estimators."""
import statistics
import sys
import time

from safepg.env import builtin_layout
from safepg.policy import GaussianRbfPolicy
from safepg.trainers import TrainerConfig, train

spec = builtin_layout("nav-default")
for method in ("prob-spg-reinforce", "prob-spg-actor-critic"):
    finals, tails, lams = [], [], []
    for seed in range(5):
        cfg = TrainerConfig(method=method, episodes=20000, eta_theta=0.02,
                            eta_lambda=0.002, delta=0.05, seed=seed, clip_norm=1000.0)
        t0 = time.perf_counter()
        res = train(cfg, spec, GaussianRbfPolicy.lattice())
        dt = time.perf_counter() - t0
        m = res.metrics[-1]
        tail = statistics.mean(1.0 if x.safe else 0.0 for x in res.metrics[-5000:])
        finals.append(m.avg_safety)
        tails.append(tail)
        lams.append(m.lam)
        print(f"{method} seed {seed}: {dt:.0f}s avg_safety={m.avg_safety:.4f} "
              f"tail5k={tail:.4f} lam={m.lam:.2f} avg_ret/T={m.avg_return/21:.2f}", flush=True)
    print(f"== {method}: mean_final_avg_safety={statistics.mean(finals):.4f} "
          f"tail_std={statistics.pstdev(tails):.5f} tails={['%.4f' % t for t in tails]}", flush=True)
