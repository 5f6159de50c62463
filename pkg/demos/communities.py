"""Community structure of the converged feedback network.

Detected partitions on tiny random graphs are compared with the best
partition found by exhaustive search.
"""
import itertools

import numpy as np

from aqia import PRESETS, LoopConfig, detect_communities, modularity, run_realization

res = run_realization(PRESETS["community"].with_(N=16), master_seed=3, r=0,
                      config=LoopConfig())
print(f"converged={res.fixed_point.converged} iters={res.fixed_point.iterations} "
      f"Q={res.Q:.3f} communities={len(set(res.labels))}")
print("labels:", res.labels.tolist())


def best_q(w):
    n = len(w)
    return max(modularity(w, np.array(p)) for p in itertools.product(range(n), repeat=n)
               if p[0] == 0)


rng = np.random.default_rng(0)
for trial in range(3):
    n = 6
    w = np.triu(rng.random((n, n)) * (rng.random((n, n)) < 0.5), 1)
    w = w + w.T
    found = detect_communities(w)
    print(f"graph {trial}: detected Q={found.Q:.4f} best Q={best_q(w):.4f}")
