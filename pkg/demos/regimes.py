"""Converge small ensembles in the three regimes and compare their order.

A reduced agent count keeps this under a minute on one core; the statistics
are noisier than the full presets but show the same fixed-point structure.
"""
from aqia import PRESETS, LoopConfig, run_ensemble

config = LoopConfig(tol=1e-6, max_iters=200)

for name, preset in PRESETS.items():
    small = preset.with_(N=12, R=4)
    rec = run_ensemble(small, master_seed=0, config=config)
    print(f"{name:10s} q_EA={rec.qEA_mean:.4f}+/-{rec.qEA_sem:.4f} "
          f"|S|={rec.absS_mean:.4f} Q={rec.Q_mean:.3f} "
          f"converged={rec.converged_fraction:.2f}")

# Feedback switched off: agents sit at their bare ground states.
bare = run_ensemble(PRESETS["critical"].with_(N=12, R=4), 0, LoopConfig(feedback=False))
print(f"no feedback q_EA={bare.qEA_mean:.4f}")
