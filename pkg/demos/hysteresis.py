"""Up-and-down sweep of the coupling ratio at two sweep rates.

With few map applications per step the state lags the schedule and the two
branches separate; the enclosed area shrinks as the budget grows.
"""
import numpy as np

from aqia import PRESETS, hysteresis_sweep

base = PRESETS["critical"].with_(N=10)
ratios = np.linspace(0.5, 2.0, 11)

for steps in (1, 5, 50):
    res = hysteresis_sweep(base, ratios, steps, master_seed=0, realizations=2)
    print(f"iters/step={steps:3d} area={res.loop_area:.3e}")

res = hysteresis_sweep(base, ratios, 1, master_seed=0, realizations=2)
for r, f, b in zip(res.ratios, res.forward, res.backward):
    print(f"  J/Gamma={r:.2f}  up={f:.5f}  down={b:.5f}")
