# %% [markdown]
# # Projected SGD on a ray: Monte-Carlo against the exact mixture
#
# With m = 4 samples per worker, the base run only moves once the pivot
# worker draws its special sample. Averaging over the first-draw time gives
# a closed form for the expected final iterate, which we compare with a
# Monte-Carlo estimate.

# %%
import time
from math import sqrt

import numpy as np

from robust_agg_lab.engine import RunConfig, monte_carlo_paired
from robust_agg_lab.experiments import projected_stability_floor
from robust_agg_lab.threats import ConstructionParams, build_projected_lb, conditional_lambda

params = ConstructionParams(n=15, f=3, m=4, C=1.0, L=1.0, gamma=1.0, T=16)
out = build_projected_lb(params)
print("margin epsilon:", out.predicted["epsilon"])

# %% [markdown]
# ## Conditional expectations
# `conditional_lambda(t0, T)` is the mean final coefficient given that the
# special sample is first used at step t0.

# %%
for t0 in (1, 4, 8, 16):
    print(f"t0={t0:2d}: E[lambda_T | t0] = {conditional_lambda(params, t0, params.T):.4f}")
print("mixture:", out.predicted["expected_lambda_T"])

# %%
cfg = RunConfig(algorithm="projected_sgd", rule="smea", T=params.T, f=params.f, gamma=params.gamma,
                theta0=np.zeros(2))
start = time.perf_counter()
pairs = monte_carlo_paired(cfg, out.pair, out.workers, out.loss, runs=5000)
lam = np.array([a.thetas[-1, 0] for a, _ in pairs]) / sqrt(params.L)
print(f"{len(pairs)} paired runs in {time.perf_counter() - start:.1f}s")
print(f"Monte-Carlo {lam.mean():.4f} +- {lam.std(ddof=1) / sqrt(lam.size):.4f}")
print("variant runs never leave the origin:", all(np.all(b.thetas == 0) for _, b in pairs))
print("guaranteed stability floor:", projected_stability_floor(params))
