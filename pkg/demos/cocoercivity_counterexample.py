# %% [markdown]
# # CWTM does not preserve co-coercivity
#
# Gradient descent on a convex smooth loss is non-expansive because the
# gradient is co-coercive. Averaging keeps that property; the trimmed mean
# can lose it. Three workers with squared-regression losses are enough.

# %%
import numpy as np

from robust_agg_lab.analysis import cwtm_cococercivity_counterexample

w = cwtm_cococercivity_counterexample(L=1.0)
print("v =", w.v, " x =", w.x)
print("<theta - 0, CWTM(theta) - CWTM(0)> =", w.inner_product)

# %% [markdown]
# A negative inner product means the aggregated gradient field is not even
# monotone between these two points, so co-coercivity fails.

# %%
samples = [np.append(w.v, 0.0), np.append(w.x, 0.0), np.append(w.x, 1.0)]
for name, th in (("theta", w.theta), ("origin", np.zeros(2))):
    grads = np.array([(s[:2] @ th - s[2]) * s[:2] for s in samples])
    print(name, "worker gradients:\n", grads, "\n  trimmed mean:", np.sort(grads, axis=0)[1])
