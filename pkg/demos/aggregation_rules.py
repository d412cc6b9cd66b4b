# %% [markdown]
# # SMEA and CWTM on a contaminated batch
#
# Seven honest gradients around (1, 1) and two outliers. Both rules ignore
# the outliers; we check the robustness inequality on every subset of
# size n - f.

# %%
import numpy as np

from robust_agg_lab.aggregation import (
    RobustnessSpec, aggregate_cwtm, aggregate_mean, aggregate_smea, check_robustness, kappa_cwtm, kappa_smea,
)

rng = np.random.default_rng(0)
honest = rng.normal(loc=1.0, scale=0.2, size=(7, 2))
batch = np.vstack([honest, [[8.0, -6.0], [9.0, 7.0]]])
n, f = batch.shape[0], 2

# %%
print("mean :", aggregate_mean(batch).aggregate)
print("cwtm :", aggregate_cwtm(batch, f).aggregate)
smea = aggregate_smea(batch, f)
print("smea :", smea.aggregate, "keeps workers", smea.selected)

# %% [markdown]
# ## Certificates
# SMEA passes with its spectral-norm coefficient and CWTM with its
# trace-norm coefficient. The plain mean fails.

# %%
for name, out, spec in [
    ("smea", smea.aggregate, RobustnessSpec(f, kappa_smea(n, f), "spectral")),
    ("cwtm", aggregate_cwtm(batch, f).aggregate, RobustnessSpec(f, kappa_cwtm(n, f), "trace")),
    ("mean", aggregate_mean(batch).aggregate, RobustnessSpec(f, kappa_smea(n, f), "spectral")),
]:
    cert = check_robustness(batch, out, spec)
    print(f"{name}: passed={cert.passed}, worst slack {cert.worst_slack:.4g} on subset {cert.worst_subset}")
