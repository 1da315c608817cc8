"""
A synthetic feed with a hidden preference state
===============================================

Every impression carries a latent bit ``u``: does the user actually like
this item?  Interactions are rare even when ``u = 1`` (each user only
uses some of the buttons), and rarer still when ``u = 0``.  The generator
writes ``u`` to a sidecar file so models can later be scored against it.
"""

import numpy as np

from dlen.metrics import any_interaction_label, auc
from dlen.synth import GeneratorConfig, counts_table, generate, negative_taxonomy, verify_mediant

cfg = GeneratorConfig()  # 100k impressions, click / like / follow
data = generate(cfg, seed=0)
ds = data.dataset
print("positive rates:", {t: round(r, 4) for t, r in ds.base_rates().items()})
print("share of impressions the user prefers:", data.latent_u.mean().round(3))

# %%
# Conditioning on the latent state separates the rates sharply, and the
# pooled rate always falls strictly between the two groups.
counts = counts_table(data.latent_u, ds.labels, cfg.tasks)
for t in cfg.tasks:
    m = verify_mediant(counts, t)
    print(f"{t:7s} P(t|UP)={m.rate_up:.4f}  P(t)={m.rate_pooled:.4f}  P(t|not UP)={m.rate_not_up:.4f}")

# %%
# A "negative" label hides three different situations.
for k, t in enumerate(cfg.tasks):
    print(t, negative_taxonomy(data.latent_u, ds.labels, k))

# %%
# The generator's own posterior is the best any model can do at ranking u.
print("Bayes-optimal AUC for u:", round(auc(data.posterior, data.latent_u), 4))
print("posterior vs any-interaction label:",
      round(auc(data.posterior, any_interaction_label(ds.labels)), 4))
