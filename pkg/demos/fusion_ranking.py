"""
Down-ranking items the user would not enjoy
===========================================

Ranking by the expected number of interactions happily surfaces items
whose interactions come from the not-UP branch.  Multiplying by ``p_up``
(latent mode) trades a little interaction volume for fewer such items.
This demo uses the generator's own probabilities, so no training is needed.
"""

from dlen.fusion import COMPOSED, LATENT, FusionWeights, sim_eval
from dlen.synth import GeneratorConfig, expected_interactions, generate, oracle_prediction

data = generate(GeneratorConfig(), seed=0)
oracle = oracle_prediction(data)
worth = expected_interactions(data)
weights = {"click": 1.0, "like": 1.0, "follow": 1.0}

rep = sim_eval(oracle, data.latent_u, FusionWeights(weights, mode=COMPOSED), expected=worth)
print(f"composed      detest={rep.detest_fraction:.4f}  interactions={rep.expected_interactions:.4f}")

# %%
# ``gamma`` controls how strongly ``p_up`` weighs in; 0 ignores it.
for gamma in (0.0, 0.5, 1.0, 2.0, 4.0):
    rep = sim_eval(oracle, data.latent_u, FusionWeights(weights, gamma=gamma, mode=LATENT), expected=worth)
    print(f"latent g={gamma:<4} detest={rep.detest_fraction:.4f}  interactions={rep.expected_interactions:.4f}")
