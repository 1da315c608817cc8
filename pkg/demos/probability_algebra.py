"""
Composing a task probability from the latent state
==================================================

A DLEN head pair predicts ``P(t | UP)`` and ``P(t | not UP)``; the latent
network predicts ``p_up``.  Only their mixture is ever compared to a label.
"""

import numpy as np

from dlen.bayes import (DecomposedPrediction, compose_task_probability, dlen_loss,
                        game_gradient_diagnostic, joint_prefer_score)
from dlen.nn import Parameter

print(compose_task_probability(0.30, 1.0, 0.02))  # fully preferred: 0.30
print(compose_task_probability(0.30, 0.0, 0.02))  # fully not preferred: 0.02
print(compose_task_probability(0.20, 0.5, 0.04))  # halfway: 0.12
print(joint_prefer_score(0.30, 0.5))              # P(t, UP) = 0.15

# %%
# How does the loss push ``p_up``?  A positive label pulls it up, a negative
# one pushes it down, as long as the UP head is above the not-UP head.
# The autodiff gradient matches the closed form.
p_up = Parameter(np.array([0.4, 0.4]), "p_up")
pred = DecomposedPrediction.from_heads(p_up, {"like": Parameter(np.array([0.3, 0.3]), "p1")},
                                       {"like": Parameter(np.array([0.01, 0.01]), "p0")})
labels = {"like": np.array([1, 0])}
dlen_loss(pred, labels, reduction="sum").backward()
print("autodiff d loss / d p_up:", p_up.grad)
print("closed form:            ", game_gradient_diagnostic(pred, labels).total)
