"""
Ranking by fused multi-task scores, with or without the latent state.

Latent mode scores an item by ``p_up ** gamma * sum_t w_t * P(t | UP)``;
with one task and ``gamma = 1`` this is exactly the joint probability
``P(t, UP)``.  Composed mode ignores the latent state and scores by
``sum_t w_t * P(t)``.  ``gamma`` is the knob that trades interaction volume
against showing items the user is unlikely to prefer.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .bayes import DecomposedPrediction

LATENT = "latent"
COMPOSED = "composed"


@dataclass(frozen=True)
class FusionWeights:
    task_weights: Mapping[str, float]
    gamma: float = 1.0
    mode: str = LATENT

    def __post_init__(self):
        if self.mode not in (LATENT, COMPOSED):
            raise ValueError(f"fusion mode must be {LATENT!r} or {COMPOSED!r}")
        if self.gamma < 0:
            raise ValueError("gamma must be >= 0")
        if any(w < 0 for w in self.task_weights.values()):
            raise ValueError("task weights must be >= 0")
        if not any(w > 0 for w in self.task_weights.values()):
            raise ValueError("at least one task weight must be positive")


def fuse(pred: DecomposedPrediction, weights: FusionWeights):
    """Fused score per sample (scalar or array, following ``pred``)."""
    if weights.mode == LATENT:
        s = sum(w * np.asarray(pred.p_given_up[t], dtype=np.float64)
                for t, w in weights.task_weights.items())
        if weights.gamma == 0:
            return s
        return np.asarray(pred.p_up, dtype=np.float64) ** weights.gamma * s
    return sum(w * np.asarray(pred.composed[t], dtype=np.float64)
               for t, w in weights.task_weights.items())


@dataclass
class RankedList:
    indices: np.ndarray
    scores: np.ndarray
    k: int


def rank_scores(scores, k: int) -> RankedList:
    scores = np.asarray(scores, dtype=np.float64)
    if not 0 <= k <= scores.size:
        raise ValueError(f"k={k} outside [0, {scores.size}]")
    order = np.lexsort((np.arange(scores.size), -scores))[:k]
    return RankedList(order, scores[order], k)


def rank_topk(candidates, weights: FusionWeights, k: int) -> RankedList:
    """Top ``k`` candidates by fused score; ties go to the lower index.

    ``candidates`` is either a list of per-item ``DecomposedPrediction``
    values or one ``DecomposedPrediction`` holding arrays.
    """
    if isinstance(candidates, DecomposedPrediction):
        scores = fuse(candidates, weights)
    else:
        scores = np.array([float(fuse(c, weights)) for c in candidates])
    return rank_scores(scores, k)


@dataclass
class SimReport:
    mode: str
    k: int
    set_size: int
    n_sets: int
    detest_fraction: float
    expected_interactions: float
    per_set: list[tuple[float, float]] = field(default_factory=list, repr=False)


def sim_eval(pred: DecomposedPrediction, latent_u, weights: FusionWeights,
             k: int = 10, set_size: int = 50, expected=None, indices=None) -> SimReport:
    """Rank consecutive impression sets and measure what reaches the top ``k``.

    ``latent_u`` is the sidecar ground truth; the detest fraction is the
    share of top-``k`` items with ``u = 0``.  ``expected`` holds each
    item's expected interaction count (see ``synth.expected_interactions``).
    Samples that do not fill a last complete set are dropped.
    """
    if latent_u is None:
        raise ValueError("sim_eval needs the ground-truth sidecar (latent_u)")
    latent_u = np.asarray(latent_u)
    if indices is None:
        indices = np.arange(latent_u.size)
    indices = np.asarray(indices)
    if k > set_size:
        raise ValueError("k must not exceed the impression set size")
    scores = np.asarray(fuse(pred, weights), dtype=np.float64)
    n_sets = indices.size // set_size
    if n_sets == 0:
        raise ValueError("not enough samples for one impression set")
    per_set = []
    for s in range(n_sets):
        members = indices[s * set_size:(s + 1) * set_size]
        top = members[rank_scores(scores[members], k).indices]
        detest = float((latent_u[top] == 0).mean()) if k else 0.0
        inter = float(np.asarray(expected)[top].sum()) if expected is not None else float("nan")
        per_set.append((detest, inter))
    arr = np.asarray(per_set)
    return SimReport(weights.mode, k, set_size, n_sets, float(arr[:, 0].mean()),
                     float(arr[:, 1].mean()), per_set)
