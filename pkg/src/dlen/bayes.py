"""
Latent-preference probability algebra.

Each task probability is reconstructed from a shared latent "user prefers
this item" probability ``p_up`` by total probability::

    P(t) = P(t | UP) * p_up + P(t | not UP) * (1 - p_up)

``P(not UP)`` is never stored; it is always ``1 - p_up``.  The functions here
accept plain floats, numpy arrays, or autodiff ``Tensor`` values, so the same
code builds training graphs and evaluates predictions.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .nn import BCE_EPS, Tensor, bce_loss


def _check_unit(name: str, x) -> None:
    arr = x.data if isinstance(x, Tensor) else np.asarray(x)
    if np.any(arr < 0) or np.any(arr > 1) or np.any(np.isnan(arr)):
        raise ValueError(f"{name} must lie in [0, 1]")


def compose_task_probability(p_given_up, p_up, p_given_not_up):
    """Total probability of a task from its two conditional heads."""
    _check_unit("p_given_up", p_given_up)
    _check_unit("p_up", p_up)
    _check_unit("p_given_not_up", p_given_not_up)
    return p_given_up * p_up + p_given_not_up * (1 - p_up)


def joint_prefer_score(p_given_up, p_up):
    """P(t, UP): the probability the user prefers the item *and* acts on it."""
    _check_unit("p_given_up", p_given_up)
    _check_unit("p_up", p_up)
    return p_given_up * p_up


def negative_expansion(p_given_up, p_up, p_given_not_up):
    """P(not t) written as its own mixture; equals ``1 - compose(...)``."""
    return (1 - p_given_up) * p_up + (1 - p_given_not_up) * (1 - p_up)


@dataclass(frozen=True)
class AlphaPolicy:
    """Upper bound on P(t | not UP) per task.

    ``mode="fixed"`` uses ``alphas`` verbatim.  ``mode="rate_scaled"`` sets
    alpha_t = ``multiplier`` * (empirical positive rate of task t).
    """

    mode: str = "rate_scaled"
    multiplier: float = 0.5
    alphas: Mapping[str, float] = field(default_factory=dict)
    task_base_rates: Mapping[str, float] = field(default_factory=dict)

    def __post_init__(self):
        if self.mode not in ("fixed", "rate_scaled"):
            raise ValueError(f"unknown alpha mode {self.mode!r}")
        if self.mode == "rate_scaled" and not 0.1 <= self.multiplier <= 0.5:
            raise ValueError(f"alpha multiplier must be in [0.1, 0.5], got {self.multiplier}")
        if self.mode == "fixed":
            for t, a in self.alphas.items():
                if not 0 < a < 1:
                    raise ValueError(f"alpha for {t!r} must be in (0, 1), got {a}")

    @classmethod
    def fixed(cls, alphas: Mapping[str, float]) -> "AlphaPolicy":
        return cls(mode="fixed", alphas=dict(alphas))

    @classmethod
    def rate_scaled(cls, multiplier: float, base_rates: Mapping[str, float] | None = None):
        return cls(mode="rate_scaled", multiplier=multiplier,
                   task_base_rates=dict(base_rates or {}))

    def with_base_rates(self, base_rates: Mapping[str, float]) -> "AlphaPolicy":
        return AlphaPolicy(self.mode, self.multiplier, dict(self.alphas), dict(base_rates))


def alpha_for_task(policy: AlphaPolicy, task: str) -> float:
    if policy.mode == "fixed":
        try:
            return float(policy.alphas[task])
        except KeyError:
            raise KeyError(f"no fixed alpha configured for task {task!r}") from None
    try:
        rate = float(policy.task_base_rates[task])
    except KeyError:
        raise KeyError(f"no base rate known for task {task!r}") from None
    if not 0 < rate < 1:
        raise ValueError(f"task {task!r} is degenerate (base rate {rate}); alpha undefined")
    return policy.multiplier * rate


@dataclass
class DecomposedPrediction:
    """Per-sample latent probability plus, per task, both heads and the mixture.

    Values are either numpy arrays (evaluation) or ``Tensor`` (training).
    """

    p_up: object
    p_given_up: dict[str, object]
    p_given_not_up: dict[str, object]
    composed: dict[str, object]

    @property
    def tasks(self) -> list[str]:
        return list(self.composed)

    @property
    def joint_prefer(self) -> dict[str, object]:
        return {t: self.p_given_up[t] * self.p_up for t in self.p_given_up}

    @classmethod
    def from_heads(cls, p_up, p_given_up: dict, p_given_not_up: dict) -> "DecomposedPrediction":
        composed = {
            t: compose_task_probability(p_given_up[t], p_up, p_given_not_up[t])
            for t in p_given_up
        }
        return cls(p_up, dict(p_given_up), dict(p_given_not_up), composed)

    def to_numpy(self) -> "DecomposedPrediction":
        def arr(x):
            return np.asarray(x.data if isinstance(x, Tensor) else x)

        return DecomposedPrediction(
            arr(self.p_up),
            {t: arr(v) for t, v in self.p_given_up.items()},
            {t: arr(v) for t, v in self.p_given_not_up.items()},
            {t: arr(v) for t, v in self.composed.items()},
        )

    def take(self, idx) -> "DecomposedPrediction":
        pick = lambda d: {t: np.asarray(v)[idx] for t, v in d.items()}  # noqa: E731
        return DecomposedPrediction(np.asarray(self.p_up)[idx], pick(self.p_given_up),
                                    pick(self.p_given_not_up), pick(self.composed))


def task_loss(probs: Mapping[str, Tensor], labels: Mapping[str, np.ndarray],
              weights: Mapping[str, float] | None = None, eps: float = BCE_EPS,
              reduction: str = "mean") -> Tensor:
    """Weighted sum over tasks of the batch BCE of each task probability."""
    total = None
    for t, p in probs.items():
        if t not in labels:
            raise KeyError(f"missing labels for task {t!r}")
        term = bce_loss(p, labels[t], eps=eps, reduction=reduction)
        w = 1.0 if weights is None else float(weights.get(t, 1.0))
        if w != 1.0:
            term = term * w
        total = term if total is None else total + term
    return total


def dlen_loss(pred: DecomposedPrediction, labels: Mapping[str, np.ndarray],
              weights: Mapping[str, float] | None = None, eps: float = BCE_EPS,
              reduction: str = "mean") -> Tensor:
    """Cross-entropy on the composed probabilities only.

    The latent head gets no direct target; it learns through the mixture.
    """
    return task_loss(pred.composed, labels, weights, eps, reduction)


@dataclass
class GameGradientReport:
    per_task: dict[str, np.ndarray]
    total: np.ndarray

    @property
    def sign(self) -> np.ndarray:
        return np.sign(self.total)


def game_gradient_diagnostic(pred: DecomposedPrediction,
                             labels: Mapping[str, np.ndarray]) -> GameGradientReport:
    """Closed-form d(BCE)/d(p_up) per sample, per task and summed.

    A positive label pulls ``p_up`` up (negative derivative) and a negative
    label pushes it down, as long as ``p_given_up > p_given_not_up``.
    """
    p = pred.to_numpy()
    u = p.p_up.astype(np.float64)
    per_task = {}
    for t in p.composed:
        p1 = p.p_given_up[t].astype(np.float64)
        p0 = p.p_given_not_up[t].astype(np.float64)
        if np.any(p1 <= p0):
            raise ValueError(f"task {t!r}: need p_given_up > p_given_not_up for every sample")
        y = np.asarray(labels[t])
        composed = p1 * u + p0 * (1 - u)
        per_task[t] = np.where(y == 1, -(p1 - p0) / composed, (p1 - p0) / (1 - composed))
    total = sum(per_task.values())
    return GameGradientReport(per_task, np.asarray(total))
