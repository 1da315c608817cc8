"""Minibatch training and batched evaluation."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import nn
from .bayes import DecomposedPrediction, task_loss
from .data import Dataset, iterate_batches
from .metrics import AucReport, auc, auc_report, latent_auc
from .models import ModelKind, MultiTaskModel, task_probabilities
from .synth import substream

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    epochs: int = 5
    batch_size: int = 512
    optimizer: str = "adam"
    learning_rate: float = 1e-3
    seed: int = 0
    task_weights: dict[str, float] | None = None


class TrainingDiverged(FloatingPointError):
    def __init__(self, epoch: int, batch_index: int, detail: str):
        self.epoch, self.batch_index = epoch, batch_index
        super().__init__(f"non-finite loss at epoch {epoch}, batch {batch_index}: {detail}")


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    eval: AucReport


@dataclass
class TrainResult:
    history: list[EpochRecord] = field(default_factory=list)

    @property
    def final(self) -> EpochRecord:
        return self.history[-1]

    def log_rows(self) -> list[tuple]:
        """(epoch, task, train_loss, eval_auc, latent_auc) rows."""
        rows = []
        for rec in self.history:
            for t, r in rec.eval.tasks.items():
                rows.append((rec.epoch, t, rec.train_loss, r.auc, rec.eval.latent_auc))
        return rows


def loss_on_batch(model: MultiTaskModel, ds: Dataset, idx, weights=None) -> nn.Tensor:
    out = model.forward(ds.cat_ids[idx], ds.numeric[idx])
    return task_loss(task_probabilities(out), ds.label_dict(idx), weights)


def predict(model: MultiTaskModel, ds: Dataset, idx=None, batch_size: int = 4096):
    """Inference over ``idx`` in order.  DLEN gives a ``DecomposedPrediction``
    of arrays, the baselines a dict of per-task arrays."""
    if idx is None:
        idx = np.arange(len(ds))
    chunks = []
    for b in iterate_batches(idx, batch_size):
        out = model.forward(ds.cat_ids[b], ds.numeric[b])
        if isinstance(out, DecomposedPrediction):
            chunks.append(out.to_numpy())
        else:
            chunks.append({t: v.data for t, v in out.items()})
    if model.kind == ModelKind.DLEN:
        cat = lambda get: {t: np.concatenate([get(c)[t] for c in chunks]) for t in get(chunks[0])}  # noqa: E731
        return DecomposedPrediction(
            np.concatenate([c.p_up for c in chunks]),
            cat(lambda c: c.p_given_up), cat(lambda c: c.p_given_not_up), cat(lambda c: c.composed))
    return {t: np.concatenate([c[t] for c in chunks]) for t in chunks[0]}


def evaluate(model: MultiTaskModel, ds: Dataset, idx=None, latent_truth=None) -> AucReport:
    """Per-task AUC; for DLEN also the latent AUC against any interaction and,
    when ``latent_truth`` (the sidecar ``latent_u`` for all rows) is given,
    against the true latent state."""
    if idx is None:
        idx = np.arange(len(ds))
    pred = predict(model, ds, idx)
    labels = ds.label_dict(idx)
    report = auc_report(task_probabilities(pred), labels)
    if isinstance(pred, DecomposedPrediction):
        report.latent_auc = latent_auc(pred.p_up, labels)
        if latent_truth is not None:
            report.latent_auc_truth = auc(pred.p_up, np.asarray(latent_truth)[idx])
    return report


def mean_loss(model: MultiTaskModel, ds: Dataset, idx, batch_size: int = 4096, weights=None) -> float:
    total, n = 0.0, 0
    for b in iterate_batches(idx, batch_size):
        total += float(loss_on_batch(model, ds, b, weights).data) * len(b)
        n += len(b)
    return total / max(n, 1)


def train(model: MultiTaskModel, ds: Dataset, train_idx, eval_idx, cfg: TrainConfig,
          latent_truth=None, on_epoch: Callable[[EpochRecord], None] | None = None) -> TrainResult:
    """Train in place.  Epoch 0 records the untrained model.

    The shuffle order depends only on ``cfg.seed``, so models trained with
    the same seed see identical batches.
    """
    opt = nn.make_optimizer(cfg.optimizer, model.parameters(), cfg.learning_rate)
    shuffle = substream(cfg.seed, "shuffle")
    result = TrainResult()

    def record(epoch, loss):
        rec = EpochRecord(epoch, loss, evaluate(model, ds, eval_idx, latent_truth))
        result.history.append(rec)
        if on_epoch:
            on_epoch(rec)
        log.info("epoch %d loss %.5f auc %s", epoch, loss, rec.eval.values())

    try:
        initial = mean_loss(model, ds, train_idx, weights=cfg.task_weights)
    except nn.NonFiniteError as exc:
        raise TrainingDiverged(0, 0, str(exc)) from exc
    record(0, initial)
    for epoch in range(1, cfg.epochs + 1):
        total, n = 0.0, 0
        for bi, b in enumerate(iterate_batches(train_idx, cfg.batch_size, shuffle)):
            opt.zero_grad()
            try:
                loss = loss_on_batch(model, ds, b, cfg.task_weights)
            except nn.NonFiniteError as exc:
                raise TrainingDiverged(epoch, bi, str(exc)) from exc
            loss.backward()
            opt.step()
            total += float(loss.data) * len(b)
            n += len(b)
        bad = [p.name for p in model.parameters() if not np.isfinite(p.data).all()]
        if bad:
            raise TrainingDiverged(epoch, bi, f"non-finite parameters {bad[:3]}")
        record(epoch, total / n)
    return result
