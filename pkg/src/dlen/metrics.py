"""AUC, MTL gain and the latent-state AUC."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import numpy as np
from scipy.stats import rankdata


def auc(scores, labels) -> float:
    """Mann-Whitney AUC; tied scores share their average rank."""
    scores = np.asarray(scores, dtype=np.float64).ravel()
    labels = np.asarray(labels).ravel()
    if scores.shape != labels.shape:
        raise ValueError(f"scores {scores.shape} and labels {labels.shape} differ in length")
    pos = labels == 1
    n_pos = int(pos.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUC needs both positive and negative labels")
    ranks = rankdata(scores, method="average")
    return float((ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


@dataclass
class TaskAuc:
    auc: float
    n_pos: int
    n_neg: int


@dataclass
class AucReport:
    tasks: dict[str, TaskAuc] = field(default_factory=dict)
    latent_auc: float | None = None
    latent_auc_truth: float | None = None

    def values(self) -> dict[str, float]:
        return {t: r.auc for t, r in self.tasks.items()}

    def rows(self) -> list[tuple[str, str, float]]:
        out = []
        for t, r in self.tasks.items():
            out += [(t, "auc", r.auc), (t, "n_pos", r.n_pos), (t, "n_neg", r.n_neg)]
        if self.latent_auc is not None:
            out.append(("latent", "auc_any_interaction", self.latent_auc))
        if self.latent_auc_truth is not None:
            out.append(("latent", "auc_true_latent", self.latent_auc_truth))
        return out


def auc_report(scores: Mapping[str, np.ndarray], labels: Mapping[str, np.ndarray]) -> AucReport:
    rep = AucReport()
    for t, s in scores.items():
        y = np.asarray(labels[t])
        n_pos = int((y == 1).sum())
        rep.tasks[t] = TaskAuc(auc(s, y), n_pos, int(y.size - n_pos))
    return rep


def any_interaction_label(labels) -> np.ndarray:
    """1 where at least one task fired.  Accepts an (n, n_tasks) array or a task dict."""
    if isinstance(labels, Mapping):
        labels = np.stack([np.asarray(v) for v in labels.values()], axis=1)
    labels = np.asarray(labels)
    if labels.ndim == 1:
        return (labels != 0).astype(np.int8)
    return (labels != 0).any(axis=1).astype(np.int8)


def latent_auc(p_up, labels) -> float:
    """AUC of the latent preference score against the any-interaction label.

    Interactions are a subset of preference, so a converged latent head
    must separate interacting from silent impressions.  It is a necessary
    check only; it does not measure how well ``p_up`` matches preference.
    """
    if p_up is None:
        raise TypeError("model has no latent head; latent AUC is only defined for DLEN")
    return auc(p_up, any_interaction_label(labels))


@dataclass
class MtlGainReport:
    model: dict[str, float]
    baseline: dict[str, float]
    gain: dict[str, float]

    def rows(self) -> list[tuple[str, str, float]]:
        out = []
        for t in self.gain:
            out += [(t, "model_auc", self.model[t]), (t, "baseline_auc", self.baseline[t]),
                    (t, "mtl_gain", self.gain[t])]
        return out


def mtl_gain(model_report, baseline_report) -> MtlGainReport:
    """Per-task AUC difference against a baseline (MMOE in the experiments)."""
    m = model_report.values() if isinstance(model_report, AucReport) else dict(model_report)
    b = baseline_report.values() if isinstance(baseline_report, AucReport) else dict(baseline_report)
    if set(m) != set(b):
        raise ValueError(f"task sets differ: {sorted(m)} vs {sorted(b)}")
    return MtlGainReport(m, b, {t: m[t] - b[t] for t in m})


def write_report_tsv(rows, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("task\tmetric\tvalue\n")
        for task, metric, value in rows:
            fh.write(f"{task}\t{metric}\t{_fmt(value)}\n")


def _fmt(v) -> str:
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return format(float(v), ".10g")


def format_table(rows) -> str:
    """Human-readable three-column table."""
    rows = [(str(a), str(b), _fmt(c)) for a, b, c in rows]
    head = ("task", "metric", "value")
    widths = [max(len(r[i]) for r in rows + [head]) for i in range(3)]
    line = lambda r: "  ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip()  # noqa: E731
    return "\n".join([line(head), line(tuple("-" * w for w in widths))] + [line(r) for r in rows])
