import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dlen.metrics import (
    any_interaction_label,
    auc,
    auc_report,
    latent_auc,
    mtl_gain,
    write_report_tsv,
)


def pairwise_auc(scores, labels):
    """O(n^2) oracle: fraction of (pos, neg) pairs ordered correctly, ties count half."""
    pos = [s for s, y in zip(scores, labels) if y == 1]
    neg = [s for s, y in zip(scores, labels) if y == 0]
    hits = 0.0
    for a, b in itertools.product(pos, neg):
        hits += 1.0 if a > b else 0.5 if a == b else 0.0
    return hits / (len(pos) * len(neg))


@pytest.mark.derived
def test_auc_examples():
    assert auc([0.1, 0.2, 0.8, 0.9], [0, 0, 1, 1]) == 1.0
    assert auc([0.1, 0.4, 0.35, 0.8], [0, 0, 1, 1]) == 0.75
    assert auc([0.3] * 6, [0, 1, 0, 1, 1, 0]) == 0.5


@pytest.mark.trivial
def test_auc_single_class_raises():
    with pytest.raises(ValueError):
        auc([0.1, 0.2], [1, 1])


@pytest.mark.derived
@settings(max_examples=200)
@given(st.lists(st.tuples(st.integers(0, 8), st.integers(0, 1)), min_size=2, max_size=60))
def test_auc_matches_pairwise_with_ties(rows):
    scores = [s / 8 for s, _ in rows]
    labels = [y for _, y in rows]
    if len(set(labels)) < 2:
        return
    assert auc(scores, labels) == pytest.approx(pairwise_auc(scores, labels), abs=1e-12)


@pytest.mark.derived
def test_auc_reversed_scores_complement():
    rng = np.random.default_rng(0)
    s = rng.normal(size=300)
    y = rng.integers(0, 2, 300)
    assert auc(s, y) + auc(-s, y) == pytest.approx(1.0, abs=1e-12)


@pytest.mark.paper
def test_any_interaction_examples():
    assert any_interaction_label(np.array([[0, 0, 0]])).tolist() == [0]
    assert any_interaction_label(np.array([[0, 1, 0]])).tolist() == [1]


@pytest.mark.trivial
def test_any_interaction_rate_dominates_each_task():
    rng = np.random.default_rng(1)
    labels = {t: (rng.random(1000) < r).astype(int) for t, r in [("a", 0.1), ("b", 0.05), ("c", 0.3)]}
    rate = any_interaction_label(labels).mean()
    assert all(rate >= v.mean() for v in labels.values())


@pytest.mark.trivial
def test_latent_auc_requires_p_up():
    with pytest.raises(TypeError):
        latent_auc(None, {"a": np.array([0, 1])})


@pytest.mark.paper
def test_latent_auc_uses_or_label():
    labels = {"a": np.array([0, 1, 0, 0]), "b": np.array([0, 0, 1, 0])}
    assert latent_auc([0.1, 0.9, 0.8, 0.2], labels) == 1.0


@pytest.mark.paper
def test_mtl_gain_examples():
    rep = mtl_gain({"ctr": 0.7532, "cvr": 0.71}, {"ctr": 0.7516, "cvr": 0.7})
    assert rep.gain["ctr"] == pytest.approx(0.0016, abs=1e-12)
    assert mtl_gain({"x": 0.7}, {"x": 0.7}).gain["x"] == 0.0
    with pytest.raises(ValueError):
        mtl_gain({"x": 0.7}, {"y": 0.7})


@pytest.mark.trivial
@settings(max_examples=100)
@given(st.floats(0, 1), st.floats(0, 1))
def test_mtl_gain_arithmetic_exact(m, b):
    assert abs(mtl_gain({"t": m}, {"t": b}).gain["t"] - (m - b)) <= 1e-12


@pytest.mark.trivial
def test_report_rows_and_tsv(tmp_path):
    rep = auc_report({"a": np.array([0.1, 0.9, 0.4])}, {"a": np.array([0, 1, 0])})
    assert rep.tasks["a"].n_pos == 1 and rep.tasks["a"].n_neg == 2
    path = tmp_path / "r.tsv"
    write_report_tsv(rep.rows(), path)
    lines = path.read_text().splitlines()
    assert lines[0] == "task\tmetric\tvalue"
    assert "a\tauc\t1" in lines
