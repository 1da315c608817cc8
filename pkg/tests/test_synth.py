import numpy as np
import pytest

from dlen.data import load_tsv
from dlen.metrics import any_interaction_label, auc
from dlen.synth import (
    CountsTable,
    GeneratorConfig,
    GeneratorConfigError,
    counts_table,
    file_sha256,
    generate,
    generate_files,
    negative_taxonomy,
    read_sidecar,
    true_posterior,
    verify_mediant,
)

SMALL = GeneratorConfig(n_samples=20_000)


def _constant_preference(p, **kw):
    logit = float(np.log(p / (1 - p)))
    return GeneratorConfig(pref_bias=logit, pref_categorical_std=0.0, pref_numeric_std=0.0,
                           pref_interaction=0.0, **kw)


@pytest.mark.paper
def test_degenerate_generator_labels_equal_latent():
    cfg = GeneratorConfig(n_samples=5000, tasks=("a", "b"), q_up=(1.0, 1.0), q_not_up=(0.0, 0.0),
                          habit_inclusion=(1.0, 1.0))
    d = generate(cfg, 3)
    for k in range(2):
        np.testing.assert_array_equal(d.dataset.labels[:, k], d.latent_u)


@pytest.mark.derived
def test_single_task_rate_is_total_probability():
    cfg = _constant_preference(0.3, n_samples=100_000, tasks=("a",), q_up=(0.5,), q_not_up=(0.01,),
                               habit_inclusion=(1.0,))
    rate = generate(cfg, 0).dataset.labels[:, 0].mean()
    expected = 0.3 * 0.5 + 0.7 * 0.01
    sigma = np.sqrt(expected * (1 - expected) / 100_000)
    assert abs(rate - expected) < 3 * sigma


@pytest.mark.trivial
def test_same_seed_gives_identical_files(tmp_path):
    cfg = GeneratorConfig(n_samples=3000)
    a = generate_files(cfg, tmp_path / "a", seed=5)
    b = generate_files(cfg, tmp_path / "b", seed=5)
    assert [file_sha256(p) for p in a] == [file_sha256(p) for p in b]
    c = generate_files(cfg, tmp_path / "c", seed=6)
    assert file_sha256(a[0]) != file_sha256(c[0])


@pytest.mark.trivial
def test_training_file_never_contains_latent(tmp_path):
    train, side = generate_files(GeneratorConfig(n_samples=500), tmp_path, seed=1)
    header = train.read_text().splitlines()[0]
    assert "latent" not in header and "posterior" not in header
    u, post = read_sidecar(side)
    d = generate(GeneratorConfig(n_samples=500), 1)
    np.testing.assert_array_equal(u, d.latent_u)
    np.testing.assert_array_equal(post, d.posterior)
    ds = load_tsv(train, d.config.dataset_schema())
    np.testing.assert_array_equal(ds.labels, d.dataset.labels)


@pytest.mark.trivial
def test_invalid_configs_rejected():
    with pytest.raises(GeneratorConfigError):
        GeneratorConfig(q_up=(0.01, 0.165, 0.095), q_not_up=(0.02, 0.004, 0.002))
    with pytest.raises(GeneratorConfigError):
        GeneratorConfig(q_up=(1.2, 0.1, 0.1))
    with pytest.raises(GeneratorConfigError):
        GeneratorConfig(tasks=("a",))


@pytest.mark.derived
def test_zero_features_zero_bias_posterior_is_half():
    cfg = GeneratorConfig(pref_bias=0.0)
    cfg0 = GeneratorConfig(pref_bias=0.0, pref_categorical_std=0.0)
    p = true_posterior(np.zeros((1, 3), dtype=int), np.zeros((1, 4)), cfg0)
    assert p[0] == 0.5
    assert 0 < true_posterior(np.zeros((1, 3), dtype=int), np.zeros((1, 4)), cfg)[0] < 1


@pytest.mark.paper
def test_default_base_rates_in_sparse_regime():
    rates = generate(GeneratorConfig(), 0).dataset.base_rates()
    assert rates["click"] == pytest.approx(0.10, abs=0.015)
    assert rates["like"] == pytest.approx(0.04, abs=0.01)
    assert rates["follow"] == pytest.approx(0.02, abs=0.006)


@pytest.mark.derived
def test_posterior_dominates_on_interacting_samples():
    d = generate(GeneratorConfig(), 0)
    y = any_interaction_label(d.dataset.labels).astype(bool)
    pos, neg = np.sort(d.posterior[y]), np.sort(d.posterior[~y])
    grid = np.linspace(0, 1, 101)
    cdf_pos = np.searchsorted(pos, grid, side="right") / pos.size
    cdf_neg = np.searchsorted(neg, grid, side="right") / neg.size
    assert np.all(cdf_pos <= cdf_neg + 1e-12)


@pytest.mark.derived
def test_bayes_auc_beats_chance():
    d = generate(SMALL, 2)
    assert auc(d.posterior, d.latent_u) > 0.8


@pytest.mark.paper
def test_mediant_examples():
    c = CountsTable(("t",), 20, 80, {"t": 10}, {"t": 1})
    r = verify_mediant(c, "t")
    assert r.holds
    assert (r.rate_up, r.rate_pooled, r.rate_not_up) == pytest.approx((0.5, 0.11, 0.0125))
    assert not verify_mediant(CountsTable(("t",), 10, 10, {"t": 2}, {"t": 2}), "t").holds
    with pytest.raises(ZeroDivisionError):
        verify_mediant(CountsTable(("t",), 0, 10, {"t": 0}, {"t": 1}), "t")


@pytest.mark.trivial
def test_counts_table_invariant():
    with pytest.raises(ValueError):
        CountsTable(("t",), 5, 5, {"t": 6}, {"t": 0})


@pytest.mark.paper
def test_mediant_on_generated_high_contrast_set():
    cfg = GeneratorConfig(n_samples=100_000, tasks=("a",), q_up=(0.5,), q_not_up=(0.01,),
                          habit_inclusion=(1.0,))
    d = generate(cfg, 0)
    assert verify_mediant(counts_table(d.latent_u, d.dataset.labels, cfg.tasks), "a").holds


@pytest.mark.paper
def test_negative_taxonomy_all_kinds_present():
    d = generate(GeneratorConfig(), 0)
    for k in range(3):
        kinds = negative_taxonomy(d.latent_u, d.dataset.labels, k)
        assert all(v > 0 for v in kinds.values()), kinds


@pytest.mark.derived
def test_not_up_labels_fire_at_q_not_up():
    d = generate(GeneratorConfig(), 1)
    neg = d.latent_u == 0
    rates = d.dataset.labels[neg].mean(axis=0)
    n = int(neg.sum())
    for r, q in zip(rates, d.config.q_not_up):
        assert abs(r - q) < 4 * np.sqrt(q * (1 - q) / n)
