"""
Synthetic feed interactions with an explicit latent preference.

For each impression the generator draws features, then a hidden binary
state ``u`` ("the user prefers this item") from a logistic preference
function of the features, then one label per task:

* ``u = 1``: the user expresses preference only through their habitual
  behaviours.  Each user owns a fixed subset of tasks (the habit mask);
  task ``t`` fires with probability ``q_up[t]`` if it is in that subset and
  never otherwise.
* ``u = 0``: every task fires with the small probability ``q_not_up[t]``.

The training file never sees ``u``; it goes to a sidecar together with the
true posterior ``P(UP | x)``.
"""

from __future__ import annotations

import hashlib
import zlib
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .bayes import DecomposedPrediction
from .data import Dataset, DatasetSchema, write_tsv


def substream(seed: int, name: str) -> np.random.Generator:
    """Independent generator for a named purpose derived from one seed."""
    return np.random.default_rng([int(seed), zlib.crc32(name.encode())])


@dataclass(frozen=True)
class GeneratorConfig:
    n_samples: int = 100_000
    tasks: tuple[str, ...] = ("click", "like", "follow")
    q_up: tuple[float, ...] = (0.27, 0.165, 0.095)
    q_not_up: tuple[float, ...] = (0.01, 0.004, 0.002)
    habit_inclusion: tuple[float, ...] = (0.9, 0.6, 0.5)
    # first field indexes the habit table; set habit_field=None to draw a
    # fresh subset per impression instead
    categorical: tuple[tuple[str, int], ...] = (("user", 200), ("item", 500), ("author", 100))
    n_numeric: int = 4
    habit_field: str | None = "user"
    pref_bias: float = -0.9
    pref_categorical_std: float = 1.0
    pref_numeric_std: float = 0.8
    # weight of the product of the first two numeric features in the logit
    pref_interaction: float = 1.0
    seed: int = 0

    def __post_init__(self):
        for name in ("tasks", "q_up", "q_not_up", "habit_inclusion", "categorical"):
            object.__setattr__(self, name, tuple(
                tuple(v) if isinstance(v, list) else v for v in getattr(self, name)))
        validate(self)

    @property
    def numeric_names(self) -> tuple[str, ...]:
        return tuple(f"x{i}" for i in range(self.n_numeric))

    def dataset_schema(self) -> DatasetSchema:
        return DatasetSchema(self.tasks, tuple((n, int(v)) for n, v in self.categorical),
                             self.numeric_names)

    def effective_q_up(self) -> np.ndarray:
        """P(t | UP) averaged over habit masks."""
        return np.asarray(self.q_up) * np.asarray(self.habit_inclusion)


class GeneratorConfigError(ValueError):
    pass


def validate(cfg: GeneratorConfig) -> None:
    n = len(cfg.tasks)
    if n < 1:
        raise GeneratorConfigError("at least one task required")
    for key in ("q_up", "q_not_up", "habit_inclusion"):
        vals = getattr(cfg, key)
        if len(vals) != n:
            raise GeneratorConfigError(f"{key}: expected {n} values, got {len(vals)}")
        if any(not 0 <= v <= 1 for v in vals):
            raise GeneratorConfigError(f"{key}: probabilities must lie in [0, 1]")
    for t, qu, qn, h in zip(cfg.tasks, cfg.q_up, cfg.q_not_up, cfg.habit_inclusion):
        if not qn < qu * h:
            raise GeneratorConfigError(
                f"task {t!r}: need q_not_up < q_up * habit_inclusion ({qn} vs {qu * h})")
    if cfg.n_samples < 1:
        raise GeneratorConfigError("n_samples must be positive")
    if cfg.n_numeric < 0:
        raise GeneratorConfigError("n_numeric must be >= 0")
    names = [c[0] for c in cfg.categorical]
    if len(set(names)) != len(names):
        raise GeneratorConfigError("duplicate categorical field names")
    if any(v < 1 for _, v in cfg.categorical):
        raise GeneratorConfigError("vocabulary sizes must be >= 1")
    if cfg.habit_field is not None and cfg.habit_field not in names:
        raise GeneratorConfigError(f"habit_field {cfg.habit_field!r} is not a categorical field")


@dataclass
class PreferenceModel:
    bias: float
    categorical: list[np.ndarray]
    numeric: np.ndarray
    interaction: float

    def logit(self, cat_ids: np.ndarray, numeric: np.ndarray) -> np.ndarray:
        cat_ids = np.atleast_2d(cat_ids)
        numeric = np.atleast_2d(np.asarray(numeric, dtype=np.float64))
        z = np.full(cat_ids.shape[0], self.bias, dtype=np.float64)
        for j, w in enumerate(self.categorical):
            z += w[cat_ids[:, j]]
        if self.numeric.size:
            z += numeric @ self.numeric
        if numeric.shape[1] >= 2:
            z += self.interaction * numeric[:, 0] * numeric[:, 1]
        return z


def preference_model(cfg: GeneratorConfig) -> PreferenceModel:
    rng = substream(cfg.seed, "preference")
    cats = [rng.normal(0.0, cfg.pref_categorical_std, size=v) for _, v in cfg.categorical]
    num = rng.normal(0.0, cfg.pref_numeric_std, size=cfg.n_numeric)
    return PreferenceModel(cfg.pref_bias, cats, num, cfg.pref_interaction)


def true_posterior(cat_ids: np.ndarray, numeric: np.ndarray, cfg: GeneratorConfig) -> np.ndarray:
    """P(UP | x) under the generating preference function."""
    z = preference_model(cfg).logit(cat_ids, numeric)
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def habit_table(cfg: GeneratorConfig) -> np.ndarray | None:
    """Per-user task subsets, shape (vocab of habit_field, n_tasks); None if per-impression."""
    if cfg.habit_field is None:
        return None
    vocab = dict(cfg.categorical)[cfg.habit_field]
    rng = substream(cfg.seed, "habit")
    mask = rng.random((vocab, len(cfg.tasks))) < np.asarray(cfg.habit_inclusion)
    # every user has at least one way of expressing preference
    empty = ~mask.any(axis=1)
    if empty.any():
        mask[empty, rng.integers(0, len(cfg.tasks), size=int(empty.sum()))] = True
    return mask


def habit_masks(cat_ids: np.ndarray, cfg: GeneratorConfig,
                rng: np.random.Generator | None = None) -> np.ndarray:
    table = habit_table(cfg)
    if table is not None:
        j = [c[0] for c in cfg.categorical].index(cfg.habit_field)
        return table[cat_ids[:, j]]
    if rng is None:
        raise ValueError("per-impression habit masks need a random generator")
    return rng.random((len(cat_ids), len(cfg.tasks))) < np.asarray(cfg.habit_inclusion)


@dataclass
class SyntheticData:
    dataset: Dataset
    latent_u: np.ndarray
    posterior: np.ndarray
    habit: np.ndarray
    config: GeneratorConfig = field(repr=False)


def generate(cfg: GeneratorConfig, seed: int | None = None) -> SyntheticData:
    """Draw ``cfg.n_samples`` impressions; fully determined by the seed."""
    if seed is not None:
        cfg = replace(cfg, seed=seed)
    n, n_tasks = cfg.n_samples, len(cfg.tasks)
    rng = substream(cfg.seed, "features")
    cat_ids = np.stack([rng.integers(0, v, size=n) for _, v in cfg.categorical], axis=1) \
        if cfg.categorical else np.zeros((n, 0), dtype=np.int64)
    numeric = rng.standard_normal((n, cfg.n_numeric)).astype(np.float32)
    posterior = true_posterior(cat_ids, numeric, cfg)

    rng_u = substream(cfg.seed, "latent")
    latent_u = (rng_u.random(n) < posterior).astype(np.int8)
    rng_lab = substream(cfg.seed, "labels")
    habit = habit_masks(cat_ids, cfg, rng_lab)
    r = rng_lab.random((n, n_tasks))
    fires_up = habit & (r < np.asarray(cfg.q_up))
    fires_not_up = r < np.asarray(cfg.q_not_up)
    labels = np.where(latent_u[:, None] == 1, fires_up, fires_not_up).astype(np.int8)

    ds = Dataset(cfg.dataset_schema(), labels, cat_ids.astype(np.int64), numeric)
    return SyntheticData(ds, latent_u, posterior, habit, cfg)


def write_sidecar(path, latent_u: np.ndarray, posterior: np.ndarray) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("sample_index\tlatent_u\ttrue_posterior\n")
        for i, (u, p) in enumerate(zip(latent_u, posterior)):
            fh.write(f"{i}\t{int(u)}\t{float(p):.17g}\n")


def read_sidecar(path) -> tuple[np.ndarray, np.ndarray]:
    idx, us, ps = [], [], []
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().rstrip("\n").split("\t")
        if header != ["sample_index", "latent_u", "true_posterior"]:
            raise ValueError(f"{path}: unexpected sidecar header {header}")
        for lineno, line in enumerate(fh, start=2):
            parts = line.rstrip("\n").split("\t")
            if len(parts) != 3:
                raise ValueError(f"{path}:{lineno}: expected 3 columns")
            idx.append(int(parts[0]))
            us.append(int(parts[1]))
            ps.append(float(parts[2]))
    if idx != list(range(len(idx))):
        raise ValueError(f"{path}: sample_index must run 0..n-1 in order")
    return np.asarray(us, dtype=np.int8), np.asarray(ps)


def generate_files(cfg: GeneratorConfig, out_dir, seed: int | None = None) -> tuple[Path, Path]:
    """Write ``train.tsv`` and ``sidecar.tsv``; returns their paths."""
    data = generate(cfg, seed)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    train, side = out / "train.tsv", out / "sidecar.tsv"
    write_tsv(data.dataset, train)
    write_sidecar(side, data.latent_u, data.posterior)
    return train, side


def file_sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


# ---------------------------------------------------------------------------
# count tables and the mediant chain


@dataclass
class CountsTable:
    tasks: tuple[str, ...]
    n_up: int
    n_not_up: int
    n_task_up: dict[str, int]
    n_task_not_up: dict[str, int]

    def __post_init__(self):
        for t in self.tasks:
            if self.n_task_up[t] > self.n_up or self.n_task_not_up[t] > self.n_not_up:
                raise ValueError(f"task {t!r}: positive counts exceed group sizes")


def counts_table(latent_u: np.ndarray, labels: np.ndarray, tasks) -> CountsTable:
    up = np.asarray(latent_u) == 1
    labels = np.asarray(labels)
    return CountsTable(
        tuple(tasks), int(up.sum()), int((~up).sum()),
        {t: int(labels[up, k].sum()) for k, t in enumerate(tasks)},
        {t: int(labels[~up, k].sum()) for k, t in enumerate(tasks)},
    )


@dataclass
class MediantCheck:
    holds: bool
    rate_up: float
    rate_pooled: float
    rate_not_up: float


def verify_mediant(counts: CountsTable, task: str) -> MediantCheck:
    """Check rate(UP) > pooled rate > rate(not UP) for one task."""
    if counts.n_up <= 0 or counts.n_not_up <= 0:
        raise ZeroDivisionError("both latent groups must be non-empty")
    a, b = counts.n_task_up[task], counts.n_task_not_up[task]
    r_up = a / counts.n_up
    r_all = (a + b) / (counts.n_up + counts.n_not_up)
    r_not = b / counts.n_not_up
    return MediantCheck(r_up > r_all > r_not, r_up, r_all, r_not)


def negative_taxonomy(latent_u: np.ndarray, labels: np.ndarray, task_index: int) -> dict[str, int]:
    """Split the negatives of one task into the three kinds of silence.

    ``other_positive``: another task fired; ``silent_prefer``: u=1 with no
    interaction at all; ``not_prefer``: u=0 (apathy or dislike).
    """
    labels = np.asarray(labels)
    neg = labels[:, task_index] == 0
    any_other = np.delete(labels, task_index, axis=1).any(axis=1)
    u = np.asarray(latent_u) == 1
    return {
        "other_positive": int((neg & any_other).sum()),
        "silent_prefer": int((neg & u & ~labels.any(axis=1)).sum()),
        "not_prefer": int((neg & ~u).sum()),
    }


# ---------------------------------------------------------------------------
# oracle scorer


def oracle_prediction(data: SyntheticData) -> DecomposedPrediction:
    """Decomposition built from the generator's own probabilities."""
    cfg = data.config
    p1 = data.habit * np.asarray(cfg.q_up)
    p0 = np.broadcast_to(np.asarray(cfg.q_not_up), p1.shape)
    return DecomposedPrediction.from_heads(
        data.posterior,
        {t: p1[:, k] for k, t in enumerate(cfg.tasks)},
        {t: np.array(p0[:, k]) for k, t in enumerate(cfg.tasks)},
    )


def expected_interactions(data: SyntheticData) -> np.ndarray:
    """Sum over tasks of P(label | u, habit): the interactions an impression is worth."""
    cfg = data.config
    up = (data.habit * np.asarray(cfg.q_up)).sum(axis=1)
    return np.where(data.latent_u == 1, up, float(np.sum(cfg.q_not_up)))
