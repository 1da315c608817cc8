"""
Tab-separated dataset files, the train/eval split and minibatching.

File format: UTF-8, one header row, tab separators.  Columns are named
``label:<task>`` (0/1), ``cat:<field>`` (non-negative integer ids) and
``num:<field>`` (decimal floats).  Writers emit labels, then categorical,
then numeric columns, each group in schema order; readers accept any
column order as long as the set of names matches the schema exactly.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np


class DataFormatError(ValueError):
    def __init__(self, message: str, line: int | None = None, column: str | None = None):
        self.line, self.column = line, column
        where = []
        if line is not None:
            where.append(f"line {line}")
        if column is not None:
            where.append(f"column {column!r}")
        super().__init__(f"{', '.join(where)}: {message}" if where else message)


@dataclass(frozen=True)
class DatasetSchema:
    tasks: tuple[str, ...]
    categorical: tuple[tuple[str, int], ...] = ()
    numeric: tuple[str, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "tasks", tuple(self.tasks))
        object.__setattr__(self, "categorical", tuple((str(n), int(v)) for n, v in self.categorical))
        object.__setattr__(self, "numeric", tuple(self.numeric))
        cols = self.columns
        if len(set(cols)) != len(cols):
            raise ValueError(f"duplicate column names in schema: {cols}")

    @property
    def columns(self) -> list[str]:
        return ([f"label:{t}" for t in self.tasks]
                + [f"cat:{n}" for n, _ in self.categorical]
                + [f"num:{n}" for n in self.numeric])

    @classmethod
    def from_feature_schema(cls, tasks, feature_schema) -> "DatasetSchema":
        return cls(tuple(tasks), tuple((c.name, c.vocab_size) for c in feature_schema.categorical),
                   tuple(feature_schema.numeric))


@dataclass
class Dataset:
    schema: DatasetSchema
    labels: np.ndarray   # (n, n_tasks) int8
    cat_ids: np.ndarray  # (n, n_categorical) int64
    numeric: np.ndarray  # (n, n_numeric) float32

    def __len__(self) -> int:
        return self.labels.shape[0]

    def label_dict(self, idx=None) -> dict[str, np.ndarray]:
        lab = self.labels if idx is None else self.labels[idx]
        return {t: lab[:, k] for k, t in enumerate(self.schema.tasks)}

    def subset(self, idx) -> "Dataset":
        return Dataset(self.schema, self.labels[idx], self.cat_ids[idx], self.numeric[idx])

    def base_rates(self, idx=None) -> dict[str, float]:
        lab = self.labels if idx is None else self.labels[idx]
        return {t: float(lab[:, k].mean()) for k, t in enumerate(self.schema.tasks)}


def _fmt_float(x: float) -> str:
    # 9 significant digits round-trip any float32 exactly
    return format(float(x), ".9g")


def write_tsv(ds: Dataset, path) -> None:
    s = ds.schema
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\t".join(s.columns) + "\n")
        lab = ds.labels.astype(np.int64).tolist()
        cat = ds.cat_ids.astype(np.int64).tolist()
        num = ds.numeric.astype(np.float32).tolist()
        for a, b, c in zip(lab, cat, num):
            fields = [str(v) for v in a] + [str(v) for v in b] + [_fmt_float(v) for v in c]
            fh.write("\t".join(fields) + "\n")


def load_tsv(path, schema: DatasetSchema) -> Dataset:
    """Read a dataset file, validating every cell against ``schema``."""
    path = Path(path)
    try:
        fh = open(path, encoding="utf-8")
    except OSError as exc:
        raise DataFormatError(f"cannot open {path}: {exc}") from exc
    with fh:
        header = fh.readline().rstrip("\n").split("\t")
        expected = schema.columns
        for col in expected:
            if col not in header:
                raise DataFormatError("missing column", line=1, column=col)
        for col in header:
            if col not in expected:
                raise DataFormatError("column not in schema", line=1, column=col)
        if len(set(header)) != len(header):
            raise DataFormatError("duplicate column in header", line=1)
        pos = [header.index(c) for c in expected]
        n_lab, n_cat = len(schema.tasks), len(schema.categorical)
        vocab = [v for _, v in schema.categorical]
        labels, cats, nums = [], [], []
        for lineno, line in enumerate(fh, start=2):
            parts = line.rstrip("\n").split("\t")
            if len(parts) != len(header):
                raise DataFormatError(f"expected {len(header)} cells, got {len(parts)}", line=lineno)
            row = [parts[p] for p in pos]
            try:
                lab = [int(v) for v in row[:n_lab]]
            except ValueError:
                raise _cell_error(row[:n_lab], expected[:n_lab], lineno, int) from None
            for v, col in zip(lab, expected):
                if v not in (0, 1):
                    raise DataFormatError(f"label must be 0 or 1, got {v}", lineno, col)
            try:
                cat = [int(v) for v in row[n_lab:n_lab + n_cat]]
            except ValueError:
                raise _cell_error(row[n_lab:n_lab + n_cat], expected[n_lab:n_lab + n_cat],
                                  lineno, int) from None
            for v, vs, col in zip(cat, vocab, expected[n_lab:]):
                if not 0 <= v < vs:
                    raise DataFormatError(f"id {v} outside vocabulary of size {vs}", lineno, col)
            try:
                num = [float(v) for v in row[n_lab + n_cat:]]
            except ValueError:
                raise _cell_error(row[n_lab + n_cat:], expected[n_lab + n_cat:],
                                  lineno, float) from None
            labels.append(lab)
            cats.append(cat)
            nums.append(num)
    n = len(labels)
    return Dataset(
        schema,
        np.asarray(labels, dtype=np.int8).reshape(n, n_lab),
        np.asarray(cats, dtype=np.int64).reshape(n, n_cat),
        np.asarray(nums, dtype=np.float32).reshape(n, len(schema.numeric)),
    )


def _cell_error(cells, cols, lineno, kind) -> DataFormatError:
    for v, col in zip(cells, cols):
        try:
            kind(v)
        except ValueError:
            return DataFormatError(f"cannot parse {v!r} as {kind.__name__}", lineno, col)
    return DataFormatError("unparseable row", lineno)


# ---------------------------------------------------------------------------
# split and batching


def _splitmix64(x: np.ndarray) -> np.ndarray:
    x = x.astype(np.uint64)
    with np.errstate(over="ignore"):
        x = x + np.uint64(0x9E3779B97F4A7C15)
        x = (x ^ (x >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
        x = (x ^ (x >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return x ^ (x >> np.uint64(31))


def split_indices(n: int, salt: int = 17, eval_fraction: float = 0.1) -> tuple[np.ndarray, np.ndarray]:
    """Deterministic hash split of ``range(n)`` into (train, eval) index arrays."""
    h = _splitmix64(np.arange(n, dtype=np.uint64) ^ _splitmix64(np.array([salt]))[0])
    bucket = (h % np.uint64(10_000)).astype(np.int64)
    is_eval = bucket < int(round(eval_fraction * 10_000))
    return np.flatnonzero(~is_eval), np.flatnonzero(is_eval)


def iterate_batches(idx: np.ndarray, batch_size: int, rng: np.random.Generator | None = None):
    """Yield index chunks, shuffled when ``rng`` is given."""
    idx = np.asarray(idx)
    if rng is not None:
        idx = idx[rng.permutation(len(idx))]
    for start in range(0, len(idx), batch_size):
        yield idx[start:start + batch_size]
