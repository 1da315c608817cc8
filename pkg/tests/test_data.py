import numpy as np
import pytest

from dlen.data import (
    DataFormatError,
    Dataset,
    DatasetSchema,
    iterate_batches,
    load_tsv,
    split_indices,
    write_tsv,
)
from dlen.synth import GeneratorConfig, generate

SCHEMA = DatasetSchema(("ctr", "cvr"), (("user", 10), ("item", 5)), ("price",))
HEADER = "label:ctr\tlabel:cvr\tcat:user\tcat:item\tnum:price\n"


def _write(tmp_path, body, header=HEADER):
    p = tmp_path / "d.tsv"
    p.write_text(header + body)
    return p


@pytest.mark.trivial
def test_two_row_file_exact_values(tmp_path):
    ds = load_tsv(_write(tmp_path, "1\t0\t3\t4\t1.5\n0\t0\t9\t0\t-2.25\n"), SCHEMA)
    assert ds.labels.tolist() == [[1, 0], [0, 0]]
    assert ds.cat_ids.tolist() == [[3, 4], [9, 0]]
    assert ds.numeric.tolist() == [[1.5], [-2.25]]


@pytest.mark.trivial
def test_column_order_follows_header(tmp_path):
    header = "cat:item\tnum:price\tlabel:cvr\tcat:user\tlabel:ctr\n"
    ds = load_tsv(_write(tmp_path, "4\t0.5\t1\t2\t0\n", header), SCHEMA)
    assert ds.labels.tolist() == [[0, 1]] and ds.cat_ids.tolist() == [[2, 4]]


@pytest.mark.trivial
def test_missing_column_named(tmp_path):
    with pytest.raises(DataFormatError) as exc:
        load_tsv(_write(tmp_path, "", "label:ctr\tcat:user\tcat:item\tnum:price\n"), SCHEMA)
    assert exc.value.column == "label:cvr"


@pytest.mark.trivial
@pytest.mark.parametrize("row,col", [
    ("1\t0\t3\t4\tabc\n", "num:price"),
    ("1\t2\t3\t4\t1.0\n", "label:cvr"),
    ("1\t0\t10\t4\t1.0\n", "cat:user"),
    ("1\t0\tx\t4\t1.0\n", "cat:user"),
])
def test_bad_cells_report_line_and_column(tmp_path, row, col):
    with pytest.raises(DataFormatError) as exc:
        load_tsv(_write(tmp_path, "0\t0\t1\t1\t0\n" + row), SCHEMA)
    assert exc.value.line == 3 and exc.value.column == col


@pytest.mark.trivial
def test_ragged_row_rejected(tmp_path):
    with pytest.raises(DataFormatError) as exc:
        load_tsv(_write(tmp_path, "0\t0\t1\n"), SCHEMA)
    assert exc.value.line == 2


@pytest.mark.trivial
def test_schema_rejects_duplicates():
    with pytest.raises(ValueError):
        DatasetSchema(("a", "a"))


@pytest.mark.trivial
def test_generated_round_trip_identical(tmp_path):
    d = generate(GeneratorConfig(n_samples=2000), 4)
    p = tmp_path / "g.tsv"
    write_tsv(d.dataset, p)
    back = load_tsv(p, d.dataset.schema)
    for name in ("labels", "cat_ids", "numeric"):
        a, b = getattr(d.dataset, name), getattr(back, name)
        assert a.dtype == b.dtype
        assert a.tobytes() == b.tobytes()


@pytest.mark.trivial
def test_float32_extremes_round_trip(tmp_path):
    s = DatasetSchema(("t",), (), ("v",))
    vals = np.array([[1e-38], [3.4e38], [-0.0], [np.float32(0.1)], [1.0 / 3]], dtype=np.float32)
    ds = Dataset(s, np.zeros((5, 1), np.int8), np.zeros((5, 0), np.int64), vals)
    p = tmp_path / "x.tsv"
    write_tsv(ds, p)
    assert load_tsv(p, s).numeric.tobytes() == vals.tobytes()


@pytest.mark.trivial
def test_split_is_deterministic_partition():
    tr, ev = split_indices(10_000)
    assert np.intersect1d(tr, ev).size == 0
    assert tr.size + ev.size == 10_000
    assert ev.size == pytest.approx(1000, abs=100)
    tr2, ev2 = split_indices(10_000)
    assert np.array_equal(ev, ev2)
    # membership of an index does not depend on n
    _, ev_big = split_indices(20_000)
    assert np.array_equal(ev_big[ev_big < 10_000], ev)
    _, ev_other = split_indices(10_000, salt=18)
    assert not np.array_equal(ev, ev_other)


@pytest.mark.trivial
def test_batches_cover_indices_once():
    idx = np.arange(1037)
    rng = np.random.default_rng(0)
    seen = np.concatenate(list(iterate_batches(idx, 100, rng)))
    assert sorted(seen.tolist()) == idx.tolist()
    sizes = [len(b) for b in iterate_batches(idx, 100)]
    assert sizes[:-1] == [100] * 10 and sizes[-1] == 37
