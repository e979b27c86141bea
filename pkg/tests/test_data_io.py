import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given
from hypothesis import strategies as st

from fedkat.data_io import Dataset, ParseError, parse_libsvm, split_horizontal, split_vertical, to_libsvm


def test_parse_single_line():
    ds = parse_libsvm("1 1:0.5 3:2.0\n")
    assert (ds.rows, ds.cols) == (1, 3)
    assert ds.dense().tolist() == [[0.5, 0.0, 2.0]]
    assert ds.b.tolist() == [1.0]


def test_parse_two_class_labels():
    ds = parse_libsvm(b"+1 1:1\n-1 2:1\n")
    assert (ds.rows, ds.cols) == (2, 2)
    assert ds.b.tolist() == [1.0, -1.0]


def test_labels_mapped_from_zero_one():
    ds = parse_libsvm("0 1:1\n1 1:2\n0 2:1\n")
    assert ds.b.tolist() == [-1.0, 1.0, -1.0]


@pytest.mark.parametrize(
    "text, line",
    [("1 3:1 2:1\n", 1), ("1 1:1\n1 2:1 2:3\n", 2), ("1 1:x\n", 1), ("1 0:1\n", 1), ("abc 1:1\n", 1), ("1 2\n", 1)],
)
def test_parse_errors_name_line(text, line):
    with pytest.raises(ParseError) as err:
        parse_libsvm(text)
    assert err.value.line == line
    assert f"line {line}" in str(err.value)


def test_empty_input_rejected():
    with pytest.raises(ParseError):
        parse_libsvm("")
    with pytest.raises(ParseError):
        parse_libsvm("# only a comment\n\n")


def test_feature_override():
    assert parse_libsvm("1 2:1\n", n_features=5).cols == 5
    with pytest.raises(ParseError):
        parse_libsvm("1 4:1\n", n_features=3)


def test_comments_and_blank_lines():
    ds = parse_libsvm("# header\n1 1:1  # trailing\n\n-1 2:3\n")
    assert ds.rows == 2 and ds.dense()[1, 1] == 3.0


def _datasets():
    def build(args):
        s, d, seed = args
        rng = np.random.default_rng(seed)
        A = sp.random(s, d, density=0.3, random_state=seed, data_rvs=lambda k: rng.standard_normal(k))
        return Dataset(A, rng.standard_normal(s))

    return st.tuples(st.integers(1, 20), st.integers(1, 15), st.integers(0, 10_000)).map(build)


@given(_datasets())
def test_libsvm_round_trip(ds):
    back = parse_libsvm(to_libsvm(ds), n_features=ds.cols)
    # real-valued targets are not relabelled unless exactly two values occur
    if len(np.unique(ds.b)) != 2:
        assert back.identical(ds)
    else:
        assert np.array_equal(back.A.toarray(), ds.A.toarray())


def test_split_horizontal_sizes():
    ds = Dataset(sp.csr_matrix((8124, 3)), np.zeros(8124))
    sizes = [len(sh.rows) for sh in split_horizontal(ds, 100)]
    assert sizes.count(82) == 24 and sizes.count(81) == 76
    assert [len(sh.rows) for sh in split_horizontal(Dataset(sp.csr_matrix((4, 1)), np.zeros(4)), 4)] == [1] * 4


@pytest.mark.parametrize("n", [0, 5])
def test_split_horizontal_errors(n):
    with pytest.raises(ValueError):
        split_horizontal(Dataset(sp.csr_matrix((3, 2)), np.zeros(3)), n)


def test_split_vertical_sizes():
    ds = Dataset(sp.csr_matrix((2, 112)), np.zeros(2))
    assert [b.dim for b in split_vertical(ds, 5)] == [23, 23, 22, 22, 22]
    two = split_vertical(Dataset(sp.csr_matrix((1, 2)), np.zeros(1)), 2)
    assert [b.cols.tolist() for b in two] == [[0], [1]]
    with pytest.raises(ValueError):
        split_vertical(Dataset(sp.csr_matrix((1, 1)), np.zeros(1)), 2)


@given(st.integers(1, 1000), st.data(), st.booleans())
def test_partitions_cover_exactly(count, data, shuffle):
    n = data.draw(st.integers(1, count))
    ds = Dataset(sp.csr_matrix((count, count)), np.zeros(count))
    for parts in (
        [sh.rows for sh in split_horizontal(ds, n, shuffle=shuffle, seed=7)],
        [b.cols for b in split_vertical(ds, n, shuffle=shuffle, seed=7)],
    ):
        allidx = np.concatenate(parts)
        assert np.array_equal(np.sort(allidx), np.arange(count))
        assert max(map(len, parts)) - min(map(len, parts)) <= 1


def test_split_payloads_match_source(rng):
    ds = Dataset.from_dense(rng.standard_normal((9, 6)), rng.standard_normal(9))
    for sh in split_horizontal(ds, 4, shuffle=True, seed=1):
        assert np.array_equal(sh.data.dense(), ds.dense()[sh.rows])
        assert np.array_equal(sh.data.b, ds.b[sh.rows])
    for blk in split_vertical(ds, 4, shuffle=True, seed=1):
        assert np.array_equal(blk.data.toarray(), ds.dense()[:, blk.cols])


def test_shuffled_split_is_seeded():
    ds = Dataset(sp.csr_matrix((50, 2)), np.zeros(50))
    a = [sh.rows.tolist() for sh in split_horizontal(ds, 7, shuffle=True, seed=3)]
    b = [sh.rows.tolist() for sh in split_horizontal(ds, 7, shuffle=True, seed=3)]
    c = [sh.rows.tolist() for sh in split_horizontal(ds, 7, shuffle=True, seed=4)]
    assert a == b and a != c
