import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from deepknn.data import (
    DataError,
    Dataset,
    MissingFileError,
    NegativeLabelError,
    NonNumericCellError,
    RaggedRowError,
    SplitSpec,
    Standardizer,
    concat,
    load_csv,
    make_blobs,
    one_hot,
    round_half_up,
    save_csv,
    split_clean_noisy,
    subsplit,
)


def write(tmp_path, text, name="d.csv"):
    path = tmp_path / name
    path.write_text(text, encoding="utf-8")
    return path


def small(n=10, K=3, seed=0):
    rng = np.random.default_rng(seed)
    return Dataset(rng.normal(size=(n, 2)), np.arange(n) % K, K)


class TestDataset:
    def test_rejects_out_of_range_label(self):
        with pytest.raises(DataError):
            Dataset(np.zeros((2, 1)), [0, 3], 3)

    def test_rejects_nan_features(self):
        with pytest.raises(DataError):
            Dataset(np.array([[np.nan], [1.0]]), [0, 1], 2)

    def test_rejects_label_length_mismatch(self):
        with pytest.raises(DataError):
            Dataset(np.zeros((3, 2)), [0, 1], 2)

    def test_arrays_are_frozen_copies(self):
        X = np.zeros((2, 2))
        d = Dataset(X, [0, 1], 2)
        X[0, 0] = 5.0
        assert d.features[0, 0] == 0.0
        with pytest.raises(ValueError):
            d.features[0, 0] = 1.0

    def test_empty_dataset_is_representable(self):
        d = Dataset.empty(3, 4)
        assert d.n == 0 and d.dim == 3 and d.num_classes == 4


class TestLoadCsv:
    def test_three_rows_three_classes(self, tmp_path):
        path = write(tmp_path, "1.0,2.0,0\n3.0,4.0,1\n5.0,6.0,2\n")
        d = load_csv(path)
        assert (d.n, d.dim, d.num_classes) == (3, 2, 3)
        np.testing.assert_array_equal(d.features[:, 0], [1.0, 3.0, 5.0])

    def test_single_label_five_gives_six_classes(self, tmp_path):
        d = load_csv(write(tmp_path, "0.5,5\n1.5,5\n"))
        assert d.num_classes == 6

    def test_nan_cell_reports_row_and_column(self, tmp_path):
        path = write(tmp_path, "a,b,label\n1,2,0\n3,NaN,1\n")
        with pytest.raises(NonNumericCellError) as info:
            load_csv(path, "label")
        assert info.value.row == 3 and info.value.column == 1

    def test_distinct_error_types(self, tmp_path):
        with pytest.raises(MissingFileError):
            load_csv(tmp_path / "missing.csv")
        with pytest.raises(RaggedRowError):
            load_csv(write(tmp_path, "1,2,0\n1,1\n", "r.csv"))
        with pytest.raises(NonNumericCellError):
            load_csv(write(tmp_path, "1,x,0\n", "n.csv"), header=False)
        with pytest.raises(NegativeLabelError):
            load_csv(write(tmp_path, "1,2,-1\n", "neg.csv"))
        kinds = {MissingFileError, RaggedRowError, NonNumericCellError, NegativeLabelError}
        assert len(kinds) == 4

    def test_header_and_named_label_column(self, tmp_path):
        path = write(tmp_path, "y,f1,f2\n1,0.1,0.2\n0,0.3,0.4\n")
        d = load_csv(path, "y")
        np.testing.assert_array_equal(d.labels, [1, 0])
        np.testing.assert_array_equal(d.features, [[0.1, 0.2], [0.3, 0.4]])

    def test_round_trip_through_save(self, tmp_path):
        d = small(12)
        save_csv(d, tmp_path / "s.csv")
        assert load_csv(tmp_path / "s.csv", "label", num_classes=d.num_classes) == d


class TestSplits:
    def test_five_percent_of_hundred(self):
        clean, noisy = split_clean_noisy(small(100), SplitSpec(0.05, 1))
        assert (clean.n, noisy.n) == (5, 95)

    def test_zero_fraction_keeps_everything_noisy(self):
        d = small(20)
        clean, noisy = split_clean_noisy(d, SplitSpec(0.0, 3))
        assert clean.n == 0
        assert noisy == d

    def test_same_seed_same_partition(self):
        d = small(50)
        a = split_clean_noisy(d, SplitSpec(0.2, 9))
        b = split_clean_noisy(d, SplitSpec(0.2, 9))
        assert a[0] == b[0] and a[1] == b[1]

    def test_subsplit_sizes(self):
        a, b = subsplit(small(10), 0.7, 0)
        assert (a.n, b.n) == (7, 3)

    def test_subsplit_deterministic(self):
        d = small(30)
        assert subsplit(d, 0.7, 4)[0] == subsplit(d, 0.7, 4)[0]

    def test_subsplit_needs_two_examples(self):
        with pytest.raises(DataError):
            subsplit(small(1, K=1), 0.7, 0)

    def test_round_half_up(self):
        assert [round_half_up(x) for x in (0.5, 1.5, 2.5, 0.05 * 100, 0.49)] == [1, 2, 3, 5, 0]

    @settings(max_examples=60, deadline=None)
    @given(st.integers(1, 200), st.floats(0, 1), st.integers(0, 2**32 - 1))
    def test_split_is_a_permutation(self, n, fraction, seed):
        rng = np.random.default_rng(0)
        d = Dataset(rng.normal(size=(n, 2)), rng.integers(0, 3, n), 3)
        clean, noisy = split_clean_noisy(d, SplitSpec(fraction, seed))
        assert clean.n == round_half_up(fraction * n)
        both = concat(clean, noisy) if clean.n and noisy.n else (clean if clean.n else noisy)
        key = lambda X, y: sorted(map(tuple, np.c_[X, y]))  # noqa: E731
        assert key(both.features, both.labels) == key(d.features, d.labels)


def test_one_hot():
    np.testing.assert_array_equal(one_hot([2, 0], 3), [[0, 0, 1], [1, 0, 0]])


def test_standardizer_uses_fit_statistics():
    d = Dataset(np.array([[1.0, 5.0], [3.0, 5.0]]), [0, 1], 2)
    s = Standardizer.fit(d)
    np.testing.assert_allclose(s.apply(d).features, [[-1.0, 0.0], [1.0, 0.0]])


def test_blobs_balanced_and_seeded():
    d = make_blobs(1000, 10, seed=2)
    np.testing.assert_array_equal(np.bincount(d.labels), np.full(10, 100))
    assert d == make_blobs(1000, 10, seed=2)
