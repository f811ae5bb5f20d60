import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pnml.datasets import (CorrelationMatrix, Dataset, DatasetError, SamplingConfig,
                           derive_seed, kfold_split, label_correlation_matrix,
                           load_dataset, sample_label_instances, save_dataset)


def make_ds(labels, features=None):
    y = np.asarray(labels)
    x = np.arange(y.shape[0] * 3, dtype=float).reshape(y.shape[0], 3) if features is None else features
    return Dataset(x, y)


class TestDatasetInvariants:
    def test_rejects_non_binary_labels(self):
        with pytest.raises(DatasetError, match="0 or 1"):
            Dataset(np.ones((2, 2)), np.array([[0, 2], [1, 0]]))

    def test_rejects_nan_features(self):
        with pytest.raises(DatasetError, match="NaN"):
            Dataset(np.array([[np.nan, 1.0]]), np.array([[1, 0]]))

    def test_rejects_row_mismatch(self):
        with pytest.raises(DatasetError, match="row mismatch"):
            Dataset(np.ones((3, 2)), np.ones((2, 2), dtype=int))


class TestSparseFormat:
    def test_single_record(self, tmp_path):
        p = tmp_path / "toy.sml"
        p.write_text("1 10 3\n1,3 2:0.5 7:1.0\n")
        ds = load_dataset(p, "sparse-multilabel")
        assert (ds.n_instances, ds.n_features, ds.n_labels) == (1, 10, 3)
        assert ds.labels[0].tolist() == [1, 0, 1]
        assert ds.features[0, 1] == 0.5 and ds.features[0, 6] == 1.0
        assert ds.features[0].sum() == 1.5

    def test_no_label_record(self, tmp_path):
        p = tmp_path / "toy.sml"
        p.write_text("2 4 2\n1 1:2.0\n 3:4.0\n")
        ds = load_dataset(p, "sparse-multilabel")
        assert ds.labels.tolist() == [[1, 0], [0, 0]]
        assert ds.features[1, 2] == 4.0

    def test_feature_index_beyond_header(self, tmp_path):
        p = tmp_path / "bad.sml"
        p.write_text("1 10 3\n1 11:1.0\n")
        with pytest.raises(DatasetError, match="outside 1..10"):
            load_dataset(p, "sparse-multilabel")

    def test_parse_error_carries_line_number(self, tmp_path):
        p = tmp_path / "bad.sml"
        p.write_text("2 4 2\n1 1:2.0\n2 1:x\n")
        with pytest.raises(DatasetError, match=":3:"):
            load_dataset(p, "sparse-multilabel")

    def test_label_index_out_of_range(self, tmp_path):
        p = tmp_path / "bad.sml"
        p.write_text("1 4 2\n3 1:2.0\n")
        with pytest.raises(DatasetError, match="label index 3"):
            load_dataset(p, "sparse-multilabel")


class TestDenseFormat:
    def test_missing_path(self, tmp_path):
        with pytest.raises(DatasetError):
            load_dataset(tmp_path / "nope", "dense-csv-pair")

    def test_label_outside_01(self, tmp_path):
        d = tmp_path / "ds"
        d.mkdir()
        (d / "features.csv").write_text("1.0,2.0\n")
        (d / "labels.csv").write_text("0,2\n")
        with pytest.raises(DatasetError, match="0,1"):
            load_dataset(d, "dense-csv-pair")

    def test_row_count_mismatch(self, tmp_path):
        d = tmp_path / "ds"
        d.mkdir()
        (d / "features.csv").write_text("1.0\n2.0\n")
        (d / "labels.csv").write_text("1\n")
        with pytest.raises(DatasetError, match="rows"):
            load_dataset(d, "dense-csv-pair")


def test_emotions_shape():
    ds = load_dataset("data/emotions")
    assert (ds.n_instances, ds.n_features, ds.n_labels) == (593, 72, 6)
    assert ds.label_names is not None and len(ds.label_names) == 6


@given(st.data())
@settings(max_examples=25, deadline=None)
def test_roundtrip_both_formats(tmp_path_factory, data):
    rng = np.random.default_rng(data.draw(st.integers(0, 2 ** 31)))
    n = data.draw(st.integers(1, 12))
    d = data.draw(st.integers(1, 6))
    k = data.draw(st.integers(1, 4))
    ds = Dataset(rng.normal(size=(n, d)), (rng.random((n, k)) < 0.4).astype(int))
    root = tmp_path_factory.mktemp("rt")
    save_dataset(ds, root / "sparse.sml", "sparse-multilabel")
    back = load_dataset(root / "sparse.sml", "sparse-multilabel")
    assert np.array_equal(back.features, ds.features)
    assert np.array_equal(back.labels, ds.labels)
    save_dataset(ds, root / "dense", "dense-csv-pair")
    back2 = load_dataset(root / "dense", "dense-csv-pair")
    assert np.array_equal(back2.features, ds.features)
    assert np.array_equal(back2.labels, ds.labels)


class TestKfold:
    def test_ten_rows_five_folds(self):
        ds = make_ds(np.ones((10, 1), dtype=int))
        splits = kfold_split(ds, 5, seed=0)
        test_sets = [frozenset(map(tuple, te.features)) for _, te in splits]
        assert all(len(te.features) == 2 for _, te in splits)
        union = set().union(*test_sets)
        assert len(union) == 10

    def test_deterministic(self):
        ds = make_ds(np.ones((9, 1), dtype=int))
        a = kfold_split(ds, 3, seed=4)
        b = kfold_split(ds, 3, seed=4)
        for (tr1, te1), (tr2, te2) in zip(a, b):
            assert np.array_equal(te1.features, te2.features)
            assert np.array_equal(tr1.features, tr2.features)

    def test_emotions_fold_sizes(self):
        # 593 = 5 * 118 + 3 -> three folds of 119, two of 118
        ds = make_ds(np.ones((593, 1), dtype=int))
        sizes = sorted(te.n_instances for _, te in kfold_split(ds, 5, seed=1))
        assert sizes == [118, 118, 119, 119, 119]

    @pytest.mark.parametrize("folds", [0, 1, 11])
    def test_folds_out_of_range(self, folds):
        ds = make_ds(np.ones((10, 1), dtype=int))
        with pytest.raises(ValueError):
            kfold_split(ds, folds, seed=0)

    @given(n=st.integers(2, 40), folds=st.integers(2, 8), seed=st.integers(0, 100))
    @settings(max_examples=40, deadline=None)
    def test_partition_properties(self, n, folds, seed):
        if folds > n:
            return
        ds = make_ds(np.ones((n, 1), dtype=int), features=np.arange(n, dtype=float)[:, None])
        splits = kfold_split(ds, folds, seed)
        seen = []
        for tr, te in splits:
            te_idx = set(te.features[:, 0].astype(int))
            tr_idx = set(tr.features[:, 0].astype(int))
            assert te_idx.isdisjoint(tr_idx)
            assert te_idx | tr_idx == set(range(n))
            seen.append(te_idx)
        all_test = [i for s in seen for i in s]
        assert sorted(all_test) == list(range(n))
        sizes = [len(s) for s in seen]
        assert max(sizes) - min(sizes) <= 1


class TestSampling:
    def test_full_rates_return_everything(self):
        ds = make_ds([[1], [0], [1], [0], [0]])
        pos, neg = sample_label_instances(ds, 0, SamplingConfig(1.0, 1.0, 0))
        assert pos.tolist() == [0, 2]
        assert neg.tolist() == [1, 3, 4]

    def test_half_of_ten_negatives(self):
        labels = np.zeros((11, 1), dtype=int)
        labels[0, 0] = 1
        ds = make_ds(labels)
        _, neg = sample_label_instances(ds, 0, SamplingConfig(1.0, 0.5, 3))
        assert len(neg) == 5

    def test_ceil_keeps_a_positive(self):
        labels = np.zeros((10, 1), dtype=int)
        labels[[1, 4, 7], 0] = 1
        ds = make_ds(labels)
        pos, _ = sample_label_instances(ds, 0, SamplingConfig(0.4, 1.0, 5))
        assert len(pos) == 2  # ceil(0.4 * 3)

    def test_bad_label_index(self):
        ds = make_ds([[1], [0]])
        with pytest.raises(IndexError):
            sample_label_instances(ds, 1, SamplingConfig())

    @given(seed=st.integers(0, 10 ** 6), r=st.floats(0.05, 1.0))
    @settings(max_examples=40, deadline=None)
    def test_deterministic_and_duplicate_free(self, seed, r):
        rng = np.random.default_rng(7)
        ds = make_ds((rng.random((23, 2)) < 0.5).astype(int),
                     features=rng.normal(size=(23, 4)))
        cfg = SamplingConfig(r, r, seed)
        p1, n1 = sample_label_instances(ds, 0, cfg)
        p2, n2 = sample_label_instances(ds, 0, cfg)
        assert np.array_equal(p1, p2) and np.array_equal(n1, n2)
        assert len(set(p1.tolist())) == len(p1)
        assert len(set(n1.tolist())) == len(n1)
        assert set(p1) <= set(np.flatnonzero(ds.labels[:, 0] == 1))


class TestCorrelation:
    def test_identical_columns(self):
        ds = make_ds([[1, 1], [0, 0], [1, 1], [0, 0]])
        c = label_correlation_matrix(ds).c
        assert c[0, 1] == pytest.approx(1.0)

    def test_complement_columns(self):
        ds = make_ds([[1, 0], [0, 1], [1, 0]])
        c = label_correlation_matrix(ds).c
        assert c[0, 1] == pytest.approx(-1.0)

    def test_orthogonal_pattern(self):
        ds = make_ds([[1, 1], [1, 0], [0, 1], [0, 0]])
        c = label_correlation_matrix(ds).c
        assert c[0, 1] == pytest.approx(0.0, abs=1e-12)

    def test_constant_column_gets_zero(self):
        ds = make_ds([[1, 1], [1, 0], [1, 1]])
        c = label_correlation_matrix(ds).c
        assert c[0, 1] == 0.0 and c[0, 0] == 1.0 and c[1, 1] == 1.0

    @given(st.integers(0, 2 ** 31))
    @settings(max_examples=30, deadline=None)
    def test_symmetric_and_bounded(self, seed):
        rng = np.random.default_rng(seed)
        ds = make_ds((rng.random((8, 5)) < rng.uniform(0.1, 0.9)).astype(int),
                     features=rng.normal(size=(8, 2)))
        cm = label_correlation_matrix(ds)
        assert np.array_equal(cm.c, cm.c.T)
        assert cm.c.min() >= -1.0 and cm.c.max() <= 1.0
        assert np.allclose(np.diag(cm.c), 1.0)

    def test_correlation_matrix_validation(self):
        with pytest.raises(ValueError):
            CorrelationMatrix(np.array([[1.0, 0.5], [0.4, 1.0]]))
        with pytest.raises(ValueError):
            CorrelationMatrix(np.array([[1.0, 2.0], [2.0, 1.0]]))


def test_derive_seed_stable_and_tag_sensitive():
    assert derive_seed(3, "split") == derive_seed(3, "split")
    assert derive_seed(3, "split") != derive_seed(3, "init")
    assert derive_seed(3, "sample", 0, 1) != derive_seed(3, "sample", 1, 0)
