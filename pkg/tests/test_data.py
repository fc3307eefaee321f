import json

import numpy as np
import pytest

from fairthresh.data import (
    LabeledDataset,
    SplitPlan,
    UnlabeledDataset,
    load_csv,
    split,
    split_manifest,
    write_csv,
)
from fairthresh.errors import (
    ConfigError,
    DataValueError,
    GroupCoverageError,
    ParseError,
    SchemaError,
)


def _write(tmp_path, text, name="data.csv"):
    p = tmp_path / name
    p.write_text(text, encoding="utf-8")
    return p


class TestLoadCsv:
    def test_four_row_labeled(self, tmp_path):
        p = _write(tmp_path, "x1,x2,S,Y\n1.0,2.0,0,1\n3.5,-1.0,1,0\n0.0,0.25,0,0\n2.5,1.5,1,1\n")
        ds = load_csv(p, "S", "Y")
        assert isinstance(ds, LabeledDataset)
        assert ds.n == 4 and ds.d == 2
        assert ds.feature_names == ("x1", "x2")
        np.testing.assert_array_equal(ds.sensitive, [0, 1, 0, 1])

    def test_non_binary_sensitive_names_row(self, tmp_path):
        p = _write(tmp_path, "x1,S,Y\n1.0,0,1\n2.0,2,0\n3.0,1,1\n")
        with pytest.raises(DataValueError, match="row 1"):
            load_csv(p, "S", "Y")

    def test_unlabeled_when_label_col_omitted(self, tmp_path):
        p = _write(tmp_path, "x1,S\n1.0,0\n2.0,1\n3.0,0\n4.0,1\n")
        ds = load_csv(p, "S")
        assert isinstance(ds, UnlabeledDataset)
        assert ds.n == 4 and ds.d == 1

    def test_missing_column_is_schema_error(self, tmp_path):
        p = _write(tmp_path, "x1,S,Y\n1.0,0,1\n")
        with pytest.raises(SchemaError, match="group"):
            load_csv(p, "group", "Y")

    def test_unparseable_cell_names_row(self, tmp_path):
        p = _write(tmp_path, "x1,S,Y\n1.0,0,1\nfoo,1,0\n")
        with pytest.raises(ParseError, match="row 1"):
            load_csv(p, "S", "Y")

    def test_nan_cell_rejected(self, tmp_path):
        p = _write(tmp_path, "x1,S,Y\n1.0,0,1\nnan,1,0\n")
        with pytest.raises(ParseError, match="row 1"):
            load_csv(p, "S", "Y")

    def test_round_trip_preserves_values(self, tmp_path):
        rng = np.random.default_rng(0)
        X = rng.normal(size=(20, 3)) * 10.0 ** rng.integers(-8, 8, size=(20, 3))
        ds = LabeledDataset(X, rng.integers(0, 2, 20), rng.integers(0, 2, 20))
        p = tmp_path / "out.csv"
        write_csv(p, ds)
        back = load_csv(p, "S", "Y")
        # repr round-trips doubles exactly, well past 12 significant digits
        np.testing.assert_array_equal(back.features, ds.features)
        np.testing.assert_array_equal(back.labels, ds.labels)


class TestDatasetInvariants:
    def test_row_count_mismatch(self):
        with pytest.raises(SchemaError):
            LabeledDataset(np.zeros((3, 1)), [0, 1], [0, 1, 1])

    def test_missing_group_rejected(self):
        with pytest.raises(GroupCoverageError):
            LabeledDataset(np.zeros((2, 1)), [1, 1], [0, 1])

    def test_unlabeled_needs_two_rows_per_group(self):
        with pytest.raises(GroupCoverageError):
            UnlabeledDataset(np.zeros((3, 1)), [0, 1, 1])
        UnlabeledDataset(np.zeros((4, 1)), [0, 0, 1, 1])  # ok

    def test_unlabeled_sensitive_optional(self):
        ds = UnlabeledDataset(np.zeros((1, 2)))
        assert ds.sensitive is None


class TestSplit:
    @pytest.fixture
    def ds(self):
        rng = np.random.default_rng(1)
        return LabeledDataset(rng.normal(size=(100, 2)), rng.integers(0, 2, 100), rng.integers(0, 2, 100))

    def test_thirty_repeats_seventy_percent(self, ds):
        results = split(ds, SplitPlan(0.7, 30, seed=5))
        assert len(results) == 30
        for r in results:
            assert r.train.n == 70 and r.test.n == 30

    def test_partition_disjoint_exhaustive(self, ds):
        for r in split(ds, SplitPlan(0.7, 5, seed=2)):
            merged = np.sort(np.concatenate([r.train_indices, r.test_indices]))
            np.testing.assert_array_equal(merged, np.arange(ds.n))

    def test_train_keeps_both_groups(self, ds):
        for r in split(ds, SplitPlan(0.3, 20, seed=3)):
            assert 0 not in r.train.group_counts()

    def test_same_plan_identical_splits(self, ds):
        a = split(ds, SplitPlan(0.7, 4, seed=11))
        b = split(ds, SplitPlan(0.7, 4, seed=11))
        for ra, rb in zip(a, b):
            np.testing.assert_array_equal(ra.train_indices, rb.train_indices)
            np.testing.assert_array_equal(ra.test_indices, rb.test_indices)

    def test_all_same_label_falls_back_with_warning(self):
        ds = LabeledDataset(np.arange(10.0)[:, None], [0, 1] * 5, [1] * 10)
        results = split(ds, SplitPlan(0.7, 2, seed=0))
        assert all(r.stratified_by_sensitive_only for r in results)
        assert all(r.train.n == 7 for r in results)

    def test_manifest_is_json_serializable(self, ds):
        results = split(ds, SplitPlan(0.5, 2, seed=9))
        text = json.dumps(split_manifest(results))
        loaded = json.loads(text)
        assert len(loaded) == 2
        assert sorted(loaded[0]) == ["stratified_by_sensitive_only", "test_indices", "train_indices"]

    def test_bad_plan_rejected(self):
        with pytest.raises(ConfigError):
            SplitPlan(1.5, 3, seed=0)
        with pytest.raises(ConfigError):
            SplitPlan(0.5, 0, seed=0)
