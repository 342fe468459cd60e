import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from unlearn_forge.data import (
    LabeledDataset,
    SplitSpec,
    load_csv_dataset,
    make_synthetic_benchmark,
    make_synthetic_gaussian,
    split_for_unlearning,
)
from unlearn_forge.errors import InvalidInputError, ParseError


def test_synthetic_data_is_deterministic_and_balanced():
    a = make_synthetic_gaussian(5, 3, 20, 0.5, seed=7)
    b = make_synthetic_gaussian(5, 3, 20, 0.5, seed=7)
    np.testing.assert_array_equal(a.features, b.features)
    assert np.bincount(a.labels).tolist() == [20] * 5
    assert not np.array_equal(a.features, make_synthetic_gaussian(5, 3, 20, 0.5, seed=8).features)


def test_benchmark_test_set_shares_means_but_not_rows():
    train, test = make_synthetic_benchmark(3, 4, 50, 0.1, seed=1, test_fraction=0.2)
    assert len(test) == 30
    for c in range(3):
        np.testing.assert_allclose(train.features[train.labels == c].mean(0),
                                   test.features[test.labels == c].mean(0), atol=0.15)


@given(st.floats(0.05, 0.95), st.integers(0, 10_000))
def test_sample_wise_split_partitions_training_rows(fraction, seed):
    train, test = make_synthetic_benchmark(4, 2, 15, 1.0, seed=3)
    sp = split_for_unlearning(train, test, SplitSpec("sample_wise", unlearn_fraction=fraction, seed=seed))
    u, r = set(sp.unlearned.ids.tolist()), set(sp.retained.ids.tolist())
    assert not u & r
    assert u | r == set(sp.train_full.ids.tolist())
    assert len(u) == int(np.ceil(fraction * len(train)))


def test_class_wise_split_removes_ood_and_forgets_whole_class():
    train, test = make_synthetic_benchmark(6, 2, 10, 1.0, seed=2)
    sp = split_for_unlearning(train, test, SplitSpec("class_wise", unlearn_classes=(1,), ood_classes=(4, 5)))
    assert set(sp.unlearned.labels.tolist()) == {1}
    assert 1 not in sp.retained.labels
    assert set(sp.ood_pool.labels.tolist()) == {4, 5}
    assert not np.isin(sp.test.labels, [4, 5]).any()
    assert len(sp.unlearned) == 10


def test_ids_point_back_to_source_rows():
    train, test = make_synthetic_benchmark(3, 2, 10, 1.0, seed=4)
    sp = split_for_unlearning(train, test, SplitSpec("sample_wise", 0.3, seed=1))
    np.testing.assert_array_equal(train.features[sp.unlearned.ids], sp.unlearned.features)


def test_split_manifest_json(tmp_path):
    train, test = make_synthetic_benchmark(3, 2, 10, 1.0, seed=4)
    sp = split_for_unlearning(train, test, SplitSpec("sample_wise", 0.3, seed=11))
    sp.save_manifest(tmp_path / "split.json")
    body = json.loads((tmp_path / "split.json").read_text())
    assert body["seed"] == 11 and body["spec"]["mode"] == "sample_wise"
    assert body["unlearned"] == sp.unlearned.ids.tolist()


@pytest.mark.parametrize("kwargs", [
    {"mode": "bogus"},
    {"mode": "sample_wise", "unlearn_fraction": 1.0},
    {"mode": "class_wise"},
    {"mode": "class_wise", "unlearn_classes": (1,), "ood_classes": (1,)},
])
def test_split_spec_validation(kwargs):
    with pytest.raises(InvalidInputError):
        SplitSpec(**kwargs)


def test_split_rejects_unknown_class():
    train, test = make_synthetic_benchmark(3, 2, 5, 1.0, seed=0)
    with pytest.raises(InvalidInputError, match="class id 7"):
        split_for_unlearning(train, test, SplitSpec("class_wise", unlearn_classes=(7,)))


def test_dataset_validation():
    with pytest.raises(InvalidInputError):
        LabeledDataset(np.zeros((2, 2)), [0, 3], 3)
    with pytest.raises(InvalidInputError):
        LabeledDataset(np.array([[np.nan]]), [0], 1)
    with pytest.raises(InvalidInputError):
        LabeledDataset(np.zeros((2, 2)), [0], 2)


def test_csv_loading(tmp_path):
    path = tmp_path / "d.csv"
    path.write_text("0,1.5,2\n\n2,-1,3e2\n")
    ds = load_csv_dataset(path, 3)
    assert ds.labels.tolist() == [0, 2]
    np.testing.assert_array_equal(ds.features, [[1.5, 2.0], [-1.0, 300.0]])
    assert ds.name == "d"


@pytest.mark.parametrize("text, row, message", [
    ("0,1\nx,2\n", 2, "not an integer"),
    ("0,1\n5,2\n", 2, "outside"),
    ("0,1\n1,abc\n", 2, "non-numeric"),
    ("0,1,2\n1,2\n", 2, "expected 2"),
    ("0,nan\n", 1, "non-finite"),
])
def test_csv_errors_name_the_row(tmp_path, text, row, message):
    path = tmp_path / "bad.csv"
    path.write_text(text)
    with pytest.raises(ParseError, match=message) as info:
        load_csv_dataset(path, 3)
    assert info.value.row == row
