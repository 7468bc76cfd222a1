import os
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from diversifed.datasets import (LabeledDataset, PartitionSpec, group_sizes, label_histogram,
                                 largest_remainder, load_idx, materialize, partition_dirichlet,
                                 partition_pathological, partition_practical, synth_blobs,
                                 write_idx)


def labels_only(num_classes, per_class):
    labels = np.repeat(np.arange(num_classes), per_class)
    return LabeledDataset(np.zeros((labels.size, 1)), labels, num_classes)


def class_hist(ds, idx):
    return label_histogram(ds.labels[idx], ds.num_classes)


# ---------------------------------------------------------------- IDX

def test_idx_roundtrip(tmp_path):
    images = np.array([[[0, 255], [128, 7]], [[1, 2], [3, 4]]], dtype=np.uint8)
    labels = np.array([3, 9], dtype=np.uint8)
    write_idx(tmp_path / "img", images)
    write_idx(tmp_path / "lbl", labels)
    assert (tmp_path / "img").read_bytes()[:4] == b"\x00\x00\x08\x03"
    ds = load_idx(tmp_path / "img", tmp_path / "lbl", num_classes=10)
    assert ds.inputs.shape == (2, 4)
    assert np.array_equal(ds.inputs[0], np.array([0, 255, 128, 7]) / 255.0)
    assert ds.labels.tolist() == [3, 9]


def test_idx_labels_with_image_magic(tmp_path):
    write_idx(tmp_path / "img", np.zeros((2, 2, 2), dtype=np.uint8))
    write_idx(tmp_path / "lbl", np.zeros((2, 1, 1), dtype=np.uint8))
    with pytest.raises(ValueError, match="bad magic"):
        load_idx(tmp_path / "img", tmp_path / "lbl")


def test_idx_truncated(tmp_path):
    write_idx(tmp_path / "img", np.zeros((3, 2, 2), dtype=np.uint8))
    write_idx(tmp_path / "lbl", np.zeros(3, dtype=np.uint8))
    raw = (tmp_path / "img").read_bytes()
    (tmp_path / "img").write_bytes(raw[:-3])
    with pytest.raises(ValueError, match="truncated"):
        load_idx(tmp_path / "img", tmp_path / "lbl")


def test_idx_count_mismatch(tmp_path):
    write_idx(tmp_path / "img", np.zeros((3, 2, 2), dtype=np.uint8))
    write_idx(tmp_path / "lbl", np.zeros(2, dtype=np.uint8))
    with pytest.raises(ValueError, match="mismatch"):
        load_idx(tmp_path / "img", tmp_path / "lbl")


FMNIST = Path(os.environ.get("FMNIST_DIR", "data/fashion-mnist"))


@pytest.mark.skipif(not (FMNIST / "train-images-idx3-ubyte").exists(), reason="FMNIST files not present")
def test_fmnist_header():
    ds = load_idx(FMNIST / "train-images-idx3-ubyte", FMNIST / "train-labels-idx1-ubyte")
    assert (len(ds), ds.feature_dim, ds.num_classes) == (60000, 784, 10)


# ---------------------------------------------------------------- blobs

def test_blobs_zero_noise_are_centers():
    ds = synth_blobs(4, 5, 6, 2.5, 0.0, seed=1)
    for c in range(4):
        rows = ds.inputs[ds.labels == c]
        assert np.all(rows == rows[0])
        assert np.linalg.norm(rows[0]) == pytest.approx(2.5)


def test_blobs_deterministic():
    a = synth_blobs(3, 10, 4, 1.0, 0.5, seed=2)
    b = synth_blobs(3, 10, 4, 1.0, 0.5, seed=2)
    assert np.array_equal(a.inputs, b.inputs) and np.array_equal(a.labels, b.labels)


def test_blobs_more_classes_than_dims():
    ds = synth_blobs(12, 3, 5, 2.0, 0.0, seed=0)
    norms = np.linalg.norm(ds.inputs, axis=1)
    assert np.allclose(norms, 2.0)


def test_blobs_separable_trains_to_high_accuracy():
    from diversifed.client import ClientHyper, ClientState, local_update
    from diversifed.neural import Batch, MlpSpec, evaluate_accuracy, init_params

    train = synth_blobs(4, 100, 8, 8.0, 0.5, seed=0)
    test = synth_blobs(4, 50, 8, 8.0, 0.5, seed=1)
    spec = MlpSpec((8, 16, 4))
    state = ClientState(0, init_params(spec, 0), Batch(train.inputs, train.labels),
                        Batch(test.inputs, test.labels))
    state = local_update(state, None, ClientHyper(epochs=60, batch_size=50, lr=1e-2), spec)
    assert evaluate_accuracy(state.params, spec, state.test) >= 0.99


# ---------------------------------------------------------------- helpers

def test_largest_remainder():
    assert largest_remainder([1, 1, 1], 10).tolist() == [4, 3, 3]
    assert largest_remainder([0.5, 0.25, 0.25], 3).tolist() == [1, 1, 1]
    assert largest_remainder([0.6, 0.3, 0.1], 4).tolist() == [3, 1, 0]
    assert largest_remainder([0, 0], 5).tolist() == [0, 0]


@given(st.lists(st.floats(0, 10), min_size=1, max_size=12), st.integers(0, 500))
def test_largest_remainder_properties(w, total):
    counts = largest_remainder(w, total)
    if sum(w) > 0:
        assert counts.sum() == total
        quota = np.array(w) / sum(w) * total
        assert np.all(np.abs(counts - quota) < 1)


def test_group_sizes():
    assert group_sizes(20, 3) == [6, 6, 8]
    assert group_sizes(9, 3) == [3, 3, 3]


# ---------------------------------------------------------------- pathological

def check_budgets(ds, spec, n_train, n_test, test_ds=None):
    for c in spec.clients:
        assert len(c.train_indices) == n_train
        assert len(c.test_indices) == n_test
        assert len(set(c.train_indices)) == n_train
        assert len(set(c.test_indices)) == n_test
        if spec.shared_pool:
            assert not set(c.train_indices) & set(c.test_indices)
        tr = class_hist(ds, c.train_indices)
        te = class_hist(test_ds if test_ds is not None else ds, c.test_indices)
        expected = tr / n_train * n_test
        assert np.all(np.abs(te - expected) <= 1)


def test_pathological_five_clients_disjoint_cover():
    ds = labels_only(10, 200)
    spec = partition_pathological(ds, 5, 2, 100, 40, seed=0)
    sets = [set(np.unique(ds.labels[c.train_indices])) for c in spec.clients]
    assert all(len(s) == 2 for s in sets)
    assert set().union(*sets) == set(range(10))
    assert sum(len(s) for s in sets) == 10


def test_pathological_forty_clients_each_class_eight_times():
    ds = labels_only(10, 2000)
    spec = partition_pathological(ds, 40, 2, 300, 100, seed=1)
    appearances = np.zeros(10, dtype=int)
    for c in spec.clients:
        classes = np.flatnonzero(class_hist(ds, c.train_indices))
        assert classes.size == 2
        appearances[classes] += 1
        counts = class_hist(ds, c.train_indices)[classes]
        assert counts.max() - counts.min() <= 1
    assert appearances.tolist() == [8] * 10
    check_budgets(ds, spec, 300, 100)
    used = [i for c in spec.clients for i in c.train_indices + c.test_indices]
    assert len(used) == len(set(used))


def test_pathological_iid_limit():
    ds = labels_only(5, 100)
    spec = partition_pathological(ds, 3, 5, 50, 25, seed=2)
    for c in spec.clients:
        assert class_hist(ds, c.train_indices).tolist() == [10] * 5


def test_pathological_starving_class_named():
    ds = labels_only(4, 10)
    with pytest.raises(ValueError, match="class"):
        partition_pathological(ds, 4, 2, 100, 10, seed=0)


def test_pathological_separate_test_split():
    train, test = labels_only(10, 300), labels_only(10, 100)
    spec = partition_pathological(train, 10, 2, 60, 20, seed=3, test_ds=test)
    assert not spec.shared_pool
    check_budgets(train, spec, 60, 20, test_ds=test)


# ---------------------------------------------------------------- dirichlet

def test_dirichlet_huge_alpha_uniform():
    ds = labels_only(10, 3000)
    spec = partition_dirichlet(ds, 40, 1e6, 300, 100, seed=0)
    for c in spec.clients:
        share = class_hist(ds, c.train_indices) / 300
        assert np.max(np.abs(share - 0.1)) <= 0.02
    check_budgets(ds, spec, 300, 100)


def test_dirichlet_tiny_alpha_sparse():
    ds = labels_only(100, 60)
    medians = []
    for seed in range(3):
        spec = partition_dirichlet(ds, 20, 0.01, 50, 10, seed=seed)
        medians.append(np.median([np.count_nonzero(class_hist(ds, c.train_indices)) for c in spec.clients]))
    assert max(medians) <= 5


def test_dirichlet_counts_follow_q():
    ds = labels_only(10, 500)
    spec = partition_dirichlet(ds, 10, 0.5, 200, 50, seed=4)
    for c, q in zip(spec.clients, spec.metadata["proportions"]):
        assert np.all(np.abs(class_hist(ds, c.train_indices) - np.array(q) * 200) <= 1)


def test_dirichlet_deterministic_and_validated():
    ds = labels_only(10, 100)
    a = partition_dirichlet(ds, 8, 0.3, 40, 10, seed=9)
    b = partition_dirichlet(ds, 8, 0.3, 40, 10, seed=9)
    assert a.to_json() == b.to_json()
    with pytest.raises(ValueError):
        partition_dirichlet(ds, 8, 0.0, 40, 10, seed=9)


def test_dirichlet_reuse_fallback_recorded():
    ds = labels_only(4, 30)
    spec = partition_dirichlet(ds, 10, 1e6, 40, 8, seed=0)
    assert spec.metadata["reused_samples"] > 0
    check_budgets(ds, spec, 40, 8)


# ---------------------------------------------------------------- practical

def test_practical_groups_and_dominant_share():
    ds = labels_only(10, 2000)
    spec = partition_practical(ds, 20, 3, 3, 0.8, 300, 100, seed=0)
    assert spec.metadata["group_sizes"] == [6, 6, 8]
    for c, g in zip(spec.clients, spec.metadata["groups"]):
        hist = class_hist(ds, c.train_indices)
        dom = hist[3 * g:3 * g + 3].sum()
        assert abs(dom / 300 - 0.8) <= 1 / 300
    check_budgets(ds, spec, 300, 100)


def test_practical_fraction_one_only_group_classes():
    ds = labels_only(10, 500)
    spec = partition_practical(ds, 6, dominant_fraction=1.0, train_per_client=60, test_per_client=20, seed=1)
    for c, g in zip(spec.clients, spec.metadata["groups"]):
        classes = set(np.flatnonzero(class_hist(ds, c.train_indices)))
        assert classes <= set(range(3 * g, 3 * g + 3))


def test_practical_bad_arithmetic():
    with pytest.raises(ValueError):
        partition_practical(labels_only(8, 10), 6, 3, 3)


# ---------------------------------------------------------------- materialize / json

def test_materialize_sorted_budgeted_disjoint():
    ds = labels_only(10, 100)
    spec = partition_dirichlet(ds, 5, 1.0, 30, 10, seed=0)
    for cid in range(5):
        train, test = materialize(ds, spec, cid)
        assert len(train) == 30 and len(test) == 10
        split = spec.client(cid)
        assert split.train_indices == sorted(split.train_indices)
        assert not set(split.train_indices) & set(split.test_indices)
        te = label_histogram(test.labels, 10)
        assert np.all(np.abs(te - label_histogram(train.labels, 10) / 3) <= 1)


def test_materialize_out_of_range():
    ds = labels_only(2, 5)
    spec = PartitionSpec("pathological", 0, [])
    spec.clients.append(type("S", (), {"id": 0, "train_indices": [99], "test_indices": []})())
    with pytest.raises(IndexError):
        materialize(ds, spec, 0)


def test_partition_json_roundtrip(tmp_path):
    ds = labels_only(10, 100)
    spec = partition_pathological(ds, 5, 2, 20, 10, seed=3)
    spec.dump(tmp_path / "p.json")
    import json
    obj = json.loads((tmp_path / "p.json").read_text())
    assert set(obj) >= {"scheme", "seed", "clients"}
    assert set(obj["clients"][0]) == {"id", "train_indices", "test_indices"}
    assert PartitionSpec.from_json(obj).to_json() == spec.to_json()


@settings(max_examples=25, deadline=None)
@given(st.integers(2, 12), st.integers(1, 4), st.integers(0, 10_000))
def test_pathological_properties(n_clients, c, seed):
    ds = labels_only(6, 400)
    c = min(c, 6)
    spec = partition_pathological(ds, n_clients, c, 12, 6, seed=seed)
    for split in spec.clients:
        hist = class_hist(ds, split.train_indices)
        nz = hist[hist > 0]
        assert nz.size == c and nz.max() - nz.min() <= 1
    assert spec.to_json() == partition_pathological(ds, n_clients, c, 12, 6, seed=seed).to_json()
