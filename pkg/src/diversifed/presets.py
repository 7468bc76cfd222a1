"""Desk-scale configurations used by the acceptance suite and scripts/.

Blobs with separation 2 and unit noise put Separate at roughly 85-90% on the
two-class client tasks, which leaves room to move in either direction.
"""
from __future__ import annotations

from .config import RunConfig

DESK_DATA = {
    "dataset.kind": "blobs",
    "dataset.separation": 2.0,
    "dataset.noise": 1.0,
    "dataset.samples_per_class": 1000,
    "dataset.test_samples_per_class": 200,
    "partition.scheme": "pathological",
    "partition.classes_per_client": 2,
    "partition.train_per_client": 100,
    "partition.test_per_client": 100,
}


def toy(toy_lambda: float = 0.0, seed: int = 0, **overrides) -> RunConfig:
    """Five clients with disjoint class pairs, 50 rounds of 5 epochs."""
    cfg = RunConfig(method="toy_pullpush", n_clients=5, rounds=50, local_epochs=5,
                    toy_lambda=toy_lambda, seed=seed)
    return cfg.replace(**{**DESK_DATA, **overrides}).validate()


def baseline(method: str = "diversifed", seed: int = 0, **overrides) -> RunConfig:
    """Ten clients, pathological c=2, 50 rounds of 5 epochs."""
    cfg = RunConfig(method=method, n_clients=10, rounds=50, local_epochs=5, seed=seed)
    return cfg.replace(**{**DESK_DATA, **overrides}).validate()


def fmnist(method: str, data_dir: str, seed: int = 0, **overrides) -> RunConfig:
    """784-64-10 MLP on Fashion-MNIST IDX files, ten clients, 100 rounds."""
    cfg = RunConfig(method=method, n_clients=10, rounds=100, seed=seed)
    paths = {
        "dataset.kind": "idx",
        "dataset.train_images": f"{data_dir}/train-images-idx3-ubyte",
        "dataset.train_labels": f"{data_dir}/train-labels-idx1-ubyte",
        "dataset.test_images": f"{data_dir}/t10k-images-idx3-ubyte",
        "dataset.test_labels": f"{data_dir}/t10k-labels-idx1-ubyte",
        "partition.scheme": "pathological",
        "partition.classes_per_client": 2,
        "partition.train_per_client": 300,
        "partition.test_per_client": 100,
    }
    return cfg.replace(**{**paths, **overrides}).validate()


PRESETS = {"toy": toy, "baseline": baseline}
