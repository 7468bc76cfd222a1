"""Labeled data sources and non-IID client partitioners.

Every partitioner returns a :class:`PartitionSpec` of per-client train/test
index lists.  Test indices point into ``test_ds`` when one is given (IDX
test split, held-out synthetic draws) and into the training pool otherwise.
Each client's test label histogram is the train histogram rescaled to the
test budget.
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .neural import Batch

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


@dataclass
class LabeledDataset:
    inputs: np.ndarray  # (n, features)
    labels: np.ndarray  # (n,)
    num_classes: int

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.inputs.shape[0] != self.labels.shape[0]:
            raise ValueError("inputs and labels disagree on sample count")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise ValueError(f"labels outside [0, {self.num_classes})")

    def __len__(self) -> int:
        return self.labels.shape[0]

    @property
    def feature_dim(self) -> int:
        return self.inputs.shape[1]

    def class_indices(self) -> list[np.ndarray]:
        return [np.flatnonzero(self.labels == c) for c in range(self.num_classes)]


@dataclass
class ClientSplit:
    id: int
    train_indices: list[int]
    test_indices: list[int]


@dataclass
class PartitionSpec:
    scheme: str
    seed: int
    clients: list[ClientSplit]
    params: dict = field(default_factory=dict)
    shared_pool: bool = True  # test indices index the training pool
    metadata: dict = field(default_factory=dict)

    def client(self, client_id: int) -> ClientSplit:
        for c in self.clients:
            if c.id == client_id:
                return c
        raise KeyError(f"client {client_id} not in partition")

    def to_json(self) -> dict:
        return {
            "scheme": self.scheme,
            "seed": self.seed,
            "params": self.params,
            "shared_pool": self.shared_pool,
            "metadata": self.metadata,
            "clients": [
                {"id": c.id, "train_indices": c.train_indices, "test_indices": c.test_indices}
                for c in self.clients
            ],
        }

    @classmethod
    def from_json(cls, obj: dict) -> "PartitionSpec":
        clients = [ClientSplit(int(c["id"]), list(c["train_indices"]), list(c["test_indices"]))
                   for c in obj["clients"]]
        return cls(obj["scheme"], int(obj["seed"]), clients, obj.get("params", {}),
                   obj.get("shared_pool", True), obj.get("metadata", {}))

    def dump(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json()))


# ---------------------------------------------------------------- IDX files

def _read_idx(path, expected_magic: int, what: str) -> np.ndarray:
    raw = Path(path).read_bytes()
    if len(raw) < 8:
        raise ValueError(f"{path}: truncated IDX header")
    (magic,) = struct.unpack(">I", raw[:4])
    if magic != expected_magic:
        raise ValueError(f"{path}: bad magic 0x{magic:08x} for {what} file "
                         f"(expected 0x{expected_magic:08x})")
    ndim = magic & 0xFF
    header = 4 + 4 * ndim
    if len(raw) < header:
        raise ValueError(f"{path}: truncated IDX header")
    dims = struct.unpack(">" + "I" * ndim, raw[4:header])
    size = int(np.prod(dims))
    if len(raw) - header < size:
        raise ValueError(f"{path}: truncated file, header promises {size} bytes of data "
                         f"but only {len(raw) - header} present")
    return np.frombuffer(raw, dtype=np.uint8, count=size, offset=header).reshape(dims)


def load_idx(images_path, labels_path, num_classes: Optional[int] = None) -> LabeledDataset:
    images = _read_idx(images_path, IDX_IMAGES_MAGIC, "images")
    labels = _read_idx(labels_path, IDX_LABELS_MAGIC, "labels")
    if images.shape[0] != labels.shape[0]:
        raise ValueError(f"sample count mismatch: {images.shape[0]} images vs {labels.shape[0]} labels")
    inputs = images.reshape(images.shape[0], -1).astype(np.float64) / 255.0
    labels = labels.astype(np.int64)
    if num_classes is None:
        num_classes = int(labels.max()) + 1 if labels.size else 0
    return LabeledDataset(inputs, labels, num_classes)


def write_idx(path, array: np.ndarray) -> None:
    """Write a uint8 array as an IDX file (magic 0x0000080<ndim>)."""
    array = np.ascontiguousarray(array, dtype=np.uint8)
    header = struct.pack(">I", 0x0800 | array.ndim) + struct.pack(">" + "I" * array.ndim, *array.shape)
    Path(path).write_bytes(header + array.tobytes())


# ---------------------------------------------------------------- synthetic

def class_centers(num_classes: int, feature_dim: int, separation: float) -> np.ndarray:
    """Fixed unit directions scaled by ``separation``; independent of any run seed."""
    if num_classes <= feature_dim:
        dirs = np.eye(feature_dim)[:num_classes]
    else:
        dirs = np.random.default_rng(0).standard_normal((num_classes, feature_dim))
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    return separation * dirs


def synth_blobs(num_classes: int, samples_per_class: int, feature_dim: int,
                class_separation: float, noise_sigma: float, seed) -> LabeledDataset:
    if min(num_classes, samples_per_class, feature_dim) <= 0:
        raise ValueError("blob counts must be positive")
    rng = np.random.default_rng(seed)
    centers = class_centers(num_classes, feature_dim, class_separation)
    labels = np.repeat(np.arange(num_classes), samples_per_class)
    inputs = centers[labels] + noise_sigma * rng.standard_normal((labels.size, feature_dim))
    return LabeledDataset(inputs, labels, num_classes)


# ---------------------------------------------------------------- partitioners

def largest_remainder(weights, total: int) -> np.ndarray:
    """Integer counts summing to ``total``, proportional to ``weights``.

    Floors first, then hands the leftover units to the largest fractional
    parts; ties go to the lower index.
    """
    w = np.asarray(weights, dtype=np.float64)
    if total == 0 or w.sum() <= 0:
        return np.zeros(w.size, dtype=np.int64)
    quota = w / w.sum() * total
    counts = np.floor(quota).astype(np.int64)
    short = total - int(counts.sum())
    frac = quota - counts
    order = sorted(range(w.size), key=lambda k: (-frac[k], k))
    for k in order[:short]:
        counts[k] += 1
    return counts


class _Sampler:
    """Per-class pools that hand out indices without replacement while they last.

    When a class pool runs dry the sampler falls back to reusing indices of
    that class already given to other clients (never duplicating within the
    requesting client) and counts the reuse.
    """

    def __init__(self, ds: LabeledDataset, rng: np.random.Generator, allow_reuse: bool):
        self.by_class = ds.class_indices()
        self.pools = [list(rng.permutation(idx)) for idx in self.by_class]
        self.rng = rng
        self.allow_reuse = allow_reuse
        self.reused = 0

    def draw(self, cls: int, count: int, exclude: set) -> list[int]:
        pool = self.pools[cls]
        out = []
        while pool and len(out) < count:
            idx = int(pool.pop())
            if idx not in exclude:
                out.append(idx)
        missing = count - len(out)
        if missing:
            if not self.allow_reuse:
                raise ValueError(f"insufficient samples for class {cls}: "
                                 f"needed {count}, pool exhausted")
            taken = exclude | set(out)
            candidates = np.array([i for i in self.by_class[cls] if i not in taken], dtype=np.int64)
            if candidates.size < missing:
                raise ValueError(f"insufficient samples for class {cls}: client needs {count} "
                                 f"distinct samples, class has {self.by_class[cls].size}")
            out.extend(int(i) for i in self.rng.choice(candidates, size=missing, replace=False))
            self.reused += missing
        return out


def _assemble(ds, test_ds, class_counts_per_client, test_per_client, train_per_client, rng,
              allow_reuse, test_counts_per_client=None):
    """Draw concrete indices for per-client class counts."""
    shared = test_ds is None
    train_sampler = _Sampler(ds, rng, allow_reuse)
    test_sampler = train_sampler if shared else _Sampler(test_ds, rng, allow_reuse)
    clients = []
    for cid, counts in enumerate(class_counts_per_client):
        if test_counts_per_client is not None:
            test_counts = test_counts_per_client[cid]
        else:
            test_counts = largest_remainder(counts, test_per_client)
        train_idx: list[int] = []
        for c in np.flatnonzero(counts):
            train_idx.extend(train_sampler.draw(int(c), int(counts[c]), set()))
        held = set(train_idx) if shared else set()
        test_idx: list[int] = []
        for c in np.flatnonzero(test_counts):
            test_idx.extend(test_sampler.draw(int(c), int(test_counts[c]), held))
        clients.append(ClientSplit(cid, sorted(train_idx), sorted(test_idx)))
    reused = train_sampler.reused + (0 if shared else test_sampler.reused)
    return clients, shared, reused


def partition_pathological(ds: LabeledDataset, n_clients: int, classes_per_client: int,
                           train_per_client: int, test_per_client: int, seed,
                           test_ds: Optional[LabeledDataset] = None) -> PartitionSpec:
    """Each client holds exactly ``classes_per_client`` classes in equal shares.

    Client k is given classes k*c, k*c+1, ... (mod C); the class sets are then
    shuffled across clients.  Global sample indices are never shared between
    clients.
    """
    C = ds.num_classes
    c = classes_per_client
    if not 1 <= c <= C:
        raise ValueError(f"classes_per_client must be in [1, {C}], got {c}")
    rng = np.random.default_rng(seed)
    class_sets = [[(k * c + m) % C for m in range(c)] for k in range(n_clients)]
    class_sets = [class_sets[k] for k in rng.permutation(n_clients)]

    # equal split of both budgets; which classes get the +1 rotates per client
    train_counts, test_counts = [], []
    for k, classes in enumerate(class_sets):
        tr = np.zeros(C, dtype=np.int64)
        te = np.zeros(C, dtype=np.int64)
        rot = classes[k % c:] + classes[:k % c]
        for pos, cls in enumerate(rot):
            tr[cls] = train_per_client // c + (1 if pos < train_per_client % c else 0)
            te[cls] = test_per_client // c + (1 if pos < test_per_client % c else 0)
        train_counts.append(tr)
        test_counts.append(te)

    clients, shared, _ = _assemble(ds, test_ds, train_counts, test_per_client, train_per_client,
                                   rng, allow_reuse=False, test_counts_per_client=test_counts)
    return PartitionSpec("pathological", int(seed), clients,
                         {"classes_per_client": c, "train_per_client": train_per_client,
                          "test_per_client": test_per_client},
                         shared, {"class_sets": [sorted(s) for s in class_sets]})


def partition_dirichlet(ds: LabeledDataset, n_clients: int, alpha: float,
                        train_per_client: int, test_per_client: int, seed,
                        test_ds: Optional[LabeledDataset] = None) -> PartitionSpec:
    """Per-client class proportions q ~ Dir(alpha * p) with p the uniform prior."""
    if not alpha > 0:
        raise ValueError(f"Dirichlet alpha must be positive, got {alpha}")
    C = ds.num_classes
    rng = np.random.default_rng(seed)
    concentration = np.full(C, alpha / C)
    qs, train_counts = [], []
    for _ in range(n_clients):
        q = rng.dirichlet(concentration)
        # tiny concentrations can underflow every component to zero
        if not np.isfinite(q).all() or q.sum() <= 0:
            q = np.zeros(C)
            q[rng.integers(C)] = 1.0
        qs.append(q)
        train_counts.append(largest_remainder(q, train_per_client))
    test_counts = [largest_remainder(q, test_per_client) for q in qs]
    clients, shared, reused = _assemble(ds, test_ds, train_counts, test_per_client,
                                        train_per_client, rng, allow_reuse=True,
                                        test_counts_per_client=test_counts)
    return PartitionSpec("dirichlet", int(seed), clients,
                         {"alpha": alpha, "train_per_client": train_per_client,
                          "test_per_client": test_per_client},
                         shared, {"proportions": [q.tolist() for q in qs], "reused_samples": reused})


def group_sizes(n_clients: int, n_groups: int) -> list[int]:
    """Even split; the remainder goes to the last group (20 clients -> 6, 6, 8)."""
    base = n_clients // n_groups
    sizes = [base] * n_groups
    sizes[-1] += n_clients - base * n_groups
    return sizes


def partition_practical(ds: LabeledDataset, n_clients: int, n_groups: int = 3,
                        dominant_classes_per_group: int = 3, dominant_fraction: float = 0.8,
                        train_per_client: int = 300, test_per_client: int = 100, seed=0,
                        test_ds: Optional[LabeledDataset] = None) -> PartitionSpec:
    """Grouped clients sharing a dominant class block.

    Group g dominates classes [g*k, (g+1)*k).  ``dominant_fraction`` of a
    client's budget is drawn uniformly from the dominant block, the rest
    uniformly from all other classes.
    """
    C = ds.num_classes
    k = dominant_classes_per_group
    if n_groups < 1 or k < 1 or n_groups * k > C or n_groups > n_clients:
        raise ValueError(f"cannot place {n_groups} groups of {k} dominant classes "
                         f"among {C} classes and {n_clients} clients")
    if not 0.0 <= dominant_fraction <= 1.0:
        raise ValueError(f"dominant_fraction must be in [0, 1], got {dominant_fraction}")
    if dominant_fraction < 1.0 and k == C:
        raise ValueError("no non-dominant classes left for the minority share")
    rng = np.random.default_rng(seed)
    sizes = group_sizes(n_clients, n_groups)
    groups = np.repeat(np.arange(n_groups), sizes)

    train_counts, test_counts = [], []
    for g in groups:
        dom = np.arange(g * k, (g + 1) * k)
        rest = np.setdiff1d(np.arange(C), dom)
        n_dom = int(round(dominant_fraction * train_per_client))
        t_dom = int(round(dominant_fraction * test_per_client))
        tr = np.zeros(C, dtype=np.int64)
        tr[dom] = rng.multinomial(n_dom, np.full(k, 1.0 / k))
        if rest.size:
            tr[rest] = rng.multinomial(train_per_client - n_dom, np.full(rest.size, 1.0 / rest.size))
        te = np.zeros(C, dtype=np.int64)
        te[dom] = largest_remainder(tr[dom], t_dom)
        if rest.size:
            te[rest] = largest_remainder(tr[rest], test_per_client - t_dom)
        train_counts.append(tr)
        test_counts.append(te)
    clients, shared, reused = _assemble(ds, test_ds, train_counts, test_per_client,
                                        train_per_client, rng, allow_reuse=True,
                                        test_counts_per_client=test_counts)
    return PartitionSpec("practical", int(seed), clients,
                         {"groups": n_groups, "dominant_classes_per_group": k,
                          "dominant_fraction": dominant_fraction,
                          "train_per_client": train_per_client, "test_per_client": test_per_client},
                         shared, {"group_sizes": sizes, "groups": groups.tolist(),
                                  "reused_samples": reused})


def materialize(ds: LabeledDataset, spec: PartitionSpec, client_id: int,
                test_ds: Optional[LabeledDataset] = None) -> tuple[Batch, Batch]:
    split = spec.client(client_id)
    test_source = ds if spec.shared_pool else test_ds
    if test_source is None:
        raise ValueError("partition draws test samples from a separate split; pass test_ds")

    def gather(source, idx):
        idx = np.asarray(sorted(idx), dtype=np.int64)
        if idx.size and (idx.min() < 0 or idx.max() >= len(source)):
            raise IndexError(f"client {client_id}: index out of range for dataset of size {len(source)}")
        return Batch(source.inputs[idx], source.labels[idx])

    return gather(ds, split.train_indices), gather(test_source, split.test_indices)


def label_histogram(labels: Sequence[int], num_classes: int) -> np.ndarray:
    return np.bincount(np.asarray(labels, dtype=np.int64), minlength=num_classes)
