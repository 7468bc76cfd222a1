"""Flattened parameter vectors and the distance geometry over them.

A model is a list of ``(weight, bias)`` layers.  Its flat form is one float64
vector laid out layer by layer, weights before biases, each weight matrix in
row-major order.  Everything downstream (distances, anchors, Adam) works on
the flat vector.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

ParamVector = np.ndarray  # 1-D float64

Layer = tuple[np.ndarray, np.ndarray]


def flatten(layers: Sequence[Layer]) -> ParamVector:
    parts = []
    for weight, bias in layers:
        parts.append(np.asarray(weight, dtype=np.float64).ravel(order="C"))
        parts.append(np.asarray(bias, dtype=np.float64).ravel())
    if not parts:
        return np.zeros(0, dtype=np.float64)
    return np.concatenate(parts)


def layer_shapes(layer_sizes: Sequence[int]) -> list[tuple[tuple[int, int], tuple[int]]]:
    """Weight/bias shapes of a dense stack, weights stored as (fan_in, fan_out)."""
    return [((n_in, n_out), (n_out,)) for n_in, n_out in zip(layer_sizes[:-1], layer_sizes[1:])]


def param_count(layer_sizes: Sequence[int]) -> int:
    return sum(w[0] * w[1] + b[0] for w, b in layer_shapes(layer_sizes))


def unflatten(vec: ParamVector, shapes) -> list[Layer]:
    """Inverse of :func:`flatten`.  Returned arrays are views into ``vec``."""
    vec = np.asarray(vec)
    expected = sum(int(np.prod(ws)) + int(np.prod(bs)) for ws, bs in shapes)
    if vec.ndim != 1 or vec.size != expected:
        raise ValueError(f"vector of size {vec.size} does not match layer shapes (need {expected})")
    layers = []
    pos = 0
    for wshape, bshape in shapes:
        nw = int(np.prod(wshape))
        nb = int(np.prod(bshape))
        weight = vec[pos:pos + nw].reshape(wshape)
        pos += nw
        bias = vec[pos:pos + nb].reshape(bshape)
        pos += nb
        layers.append((weight, bias))
    return layers


def euclidean_distance(a: ParamVector, b: ParamVector, normalize_by_sqrt_dim: bool = False) -> float:
    # np.sum reduces contiguous float64 arrays pairwise, which keeps 50k-dim
    # distances within ~1e-15 relative of the exact value.
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch: {a.shape} vs {b.shape}")
    diff = a - b
    dist = float(np.sqrt(np.sum(diff * diff)))
    if normalize_by_sqrt_dim and a.size:
        dist /= np.sqrt(a.size)
    return dist


@dataclass(frozen=True)
class ModelPool:
    """The models the server holds this round, one row per client."""

    ids: tuple[int, ...]
    matrix: np.ndarray  # (n, dim)

    def __post_init__(self):
        if self.matrix.ndim != 2 or self.matrix.shape[0] != len(self.ids):
            raise ValueError("pool matrix must have one row per client id")
        if len(set(self.ids)) != len(self.ids):
            raise ValueError("client ids in a pool must be unique")

    @classmethod
    def from_models(cls, models) -> "ModelPool":
        """Build from a mapping or an iterable of ``(client_id, vector)``."""
        items = list(models.items()) if hasattr(models, "items") else list(models)
        if not items:
            return cls((), np.zeros((0, 0)))
        dims = {np.asarray(v).size for _, v in items}
        if len(dims) != 1:
            raise ValueError(f"pool members have differing dims: {sorted(dims)}")
        ids = tuple(int(cid) for cid, _ in items)
        matrix = np.stack([np.asarray(v, dtype=np.float64) for _, v in items])
        return cls(ids, matrix)

    @property
    def n(self) -> int:
        return len(self.ids)

    @property
    def dim(self) -> int:
        return self.matrix.shape[1]

    def index(self, client_id: int) -> int:
        try:
            return self.ids.index(client_id)
        except ValueError:
            raise KeyError(f"client {client_id} is not in the pool") from None

    def __getitem__(self, client_id: int) -> ParamVector:
        return self.matrix[self.index(client_id)]


@dataclass(frozen=True)
class DistanceRow:
    """Scaled distances d_j = ||w_center - w_j|| / tau to every other pool member."""

    center: int
    ids: tuple[int, ...]
    distances: np.ndarray

    def as_dict(self) -> dict[int, float]:
        return dict(zip(self.ids, self.distances.tolist()))


def distance_row(pool: ModelPool, center: int, tau: float = 1.0,
                 normalize_by_sqrt_dim: bool = False) -> DistanceRow:
    if pool.n < 2:
        raise ValueError("distance loss undefined for fewer than two clients")
    if tau <= 0:
        raise ValueError(f"tau must be positive, got {tau}")
    c = pool.index(center)
    others = [k for k in range(pool.n) if k != c]
    w = pool.matrix[c]
    dists = np.array([euclidean_distance(w, pool.matrix[k], normalize_by_sqrt_dim) for k in others])
    if tau != 1.0:
        dists = dists / tau
    return DistanceRow(center, tuple(pool.ids[k] for k in others), dists)


def pairwise_distances(pool: ModelPool) -> np.ndarray:
    """Full symmetric (n, n) matrix of unscaled distances."""
    n = pool.n
    out = np.zeros((n, n))
    for i in range(n):
        for j in range(i + 1, n):
            out[i, j] = out[j, i] = euclidean_distance(pool.matrix[i], pool.matrix[j])
    return out
