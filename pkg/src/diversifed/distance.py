"""Model distance loss, its gradient, and the server's anchor step.

For client i with scaled distances d_j = ||w_i - w_j|| / tau to the other
pool members a(i):

    L_d(w_i) = 1/|a(i)| * sum_j log softmax(d)_j

Gradient descent on L_d moves w_i towards models whose softmax weight is below
the uniform 1/|a(i)| (near ones) and away from models above it (far ones).
One such step is the anchor z_i the server hands back to the client, and it is
exactly a linear combination of the pool's models.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .params import DistanceRow, ModelPool, ParamVector, distance_row

ATTRACT = "attract"
REPEL = "repel"
NEUTRAL = "neutral"


@dataclass(frozen=True)
class ServerHyper:
    tau: float = 1.0
    alpha_t: float = 1.0
    epsilon_dist: float = 1e-8
    normalize_by_sqrt_dim: bool = False

    def __post_init__(self):
        for name in ("tau", "alpha_t", "epsilon_dist"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")


@dataclass(frozen=True)
class CombinationWeights:
    center: int
    beta_self: float
    ids: tuple[int, ...]
    betas: np.ndarray

    @property
    def total(self) -> float:
        return self.beta_self + float(np.sum(self.betas))

    def as_dict(self) -> dict[int, float]:
        out = {self.center: self.beta_self}
        out.update(zip(self.ids, self.betas.tolist()))
        return out


def softmax_over_distances(row: DistanceRow) -> np.ndarray:
    """Softmax of the scaled distances, aligned with ``row.ids``."""
    d = np.asarray(row.distances, dtype=np.float64)
    if d.size == 0:
        raise ValueError("empty distance row")
    e = np.exp(d - d.max())
    return e / e.sum()


def log_softmax_over_distances(row: DistanceRow) -> np.ndarray:
    d = np.asarray(row.distances, dtype=np.float64)
    shifted = d - d.max()
    return shifted - np.log(np.sum(np.exp(shifted)))


def _row(pool: ModelPool, center: int, hyper: ServerHyper) -> DistanceRow:
    return distance_row(pool, center, hyper.tau, hyper.normalize_by_sqrt_dim)


def model_distance_loss(pool: ModelPool, center: int, hyper: ServerHyper = ServerHyper()) -> float:
    row = _row(pool, center, hyper)
    if row.distances.size == 1:
        return 0.0
    return float(np.mean(log_softmax_over_distances(row)))


def _xi_and_scale(pool: ModelPool, center: int, hyper: ServerHyper):
    """xi_j = 1/|a(i)| - softmax(d)_j and the per-pair factor 1/(tau^2 d_j).

    Pairs closer than ``epsilon_dist`` get factor 0; the formulas divide by d_j
    and the symmetric limit at coincident models is zero.
    """
    row = _row(pool, center, hyper)
    m = row.distances.size
    xi = 1.0 / m - softmax_over_distances(row)
    d = row.distances
    live = d >= hyper.epsilon_dist
    scale = np.zeros_like(d)
    # d_j is a scaled distance; with normalization the raw difference is also
    # divided by sqrt(dim), which the chain rule folds into the same factor.
    denom = hyper.tau ** 2 * d[live]
    if hyper.normalize_by_sqrt_dim:
        denom = denom * pool.dim
    scale[live] = 1.0 / denom
    others = np.array([pool.index(j) for j in row.ids], dtype=int)
    return row, xi, scale, live, others


def model_distance_grad(pool: ModelPool, center: int, hyper: ServerHyper = ServerHyper()) -> ParamVector:
    """Gradient of L_d with respect to w_center (other models held fixed)."""
    _, xi, scale, _, others = _xi_and_scale(pool, center, hyper)
    w = pool[center]
    coef = xi * scale
    diffs = w[None, :] - pool.matrix[others]
    return coef @ diffs


def server_step(pool: ModelPool, center: int, hyper: ServerHyper = ServerHyper()) -> ParamVector:
    """Anchor z_i = w_i - alpha_t * grad L_d(w_i)."""
    return pool[center] - hyper.alpha_t * model_distance_grad(pool, center, hyper)


def combination_weights(pool: ModelPool, center: int, hyper: ServerHyper = ServerHyper()) -> CombinationWeights:
    row, xi, scale, _, _ = _xi_and_scale(pool, center, hyper)
    betas = hyper.alpha_t * xi * scale
    return CombinationWeights(center, 1.0 - float(np.sum(betas)), row.ids, betas)


def apply_weights(pool: ModelPool, weights: CombinationWeights) -> ParamVector:
    """sum of beta * w over the pool; equals ``server_step`` for the same center."""
    out = weights.beta_self * pool[weights.center]
    for cid, beta in zip(weights.ids, weights.betas):
        out = out + beta * pool[cid]
    return out


def sign_rule_check(pool: ModelPool, center: int, hyper: ServerHyper = ServerHyper(),
                    neutral_tol: float = 1e-12) -> dict[int, str]:
    """Classify each other client as attracting, repelling or neutral for ``center``."""
    weights = combination_weights(pool, center, hyper)
    labels = {}
    for cid, beta in zip(weights.ids, weights.betas):
        if abs(beta) < neutral_tol:
            labels[cid] = NEUTRAL
        elif beta > 0:
            labels[cid] = ATTRACT
        else:
            labels[cid] = REPEL
    return labels


def softmax_rule(pool: ModelPool, center: int, hyper: ServerHyper = ServerHyper()) -> dict[int, str]:
    """The same classification read straight off the softmax comparison.

    1/|a(i)| > softmax(d_j) means w_i approaches w_j, < means it departs.
    Guarded (coincident) pairs are reported neutral.
    """
    row, _, _, live, _ = _xi_and_scale(pool, center, hyper)
    probs = softmax_over_distances(row)
    uniform = 1.0 / row.distances.size
    labels = {}
    for cid, p, ok in zip(row.ids, probs, live):
        if not ok or p == uniform:
            labels[cid] = NEUTRAL
        elif uniform > p:
            labels[cid] = ATTRACT
        else:
            labels[cid] = REPEL
    return labels


def anchors(pool: ModelPool, hyper: ServerHyper = ServerHyper()) -> dict[int, ParamVector]:
    """Server step for every member of the pool."""
    return {cid: server_step(pool, cid, hyper) for cid in pool.ids}
