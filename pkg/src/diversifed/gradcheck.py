"""Self-checks: finite-difference gradient oracles and the anchor identities.

Used by the ``check-grad`` CLI subcommand and the acceptance tests.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import distance
from .distance import ServerHyper
from .neural import Batch, MlpSpec, cross_entropy_loss_and_grad, init_params
from .params import ModelPool, unflatten


@dataclass
class CheckResult:
    name: str
    passed: bool
    worst: float
    tolerance: float
    cases: int
    detail: str = ""

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return (f"[{status}] {self.name}: worst={self.worst:.3e} tol={self.tolerance:.0e} "
                f"cases={self.cases}{' ' + self.detail if self.detail else ''}")


def central_difference(f, x: np.ndarray, h: float = 1e-4) -> np.ndarray:
    x = np.array(x, dtype=np.float64, copy=True)
    out = np.empty_like(x)
    for k in range(x.size):
        orig = x[k]
        x[k] = orig + h
        up = f(x)
        x[k] = orig - h
        down = f(x)
        x[k] = orig
        out[k] = (up - down) / (2 * h)
    return out


def relative_error(a: np.ndarray, b: np.ndarray) -> float:
    scale = max(np.linalg.norm(a), np.linalg.norm(b), 1e-12)
    return float(np.linalg.norm(a - b) / scale)


def random_pool(rng: np.random.Generator, n: int, dim: int) -> ModelPool:
    return ModelPool(tuple(range(n)), rng.standard_normal((n, dim)))


def random_pool_case(rng: np.random.Generator):
    n = int(rng.integers(3, 11))
    dim = int(rng.integers(5, 101))
    hyper = ServerHyper(tau=float(rng.uniform(0.5, 1.1)), alpha_t=float(rng.choice([0.5, 1.0])))
    pool = random_pool(rng, n, dim)
    return pool, int(rng.integers(n)), hyper


def check_combination_identity(cases: int = 1000, seed: int = 0) -> list[CheckResult]:
    """Weights sum to one, anchor equals sum of beta*w, sign rule equals softmax rule."""
    rng = np.random.default_rng(seed)
    worst_sum = worst_coord = 0.0
    sign_mismatch = 0
    compared = 0
    for _ in range(cases):
        pool, center, hyper = random_pool_case(rng)
        weights = distance.combination_weights(pool, center, hyper)
        worst_sum = max(worst_sum, abs(weights.total - 1.0))
        z = distance.server_step(pool, center, hyper)
        worst_coord = max(worst_coord, float(np.max(np.abs(z - distance.apply_weights(pool, weights)))))
        by_beta = distance.sign_rule_check(pool, center, hyper)
        by_softmax = distance.softmax_rule(pool, center, hyper)
        for cid, label in by_beta.items():
            if label == distance.NEUTRAL:
                continue
            compared += 1
            sign_mismatch += label != by_softmax[cid]
    return [
        CheckResult("combination weights sum to 1", worst_sum <= 1e-9, worst_sum, 1e-9, cases),
        CheckResult("anchor equals weighted combination", worst_coord <= 1e-9, worst_coord, 1e-9, cases),
        CheckResult("sign rule agrees with softmax comparison", sign_mismatch == 0, float(sign_mismatch), 0,
                    cases, f"pairs={compared}"),
    ]


def check_distance_grad(cases: int = 100, seed: int = 1, h: float = 1e-4) -> CheckResult:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(cases):
        pool, center, hyper = random_pool_case(rng)
        analytic = distance.model_distance_grad(pool, center, hyper)
        row = pool.index(center)

        def loss(w):
            m = pool.matrix.copy()
            m[row] = w
            return distance.model_distance_loss(ModelPool(pool.ids, m), center, hyper)

        worst = max(worst, relative_error(analytic, central_difference(loss, pool[center], h)))
    return CheckResult("distance-loss gradient vs central differences", worst < 1e-5, worst, 1e-5, cases)


def _random_net_case(rng: np.random.Generator, h: float):
    """Small random net and batch with every ReLU pre-activation away from its kink."""
    while True:
        sizes = (int(rng.integers(2, 7)), int(rng.integers(2, 7)), int(rng.integers(2, 6)))
        if rng.random() < 0.3:
            sizes = (sizes[0], int(rng.integers(2, 6)), *sizes[1:])
        spec = MlpSpec(sizes)
        params = init_params(spec, int(rng.integers(2**31)))
        params += 0.1 * rng.standard_normal(params.size)
        n = int(rng.integers(1, 9))
        batch = Batch(rng.standard_normal((n, sizes[0])), rng.integers(0, sizes[-1], size=n))
        x = batch.inputs
        margin = np.inf
        layers = unflatten(params, spec.shapes)
        for w, b in layers[:-1]:
            pre = x @ w + b
            margin = min(margin, float(np.min(np.abs(pre))))
            x = np.maximum(pre, 0.0)
        # a kink within a perturbation step makes the central difference meaningless
        if margin > 100 * h:
            return spec, params, batch


def check_cross_entropy_grad(cases: int = 100, seed: int = 2, h: float = 1e-4) -> CheckResult:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(cases):
        spec, params, batch = _random_net_case(rng, h)
        _, analytic = cross_entropy_loss_and_grad(params, spec, batch)
        numeric = central_difference(lambda p: cross_entropy_loss_and_grad(p, spec, batch)[0], params, h)
        worst = max(worst, relative_error(analytic, numeric))
    return CheckResult("cross-entropy gradient vs central differences", worst < 1e-5, worst, 1e-5, cases)


def run_all(pools: int = 1000, grad_cases: int = 100, seed: int = 0) -> list[CheckResult]:
    return [*check_combination_identity(pools, seed),
            check_distance_grad(grad_cases, seed + 1),
            check_cross_entropy_grad(grad_cases, seed + 2)]
