"""One client's local update: E epochs of Adam on L_e plus a proximal pull to the anchor."""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np

from .neural import AdamState, Batch, MlpSpec, adam_step, cross_entropy_loss_and_grad
from .params import ParamVector

LossFn = Callable[[ParamVector, Batch], tuple[float, ParamVector]]
ExtraGrad = Callable[[ParamVector], ParamVector]


@dataclass(frozen=True)
class ClientHyper:
    lam: float = 2.0
    alpha_t: float = 1.0
    epochs: int = 10
    batch_size: int = 100
    lr: float = 1e-3

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError(f"lambda must be nonnegative, got {self.lam}")
        if not self.alpha_t > 0:
            raise ValueError(f"alpha_t must be positive, got {self.alpha_t}")
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be positive")
        if not self.lr > 0:
            raise ValueError(f"lr must be positive, got {self.lr}")


@dataclass
class ClientState:
    id: int
    params: ParamVector
    train: Batch
    test: Batch
    adam: Optional[AdamState] = None
    last_loss: float = float("nan")
    metrics: dict = field(default_factory=dict)


def proximal_penalty(params: ParamVector, anchor: ParamVector, lam: float, alpha_t: float) -> float:
    diff = params - anchor
    return lam / (2.0 * alpha_t) * float(diff @ diff)


def proximal_grad(params: ParamVector, anchor: ParamVector, lam: float, alpha_t: float) -> ParamVector:
    return (lam / alpha_t) * (params - anchor)


def epoch_rng(seed: int, client_id: int, round_idx: int, epoch: int) -> np.random.Generator:
    """Shuffle stream for one (client, round, epoch); independent of scheduling order."""
    return np.random.default_rng(np.random.SeedSequence([seed, client_id, round_idx, epoch]))


def local_update(state: ClientState, anchor: Optional[ParamVector], hyper: ClientHyper,
                 spec: MlpSpec, *, seed: int = 0, round_idx: int = 0,
                 loss_fn: Optional[LossFn] = None,
                 extra_grad: Optional[ExtraGrad] = None) -> ClientState:
    """Run ``hyper.epochs`` epochs of mini-batch Adam and return the updated state.

    With an anchor the objective is L_e(w) + lam/(2 alpha_t) ||w - anchor||^2;
    without one (round 0) it is L_e alone.  ``extra_grad`` adds an arbitrary
    extra gradient term at every step (used by the pull/push toy).  Adam
    moments start fresh each call.  The input state is not modified.
    """
    w = np.array(state.params, dtype=np.float64, copy=True)
    if anchor is not None:
        anchor = np.asarray(anchor, dtype=np.float64)
        if anchor.shape != w.shape:
            raise ValueError(f"anchor dim {anchor.size} does not match params dim {w.size}")
    use_prox = anchor is not None and hyper.lam != 0.0
    if loss_fn is None:
        def loss_fn(p, b):
            return cross_entropy_loss_and_grad(p, spec, b)

    adam = AdamState.zeros(w.size, lr=hyper.lr)
    n = len(state.train)
    last = float("nan")
    for epoch in range(hyper.epochs):
        order = epoch_rng(seed, state.id, round_idx, epoch).permutation(n)
        total = 0.0
        for start in range(0, n, hyper.batch_size):
            batch = state.train.take(order[start:start + hyper.batch_size])
            loss, grad = loss_fn(w, batch)
            if use_prox:
                grad = grad + proximal_grad(w, anchor, hyper.lam, hyper.alpha_t)
            if extra_grad is not None:
                grad = grad + extra_grad(w)
            w, adam = adam_step(adam, w, grad)
            total += loss * len(batch)
        last = total / n if n else float("nan")
    return replace(state, params=w, adam=adam, last_loss=last, metrics={"train_loss": last})
