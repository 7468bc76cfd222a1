"""Dense ReLU network on flat parameter vectors, softmax cross-entropy, Adam.

Weights are stored (fan_in, fan_out) so a layer is ``x @ W + b``.  Hidden
layers use ReLU, the output layer is linear (logits).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .params import ParamVector, layer_shapes, param_count, unflatten


@dataclass(frozen=True)
class MlpSpec:
    layer_sizes: tuple[int, ...] = (784, 64, 10)

    def __post_init__(self):
        object.__setattr__(self, "layer_sizes", tuple(int(s) for s in self.layer_sizes))
        if len(self.layer_sizes) < 2 or min(self.layer_sizes) <= 0:
            raise ValueError(f"invalid layer sizes {self.layer_sizes}")

    @property
    def shapes(self):
        return layer_shapes(self.layer_sizes)

    @property
    def dim(self) -> int:
        return param_count(self.layer_sizes)

    @property
    def num_classes(self) -> int:
        return self.layer_sizes[-1]

    @property
    def input_dim(self) -> int:
        return self.layer_sizes[0]


@dataclass
class Batch:
    inputs: np.ndarray  # (n, input_dim)
    labels: np.ndarray  # (n,) int

    def __post_init__(self):
        self.inputs = np.asarray(self.inputs, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.inputs.ndim != 2 or self.inputs.shape[0] != self.labels.shape[0]:
            raise ValueError("inputs must be (n, features) with one label per row")

    def __len__(self) -> int:
        return self.labels.shape[0]

    def take(self, idx) -> "Batch":
        return Batch(self.inputs[idx], self.labels[idx])


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    step: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros(cls, dim: int, lr: float = 1e-3, **kw) -> "AdamState":
        return cls(np.zeros(dim), np.zeros(dim), 0, lr, **kw)


def init_params(spec: MlpSpec, seed) -> ParamVector:
    """Glorot-uniform weights, zero biases."""
    rng = np.random.default_rng(seed)
    vec = np.zeros(spec.dim)
    for weight, bias in unflatten(vec, spec.shapes):
        fan_in, fan_out = weight.shape
        s = np.sqrt(6.0 / (fan_in + fan_out))
        weight[...] = rng.uniform(-s, s, size=weight.shape)
    return vec


def _check_input(spec: MlpSpec, params: ParamVector, inputs: np.ndarray):
    if params.size != spec.dim:
        raise ValueError(f"params of size {params.size} do not match spec (dim {spec.dim})")
    if inputs.ndim != 2 or inputs.shape[1] != spec.input_dim:
        raise ValueError(f"inputs of shape {inputs.shape} do not match input dim {spec.input_dim}")


def forward(params: ParamVector, spec: MlpSpec, batch) -> np.ndarray:
    x = batch.inputs if isinstance(batch, Batch) else np.asarray(batch, dtype=np.float64)
    _check_input(spec, params, x)
    layers = unflatten(params, spec.shapes)
    for k, (w, b) in enumerate(layers):
        x = x @ w + b
        if k < len(layers) - 1:
            x = np.maximum(x, 0.0)
    return x


def cross_entropy_loss_and_grad(params: ParamVector, spec: MlpSpec, batch: Batch) -> tuple[float, ParamVector]:
    n = len(batch)
    if n == 0:
        raise ValueError("cross-entropy needs a nonempty batch")
    _check_input(spec, params, batch.inputs)
    layers = unflatten(params, spec.shapes)

    acts = [batch.inputs]
    x = batch.inputs
    for k, (w, b) in enumerate(layers):
        x = x @ w + b
        if k < len(layers) - 1:
            x = np.maximum(x, 0.0)
        acts.append(x)

    logits = acts[-1]
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_z = np.log(np.sum(np.exp(shifted), axis=1))
    log_probs = shifted - log_z[:, None]
    rows = np.arange(n)
    loss = -float(np.mean(log_probs[rows, batch.labels]))

    grad = np.zeros_like(params)
    grad_layers = unflatten(grad, spec.shapes)
    delta = np.exp(log_probs)
    delta[rows, batch.labels] -= 1.0
    delta /= n
    for k in range(len(layers) - 1, -1, -1):
        gw, gb = grad_layers[k]
        gw[...] = acts[k].T @ delta
        gb[...] = delta.sum(axis=0)
        if k > 0:
            delta = (delta @ layers[k][0].T) * (acts[k] > 0)
    return loss, grad


def adam_step(state: AdamState, params: ParamVector, grad: ParamVector) -> tuple[ParamVector, AdamState]:
    """One bias-corrected Adam update.  ``state`` is updated in place and returned."""
    if params.shape != grad.shape or state.m.shape != params.shape:
        raise ValueError("params, grad and Adam moments must share one shape")
    state.step += 1
    state.m = state.beta1 * state.m + (1.0 - state.beta1) * grad
    state.v = state.beta2 * state.v + (1.0 - state.beta2) * (grad * grad)
    m_hat = state.m / (1.0 - state.beta1 ** state.step)
    v_hat = state.v / (1.0 - state.beta2 ** state.step)
    return params - state.lr * m_hat / (np.sqrt(v_hat) + state.eps), state


def predict(params: ParamVector, spec: MlpSpec, inputs) -> np.ndarray:
    # argmax returns the first maximum, so ties go to the lowest class index
    return np.argmax(forward(params, spec, inputs), axis=1)


def evaluate_accuracy(params: ParamVector, spec: MlpSpec, test: Batch) -> float:
    if len(test) == 0:
        raise ValueError("cannot evaluate accuracy on an empty test set")
    return float(np.mean(predict(params, spec, test) == test.labels))
