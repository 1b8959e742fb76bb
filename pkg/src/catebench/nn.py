"""Dense-network numeric core.

Implements exactly what the estimators need and nothing more: forward
passes of fully-connected ReLU networks, exact reverse-mode gradients with
respect to parameters and inputs, Adam, an early-stopped minibatch loop,
and the linear-kernel MMD^2 balancing penalty. Everything is float64 and
deterministic given the generators passed in; no function touches global
random state.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import EmptyGroupError, InvalidConfigError, NumericError, ShapeError

IDENTITY = "identity"
SIGMOID = "sigmoid"

SQUARED_ERROR = "squared_error"
BINARY_CROSS_ENTROPY = "binary_cross_entropy"

_P_CLIP = 1e-12  # probability clamp inside the cross-entropy loss


@dataclass
class MlpParams:
    """Parameters of a fully-connected network.

    ``weights[k]`` has shape (fan_in, fan_out) and ``biases[k]`` shape
    (fan_out,). Hidden layers apply max(0, .); the last layer applies
    ``output_activation`` (identity or logistic sigmoid).
    """

    weights: list[np.ndarray]
    biases: list[np.ndarray]
    output_activation: str = IDENTITY

    @property
    def layer_sizes(self) -> list[int]:
        return [self.weights[0].shape[0]] + [w.shape[1] for w in self.weights]

    @property
    def input_dim(self) -> int:
        return self.weights[0].shape[0]

    def arrays(self) -> list[np.ndarray]:
        """Flat [W0, b0, W1, b1, ...] view used by the optimizer."""
        out: list[np.ndarray] = []
        for w, b in zip(self.weights, self.biases):
            out.append(w)
            out.append(b)
        return out

    @staticmethod
    def from_arrays(arrays: Sequence[np.ndarray], output_activation: str) -> "MlpParams":
        weights = [np.asarray(a) for a in arrays[0::2]]
        biases = [np.asarray(a) for a in arrays[1::2]]
        return MlpParams(weights, biases, output_activation)

    def copy(self) -> "MlpParams":
        return MlpParams(
            [w.copy() for w in self.weights],
            [b.copy() for b in self.biases],
            self.output_activation,
        )


def mlp_init(
    layer_sizes: Sequence[int],
    output_activation: str = IDENTITY,
    rng: np.random.Generator | None = None,
) -> MlpParams:
    """Glorot-uniform weights, zero biases; deterministic given ``rng``."""
    if rng is None:
        raise InvalidConfigError("mlp_init requires a seeded generator")
    if len(layer_sizes) < 2 or any(int(s) <= 0 for s in layer_sizes):
        raise InvalidConfigError(f"layer_sizes must have >= 2 positive entries, got {layer_sizes}")
    if output_activation not in (IDENTITY, SIGMOID):
        raise InvalidConfigError(f"unknown output activation {output_activation!r}")
    weights = []
    biases = []
    for fan_in, fan_out in zip(layer_sizes[:-1], layer_sizes[1:]):
        s = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-s, s, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return MlpParams(weights, biases, output_activation)


def _apply_output(z: np.ndarray, activation: str) -> np.ndarray:
    if activation == SIGMOID:
        return sigmoid(z)
    return z


def sigmoid(z: np.ndarray) -> np.ndarray:
    # Two-branch form avoids overflow in exp for large |z|.
    out = np.empty_like(z, dtype=float)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def mlp_forward(params: MlpParams, x: np.ndarray) -> np.ndarray:
    """Forward pass over a batch; returns an (n, out_dim) array."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    if x.shape[1] != params.input_dim:
        raise ShapeError(f"input has {x.shape[1]} columns, network expects {params.input_dim}")
    a = x
    last = len(params.weights) - 1
    for k, (w, b) in enumerate(zip(params.weights, params.biases)):
        z = a @ w + b
        a = _apply_output(z, params.output_activation) if k == last else np.maximum(z, 0.0)
    return a


def mlp_backward(
    params: MlpParams, batch_x: np.ndarray, loss_grad_at_output: np.ndarray
) -> tuple[MlpParams, np.ndarray]:
    """Exact gradients of a scalar loss w.r.t. every parameter and input.

    ``loss_grad_at_output`` is dLoss/d(activated output), shape (n, out_dim).
    The ReLU subgradient at 0 is taken as 0. Returns (param_grads shaped
    like ``params``, input_grads of shape (n, input_dim)).
    """
    x = np.atleast_2d(np.asarray(batch_x, dtype=float))
    g_out = np.atleast_2d(np.asarray(loss_grad_at_output, dtype=float))
    if x.shape[1] != params.input_dim:
        raise ShapeError(f"input has {x.shape[1]} columns, network expects {params.input_dim}")
    if g_out.shape != (x.shape[0], params.weights[-1].shape[1]):
        raise ShapeError(
            f"loss gradient shape {g_out.shape} does not match output shape "
            f"({x.shape[0]}, {params.weights[-1].shape[1]})"
        )

    # Forward, caching pre-activations.
    acts = [x]
    zs = []
    a = x
    last = len(params.weights) - 1
    for k, (w, b) in enumerate(zip(params.weights, params.biases)):
        z = a @ w + b
        zs.append(z)
        a = _apply_output(z, params.output_activation) if k == last else np.maximum(z, 0.0)
        acts.append(a)

    # Backward.
    if params.output_activation == SIGMOID:
        s = acts[-1]
        delta = g_out * s * (1.0 - s)
    else:
        delta = g_out
    grad_w = [np.empty(0)] * len(params.weights)
    grad_b = [np.empty(0)] * len(params.biases)
    for k in range(last, -1, -1):
        grad_w[k] = acts[k].T @ delta
        grad_b[k] = delta.sum(axis=0)
        delta = delta @ params.weights[k].T
        if k > 0:
            delta = delta * (zs[k - 1] > 0)
    return MlpParams(grad_w, grad_b, params.output_activation), delta


def mlp_input_gradient(params: MlpParams, x: np.ndarray) -> np.ndarray:
    """Per-row gradient of the scalar network output w.r.t. each input row."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    if params.weights[-1].shape[1] != 1:
        raise ShapeError("input gradient is defined for scalar-output networks")
    ones = np.ones((x.shape[0], 1))
    _, input_grads = mlp_backward(params, x, ones)
    return input_grads


# --- Adam ---------------------------------------------------------------


@dataclass
class AdamState:
    """Moment accumulators shaped like the parameter list they optimize."""

    m: list[np.ndarray]
    v: list[np.ndarray]
    step: int
    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def adam_init(params: MlpParams | Sequence[np.ndarray], lr: float, **kwargs) -> AdamState:
    arrays = params.arrays() if isinstance(params, MlpParams) else list(params)
    zeros = [np.zeros_like(a) for a in arrays]
    return AdamState([z.copy() for z in zeros], zeros, 0, lr, **kwargs)


def adam_step(
    state: AdamState,
    params: MlpParams | Sequence[np.ndarray],
    grads: MlpParams | Sequence[np.ndarray],
):
    """One bias-corrected Adam update; returns (new state, new params)."""
    wrap = isinstance(params, MlpParams)
    arrays = params.arrays() if wrap else list(params)
    garrays = grads.arrays() if isinstance(grads, MlpParams) else list(grads)
    if len(arrays) != len(garrays) or any(a.shape != g.shape for a, g in zip(arrays, garrays)):
        raise ShapeError("gradient shapes do not match parameter shapes")
    for g in garrays:
        if not np.all(np.isfinite(g)):
            raise NumericError("non-finite gradient entry")
    t = state.step + 1
    c1 = 1.0 - state.beta1**t
    c2 = 1.0 - state.beta2**t
    new_m = []
    new_v = []
    new_arrays = []
    for a, g, m, v in zip(arrays, garrays, state.m, state.v):
        m = state.beta1 * m + (1.0 - state.beta1) * g
        v = state.beta2 * v + (1.0 - state.beta2) * g * g
        new_m.append(m)
        new_v.append(v)
        new_arrays.append(a - state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps))
    new_state = AdamState(new_m, new_v, t, state.lr, state.beta1, state.beta2, state.eps)
    if wrap:
        return new_state, MlpParams.from_arrays(new_arrays, params.output_activation)
    return new_state, new_arrays


# --- Losses --------------------------------------------------------------


def loss_value(loss: str, pred: np.ndarray, target: np.ndarray, weight=None) -> float:
    pred = np.asarray(pred, dtype=float).reshape(-1)
    target = np.asarray(target, dtype=float).reshape(-1)
    if pred.shape != target.shape:
        raise ShapeError("prediction/target length mismatch")
    w = np.ones_like(pred) if weight is None else np.asarray(weight, dtype=float).reshape(-1)
    if loss == SQUARED_ERROR:
        per = (pred - target) ** 2
    elif loss == BINARY_CROSS_ENTROPY:
        p = np.clip(pred, _P_CLIP, 1.0 - _P_CLIP)
        per = -(target * np.log(p) + (1.0 - target) * np.log(1.0 - p))
    else:
        raise InvalidConfigError(f"unknown loss {loss!r}")
    return float(np.sum(w * per) / np.sum(w))


def loss_output_grad(loss: str, pred: np.ndarray, target: np.ndarray, weight=None) -> np.ndarray:
    """d(mean loss)/d(prediction), shaped (n, 1) for the backward pass."""
    pred = np.asarray(pred, dtype=float).reshape(-1)
    target = np.asarray(target, dtype=float).reshape(-1)
    w = np.ones_like(pred) if weight is None else np.asarray(weight, dtype=float).reshape(-1)
    wsum = np.sum(w)
    if loss == SQUARED_ERROR:
        g = 2.0 * w * (pred - target) / wsum
    elif loss == BINARY_CROSS_ENTROPY:
        p = np.clip(pred, _P_CLIP, 1.0 - _P_CLIP)
        g = w * (p - target) / (p * (1.0 - p)) / wsum
    else:
        raise InvalidConfigError(f"unknown loss {loss!r}")
    return g.reshape(-1, 1)


# --- Training ------------------------------------------------------------


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-4
    batch_size: int = 1024
    val_fraction: float = 0.30
    max_epochs: int = 1000
    patience: int = 10

    def __post_init__(self):
        if not 0.0 < self.val_fraction < 1.0:
            raise InvalidConfigError("val_fraction must lie strictly between 0 and 1")
        if self.batch_size < 1:
            raise InvalidConfigError("batch_size must be >= 1")
        if self.patience < 1:
            raise InvalidConfigError("patience must be >= 1")
        if self.max_epochs < 1:
            raise InvalidConfigError("max_epochs must be >= 1")


GradFn = Callable[[list[np.ndarray], np.ndarray], list[np.ndarray]]
ValLossFn = Callable[[list[np.ndarray]], float]


def minibatch_fit(
    arrays: list[np.ndarray],
    grad_fn: GradFn,
    val_loss_fn: ValLossFn,
    n_train: int,
    config: TrainConfig,
    rng: np.random.Generator,
) -> list[np.ndarray]:
    """Generic Adam loop with patience-based early stopping.

    ``grad_fn(arrays, batch_idx)`` returns gradients for a minibatch given
    by indices into [0, n_train); ``val_loss_fn`` scores a parameter
    snapshot on held-out data (penalties excluded). Returns the snapshot
    with the best validation loss seen after any epoch.
    """
    state = adam_init(arrays, lr=config.learning_rate)
    best = arrays
    best_loss = np.inf
    since_improved = 0
    for _ in range(config.max_epochs):
        order = rng.permutation(n_train)
        for start in range(0, n_train, config.batch_size):
            idx = order[start : start + config.batch_size]
            state, arrays = adam_step(state, arrays, grad_fn(arrays, idx))
        val = val_loss_fn(arrays)
        if val < best_loss:
            best_loss = val
            best = arrays
            since_improved = 0
        else:
            since_improved += 1
            if since_improved >= config.patience:
                break
    return best


PenaltyFn = Callable[[MlpParams, np.ndarray], tuple[float, MlpParams]]


def train_early_stop(
    net: MlpParams,
    x: np.ndarray,
    target: np.ndarray,
    loss: str = SQUARED_ERROR,
    sample_weight: np.ndarray | None = None,
    extra_penalty: PenaltyFn | None = None,
    config: TrainConfig = TrainConfig(),
    rng: np.random.Generator | None = None,
) -> MlpParams:
    """Fit one network with minibatch Adam and validation early stopping.

    A seeded random split holds out ``config.val_fraction`` of the samples;
    the returned parameters are the snapshot with the best validation loss.
    ``extra_penalty(params, batch_x) -> (value, grads)`` is added to the
    training objective only, never to the validation loss.
    """
    if rng is None:
        raise InvalidConfigError("train_early_stop requires a seeded generator")
    x = np.atleast_2d(np.asarray(x, dtype=float))
    target = np.asarray(target, dtype=float).reshape(-1)
    if not np.all(np.isfinite(target)):
        raise NumericError("targets must be finite")
    n = x.shape[0]
    n_val = int(round(n * config.val_fraction))
    if n_val < 1 or n - n_val < 1:
        raise InvalidConfigError(f"degenerate split: {n} samples, {n_val} validation")
    perm = rng.permutation(n)
    val_idx, train_idx = perm[:n_val], perm[n_val:]
    x_tr, y_tr = x[train_idx], target[train_idx]
    x_val, y_val = x[val_idx], target[val_idx]
    w_tr = None if sample_weight is None else np.asarray(sample_weight, dtype=float)[train_idx]
    w_val = None if sample_weight is None else np.asarray(sample_weight, dtype=float)[val_idx]
    act = net.output_activation

    def grad_fn(arrays, idx):
        params = MlpParams.from_arrays(arrays, act)
        xb, yb = x_tr[idx], y_tr[idx]
        wb = None if w_tr is None else w_tr[idx]
        pred = mlp_forward(params, xb)
        g_out = loss_output_grad(loss, pred, yb, wb)
        grads, _ = mlp_backward(params, xb, g_out)
        garrays = grads.arrays()
        if extra_penalty is not None:
            _, pgrads = extra_penalty(params, xb)
            garrays = [g + p for g, p in zip(garrays, pgrads.arrays())]
        return garrays

    def val_loss_fn(arrays):
        params = MlpParams.from_arrays(arrays, act)
        return loss_value(loss, mlp_forward(params, x_val), y_val, w_val)

    fitted = minibatch_fit(net.copy().arrays(), grad_fn, val_loss_fn, len(train_idx), config, rng)
    return MlpParams.from_arrays(fitted, act)


# --- MMD^2 balancing penalty ---------------------------------------------


def mmd2_linear(rep0: np.ndarray, rep1: np.ndarray) -> float:
    """Squared distance between group means (linear-kernel MMD^2)."""
    value, _, _ = mmd2_linear_with_grad(rep0, rep1)
    return value


def mmd2_linear_with_grad(
    rep0: np.ndarray, rep1: np.ndarray
) -> tuple[float, np.ndarray, np.ndarray]:
    """MMD^2 plus its gradients w.r.t. every row of both representations."""
    rep0 = np.atleast_2d(np.asarray(rep0, dtype=float))
    rep1 = np.atleast_2d(np.asarray(rep1, dtype=float))
    if rep0.shape[0] == 0 or rep1.shape[0] == 0:
        raise EmptyGroupError("mmd2_linear needs both groups nonempty")
    if rep0.shape[1] != rep1.shape[1]:
        raise ShapeError("representation widths differ")
    diff = rep0.mean(axis=0) - rep1.mean(axis=0)
    value = float(diff @ diff)
    g0 = np.tile(2.0 * diff / rep0.shape[0], (rep0.shape[0], 1))
    g1 = np.tile(-2.0 * diff / rep1.shape[0], (rep1.shape[0], 1))
    return value, g0, g1
