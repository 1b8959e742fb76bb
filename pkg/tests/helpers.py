"""Shared test utilities: independent oracles and tiny builders."""

from __future__ import annotations

import numpy as np

from catebench.nn import MlpParams, mlp_forward


def fd_param_grads(params: MlpParams, x: np.ndarray, coeffs: np.ndarray, h: float = 1e-4):
    """Central-difference gradients of L = sum(coeffs * forward(x)) per entry.

    Brute force: perturbs every weight/bias entry twice and re-runs the
    forward pass. Independent of the backward implementation.
    """

    def loss(p):
        return float(np.sum(coeffs * mlp_forward(p, x)))

    grads_w = []
    grads_b = []
    for k in range(len(params.weights)):
        gw = np.zeros_like(params.weights[k])
        for idx in np.ndindex(*params.weights[k].shape):
            p_hi = params.copy()
            p_lo = params.copy()
            p_hi.weights[k][idx] += h
            p_lo.weights[k][idx] -= h
            gw[idx] = (loss(p_hi) - loss(p_lo)) / (2 * h)
        grads_w.append(gw)
        gb = np.zeros_like(params.biases[k])
        for idx in np.ndindex(*params.biases[k].shape):
            p_hi = params.copy()
            p_lo = params.copy()
            p_hi.biases[k][idx] += h
            p_lo.biases[k][idx] -= h
            gb[idx] = (loss(p_hi) - loss(p_lo)) / (2 * h)
        grads_b.append(gb)
    return grads_w, grads_b


def fd_input_grads(params: MlpParams, x: np.ndarray, coeffs: np.ndarray, h: float = 1e-4):
    """Central-difference gradients of the same scalar loss w.r.t. inputs."""
    x = np.atleast_2d(x)
    g = np.zeros_like(x)
    for idx in np.ndindex(*x.shape):
        x_hi = x.copy()
        x_lo = x.copy()
        x_hi[idx] += h
        x_lo[idx] -= h
        g[idx] = (
            np.sum(coeffs * mlp_forward(params, x_hi))
            - np.sum(coeffs * mlp_forward(params, x_lo))
        ) / (2 * h)
    return g


def fd_scalar_grad(f, x: np.ndarray, h: float = 1e-4) -> np.ndarray:
    """Central differences of a scalar function taking a batch matrix."""
    x = np.asarray(x, dtype=float)
    g = np.zeros_like(x)
    for i in range(x.size):
        hi = x.copy()
        lo = x.copy()
        hi.flat[i] += h
        lo.flat[i] -= h
        g.flat[i] = (float(f(hi.reshape(1, -1))[0]) - float(f(lo.reshape(1, -1))[0])) / (2 * h)
    return g


def assert_close_rel(actual: np.ndarray, expected: np.ndarray, rel: float, floor: float = 1e-7):
    actual = np.asarray(actual, dtype=float)
    expected = np.asarray(expected, dtype=float)
    tol = rel * np.maximum(np.abs(actual), np.abs(expected)) + floor
    bad = np.abs(actual - expected) > tol
    assert not bad.any(), (
        f"{bad.sum()} of {bad.size} entries differ beyond rel={rel}: "
        f"max abs diff {np.abs(actual - expected).max()}"
    )


def kink_margin(params: MlpParams, x: np.ndarray) -> float:
    """Smallest |pre-activation| over all hidden units for a batch.

    Central differences are only a valid derivative oracle when no ReLU
    kink lies inside the probed interval; callers should resample inputs
    until this margin comfortably exceeds the probe step.
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    a = x
    margin = np.inf
    for k, (w, b) in enumerate(zip(params.weights, params.biases)):
        z = a @ w + b
        if k < len(params.weights) - 1:
            margin = min(margin, float(np.abs(z).min()))
            a = np.maximum(z, 0.0)
        else:
            a = z
    return margin


def sample_smooth_batch(params: MlpParams, rng: np.random.Generator, n_rows: int,
                        margin: float = 5e-3, tries: int = 200) -> np.ndarray:
    """Random input batch whose forward pass stays clear of ReLU kinks."""
    d_in = params.input_dim
    for _ in range(tries):
        x = rng.normal(size=(n_rows, d_in))
        if kink_margin(params, x) > margin:
            return x
    raise AssertionError("could not find a kink-free batch")


def random_mlp(rng: np.random.Generator, max_hidden_layers: int = 2, max_units: int = 10,
               output_activation: str = "identity"):
    """A small random network plus a compatible random input batch."""
    from catebench.nn import mlp_init

    d_in = int(rng.integers(1, 6))
    n_hidden = int(rng.integers(0, max_hidden_layers + 1))
    sizes = [d_in] + [int(rng.integers(2, max_units + 1)) for _ in range(n_hidden)] + [1]
    net = mlp_init(sizes, output_activation, rng)
    x = rng.normal(size=(int(rng.integers(1, 5)), d_in))
    return net, x
