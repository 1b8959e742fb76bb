"""Neural CATE estimation strategies.

Six ways to turn (X, W, Y) into an effect estimate: a single regression
with the assignment as an extra feature (S), two per-arm regressions (T),
a shared representation with per-arm heads and optional balancing (TARNet /
CFRNet), and two pseudo-outcome regressions (DR, X). Every estimator keeps
the same capacity budget -- each scalar function it learns sees 2 hidden
ReLU layers of 100 units -- and exposes exact input gradients for the
attribution methods.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .dgp import ObservedData
from .errors import EmptyGroupError, InvalidConfigError, ShapeError
from .nn import (
    IDENTITY,
    SIGMOID,
    SQUARED_ERROR,
    MlpParams,
    TrainConfig,
    minibatch_fit,
    mlp_backward,
    mlp_forward,
    mlp_init,
    mlp_input_gradient,
    mmd2_linear_with_grad,
    train_early_stop,
)

HIDDEN_UNITS = 100

STRATEGY_S = "s"
STRATEGY_T = "t"
STRATEGY_TARNET = "tarnet"
STRATEGY_CFRNET = "cfrnet"
STRATEGY_DR = "dr"
STRATEGY_X = "x"

DEFAULT_CLIP = 0.01


def _check_groups(w: np.ndarray) -> None:
    if not np.any(w == 1) or not np.any(w == 0):
        raise EmptyGroupError("both treatment groups must be nonempty")


def _fit_regression(
    x: np.ndarray,
    target: np.ndarray,
    config: TrainConfig,
    rng: np.random.Generator,
    output_activation: str = IDENTITY,
    loss: str = SQUARED_ERROR,
) -> MlpParams:
    r_init, r_train = rng.spawn(2)
    net = mlp_init([x.shape[1], HIDDEN_UNITS, HIDDEN_UNITS, 1], output_activation, r_init)
    return train_early_stop(net, x, target, loss, config=config, rng=r_train)


@dataclass
class NuisanceSet:
    """First-stage arm regressions and propensity model."""

    mu0: MlpParams
    mu1: MlpParams
    pi: MlpParams

    def mu0_at(self, x):
        return mlp_forward(self.mu0, x)[:, 0]

    def mu1_at(self, x):
        return mlp_forward(self.mu1, x)[:, 0]

    def pi_at(self, x):
        return mlp_forward(self.pi, x)[:, 0]


def fit_nuisances(train: ObservedData, config: TrainConfig, rng: np.random.Generator) -> NuisanceSet:
    """Fit mu0 on controls, mu1 on treated, propensity on everyone."""
    _check_groups(train.w)
    r0, r1, rp = rng.spawn(3)
    controls = train.w == 0
    treated = train.w == 1
    mu0 = _fit_regression(train.x[controls], train.y[controls], config, r0)
    mu1 = _fit_regression(train.x[treated], train.y[treated], config, r1)
    pi = _fit_regression(
        train.x, train.w.astype(float), config, rp, SIGMOID, "binary_cross_entropy"
    )
    return NuisanceSet(mu0, mu1, pi)


class CateEstimator:
    """Fitted effect model: deterministic predictions and exact gradients."""

    strategy: str = ""

    def predict_cate(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def gradient(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError


def predict_cate(est: CateEstimator, x: np.ndarray) -> np.ndarray:
    return est.predict_cate(np.atleast_2d(np.asarray(x, dtype=float)))


def cate_input_gradient(est: CateEstimator, x: np.ndarray) -> np.ndarray:
    """Gradient of the effect estimate at a single point."""
    x = np.asarray(x, dtype=float)
    if x.ndim != 1:
        raise ShapeError("cate_input_gradient expects a single covariate vector")
    return est.gradient(x[None, :])[0]


@dataclass
class SEstimator(CateEstimator):
    """One regression over (x, w); effect = prediction contrast in w."""

    net: MlpParams
    strategy = STRATEGY_S

    def _with_flag(self, x, flag):
        return np.hstack([x, np.full((x.shape[0], 1), float(flag))])

    def predict_cate(self, x):
        x = np.atleast_2d(x)
        return (
            mlp_forward(self.net, self._with_flag(x, 1))[:, 0]
            - mlp_forward(self.net, self._with_flag(x, 0))[:, 0]
        )

    def gradient(self, x):
        x = np.atleast_2d(x)
        g1 = mlp_input_gradient(self.net, self._with_flag(x, 1))
        g0 = mlp_input_gradient(self.net, self._with_flag(x, 0))
        return (g1 - g0)[:, :-1]


@dataclass
class TEstimator(CateEstimator):
    mu0: MlpParams
    mu1: MlpParams
    strategy = STRATEGY_T

    def predict_cate(self, x):
        x = np.atleast_2d(x)
        return mlp_forward(self.mu1, x)[:, 0] - mlp_forward(self.mu0, x)[:, 0]

    def gradient(self, x):
        x = np.atleast_2d(x)
        return mlp_input_gradient(self.mu1, x) - mlp_input_gradient(self.mu0, x)


@dataclass
class TarnetEstimator(CateEstimator):
    """Shared ReLU representation with per-arm heads; gamma > 0 balances it."""

    trunk_w: np.ndarray
    trunk_b: np.ndarray
    head0: MlpParams
    head1: MlpParams
    gamma: float = 0.0

    @property
    def strategy(self):
        return STRATEGY_CFRNET if self.gamma > 0 else STRATEGY_TARNET

    def _rep(self, x):
        return np.maximum(x @ self.trunk_w + self.trunk_b, 0.0)

    def predict_cate(self, x):
        rep = self._rep(np.atleast_2d(x))
        return mlp_forward(self.head1, rep)[:, 0] - mlp_forward(self.head0, rep)[:, 0]

    def gradient(self, x):
        x = np.atleast_2d(x)
        z = x @ self.trunk_w + self.trunk_b
        rep = np.maximum(z, 0.0)
        rep_grad = mlp_input_gradient(self.head1, rep) - mlp_input_gradient(self.head0, rep)
        return (rep_grad * (z > 0)) @ self.trunk_w.T


@dataclass
class DrEstimator(CateEstimator):
    """Second-stage regression on doubly-robust pseudo-outcomes."""

    effect_net: MlpParams
    clip: float = DEFAULT_CLIP
    nuisances: NuisanceSet | None = None
    strategy = STRATEGY_DR

    def predict_cate(self, x):
        return mlp_forward(self.effect_net, np.atleast_2d(x))[:, 0]

    def gradient(self, x):
        return mlp_input_gradient(self.effect_net, np.atleast_2d(x))


@dataclass
class XEstimator(CateEstimator):
    """Per-arm effect regressions blended by the estimated propensity."""

    tau0: MlpParams
    tau1: MlpParams
    pi: MlpParams
    clip: float = DEFAULT_CLIP
    strategy = STRATEGY_X

    def _parts(self, x):
        t0 = mlp_forward(self.tau0, x)[:, 0]
        t1 = mlp_forward(self.tau1, x)[:, 0]
        g = mlp_forward(self.pi, x)[:, 0]
        return t0, t1, g

    def predict_cate(self, x):
        t0, t1, g = self._parts(np.atleast_2d(x))
        return g * t1 + (1.0 - g) * t0

    def gradient(self, x):
        x = np.atleast_2d(x)
        t0, t1, g = self._parts(x)
        g0 = mlp_input_gradient(self.tau0, x)
        g1 = mlp_input_gradient(self.tau1, x)
        gg = mlp_input_gradient(self.pi, x)
        return (
            g[:, None] * g1
            + (1.0 - g)[:, None] * g0
            + (t1 - t0)[:, None] * gg
        )


# --- Fitting --------------------------------------------------------------


def fit_s_learner(train: ObservedData, config: TrainConfig, rng: np.random.Generator) -> SEstimator:
    _check_groups(train.w)
    xw = np.hstack([train.x, train.w[:, None].astype(float)])
    return SEstimator(_fit_regression(xw, train.y, config, rng))


def fit_t_learner(train: ObservedData, config: TrainConfig, rng: np.random.Generator) -> TEstimator:
    _check_groups(train.w)
    r0, r1 = rng.spawn(2)
    controls = train.w == 0
    mu0 = _fit_regression(train.x[controls], train.y[controls], config, r0)
    mu1 = _fit_regression(train.x[~controls], train.y[~controls], config, r1)
    return TEstimator(mu0, mu1)


def fit_tarnet(
    train: ObservedData,
    gamma: float,
    config: TrainConfig,
    rng: np.random.Generator,
) -> TarnetEstimator:
    """Joint fit of trunk and heads; factual loss plus gamma * MMD^2 per batch."""
    if gamma < 0:
        raise InvalidConfigError("gamma must be >= 0")
    _check_groups(train.w)
    r_init, r_split, r_train = rng.spawn(3)

    d = train.d
    s = np.sqrt(6.0 / (d + HIDDEN_UNITS))
    trunk_w = r_init.uniform(-s, s, size=(d, HIDDEN_UNITS))
    trunk_b = np.zeros(HIDDEN_UNITS)
    head0 = mlp_init([HIDDEN_UNITS, HIDDEN_UNITS, 1], IDENTITY, r_init)
    head1 = mlp_init([HIDDEN_UNITS, HIDDEN_UNITS, 1], IDENTITY, r_init)

    n = train.n
    n_val = int(round(n * config.val_fraction))
    if n_val < 1 or n - n_val < 1:
        raise InvalidConfigError(f"degenerate split: {n} samples, {n_val} validation")
    perm = r_split.permutation(n)
    val_idx, train_idx = perm[:n_val], perm[n_val:]
    x_tr, y_tr, w_tr = train.x[train_idx], train.y[train_idx], train.w[train_idx]
    x_val, y_val, w_val = train.x[val_idx], train.y[val_idx], train.w[val_idx]

    def unpack(arrays):
        tw, tb = arrays[0], arrays[1]
        h0 = MlpParams.from_arrays(arrays[2:6], IDENTITY)
        h1 = MlpParams.from_arrays(arrays[6:10], IDENTITY)
        return tw, tb, h0, h1

    def factual_loss(arrays, x, y, w):
        tw, tb, h0, h1 = unpack(arrays)
        rep = np.maximum(x @ tw + tb, 0.0)
        pred = np.empty(len(y))
        for arm, head in ((0, h0), (1, h1)):
            rows = w == arm
            if rows.any():
                pred[rows] = mlp_forward(head, rep[rows])[:, 0]
        return float(np.mean((pred - y) ** 2))

    def grad_fn(arrays, idx):
        tw, tb, h0, h1 = unpack(arrays)
        xb, yb, wb = x_tr[idx], y_tr[idx], w_tr[idx]
        z = xb @ tw + tb
        rep = np.maximum(z, 0.0)
        rep_grad = np.zeros_like(rep)
        head_grads = {}
        for arm, head in ((0, h0), (1, h1)):
            rows = wb == arm
            if rows.any():
                pred = mlp_forward(head, rep[rows])
                g_out = 2.0 * (pred - yb[rows, None]) / len(yb)
                hg, rg = mlp_backward(head, rep[rows], g_out)
                head_grads[arm] = hg.arrays()
                rep_grad[rows] = rg
            else:
                head_grads[arm] = [np.zeros_like(a) for a in head.arrays()]
        if gamma > 0:
            rows0, rows1 = wb == 0, wb == 1
            if rows0.any() and rows1.any():  # one-arm batches get no penalty
                _, m0, m1 = mmd2_linear_with_grad(rep[rows0], rep[rows1])
                rep_grad[rows0] += gamma * m0
                rep_grad[rows1] += gamma * m1
        delta = rep_grad * (z > 0)
        return [xb.T @ delta, delta.sum(axis=0)] + head_grads[0] + head_grads[1]

    arrays = [trunk_w, trunk_b] + head0.arrays() + head1.arrays()
    fitted = minibatch_fit(
        arrays,
        grad_fn,
        lambda a: factual_loss(a, x_val, y_val, w_val),
        len(train_idx),
        config,
        r_train,
    )
    tw, tb, h0, h1 = unpack(fitted)
    return TarnetEstimator(tw, tb, h0, h1, float(gamma))


def dr_pseudo_outcome(y, w, pi_hat, mu0_hat, mu1_hat, clip: float = DEFAULT_CLIP):
    """AIPW-style effect surrogate; unbiased when either model is right."""
    if not 0.0 < clip < 0.5:
        raise InvalidConfigError("clip must lie in (0, 0.5)")
    y = np.asarray(y, dtype=float)
    w = np.asarray(w, dtype=float)
    p = np.clip(np.asarray(pi_hat, dtype=float), clip, 1.0 - clip)
    mu0 = np.asarray(mu0_hat, dtype=float)
    mu1 = np.asarray(mu1_hat, dtype=float)
    value = (
        (w / p - (1.0 - w) / (1.0 - p)) * y
        + (1.0 - w / p) * mu1
        - (1.0 - (1.0 - w) / (1.0 - p)) * mu0
    )
    return float(value) if value.ndim == 0 else value


def fit_dr_learner(
    train: ObservedData,
    config: TrainConfig,
    rng: np.random.Generator,
    nuisances: NuisanceSet | None = None,
    clip: float = DEFAULT_CLIP,
) -> DrEstimator:
    """Stage 1: nuisances; stage 2: regress pseudo-outcomes on covariates."""
    _check_groups(train.w)
    r_nuis, r_stage2 = rng.spawn(2)
    if nuisances is None:
        nuisances = fit_nuisances(train, config, r_nuis)
    pseudo = dr_pseudo_outcome(
        train.y,
        train.w,
        nuisances.pi_at(train.x),
        nuisances.mu0_at(train.x),
        nuisances.mu1_at(train.x),
        clip,
    )
    effect_net = _fit_regression(train.x, pseudo, config, r_stage2)
    return DrEstimator(effect_net, clip, nuisances)


def fit_x_learner(
    train: ObservedData,
    config: TrainConfig,
    rng: np.random.Generator,
    nuisances: NuisanceSet | None = None,
    clip: float = DEFAULT_CLIP,
) -> XEstimator:
    """Arm-wise effect regressions on imputed contrasts, blended by pi_hat."""
    _check_groups(train.w)
    r_nuis, r_tau0, r_tau1 = rng.spawn(3)
    if nuisances is None:
        nuisances = fit_nuisances(train, config, r_nuis)
    treated = train.w == 1
    # Treated arm: observed outcome minus imputed control outcome.
    target1 = train.y[treated] - nuisances.mu0_at(train.x[treated])
    # Control arm: imputed treated outcome minus observed outcome.
    target0 = nuisances.mu1_at(train.x[~treated]) - train.y[~treated]
    tau1 = _fit_regression(train.x[treated], target1, config, r_tau1)
    tau0 = _fit_regression(train.x[~treated], target0, config, r_tau0)
    return XEstimator(tau0, tau1, nuisances.pi, clip)


# --- Serialization ----------------------------------------------------------


def _net_entries(prefix: str, net: MlpParams) -> dict:
    entries = {}
    for k, (w, b) in enumerate(zip(net.weights, net.biases)):
        entries[f"{prefix}_w{k}"] = w
        entries[f"{prefix}_b{k}"] = b
    return entries


def _net_from(prefix: str, blob, activation: str) -> MlpParams:
    weights, biases = [], []
    k = 0
    while f"{prefix}_w{k}" in blob:
        weights.append(blob[f"{prefix}_w{k}"])
        biases.append(blob[f"{prefix}_b{k}"])
        k += 1
    return MlpParams(weights, biases, activation)


def save_estimator(est: CateEstimator, out_dir: str | Path) -> None:
    """Write manifest.json plus a binary weight dump; bit-exact round trip."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest: dict = {"strategy": est.strategy}
    arrays: dict = {}
    if isinstance(est, SEstimator):
        arrays = _net_entries("net", est.net)
    elif isinstance(est, TEstimator):
        arrays = {**_net_entries("mu0", est.mu0), **_net_entries("mu1", est.mu1)}
    elif isinstance(est, TarnetEstimator):
        manifest["gamma"] = est.gamma
        arrays = {
            "trunk_w": est.trunk_w,
            "trunk_b": est.trunk_b,
            **_net_entries("head0", est.head0),
            **_net_entries("head1", est.head1),
        }
    elif isinstance(est, DrEstimator):
        manifest["clip"] = est.clip
        arrays = _net_entries("effect", est.effect_net)
    elif isinstance(est, XEstimator):
        manifest["clip"] = est.clip
        arrays = {
            **_net_entries("tau0", est.tau0),
            **_net_entries("tau1", est.tau1),
            **_net_entries("pi", est.pi),
        }
    else:
        raise InvalidConfigError(f"cannot serialize estimator type {type(est).__name__}")
    with open(out_dir / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2)
        fh.write("\n")
    np.savez(out_dir / "weights.npz", **arrays)


def load_estimator(in_dir: str | Path) -> CateEstimator:
    in_dir = Path(in_dir)
    with open(in_dir / "manifest.json") as fh:
        manifest = json.load(fh)
    blob = np.load(in_dir / "weights.npz")
    strategy = manifest["strategy"]
    if strategy == STRATEGY_S:
        return SEstimator(_net_from("net", blob, IDENTITY))
    if strategy == STRATEGY_T:
        return TEstimator(_net_from("mu0", blob, IDENTITY), _net_from("mu1", blob, IDENTITY))
    if strategy in (STRATEGY_TARNET, STRATEGY_CFRNET):
        return TarnetEstimator(
            blob["trunk_w"],
            blob["trunk_b"],
            _net_from("head0", blob, IDENTITY),
            _net_from("head1", blob, IDENTITY),
            manifest["gamma"],
        )
    if strategy == STRATEGY_DR:
        return DrEstimator(_net_from("effect", blob, IDENTITY), manifest["clip"])
    if strategy == STRATEGY_X:
        return XEstimator(
            _net_from("tau0", blob, IDENTITY),
            _net_from("tau1", blob, IDENTITY),
            _net_from("pi", blob, SIGMOID),
            manifest["clip"],
        )
    raise InvalidConfigError(f"unknown strategy {strategy!r} in manifest")
