"""Semi-synthetic treatment-effect data generation.

Covariates come from a CSV file or a synthetic Gaussian sampler; outcomes
and assignments are simulated on top of them from sampled prognostic and
predictive components, so the true potential outcomes, effect function,
propensities and driver indices are all known. Ground truth travels in a
sealed sidecar of the dataset: model fitting only ever sees (X, W, Y).

Because assignment and outcomes are simulated, the usual identifying
assumptions hold by construction rather than by hope:

- consistency: the observed outcome is exactly the potential outcome of
  the assigned arm (plus additive noise drawn independently of W);
- ignorability: W is drawn from Bernoulli(pi(X)) with fresh randomness,
  so (Y(0), Y(1)) are independent of W given X — there is nothing the
  assignment could depend on beyond the covariates;
- positivity: pi(x) = sigmoid(omega_pi * z(x)) is strictly inside (0, 1)
  for every finite propensity scale.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import (
    InvalidConfigError,
    NormalizationError,
    NumericError,
    ParseError,
    ShapeError,
)
from .nn import sigmoid

NORM_NONE = "none"
NORM_MINMAX = "minmax"
NORM_ZSCORE = "zscore"

UNIFORM = "uniform"
PREDICTIVE_CONFOUNDING = "predictive_confounding"
PROGNOSTIC_CONFOUNDING = "prognostic_confounding"
NONCONFOUNDED = "nonconfounded"
PROPENSITY_KINDS = (UNIFORM, PREDICTIVE_CONFOUNDING, PROGNOSTIC_CONFOUNDING, NONCONFOUNDED)

# Scalar nonlinearities the outcome components can mix in, with derivatives
# (used only by the oracle effect function, never by fitted models).
NONLINEARITIES: dict[str, tuple] = {
    "abs": (np.abs, np.sign),
    "gaussian": (lambda s: np.exp(-(s**2)), lambda s: -2.0 * s * np.exp(-(s**2))),
    "inverse_quadratic": (lambda s: 1.0 / (1.0 + s**2), lambda s: -2.0 * s / (1.0 + s**2) ** 2),
    "cos": (np.cos, lambda s: -np.sin(s)),
    "sin": (np.sin, np.cos),
    "arctan": (np.arctan, lambda s: 1.0 / (1.0 + s**2)),
    "tanh": (np.tanh, lambda s: 1.0 / np.cosh(s) ** 2),
    "log_quadratic": (lambda s: np.log1p(s**2), lambda s: 2.0 * s / (1.0 + s**2)),
    "sqrt_quadratic": (lambda s: np.sqrt(1.0 + s**2), lambda s: s / np.sqrt(1.0 + s**2)),
    "cosh": (np.cosh, np.sinh),
}
NONLINEARITY_NAMES = tuple(NONLINEARITIES)


@dataclass
class CovariateMatrix:
    """N x d covariate block plus feature names."""

    x: np.ndarray
    feature_names: list[str]

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=float)
        if self.x.ndim != 2:
            raise ShapeError("covariates must be a 2-D matrix")
        n, d = self.x.shape
        if n < 1 or d < 4:
            raise InvalidConfigError(f"need N >= 1 and d >= 4 covariates, got {n} x {d}")
        if len(self.feature_names) != d:
            raise ShapeError("feature name count does not match column count")
        if not np.all(np.isfinite(self.x)):
            raise NumericError("covariates contain non-finite entries")

    @property
    def n(self) -> int:
        return self.x.shape[0]

    @property
    def d(self) -> int:
        return self.x.shape[1]


@dataclass(frozen=True)
class FeatureIndexSets:
    """Disjoint prognostic / control-arm / treated-arm driver indices."""

    prognostic: np.ndarray
    predictive_0: np.ndarray
    predictive_1: np.ndarray

    def __post_init__(self):
        for name in ("prognostic", "predictive_0", "predictive_1"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=int))
        a, b, c = self.prognostic, self.predictive_0, self.predictive_1
        if not (len(a) == len(b) == len(c)):
            raise InvalidConfigError("index sets must have equal sizes")
        union = np.concatenate([a, b, c])
        if len(np.unique(union)) != len(union):
            raise InvalidConfigError("index sets must be pairwise disjoint")

    @property
    def n_i(self) -> int:
        return len(self.prognostic)

    @property
    def predictive(self) -> np.ndarray:
        """All effect-driving indices (both arms)."""
        return np.sort(np.concatenate([self.predictive_0, self.predictive_1]))

    @property
    def all_relevant(self) -> np.ndarray:
        return np.sort(
            np.concatenate([self.prognostic, self.predictive_0, self.predictive_1])
        )


@dataclass(frozen=True)
class OutcomeModel:
    """Sampled weights and nonlinearity defining the outcome components."""

    alpha_prog: np.ndarray
    alpha_0: np.ndarray
    alpha_1: np.ndarray
    nonlinearity: str
    omega_nl: float
    omega_pred: float

    def __post_init__(self):
        for name in ("alpha_prog", "alpha_0", "alpha_1"):
            v = np.asarray(getattr(self, name), dtype=float)
            object.__setattr__(self, name, v)
            if np.abs(v).max(initial=0.0) > 1.0:
                raise InvalidConfigError(f"{name} entries must lie in [-1, 1]")
        if self.nonlinearity not in NONLINEARITIES:
            raise InvalidConfigError(f"unknown nonlinearity {self.nonlinearity!r}")
        if not 0.0 <= self.omega_nl <= 1.0:
            raise InvalidConfigError("omega_nl must lie in [0, 1]")
        if self.omega_pred < 0.0:
            raise InvalidConfigError("omega_pred must be >= 0")


@dataclass(frozen=True)
class PropensitySpec:
    kind: str = UNIFORM
    omega_pi: float = 0.0
    irrelevant_index: int | None = None

    def __post_init__(self):
        if self.kind not in PROPENSITY_KINDS:
            raise InvalidConfigError(f"unknown propensity kind {self.kind!r}")
        if self.omega_pi < 0.0:
            raise InvalidConfigError("omega_pi must be >= 0")
        if self.kind == NONCONFOUNDED and self.irrelevant_index is None:
            raise InvalidConfigError("nonconfounded propensity needs irrelevant_index")


@dataclass(frozen=True)
class ZScoreStats:
    mean: float
    std: float

    def __post_init__(self):
        if not self.std > 0.0:
            raise NormalizationError("z-score standard deviation must be positive")


@dataclass(frozen=True)
class ObservedData:
    """What estimators are allowed to see."""

    x: np.ndarray
    w: np.ndarray
    y: np.ndarray

    @property
    def n(self) -> int:
        return self.x.shape[0]

    @property
    def d(self) -> int:
        return self.x.shape[1]


@dataclass(frozen=True)
class GroundTruth:
    """Sealed generation record; only metrics should consume this."""

    y0: np.ndarray
    y1: np.ndarray
    tau: np.ndarray
    pi: np.ndarray
    sets: FeatureIndexSets
    model: OutcomeModel
    noise_sigma: float
    propensity: PropensitySpec


@dataclass(frozen=True)
class SemiSyntheticDataset:
    covariates: CovariateMatrix
    w: np.ndarray
    y: np.ndarray
    truth: GroundTruth
    unit_ids: np.ndarray

    @property
    def n(self) -> int:
        return self.covariates.n

    @property
    def d(self) -> int:
        return self.covariates.d

    @property
    def observed(self) -> ObservedData:
        return ObservedData(self.covariates.x, self.w, self.y)


# --- Covariate sourcing ---------------------------------------------------


def load_covariates_csv(path: str | Path, normalize: str = NORM_NONE) -> CovariateMatrix:
    """Read a numeric CSV with a header row of feature names."""
    if normalize not in (NORM_NONE, NORM_MINMAX, NORM_ZSCORE):
        raise InvalidConfigError(f"unknown normalization {normalize!r}")
    path = Path(path)
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ParseError(f"{path}: empty file")
    header = rows[0]
    if _all_numeric(header):
        raise ParseError(f"{path}: first row is numeric; a header row is required", row=0)
    body = np.empty((len(rows) - 1, len(header)))
    for r, row in enumerate(rows[1:], start=1):
        if len(row) != len(header):
            raise ParseError(f"{path}: row {r} has {len(row)} cells, expected {len(header)}", row=r)
        for c, cell in enumerate(row):
            try:
                body[r - 1, c] = float(cell)
            except ValueError:
                raise ParseError(
                    f"{path}: non-numeric cell {cell!r} at row {r}, column {c}", row=r, col=c
                ) from None
    if normalize == NORM_MINMAX:
        lo, hi = body.min(axis=0), body.max(axis=0)
        span = np.where(hi > lo, hi - lo, 1.0)  # constant columns map to 0
        body = (body - lo) / span
    elif normalize == NORM_ZSCORE:
        std = body.std(axis=0)
        if np.any(std == 0.0):
            col = int(np.nonzero(std == 0.0)[0][0])
            raise NormalizationError(f"{path}: column {col} is constant, z-score undefined")
        body = (body - body.mean(axis=0)) / std
    return CovariateMatrix(body, [h.strip() for h in header])


def _all_numeric(cells: list[str]) -> bool:
    if not cells:
        return False
    for cell in cells:
        try:
            float(cell)
        except ValueError:
            return False
    return True


def synth_covariates(
    n: int, d: int, pairwise_correlation: float = 0.0, rng: np.random.Generator | None = None
) -> CovariateMatrix:
    """Zero-mean unit-variance Gaussians with constant pairwise correlation."""
    if rng is None:
        raise InvalidConfigError("synth_covariates requires a seeded generator")
    if d < 4:
        raise InvalidConfigError("need d >= 4")
    rho = float(pairwise_correlation)
    if not 0.0 <= rho < 1.0:
        raise InvalidConfigError("pairwise_correlation must lie in [0, 1)")
    shared = rng.normal(size=(n, 1))
    own = rng.normal(size=(n, d))
    x = np.sqrt(rho) * shared + np.sqrt(1.0 - rho) * own
    return CovariateMatrix(x, [f"x_{j}" for j in range(d)])


# --- Outcome machinery ----------------------------------------------------


def sample_feature_sets(d: int, n_i: int, rng: np.random.Generator) -> FeatureIndexSets:
    """Three disjoint driver index sets, sampled without replacement."""
    if n_i < 1:
        raise InvalidConfigError("n_i must be >= 1")
    if not d > 3 * n_i:
        raise InvalidConfigError(f"need d > 3 * n_i, got d={d}, n_i={n_i}")
    picked = rng.choice(d, size=3 * n_i, replace=False)
    return FeatureIndexSets(
        np.sort(picked[:n_i]), np.sort(picked[n_i : 2 * n_i]), np.sort(picked[2 * n_i :])
    )


def sample_outcome_model(
    n_i: int, omega_nl: float, omega_pred: float, rng: np.random.Generator
) -> OutcomeModel:
    """Uniform weights on [-1, 1] and one shared nonlinearity for all parts."""
    alpha_prog = rng.uniform(-1.0, 1.0, size=n_i)
    alpha_0 = rng.uniform(-1.0, 1.0, size=n_i)
    alpha_1 = rng.uniform(-1.0, 1.0, size=n_i)
    chi = NONLINEARITY_NAMES[int(rng.integers(len(NONLINEARITY_NAMES)))]
    return OutcomeModel(alpha_prog, alpha_0, alpha_1, chi, float(omega_nl), float(omega_pred))


def _component(model: OutcomeModel, alpha: np.ndarray, x_sub: np.ndarray) -> np.ndarray:
    s = x_sub @ alpha
    chi, _ = NONLINEARITIES[model.nonlinearity]
    return (1.0 - model.omega_nl) * s + model.omega_nl * chi(s)


def eval_components(model: OutcomeModel, sets: FeatureIndexSets, x: np.ndarray):
    """Prognostic and per-arm predictive component values.

    Accepts one unit (d,) or a batch (N, d); returns three floats or three
    length-N vectors accordingly.
    """
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    xm = np.atleast_2d(x)
    if xm.shape[1] <= int(sets.all_relevant.max()):
        raise ShapeError("covariate vector shorter than the largest driver index")
    mu = _component(model, model.alpha_prog, xm[:, sets.prognostic])
    f0 = _component(model, model.alpha_0, xm[:, sets.predictive_0])
    f1 = _component(model, model.alpha_1, xm[:, sets.predictive_1])
    if single:
        return float(mu[0]), float(f0[0]), float(f1[0])
    return mu, f0, f1


def true_cate(model: OutcomeModel, sets: FeatureIndexSets, x: np.ndarray) -> np.ndarray:
    """Noiseless effect values: predictive scale times the arm contrast."""
    _, f0, f1 = eval_components(model, sets, np.atleast_2d(x))
    return model.omega_pred * (f1 - f0)


def true_cate_gradient(model: OutcomeModel, sets: FeatureIndexSets, x: np.ndarray) -> np.ndarray:
    """Exact gradient of the true effect function, row per input row."""
    xm = np.atleast_2d(np.asarray(x, dtype=float))
    _, dchi = NONLINEARITIES[model.nonlinearity]
    grad = np.zeros_like(xm)
    for sign, idx, alpha in (
        (1.0, sets.predictive_1, model.alpha_1),
        (-1.0, sets.predictive_0, model.alpha_0),
    ):
        s = xm[:, idx] @ alpha
        scale = (1.0 - model.omega_nl) + model.omega_nl * dchi(s)
        grad[:, idx] += sign * model.omega_pred * scale[:, None] * alpha
    return grad


# --- Propensity -----------------------------------------------------------


def propensity_scores(
    spec: PropensitySpec,
    model: OutcomeModel,
    sets: FeatureIndexSets,
    x_train: np.ndarray,
    x_query: np.ndarray,
) -> tuple[np.ndarray, ZScoreStats]:
    """Assignment probabilities for query units, z-scored on training units."""
    x_query = np.atleast_2d(np.asarray(x_query, dtype=float))
    if spec.kind == UNIFORM:
        return np.full(x_query.shape[0], 0.5), ZScoreStats(0.0, 1.0)
    x_train = np.atleast_2d(np.asarray(x_train, dtype=float))
    psi_train = _psi(spec, model, sets, x_train)
    mean = float(psi_train.mean())
    std = float(psi_train.std())  # population std: deterministic, no ddof choice
    if std == 0.0:
        raise NormalizationError("propensity signal is constant over training units")
    stats = ZScoreStats(mean, std)
    z = (_psi(spec, model, sets, x_query) - stats.mean) / stats.std
    return sigmoid(spec.omega_pi * z), stats


def _psi(spec, model, sets, x):
    if spec.kind == PREDICTIVE_CONFOUNDING:
        _, f0, f1 = eval_components(model, sets, x)
        return f1 - f0
    if spec.kind == PROGNOSTIC_CONFOUNDING:
        mu, _, _ = eval_components(model, sets, x)
        return mu
    idx = int(spec.irrelevant_index)
    if idx in set(sets.all_relevant.tolist()):
        raise InvalidConfigError(f"irrelevant_index {idx} is a driver covariate")
    if not 0 <= idx < x.shape[1]:
        raise ShapeError(f"irrelevant_index {idx} out of range for d={x.shape[1]}")
    return x[:, idx]


def pick_irrelevant_index(d: int, sets: FeatureIndexSets, rng: np.random.Generator) -> int:
    """A uniformly drawn covariate index outside every driver set."""
    candidates = np.setdiff1d(np.arange(d), sets.all_relevant)
    if candidates.size == 0:
        raise InvalidConfigError("no covariate left outside the driver sets")
    return int(candidates[rng.integers(candidates.size)])


# --- Generation and splitting ----------------------------------------------


def generate_dataset(
    covariates: CovariateMatrix,
    sets: FeatureIndexSets,
    model: OutcomeModel,
    spec: PropensitySpec,
    sigma: float,
    rng: np.random.Generator,
) -> SemiSyntheticDataset:
    """Simulate assignments and outcomes over the given covariates."""
    if sigma < 0.0:
        raise InvalidConfigError("noise sigma must be >= 0")
    if int(sets.all_relevant.max()) >= covariates.d:
        raise ShapeError("driver index exceeds covariate dimension")
    x = covariates.x
    mu, f0, f1 = eval_components(model, sets, x)
    y0 = mu + model.omega_pred * f0
    y1 = mu + model.omega_pred * f1
    tau = model.omega_pred * (f1 - f0)  # same arithmetic path as true_cate
    pi, _ = propensity_scores(spec, model, sets, x, x)
    rng_w, rng_eps = rng.spawn(2)
    w = (rng_w.random(covariates.n) < pi).astype(int)
    eps = rng_eps.normal(0.0, sigma, size=covariates.n) if sigma > 0 else np.zeros(covariates.n)
    y = w * y1 + (1 - w) * y0 + eps
    truth = GroundTruth(y0, y1, tau, pi, sets, model, float(sigma), spec)
    return SemiSyntheticDataset(covariates, w, y, truth, np.arange(covariates.n))


def _take(ds: SemiSyntheticDataset, idx: np.ndarray) -> SemiSyntheticDataset:
    t = ds.truth
    return SemiSyntheticDataset(
        CovariateMatrix(ds.covariates.x[idx], ds.covariates.feature_names),
        ds.w[idx],
        ds.y[idx],
        GroundTruth(
            t.y0[idx], t.y1[idx], t.tau[idx], t.pi[idx], t.sets, t.model, t.noise_sigma,
            t.propensity,
        ),
        ds.unit_ids[idx],
    )


def train_test_split(
    ds: SemiSyntheticDataset, test_fraction: float, rng: np.random.Generator
) -> tuple[SemiSyntheticDataset, SemiSyntheticDataset]:
    """Disjoint random partition; ground truth rides along with both parts."""
    if not 0.0 < test_fraction < 1.0:
        raise InvalidConfigError("test_fraction must lie strictly between 0 and 1")
    n_test = int(round(ds.n * test_fraction))
    if n_test < 1 or ds.n - n_test < 1:
        raise InvalidConfigError(f"degenerate partition: {ds.n} units, {n_test} test")
    perm = rng.permutation(ds.n)
    return _take(ds, np.sort(perm[n_test:])), _take(ds, np.sort(perm[:n_test]))


# --- Persistence -----------------------------------------------------------


def _fmt(v: float) -> str:
    return f"{v:.17g}"


def save_dataset(
    ds: SemiSyntheticDataset,
    data_path: str | Path,
    truth_path: str | Path,
    meta_path: str | Path,
) -> None:
    """Write the observed CSV, the ground-truth CSV and the JSON sidecar."""
    with open(data_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["unit_id", "w", "y"] + [f"x_{j}" for j in range(ds.d)])
        for i in range(ds.n):
            writer.writerow(
                [int(ds.unit_ids[i]), int(ds.w[i]), _fmt(ds.y[i])]
                + [_fmt(v) for v in ds.covariates.x[i]]
            )
    t = ds.truth
    with open(truth_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["unit_id", "y0", "y1", "tau", "pi"])
        for i in range(ds.n):
            writer.writerow(
                [int(ds.unit_ids[i]), _fmt(t.y0[i]), _fmt(t.y1[i]), _fmt(t.tau[i]), _fmt(t.pi[i])]
            )
    meta = {
        "feature_names": ds.covariates.feature_names,
        "i_prog": t.sets.prognostic.tolist(),
        "i_0": t.sets.predictive_0.tolist(),
        "i_1": t.sets.predictive_1.tolist(),
        "alpha_prog": t.model.alpha_prog.tolist(),
        "alpha_0": t.model.alpha_0.tolist(),
        "alpha_1": t.model.alpha_1.tolist(),
        "nonlinearity": t.model.nonlinearity,
        "omega_nl": t.model.omega_nl,
        "omega_pred": t.model.omega_pred,
        "sigma": t.noise_sigma,
        "propensity": {
            "kind": t.propensity.kind,
            "omega_pi": t.propensity.omega_pi,
            "irrelevant_index": t.propensity.irrelevant_index,
        },
    }
    with open(meta_path, "w") as fh:
        json.dump(meta, fh, indent=2)
        fh.write("\n")


def load_observed(data_path: str | Path) -> tuple[ObservedData, list[str], np.ndarray]:
    """Read the observed CSV only: (data, feature names, unit ids)."""
    with open(data_path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0][:3] != ["unit_id", "w", "y"]:
        raise ParseError(f"{data_path}: expected header starting unit_id,w,y")
    names = rows[0][3:]
    body = np.array([[float(c) for c in row] for row in rows[1:]])
    if body.size == 0:
        raise ParseError(f"{data_path}: no data rows")
    return (
        ObservedData(body[:, 3:], body[:, 1].astype(int), body[:, 2]),
        names,
        body[:, 0].astype(int),
    )


def load_dataset(
    data_path: str | Path, truth_path: str | Path, meta_path: str | Path
) -> SemiSyntheticDataset:
    """Rebuild a full dataset from the three exported files."""
    obs, names, unit_ids = load_observed(data_path)
    with open(truth_path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0] != ["unit_id", "y0", "y1", "tau", "pi"]:
        raise ParseError(f"{truth_path}: expected header unit_id,y0,y1,tau,pi")
    tbody = np.array([[float(c) for c in row] for row in rows[1:]])
    if not np.array_equal(tbody[:, 0].astype(int), unit_ids):
        raise ParseError("truth file unit ids do not match data file")
    with open(meta_path) as fh:
        meta = json.load(fh)
    sets = FeatureIndexSets(meta["i_prog"], meta["i_0"], meta["i_1"])
    model = OutcomeModel(
        meta["alpha_prog"], meta["alpha_0"], meta["alpha_1"],
        meta["nonlinearity"], meta["omega_nl"], meta["omega_pred"],
    )
    prop = meta["propensity"]
    spec = PropensitySpec(prop["kind"], prop["omega_pi"], prop["irrelevant_index"])
    truth = GroundTruth(
        tbody[:, 1], tbody[:, 2], tbody[:, 3], tbody[:, 4], sets, model, meta["sigma"], spec
    )
    covs = CovariateMatrix(obs.x, meta["feature_names"])
    return SemiSyntheticDataset(covs, obs.w, obs.y, truth, unit_ids)
