"""Experiment orchestration.

A cell is one (knob value, seed) pair: generate a dataset, split it, fit
every configured learner on the same training part, attribute each fitted
effect function on the same capped test rows, and score against the sealed
truth. Sweeps run the grid x seeds product, optionally across processes;
results are keyed records, so collection order never matters.
"""

from __future__ import annotations

import csv
import logging
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import attribution, dgp, learners, metrics
from .errors import InvalidConfigError, ParseError, UndefinedMetricError
from .nn import TrainConfig
from .rng import float_key, label_key, stream

log = logging.getLogger(__name__)

KNOB_PREDICTIVE_SCALE = "predictive_scale"
KNOB_NONLINEARITY_SCALE = "nonlinearity_scale"
KNOB_PROPENSITY_SCALE = "propensity_scale"
KNOBS = (KNOB_PREDICTIVE_SCALE, KNOB_NONLINEARITY_SCALE, KNOB_PROPENSITY_SCALE)

DEFAULT_LEARNERS = ("s", "t", "tarnet", "dr", "x")

# Sub-stream labels under the (seed, knob bits) root.
_S_COVARIATES = 1
_S_SETS = 2
_S_MODEL = 3
_S_IRRELEVANT = 4
_S_GENERATE = 5
_S_SPLIT = 6
_S_LEARNER = 7
_S_ATTRIBUTION = 8

CSV_COLUMNS = (
    "dataset",
    "learner",
    "attr_method",
    "knob",
    "knob_value",
    "seed",
    "attr_pred",
    "attr_prog",
    "pehe",
    "wall_ms",
)


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything one sweep needs; serializable to/from JSON."""

    dataset_tag: str = "synthetic"
    covariates_csv: str | None = None
    covariates_normalize: str = dgp.NORM_NONE
    synth_n: int = 5000
    synth_d: int = 30
    synth_rho: float = 0.0
    n_i: int | None = None  # None: floor(0.2 * d)
    knob: str = KNOB_PREDICTIVE_SCALE
    knob_grid: tuple = (1e-3, 1e-2, 1e-1, 0.5, 1.0)
    omega_pred: float = 1.0
    omega_nl: float = 0.0
    sigma: float = 0.1
    propensity_kind: str = dgp.UNIFORM
    omega_pi: float = 0.0
    learners: tuple = DEFAULT_LEARNERS
    attribution_method: str = attribution.INTEGRATED_GRADIENTS
    ig_steps: int = 50
    shapley_permutations: int | None = None
    seeds: int = 5
    test_fraction: float = 0.2
    attribution_cap: int = 1000
    train: TrainConfig = field(default_factory=TrainConfig)

    def __post_init__(self):
        object.__setattr__(self, "knob_grid", tuple(float(v) for v in self.knob_grid))
        object.__setattr__(self, "learners", tuple(self.learners))
        if self.knob not in KNOBS:
            raise InvalidConfigError(f"unknown knob {self.knob!r}")
        if not self.knob_grid:
            raise InvalidConfigError("knob grid must be nonempty")
        if self.seeds < 1:
            raise InvalidConfigError("seeds must be >= 1")
        if any(v < 0 for v in self.knob_grid):
            raise InvalidConfigError("knob values must be >= 0")
        if self.knob == KNOB_NONLINEARITY_SCALE and any(v > 1 for v in self.knob_grid):
            raise InvalidConfigError("nonlinearity values must lie in [0, 1]")
        if not 0.0 <= self.omega_nl <= 1.0:
            raise InvalidConfigError("omega_nl must lie in [0, 1]")
        if self.attribution_method not in attribution.METHODS:
            raise InvalidConfigError(f"unknown attribution method {self.attribution_method!r}")
        for entry in self.learners:
            parse_learner(entry)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["knob_grid"] = list(self.knob_grid)
        d["learners"] = list(self.learners)
        return d

    @staticmethod
    def from_dict(d: dict) -> "ExperimentConfig":
        d = dict(d)
        if "train" in d and isinstance(d["train"], dict):
            d["train"] = TrainConfig(**d["train"])
        try:
            return ExperimentConfig(**d)
        except TypeError as err:
            raise InvalidConfigError(str(err)) from None


def parse_learner(entry: str):
    """Map a learner label to its fitting call.

    Labels: s, t, dr, x, tarnet, cfrnet (balancing weight 1) or
    cfrnet:<gamma> for an explicit balancing weight.
    """
    name, _, arg = entry.partition(":")
    if name == "s" and not arg:
        return lambda train, cfg, rng: learners.fit_s_learner(train, cfg, rng)
    if name == "t" and not arg:
        return lambda train, cfg, rng: learners.fit_t_learner(train, cfg, rng)
    if name == "dr" and not arg:
        return lambda train, cfg, rng: learners.fit_dr_learner(train, cfg, rng)
    if name == "x" and not arg:
        return lambda train, cfg, rng: learners.fit_x_learner(train, cfg, rng)
    if name == "tarnet" and not arg:
        return lambda train, cfg, rng: learners.fit_tarnet(train, 0.0, cfg, rng)
    if name == "cfrnet":
        try:
            gamma = float(arg) if arg else 1.0
        except ValueError:
            raise InvalidConfigError(f"bad balancing weight in {entry!r}") from None
        if gamma <= 0:
            raise InvalidConfigError(f"cfrnet needs a positive balancing weight, got {entry!r}")
        return lambda train, cfg, rng: learners.fit_tarnet(train, gamma, cfg, rng)
    raise InvalidConfigError(f"unknown learner {entry!r}")


@dataclass(frozen=True)
class ResultRecord:
    dataset: str
    learner: str
    attr_method: str
    knob: str
    knob_value: float
    seed: int
    attr_pred: float
    attr_prog: float
    pehe: float
    wall_ms: float

    @property
    def key(self):
        return (self.knob_value, self.seed, self.learner)


def _knob_values(config: ExperimentConfig, knob_value: float):
    """Resolve (omega_pred, omega_nl, omega_pi) for one grid point."""
    omega_pred, omega_nl, omega_pi = config.omega_pred, config.omega_nl, config.omega_pi
    if config.knob == KNOB_PREDICTIVE_SCALE:
        omega_pred = knob_value
    elif config.knob == KNOB_NONLINEARITY_SCALE:
        omega_nl = knob_value
    else:
        omega_pi = knob_value
    return omega_pred, omega_nl, omega_pi


def _cell_covariates(config: ExperimentConfig, seed: int, knob_bits: int) -> dgp.CovariateMatrix:
    if config.covariates_csv is not None:
        return dgp.load_covariates_csv(config.covariates_csv, config.covariates_normalize)
    return dgp.synth_covariates(
        config.synth_n,
        config.synth_d,
        config.synth_rho,
        stream(seed, knob_bits, _S_COVARIATES),
    )


def fixed_knob_value(config: ExperimentConfig) -> float:
    """The config's standing value for its own knob (used outside sweeps)."""
    if config.knob == KNOB_PREDICTIVE_SCALE:
        return config.omega_pred
    if config.knob == KNOB_NONLINEARITY_SCALE:
        return config.omega_nl
    return config.omega_pi


def build_dataset(
    config: ExperimentConfig, knob_value: float, seed: int
) -> dgp.SemiSyntheticDataset:
    """One cell's full dataset before splitting."""
    knob_bits = float_key(knob_value)
    omega_pred, omega_nl, omega_pi = _knob_values(config, knob_value)
    covariates = _cell_covariates(config, seed, knob_bits)
    d = covariates.d
    n_i = config.n_i if config.n_i is not None else int(np.floor(0.2 * d))
    sets = dgp.sample_feature_sets(d, n_i, stream(seed, knob_bits, _S_SETS))
    model = dgp.sample_outcome_model(n_i, omega_nl, omega_pred, stream(seed, knob_bits, _S_MODEL))
    irrelevant = None
    if config.propensity_kind == dgp.NONCONFOUNDED:
        irrelevant = dgp.pick_irrelevant_index(d, sets, stream(seed, knob_bits, _S_IRRELEVANT))
    spec = dgp.PropensitySpec(config.propensity_kind, omega_pi, irrelevant)
    return dgp.generate_dataset(
        covariates, sets, model, spec, config.sigma, stream(seed, knob_bits, _S_GENERATE)
    )


def build_cell_dataset(config: ExperimentConfig, knob_value: float, seed: int):
    """Dataset and split for one cell; shared by every learner in it."""
    ds = build_dataset(config, knob_value, seed)
    knob_bits = float_key(knob_value)
    return dgp.train_test_split(ds, config.test_fraction, stream(seed, knob_bits, _S_SPLIT))


def run_cell(config: ExperimentConfig, knob_value: float, seed: int) -> list[ResultRecord]:
    """Fit, attribute and score every configured learner on one cell."""
    knob_bits = float_key(knob_value)
    train, test = build_cell_dataset(config, knob_value, seed)
    truth = test.truth
    attr_seed = int(stream(seed, knob_bits, _S_ATTRIBUTION).integers(2**63))
    settings = attribution.AttributionSettings(
        steps=config.ig_steps,
        n_permutations=config.shapley_permutations,
        max_rows=config.attribution_cap,
        seed=attr_seed,
    )
    records = []
    for entry in config.learners:
        fit = parse_learner(entry)
        rng = stream(seed, knob_bits, _S_LEARNER, label_key(entry))
        started = time.perf_counter()
        a_pred = a_prog = pehe_val = float("nan")
        try:
            est = fit(train.observed, config.train, rng)
            tau_hat = est.predict_cate(test.covariates.x)
            pehe_val = metrics.pehe(tau_hat, truth.tau)  # whole test set
            mat = attribution.attribute_batch(
                config.attribution_method, est, test.covariates.x, settings
            )
            try:
                a_pred = metrics.attr_pred(mat, truth.sets.predictive)
                a_prog = metrics.attr_prog(mat, truth.sets.prognostic)
            except UndefinedMetricError:
                log.warning("all-zero attributions for %s at %s=%s seed %s",
                            entry, config.knob, knob_value, seed)
        except Exception as err:  # flagged record, never a run abort
            log.warning("learner %s failed at %s=%s seed %s: %s",
                        entry, config.knob, knob_value, seed, err, exc_info=True)
        wall_ms = (time.perf_counter() - started) * 1e3
        records.append(
            ResultRecord(
                config.dataset_tag,
                entry,
                config.attribution_method,
                config.knob,
                float(knob_value),
                seed,
                a_pred,
                a_prog,
                pehe_val,
                wall_ms,
            )
        )
    return records


def _run_cell_task(args):
    config, knob_value, seed = args
    return run_cell(config, knob_value, seed)


def run_experiment(config: ExperimentConfig, workers: int | None = None) -> list[ResultRecord]:
    """Execute grid x seeds; deterministic record order regardless of schedule."""
    cells = [(config, v, s) for v in config.knob_grid for s in range(config.seeds)]
    if workers is None:
        workers = int(os.environ.get("CATEBENCH_WORKERS", "0")) or (os.cpu_count() or 1)
    workers = max(1, min(workers, len(cells)))
    results: list[ResultRecord] = []
    if workers == 1:
        for cell in cells:
            results.extend(_run_cell_task(cell))
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for recs in pool.map(_run_cell_task, cells):
                results.extend(recs)
    results.sort(key=lambda r: r.key)
    return results


# --- Aggregation ------------------------------------------------------------


@dataclass(frozen=True)
class AggregateRow:
    learner: str
    knob_value: float
    n_seeds: int
    attr_pred_mean: float
    attr_pred_se: float
    attr_prog_mean: float
    attr_prog_se: float
    pehe_mean: float
    pehe_se: float


def _mean_se(values: np.ndarray) -> tuple[float, float]:
    finite = values[np.isfinite(values)]
    if finite.size == 0:
        return float("nan"), float("nan")
    if finite.size == 1:
        return float(finite[0]), 0.0
    return float(finite.mean()), float(finite.std(ddof=1) / np.sqrt(finite.size))


def aggregate(records: list[ResultRecord]) -> list[AggregateRow]:
    """Per-(learner, knob value) means and standard errors across seeds."""
    keys = sorted({(r.learner, r.knob_value) for r in records}, key=lambda k: (k[0], k[1]))
    rows = []
    for learner, value in keys:
        sub = [r for r in records if r.learner == learner and r.knob_value == value]
        ap = np.array([r.attr_pred for r in sub])
        ag = np.array([r.attr_prog for r in sub])
        pe = np.array([r.pehe for r in sub])
        rows.append(
            AggregateRow(
                learner, value, len(sub), *_mean_se(ap), *_mean_se(ag), *_mean_se(pe)
            )
        )
    return rows


# --- CSV --------------------------------------------------------------------


def _fmt(v: float) -> str:
    return f"{v:.17g}"


def emit_csv(records: list[ResultRecord], path: str | Path, include_timing: bool = False) -> None:
    """Write the result table.

    Timing is opt-in: the default leaves the wall_ms cells empty so that a
    rerun with identical seeds produces a byte-identical file.
    """
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_COLUMNS)
        for r in records:
            writer.writerow(
                [
                    r.dataset,
                    r.learner,
                    r.attr_method,
                    r.knob,
                    _fmt(r.knob_value),
                    r.seed,
                    _fmt(r.attr_pred),
                    _fmt(r.attr_prog),
                    _fmt(r.pehe),
                    _fmt(r.wall_ms) if include_timing else "",
                ]
            )


def load_results(path: str | Path) -> list[ResultRecord]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or tuple(rows[0]) != CSV_COLUMNS:
        raise ParseError(f"{path}: unexpected result header")
    out = []
    for row in rows[1:]:
        out.append(
            ResultRecord(
                row[0],
                row[1],
                row[2],
                row[3],
                float(row[4]),
                int(row[5]),
                float(row[6]),
                float(row[7]),
                float(row[8]),
                float(row[9]) if row[9] else 0.0,
            )
        )
    return out


# --- Presets ----------------------------------------------------------------


def experiment_preset(name: str, **overrides) -> ExperimentConfig:
    """Named sweep defaults for the three standard experiments."""
    if name in ("predictive_scale", "1"):
        base = dict(
            knob=KNOB_PREDICTIVE_SCALE,
            knob_grid=(1e-3, 1e-2, 1e-1, 0.5, 1.0),
            omega_nl=0.0,
            seeds=30,
        )
    elif name in ("nonlinearity", "2"):
        base = dict(
            knob=KNOB_NONLINEARITY_SCALE,
            knob_grid=(0.0, 0.25, 0.5, 0.75, 1.0),
            omega_pred=1.0,
            seeds=30,
        )
    elif name in ("confounding", "3"):
        base = dict(
            knob=KNOB_PROPENSITY_SCALE,
            knob_grid=(0.0, 0.5, 1.0, 2.0, 4.0),
            omega_pred=1.0,
            omega_nl=0.0,
            propensity_kind=dgp.PREDICTIVE_CONFOUNDING,
            learners=DEFAULT_LEARNERS + ("cfrnet:10",),
            seeds=10,
        )
    else:
        raise InvalidConfigError(f"unknown experiment preset {name!r}")
    base.update(overrides)
    return ExperimentConfig(**base)
