"""Desk-scale experiment harness: dataset generators, sweep plans, results CSV.

Reruns the reference protocol on generated data: a uniform artificial
dataset of configurable shape, a grid of sketches and privacy budgets,
repeated trials, and long-format result rows with per-cell aggregate
means.  External CSV datasets can be plugged in for the same sweeps.
"""

from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass, field

import numpy as np

from .domain import BINARY, CONTINUOUS, Domain
from .estimator import SyntheticFeatures, TrainConfig, learn_and_estimate
from .feature_maps import FeatureMap, build_hist, build_race, build_rff
from .metrics import emd_1d, frobenius, mae, mre
from .reweighting import GdConfig, evaluate_auc, fit_logistic_from_sketch
from .sketch import privatize, sketch_exact
from .targets import (
    BoxIndicator,
    CdfThreshold,
    Moment,
    Predicate,
    default_thresholds,
    estimate_cdf,
    estimate_covariance,
)

DEFAULT_EPSILONS = (0.01, 0.1, 1.0, 10.0, 100.0, math.inf)
DEFAULT_TASKS = ("mean", "moment2", "cdf", "cov", "queries")
DEFAULT_SKETCHES = ("rff", "race", "hist")


@dataclass
class ExperimentPlan:
    """One sweep: dataset x sketch grid x budgets x tasks x repetitions."""

    dataset: str = "random10"  # "random10" or a CSV path
    n: int = 27_000
    d: int = 10
    sketches: tuple[str, ...] = DEFAULT_SKETCHES
    epsilons: tuple[float, ...] = DEFAULT_EPSILONS
    repetitions: int = 50
    tasks: tuple[str, ...] = DEFAULT_TASKS
    n_synth: int = 100_000
    n_queries: int = 20
    extra_reg: float = 1.0
    seed: int = 0
    sketch_params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.repetitions < 1:
            raise ValueError("repetitions must be >= 1")
        if not self.sketches or not self.epsilons or not self.tasks:
            raise ValueError("sketch, epsilon and task grids must be non-empty")

    def quick(self) -> "ExperimentPlan":
        """CI-scale variant: fewer synthetic samples and repetitions."""
        return ExperimentPlan(
            dataset=self.dataset, n=self.n, d=self.d, sketches=self.sketches,
            epsilons=self.epsilons, repetitions=min(self.repetitions, 10),
            tasks=self.tasks, n_synth=min(self.n_synth, 20_000),
            n_queries=self.n_queries, extra_reg=self.extra_reg, seed=self.seed,
            sketch_params=self.sketch_params,
        )


def gen_random10(n: int, d: int, seed) -> np.ndarray:
    """n i.i.d. uniform points in [0, 1]^d."""
    if n < 1 or d < 1:
        raise ValueError("n and d must be >= 1")
    return np.random.default_rng(seed).uniform(0.0, 1.0, size=(n, d))


def gen_separable_classification(n: int, d: int, margin: float = 50.0,
                                 seed=0, return_direction: bool = False):
    """Classification data: uniform features plus a near-separable binary label.

    The label is Bernoulli(sigmoid(margin * (w^T xbar - t))) for a seeded
    unit direction w and centered threshold t.  margin=inf gives
    deterministic labels; margin=0 gives coin-flip labels.  The default
    margin leaves a plain logistic fit with AUC above 0.99.
    """
    if d < 2:
        raise ValueError("need at least 2 attributes (features plus label)")
    rng = np.random.default_rng(seed)
    Xbar = rng.uniform(0.0, 1.0, size=(n, d - 1))
    w = rng.normal(size=d - 1)
    w /= np.linalg.norm(w)
    u = Xbar @ w
    t = float(w.sum()) / 2.0  # threshold at the box center
    if math.isinf(margin):
        y = (u > t).astype(float)
    else:
        p = 1.0 / (1.0 + np.exp(-margin * (u - t)))
        y = (rng.uniform(size=n) < p).astype(float)
    data = np.column_stack([Xbar, y])
    if return_direction:
        return data, w
    return data


def write_dataset_csv(path, data: np.ndarray, header=None) -> None:
    data = np.atleast_2d(data)
    if header is None:
        header = [f"x{j + 1}" for j in range(data.shape[1])]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in data:
            writer.writerow([repr(float(v)) for v in row])


def load_dataset_csv(path) -> tuple[np.ndarray, list[str]]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = [[float(v) for v in row] for row in reader if row]
    return np.asarray(rows, dtype=float), header


def build_sketch_spec(kind: str, domain: Domain, seed,
                      params: dict | None = None) -> FeatureMap:
    """Instantiate a grid sketch: rff (m=200, sigma=1), race (80x80), hist (100 bins)."""
    params = params or {}
    kind = kind.lower()
    if kind == "rff":
        return build_rff(domain.d, params.get("m", 200),
                         params.get("sigma", 1.0), seed, domain)
    if kind == "race":
        return build_race(domain.d, params.get("n_hashes", 80),
                          params.get("n_buckets", 80),
                          params.get("r_width", 0.1), seed, domain)
    if kind == "hist":
        return build_hist(domain, params.get("n_bins", 100))
    raise ValueError(f"unknown sketch kind {kind!r}")


def _random_queries(domain: Domain, n_queries: int, rng) -> list[BoxIndicator]:
    queries = []
    d = domain.d
    while len(queries) < n_queries:
        attrs = rng.choice(d, size=3, replace=False)
        preds = []
        for attr in attrs:
            lo, hi = domain.lower[attr], domain.upper[attr]
            bound = float(rng.uniform(lo, hi))
            op = "<=" if rng.uniform() < 0.5 else ">="
            preds.append(Predicate(int(attr) + 1, op, bound))
        queries.append(BoxIndicator(tuple(preds)))
    return queries


def _truths(data: np.ndarray, domain: Domain, tasks, queries) -> dict:
    d = data.shape[1]
    truth = {}
    if "mean" in tasks:
        truth["mean"] = data.mean(axis=0)
    if "moment2" in tasks:
        truth["moment2"] = (data ** 2).mean(axis=0)
    if "cdf" in tasks:
        lo, hi = domain.lower_arr, domain.upper_arr
        cdfs = []
        for j in range(d):
            ts = lo[j] + (hi[j] - lo[j]) * np.arange(1, 11) / 10
            cdfs.append([(data[:, j] <= s).mean() for s in ts])
        truth["cdf"] = np.asarray(cdfs)
    if "cov" in tasks:
        mu = data.mean(axis=0)
        centered = data - mu
        truth["cov"] = centered.T @ centered / data.shape[0]
    if "queries" in tasks:
        truth["queries"] = np.array([q(data).mean() for q in queries])
    return truth


def _run_cell_tasks(spec, sketch, features, tasks, truth, domain, queries):
    """Yield (task, metric, value) rows for one (sketch, epsilon, rep) cell."""
    d = domain.d
    if "mean" in tasks:
        errs = [mre(learn_and_estimate(spec, sketch, Moment(j, 1),
                                       features=features),
                    truth["mean"][j - 1]) for j in range(1, d + 1)]
        yield "mean", "mre", float(np.mean(errs))
    if "moment2" in tasks:
        errs = [mre(learn_and_estimate(spec, sketch, Moment(j, 2),
                                       features=features),
                    truth["moment2"][j - 1]) for j in range(1, d + 1)]
        yield "moment2", "mre", float(np.mean(errs))
    if "cdf" in tasks:
        errs = []
        for j in range(1, d + 1):
            est = estimate_cdf(spec, sketch, j, features=features)
            errs.append(emd_1d(est.values, truth["cdf"][j - 1]))
        yield "cdf", "emd", float(np.mean(errs))
    if "cov" in tasks:
        est = estimate_covariance(spec, sketch, features=features)
        yield "cov", "frobenius", frobenius(est, truth["cov"])
    if "queries" in tasks:
        raw = np.array([
            learn_and_estimate(spec, sketch, q, features=features)
            for q in queries
        ])
        yield "queries", "mae", mae(np.clip(raw, 0.0, 1.0), truth["queries"])


RESULT_FIELDS = ("dataset", "sketch", "epsilon", "task", "repetition",
                 "metric", "value")


def _eps_label(eps: float) -> str:
    return "inf" if math.isinf(eps) else repr(float(eps))


def run_plan(plan: ExperimentPlan, out_dir) -> str:
    """Execute a plan; returns the path of the long-format results CSV.

    Rows are flushed after every repetition so interrupted runs keep their
    partial results; the aggregate file holds per-cell means of the rows.
    """
    os.makedirs(out_dir, exist_ok=True)
    if plan.dataset == "random10":
        data = gen_random10(plan.n, plan.d, (plan.seed, 1))
        domain = Domain.unit(plan.d)
        dataset_name = "random10"
    else:
        data, _header = load_dataset_csv(plan.dataset)
        lo = np.minimum(data.min(axis=0), 0.0)
        hi = np.maximum(data.max(axis=0), 1.0)
        domain = Domain(tuple(lo), tuple(hi))
        dataset_name = os.path.basename(str(plan.dataset))
    queries = []
    if "queries" in plan.tasks:
        if domain.d < 3:
            raise ValueError("the counting-query task needs at least 3 attributes")
        queries = _random_queries(domain, plan.n_queries,
                                  np.random.default_rng((plan.seed, 2)))
    truth = _truths(data, domain, plan.tasks, queries)

    results_path = os.path.join(out_dir, "results.csv")
    rows_for_aggregate = []
    with open(results_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(RESULT_FIELDS)
        for si, kind in enumerate(plan.sketches):
            spec = build_sketch_spec(kind, domain, (plan.seed, 3, si),
                                     plan.sketch_params.get(kind))
            exact = sketch_exact(spec, data)
            config = TrainConfig(n_synth=plan.n_synth,
                                 extra_reg=plan.extra_reg,
                                 seed=(plan.seed, 4, si))
            features = SyntheticFeatures(spec, config)
            for ei, eps in enumerate(plan.epsilons):
                for rep in range(plan.repetitions):
                    sketch = privatize(exact, spec, eps,
                                       seed=(plan.seed, 5, si, ei, rep))
                    for task, metric, value in _run_cell_tasks(
                            spec, sketch, features, plan.tasks, truth,
                            domain, queries):
                        row = (dataset_name, kind, _eps_label(eps), task,
                               rep, metric, repr(value))
                        writer.writerow(row)
                        rows_for_aggregate.append(
                            (dataset_name, kind, _eps_label(eps), task,
                             metric, value))
                    fh.flush()

    aggregate_path = os.path.join(out_dir, "aggregate.csv")
    cells: dict[tuple, list[float]] = {}
    for ds, kind, eps, task, metric, value in rows_for_aggregate:
        cells.setdefault((ds, kind, eps, task, metric), []).append(value)
    with open(aggregate_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(("dataset", "sketch", "epsilon", "task", "metric",
                         "mean", "repetitions"))
        for key, values in cells.items():
            writer.writerow(key + (repr(float(np.mean(values))), len(values)))
    return results_path


def logistic_sweep(epsilons, n: int = 20_000, d: int = 6, margin: float = 50.0,
                   sketch_kind: str = "rff", n_runs: int = 10,
                   n_synth: int = 20_000, seed: int = 0,
                   sketch_params: dict | None = None) -> dict[float, float]:
    """Mean held-out AUC of sketch-trained logistic models per budget.

    Generates a near-separable dataset, holds out 10%, sketches the rest,
    and trains via the reweighted synthetic loss for each epsilon.
    """
    data = gen_separable_classification(n, d, margin, (seed, 1))
    n_test = n // 10
    test, train = data[:n_test], data[n_test:]
    kinds = (CONTINUOUS,) * (d - 1) + (BINARY,)
    domain = Domain.unit(d, kinds)
    spec = build_sketch_spec(sketch_kind, domain, (seed, 2), sketch_params)
    exact = sketch_exact(spec, train)
    results = {}
    for ei, eps in enumerate(epsilons):
        aucs = []
        for run in range(n_runs):
            config = TrainConfig(n_synth=n_synth, seed=(seed, 3, run),
                                 domain=domain)
            features = SyntheticFeatures(spec, config)
            sketch = privatize(exact, spec, eps, seed=(seed, 4, ei, run))
            model = fit_logistic_from_sketch(
                spec, sketch, features=features,
                gd=GdConfig(seed=(seed, 5, run)))
            aucs.append(evaluate_auc(model, test))
        results[eps] = float(np.mean(aucs))
    return results
