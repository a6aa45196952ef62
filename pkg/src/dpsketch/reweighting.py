"""Parametric model fitting from a sketch via reweighted synthetic losses.

The ridge solution for any target is linear in the target values, so the
sketch estimate of a parametric loss's dataset average can be rewritten
as a weighted sum of per-synthetic-sample losses, with weights that
depend only on the feature map, the sketch and the ridge penalty, not on
the model parameters or the loss.  Computing the weights once therefore
turns fitting (e.g. logistic regression) into ordinary weighted empirical
risk minimization over the synthetic samples.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .domain import BINARY
from .estimator import (
    SyntheticFeatures,
    TrainConfig,
    regularization_lambda,
)
from .feature_maps import FeatureMap
from .metrics import auc
from .sketch import PrivateSketch, SketchError


class FitDivergenceError(RuntimeError):
    """The weighted objective kept increasing; the descent was aborted."""


@dataclass(frozen=True)
class WeightedSamples:
    """Synthetic points with their sketch-derived weights (may be negative)."""

    points: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        if self.points.shape[0] != self.weights.shape[0]:
            raise ValueError("points and weights must have equal length")
        if not np.all(np.isfinite(self.weights)):
            raise ValueError("weights must be finite")


@dataclass
class GdConfig:
    """Fixed-step gradient descent knobs for the reweighted loss."""

    step: float = 0.1
    iters: int = 500
    tolerance: float = 1e-6
    restarts: int = 3
    seed: object = 0


@dataclass(frozen=True)
class LogisticModel:
    """Linear classifier on the continuous attributes, with intercept."""

    theta: np.ndarray
    intercept: float
    objective: float = field(default=float("nan"), compare=False)
    diagnostics: dict = field(default_factory=dict, compare=False)

    def scores(self, Xbar) -> np.ndarray:
        Xbar = np.atleast_2d(np.asarray(Xbar, dtype=float))
        return Xbar @ self.theta + self.intercept


def compute_weights(spec: FeatureMap, sketch: PrivateSketch,
                    synth, lam: float) -> WeightedSamples:
    """Per-sample weights such that sum_i w_i L(x_i) = <fit(L), sketch>.

    One SPD solve against the Gram matrix (shared factorization), then an
    inner product per sample.  The weights are loss-independent: compute
    once, reuse for any objective and any parameter value.
    """
    if lam <= 0:
        raise ValueError("lambda must be positive for the weight computation")
    if not isinstance(synth, SyntheticFeatures):
        synth = SyntheticFeatures.from_points(spec, synth)
    if sketch.spec_id != spec.spec_id:
        raise SketchError("sketch was built with a different feature map")
    v = synth.solve(sketch.normalized, lam)
    weights = synth.apply(v) / synth.n
    return WeightedSamples(synth.points, weights)


def fit_weighted(weighted: WeightedSamples, loss_and_grad, theta0,
                 gd: GdConfig | None = None):
    """Minimize theta -> sum_i w_i * L(x_i, theta) by fixed-step descent.

    loss_and_grad(points, theta) must return (per-sample losses (n,),
    per-sample gradients (n, p)).  The step is normalized by sum|w|; the
    run stops early when the gradient norm drops below the tolerance and
    aborts if the objective increases 20 times in a row.
    """
    gd = gd or GdConfig()
    theta = np.asarray(theta0, dtype=float).copy()
    w = weighted.weights
    total = np.abs(w).sum()
    step = gd.step / total if total > 0 else gd.step
    losses, grads = loss_and_grad(weighted.points, theta)
    objective = float(w @ losses)
    bad_streak = 0
    n_iter = 0
    converged = False
    for n_iter in range(1, gd.iters + 1):
        grad = w @ grads
        gnorm = float(np.linalg.norm(grad))
        if gnorm < gd.tolerance:
            converged = True
            break
        theta -= step * grad
        losses, grads = loss_and_grad(weighted.points, theta)
        new_objective = float(w @ losses)
        if new_objective > objective:
            bad_streak += 1
            if bad_streak >= 20:
                raise FitDivergenceError(
                    f"objective increased for {bad_streak} consecutive steps "
                    f"(last value {new_objective:.6g})"
                )
        else:
            bad_streak = 0
        objective = new_objective
    return theta, objective, {"iterations": n_iter, "converged": converged}


def logistic_loss_and_grad(points: np.ndarray, theta: np.ndarray):
    """Per-sample log-loss and gradient for a linear classifier.

    Points are (x_bar, y) rows with y in {0, 1} in the last column; theta
    holds the feature coefficients followed by the intercept.  The loss is
    log(1 + exp(-(2y - 1) * (theta^T x_bar + b))).
    """
    Xbar = points[:, :-1]
    y = points[:, -1]
    signs = 2.0 * y - 1.0
    margins = signs * (Xbar @ theta[:-1] + theta[-1])
    losses = np.logaddexp(0.0, -margins)
    # d/dm log(1+e^-m) = -sigmoid(-m), computed in log space to avoid
    # overflow at large positive margins
    coeff = -signs * np.exp(-np.logaddexp(0.0, margins))
    grads = np.empty((points.shape[0], theta.shape[0]))
    grads[:, :-1] = coeff[:, None] * Xbar
    grads[:, -1] = coeff
    return losses, grads


def fit_logistic_from_sketch(spec: FeatureMap, sketch: PrivateSketch,
                             config: TrainConfig | None = None,
                             gd: GdConfig | None = None,
                             features: SyntheticFeatures | None = None
                             ) -> LogisticModel:
    """Train a logistic model from the sketch alone.

    The domain's last attribute must be the binary label.  Synthetic
    points come from the prior (uniform features, fair-coin label); the
    loss-independent weights are computed once, then the reweighted
    log-loss is minimized with seeded restarts, keeping the best run.
    """
    gd = gd or GdConfig()
    if features is None:
        features = SyntheticFeatures(spec, config)
    domain = features.domain
    if domain.kinds[-1] != BINARY:
        raise ValueError("the domain's last attribute must be the binary label")
    lam = regularization_lambda(spec, sketch.epsilon_num, sketch.noisy_count,
                                features.config.extra_reg)
    if lam <= 0:
        lam = 1e-9
    weighted = compute_weights(spec, sketch, features, lam)
    p = spec.d  # d-1 feature coefficients plus intercept
    rng = np.random.default_rng(gd.seed)
    best = None
    starts = [np.zeros(p)]
    starts += [rng.normal(0.0, 0.5, size=p) for _ in range(max(gd.restarts - 1, 0))]
    last_error = None
    for theta0 in starts:
        try:
            theta, objective, info = fit_weighted(
                weighted, logistic_loss_and_grad, theta0, gd
            )
        except FitDivergenceError as err:
            last_error = err
            continue
        if best is None or objective < best[1]:
            best = (theta, objective, info)
    if best is None:
        raise FitDivergenceError(
            f"all {len(starts)} starts diverged; last: {last_error}"
        )
    theta, objective, info = best
    return LogisticModel(theta[:-1], float(theta[-1]), objective,
                         {"lambda": lam, **info})


def evaluate_auc(model: LogisticModel, test_points: np.ndarray) -> float:
    """AUC of the model's scores on (x_bar, y) rows of a held-out set."""
    Xbar = test_points[:, :-1]
    y = test_points[:, -1].astype(int)
    return auc(model.scores(Xbar), y)
