"""Estimate dataset averages of arbitrary functions from a sketch.

The estimator approximates a target function f over the bounded domain by
a linear combination of feature-map components, fitted by ridge
regression on synthetic samples drawn from a prior (uniform on the
domain by default).  Because sketching is linear, the inner product of
the fitted coefficients with the normalized sketch then estimates the
dataset average of f, and any number of targets can be answered from one
sketch.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .domain import Domain
from .feature_maps import FeatureMap
from .sketch import PrivateSketch, SketchError

LAMBDA_FLOOR = 1e-9  # numeric-stability regularization when there is no noise

COND_WARN_THRESHOLD = 1e12


@dataclass
class TrainConfig:
    """Knobs of the synthetic-sample ridge fit.

    prior, when given, is a callable (n, rng) -> (n, d) array replacing
    the default uniform/fair-coin sampler of the domain.
    """

    n_synth: int = 100_000
    extra_reg: float = 1.0
    seed: object = 0
    domain: Domain | None = None
    prior: object = None

    def __post_init__(self):
        if self.n_synth < 1:
            raise ValueError("n_synth must be >= 1")
        if self.extra_reg <= 0:
            raise ValueError("extra_reg must be positive")


@dataclass(frozen=True)
class SketchModel:
    """Fitted linear coefficients over the feature map, ready to query a sketch."""

    coef: np.ndarray
    lam: float
    spec_id: str
    diagnostics: dict = field(default_factory=dict, compare=False)


def sample_prior(domain: Domain, n_synth: int, seed) -> np.ndarray:
    """i.i.d. draws from the default prior: uniform boxes, fair binary coins."""
    if n_synth < 1:
        raise ValueError("n_synth must be >= 1")
    return domain.sample(n_synth, np.random.default_rng(seed))


def regularization_lambda(spec: FeatureMap, epsilon_num: float,
                          noisy_count: float, extra_reg: float = 1.0) -> float:
    """Ridge penalty tied to the privacy noise variance.

    2 * sensitivity^2 / (eps_num^2 * count) scaled by extra_reg; without
    noise (eps_num = inf) a small stability floor is returned instead.
    """
    if math.isinf(epsilon_num):
        return LAMBDA_FLOOR
    delta = spec.sensitivity_l1()
    return extra_reg * 2.0 * delta * delta / (
        epsilon_num * epsilon_num * max(noisy_count, 1.0)
    )


def theorem_lambda(spec: FeatureMap, epsilon_num: float, n: float) -> float:
    """Penalty variant noise_variance / n^2 used by the risk upper bound."""
    if math.isinf(epsilon_num):
        return LAMBDA_FLOOR
    delta = spec.sensitivity_l1()
    sigma2 = 2.0 * delta * delta / (epsilon_num * epsilon_num)
    return sigma2 / (n * n)


def _evaluate_target(f, points: np.ndarray) -> np.ndarray:
    """Evaluate a target on an (n, d) batch; accepts vectorized or scalar callables."""
    values = np.asarray(f(points), dtype=float)
    if values.shape != (points.shape[0],):
        values = np.array([float(f(x)) for x in points])
    if not np.all(np.isfinite(values)):
        raise ValueError("target function produced non-finite values")
    return values


class SyntheticFeatures:
    """Synthetic prior samples with cached embeddings and Gram factorizations.

    Building the Gram matrix dominates the cost of a fit; this cache lets
    many targets (and many sketches of the same spec) share one sample
    set, one Gram matrix, and one factorization per distinct ridge
    penalty.  Samples are drawn deterministically from the config seed.
    """

    def __init__(self, spec: FeatureMap, config: TrainConfig | None = None):
        self.spec = spec
        self.config = config or TrainConfig()
        domain = self.config.domain or spec.domain
        if domain.d != spec.d:
            raise ValueError("domain dimension does not match the feature map")
        self.domain = domain
        rng = np.random.default_rng(self.config.seed)
        if self.config.prior is not None:
            self.points = np.asarray(self.config.prior(self.config.n_synth, rng),
                                     dtype=float)
        else:
            self.points = domain.sample(self.config.n_synth, rng)
        if self.points.shape[0] < spec.m:
            warnings.warn(
                f"n_synth={self.points.shape[0]} is below the sketch size "
                f"m={spec.m}; the fit may overfit the synthetic samples",
                stacklevel=2,
            )
        self._enc = spec.encode_batch(self.points)
        self._gram = None
        self._factors: dict[float, object] = {}
        self._target_cache: dict[object, np.ndarray] = {}

    @classmethod
    def from_points(cls, spec: FeatureMap, points) -> "SyntheticFeatures":
        """Wrap pre-drawn synthetic points instead of sampling the prior."""
        self = cls.__new__(cls)
        self.spec = spec
        self.points = np.atleast_2d(np.asarray(points, dtype=float))
        self.config = TrainConfig(n_synth=self.points.shape[0])
        self.domain = spec.domain
        self._enc = spec.encode_batch(self.points)
        self._gram = None
        self._factors = {}
        self._target_cache = {}
        return self

    @property
    def n(self) -> int:
        return self.points.shape[0]

    def gram(self) -> np.ndarray:
        if self._gram is None:
            self._gram = self.spec.gram(self._enc)
        return self._gram

    def target_values(self, f) -> np.ndarray:
        key = f if _hashable(f) else None
        if key is not None and key in self._target_cache:
            return self._target_cache[key]
        values = _evaluate_target(f, self.points)
        if key is not None:
            self._target_cache[key] = values
        return values

    def dot_targets(self, F) -> np.ndarray:
        return self.spec.dot_targets(self._enc, F)

    def apply(self, v: np.ndarray) -> np.ndarray:
        return self.spec.apply(self._enc, v)

    def solve(self, rhs: np.ndarray, lam: float) -> np.ndarray:
        """Solve (Gram + lam I) x = rhs with a cached SPD factorization.

        Falls back to a jittered factorization and finally to a
        rank-revealing least-squares solve if the matrix is numerically
        indefinite.
        """
        factor = self._factors.get(lam)
        if factor is None:
            factor = self._factorize(lam)
            # keep only a handful of factorizations; sweeps over many
            # distinct penalties would otherwise hold one m x m factor each
            while len(self._factors) >= 8:
                self._factors.pop(next(iter(self._factors)))
            self._factors[lam] = factor
        kind, data = factor
        if kind == "cho":
            return scipy.linalg.cho_solve(data, rhs)
        A = data
        return np.linalg.lstsq(A, rhs, rcond=None)[0]

    def _factorize(self, lam: float):
        G = self.gram()
        A = G + lam * np.eye(G.shape[0])
        try:
            c = scipy.linalg.cho_factor(A, lower=True, check_finite=False)
            self._warn_condition(c[0])
            return ("cho", c)
        except np.linalg.LinAlgError:
            pass
        except scipy.linalg.LinAlgError:
            pass
        jitter = 1e-10 * np.trace(G) / G.shape[0]
        try:
            c = scipy.linalg.cho_factor(A + jitter * np.eye(G.shape[0]),
                                        lower=True, check_finite=False)
            self._warn_condition(c[0])
            return ("cho", c)
        except (np.linalg.LinAlgError, scipy.linalg.LinAlgError):
            return ("lstsq", A)

    @staticmethod
    def _warn_condition(chol_factor: np.ndarray) -> None:
        diag = np.abs(np.diagonal(chol_factor))
        kappa = (diag.max() / diag.min()) ** 2 if diag.min() > 0 else math.inf
        if kappa > COND_WARN_THRESHOLD:
            warnings.warn(
                f"regularized Gram matrix is ill-conditioned (kappa ~ {kappa:.2e})",
                stacklevel=3,
            )

    def fit(self, f, lam: float) -> SketchModel:
        """Ridge-fit coefficients so that <coef, Phi(x)> approximates f(x)."""
        if lam < 0:
            raise ValueError("lambda must be nonnegative")
        F = self.target_values(f)
        rhs = self.dot_targets(F)
        coef = self.solve(rhs, lam)
        residual = self.apply(coef) - F
        train_loss = float(residual @ residual / self.n + lam * coef @ coef)
        diagnostics = {
            "train_loss": train_loss,
            "residual_norm": float(np.linalg.norm(residual) / np.sqrt(self.n)),
            "n_synth": self.n,
        }
        return SketchModel(coef, lam, self.spec.spec_id, diagnostics)


def _hashable(obj) -> bool:
    try:
        hash(obj)
        return True
    except TypeError:
        return False


def fit_target(spec: FeatureMap, f, synth, lam: float) -> SketchModel:
    """One-shot ridge fit of a target on given synthetic points.

    synth may be a SyntheticFeatures cache or a raw (n, d) array of points.
    """
    if not isinstance(synth, SyntheticFeatures):
        synth = SyntheticFeatures.from_points(spec, synth)
    return synth.fit(f, lam)


def estimate(model: SketchModel, sketch: PrivateSketch) -> float:
    """Inner product of fitted coefficients with the normalized sketch."""
    if model.spec_id != sketch.spec_id:
        raise SketchError("model and sketch were built for different feature maps")
    return float(model.coef @ sketch.normalized)


def loss_value(spec: FeatureMap, a: np.ndarray, f, samples, lam: float) -> float:
    """The regularized squared-error objective at coefficients a."""
    samples = np.atleast_2d(np.asarray(samples, dtype=float))
    a = np.asarray(a, dtype=float)
    F = _evaluate_target(f, samples)
    pred = spec.apply(spec.encode_batch(samples), a)
    r = F - pred
    return float(r @ r / samples.shape[0] + lam * a @ a)


def learn_and_estimate(spec: FeatureMap, sketch: PrivateSketch, f,
                       config: TrainConfig | None = None,
                       features: SyntheticFeatures | None = None,
                       return_model: bool = False):
    """Full pipeline: sample the prior, pick lambda, fit, query the sketch.

    A prebuilt SyntheticFeatures cache may be passed to amortize the Gram
    computation across targets; it must match the spec and config.
    """
    if sketch.spec_id != spec.spec_id:
        raise SketchError("sketch was built with a different feature map")
    if features is None:
        features = SyntheticFeatures(spec, config)
    cfg = features.config
    lam = regularization_lambda(spec, sketch.epsilon_num, sketch.noisy_count,
                                cfg.extra_reg)
    model = features.fit(f, lam)
    value = estimate(model, sketch)
    if return_model:
        return value, model
    return value
