"""Differentially private dataset sketches and sketch-based estimation.

A dataset is compressed into a single noisy vector (the private sketch):
the sum of a randomized feature map over all records plus Laplace noise,
together with a noisy record count.  Arbitrarily many statistics can then
be estimated from that one vector by fitting linear models on synthetic
samples, without touching the data again.
"""

from .domain import Domain, DomainError
from .feature_maps import (
    FeatureMap,
    HistMap,
    RffMap,
    RaceMap,
    build_hist,
    build_race,
    build_rff,
    embed,
    feature_map_from_dict,
    kernel_estimate,
    sensitivity_l1,
)
from .sketch import (
    ExactSketch,
    PrivateSketch,
    SketchError,
    load_sketch,
    merge,
    privatize,
    sample_laplace,
    save_sketch,
    sketch_exact,
    sketch_from_dict,
)
from .estimator import (
    SketchModel,
    SyntheticFeatures,
    TrainConfig,
    fit_target,
    estimate,
    learn_and_estimate,
    loss_value,
    regularization_lambda,
    sample_prior,
    theorem_lambda,
)
from .targets import (
    BoxIndicator,
    CdfThreshold,
    CenteredProduct,
    Custom,
    Moment,
    Predicate,
    TargetError,
    answer_queries,
    estimate_cdf,
    estimate_covariance,
    eval_target,
)
from .metrics import auc, emd_1d, frobenius, mae, mre
from .reweighting import (
    GdConfig,
    LogisticModel,
    WeightedSamples,
    compute_weights,
    fit_logistic_from_sketch,
    fit_weighted,
)

__version__ = "0.1.0"
