"""Exact and privatized dataset sketches.

The exact sketch of a dataset is the columnwise sum of the feature map
over all records together with the record count.  Privatization adds
i.i.d. Laplace noise calibrated to the map's L1 sensitivity to the sum,
and Laplace(1/eps_den) noise to the count; the total budget eps splits as
eps_num + eps_den.  Sketches of disjoint datasets with the same spec and
noise scales merge by plain addition.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field

import numpy as np

from .feature_maps import FeatureMap, feature_map_from_dict

SKETCH_FILE_VERSION = 1

DEFAULT_SPLIT = 0.98  # fraction of the budget spent on the feature sum


class SketchError(ValueError):
    """Invalid sketch parameters or mismatched sketches."""


@dataclass(frozen=True)
class ExactSketch:
    """Noise-free sum of features and record count."""

    sum_features: np.ndarray
    count: int

    def normalized(self) -> np.ndarray:
        return self.sum_features / max(self.count, 1)


@dataclass(frozen=True)
class PrivateSketch:
    """The published artifact: noisy feature sum, noisy count, budget bookkeeping.

    The sum representation is stored (not the normalized sketch) so that
    sketches stay mergeable; `normalized` is always recomputed, with the
    noisy count clamped to >= 1 only at normalization time.
    """

    noisy_sum: np.ndarray
    noisy_count: float
    epsilon_num: float
    epsilon_den: float
    spec_id: str
    noise_seed: object = field(default=None, compare=False)

    @property
    def epsilon(self) -> float:
        return self.epsilon_num + self.epsilon_den

    @property
    def normalized(self) -> np.ndarray:
        return self.noisy_sum / max(self.noisy_count, 1.0)

    def to_dict(self, spec: FeatureMap | None = None, created_at=None) -> dict:
        doc = {
            "version": SKETCH_FILE_VERSION,
            "noisy_sum": self.noisy_sum.tolist(),
            "noisy_count": self.noisy_count,
            "epsilon_num": self.epsilon_num,
            "epsilon_den": self.epsilon_den,
            "spec_id": self.spec_id,
        }
        if spec is not None:
            if spec.spec_id != self.spec_id:
                raise SketchError("spec does not match this sketch's spec_id")
            doc["spec"] = spec.to_dict()
        if self.noise_seed is not None:
            doc["rng_seed_of_noise"] = self.noise_seed
        if created_at is not None:
            doc["created_at"] = created_at
        return doc


def sketch_exact(spec: FeatureMap, records) -> ExactSketch:
    """Sum the feature map over all records.

    One-hot maps accumulate exact integer bucket counts; dense maps use
    numpy's pairwise summation, so the result is reproducible regardless
    of how the records were ordered or chunked (up to float associativity).
    """
    records = np.asarray(records, dtype=float)
    if records.size == 0:
        return ExactSketch(np.zeros(spec.m), 0)
    records = np.atleast_2d(records)
    enc = spec.encode_batch(records)
    return ExactSketch(spec.sum_features(enc), records.shape[0])


def sample_laplace(scale: float, rng: np.random.Generator) -> float:
    """One draw from the centered Laplace distribution; scale=inf means no noise."""
    if math.isinf(scale):
        return 0.0
    if scale <= 0:
        raise SketchError("Laplace scale must be positive or inf")
    return float(rng.laplace(0.0, scale))


def _laplace_vector(scale: float, size: int, rng: np.random.Generator) -> np.ndarray:
    if math.isinf(scale):
        return np.zeros(size)
    return rng.laplace(0.0, scale, size=size)


def privatize(exact: ExactSketch, spec: FeatureMap, epsilon: float,
              split_num: float = DEFAULT_SPLIT, seed=None) -> PrivateSketch:
    """Laplace-noise the exact sketch under total budget epsilon.

    epsilon = inf publishes the exact values with zero noise (both budget
    shares recorded as inf).  Otherwise the sum gets per-entry noise of
    scale sensitivity/eps_num and the count gets scale 1/eps_den.
    """
    if not (0.0 < split_num < 1.0):
        raise SketchError("split_num must lie strictly between 0 and 1")
    if epsilon <= 0:
        raise SketchError("epsilon must be positive (or inf)")
    rng = np.random.default_rng(seed)
    if math.isinf(epsilon):
        eps_num = eps_den = math.inf
    else:
        eps_num = split_num * epsilon
        eps_den = (1.0 - split_num) * epsilon
    sum_scale = spec.sensitivity_l1() / eps_num if math.isfinite(eps_num) else math.inf
    count_scale = 1.0 / eps_den if math.isfinite(eps_den) else math.inf
    noisy_sum = exact.sum_features + _laplace_vector(sum_scale, spec.m, rng)
    noisy_count = exact.count + sample_laplace(count_scale, rng)
    return PrivateSketch(noisy_sum, noisy_count, eps_num, eps_den,
                         spec.spec_id, noise_seed=seed)


def merge(a: PrivateSketch, b: PrivateSketch) -> PrivateSketch:
    """Combine sketches of two datasets into the sketch of their union."""
    if a.spec_id != b.spec_id:
        raise SketchError("cannot merge sketches with different feature-map specs")
    if (a.epsilon_num, a.epsilon_den) != (b.epsilon_num, b.epsilon_den):
        raise SketchError("cannot merge sketches with different noise scales")
    return PrivateSketch(a.noisy_sum + b.noisy_sum,
                         a.noisy_count + b.noisy_count,
                         a.epsilon_num, a.epsilon_den, a.spec_id)


# -- file format ----------------------------------------------------------


def _json_default(obj):
    if isinstance(obj, float) and math.isinf(obj):
        return "inf"
    raise TypeError(type(obj))


def dumps_sketch(sketch: PrivateSketch, spec: FeatureMap,
                 created_at=None) -> str:
    doc = sketch.to_dict(spec, created_at=created_at)
    doc = _encode_inf(doc)
    return json.dumps(doc, sort_keys=True, indent=1)


def _encode_inf(obj):
    if isinstance(obj, dict):
        return {k: _encode_inf(v) for k, v in obj.items()}
    if isinstance(obj, list):
        return [_encode_inf(v) for v in obj]
    if isinstance(obj, float) and math.isinf(obj):
        return "inf"
    return obj


def _decode_eps(value) -> float:
    return math.inf if value == "inf" else float(value)


def save_sketch(path, sketch: PrivateSketch, spec: FeatureMap,
                created_at=None, extra: dict | None = None) -> None:
    """Write a sketch file atomically (write-then-rename)."""
    doc = _encode_inf(sketch.to_dict(spec, created_at=created_at))
    if extra:
        doc.update(_encode_inf(extra))
    tmp = str(path) + ".tmp"
    with open(tmp, "w") as fh:
        json.dump(doc, fh, sort_keys=True, indent=1)
        fh.write("\n")
    os.replace(tmp, path)


def load_sketch(path) -> tuple[PrivateSketch, FeatureMap, dict]:
    """Read a sketch file; returns (sketch, feature map, full document)."""
    with open(path) as fh:
        doc = json.load(fh)
    return sketch_from_dict(doc) + (doc,)


def sketch_from_dict(doc: dict) -> tuple[PrivateSketch, FeatureMap]:
    if doc.get("version") != SKETCH_FILE_VERSION:
        raise SketchError(
            f"unsupported sketch file version {doc.get('version')!r}"
        )
    if "spec" not in doc:
        raise SketchError("sketch file does not embed its feature-map spec")
    spec = feature_map_from_dict(doc["spec"])
    sketch = PrivateSketch(
        np.asarray(doc["noisy_sum"], dtype=float),
        float(doc["noisy_count"]),
        _decode_eps(doc["epsilon_num"]),
        _decode_eps(doc["epsilon_den"]),
        doc["spec_id"],
        noise_seed=doc.get("rng_seed_of_noise"),
    )
    if spec.spec_id != sketch.spec_id:
        raise SketchError("embedded spec hash does not match spec_id")
    return sketch, spec
