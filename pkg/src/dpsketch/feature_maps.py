"""Feature maps for dataset sketching: binned indicators, random Fourier
features, and one-hot LSH buckets.

Each map embeds points of R^d into R^m.  The maps expose, besides the
per-point embedding, batch paths used by the estimator: a compact batch
encoding, the averaged Gram matrix, target cross-products and the
application of a coefficient vector.  One-hot maps (HIST, RACE) never
materialize the dense (n, m) feature matrix; they work on integer bucket
indices instead.
"""

from __future__ import annotations

import hashlib
import json

import numpy as np

from .domain import Domain, DomainError

SERIALIZATION_VERSION = 1


class FeatureMapError(ValueError):
    """Invalid feature-map parameters or inputs."""


def _canonical_json(data: dict) -> str:
    return json.dumps(data, sort_keys=True, separators=(",", ":"))


class FeatureMap:
    """Common interface of all feature maps.

    Instances are immutable after construction: randomness is drawn once
    and stored, so embedding the same point twice yields identical vectors
    and specs serialize to self-contained documents.
    """

    variant: str
    d: int
    m: int
    domain: Domain

    # -- per-point API ----------------------------------------------------

    def embed(self, x) -> np.ndarray:
        """Embed a single point into R^m."""
        x = np.asarray(x, dtype=float).reshape(1, -1)
        return self.embed_batch(x)[0]

    def embed_batch(self, X) -> np.ndarray:
        """Embed an (n, d) batch into a dense (n, m) matrix."""
        raise NotImplementedError

    def sensitivity_l1(self) -> float:
        """max_x ||Phi(x)||_1, the L1 sensitivity of the feature sum."""
        raise NotImplementedError

    def kernel_scale(self) -> float:
        """Normalizer turning <Phi(x), Phi(x')> into a kernel estimate in [0, 1]."""
        raise NotImplementedError

    def kernel_estimate(self, x, y) -> float:
        return float(np.dot(self.embed(x), self.embed(y)) / self.kernel_scale())

    # -- batch encoding used by the estimator -----------------------------

    def encode_batch(self, X):
        """Compact encoding of a batch, consumed by gram/dot/apply/sum below."""
        raise NotImplementedError

    def gram(self, enc) -> np.ndarray:
        """(1/n) P^T P for the encoded batch."""
        raise NotImplementedError

    def dot_targets(self, enc, F) -> np.ndarray:
        """(1/n) P^T F for target values F of shape (n,) or (n, t)."""
        raise NotImplementedError

    def apply(self, enc, v: np.ndarray) -> np.ndarray:
        """P @ v for the encoded batch."""
        raise NotImplementedError

    def sum_features(self, enc) -> np.ndarray:
        """Columnwise sum of features over the encoded batch."""
        raise NotImplementedError

    def encoded_count(self, enc) -> int:
        raise NotImplementedError

    # -- serialization ----------------------------------------------------

    def to_dict(self) -> dict:
        raise NotImplementedError

    @property
    def spec_id(self) -> str:
        return hashlib.sha256(_canonical_json(self.to_dict()).encode()).hexdigest()

    def __eq__(self, other):
        return isinstance(other, FeatureMap) and self.to_dict() == other.to_dict()


class _OneHotBlocks:
    """Shared batch machinery for maps that concatenate one-hot blocks.

    HIST concatenates d blocks of width n_bins (one active bin per
    attribute); RACE concatenates R blocks of width W (one active bucket
    per hash).  The encoding is the (n, blocks) integer matrix of active
    positions within each block.
    """

    n_blocks: int
    width: int

    def _indices(self, X) -> np.ndarray:
        raise NotImplementedError

    def _onehot(self, idx: np.ndarray) -> np.ndarray:
        n = idx.shape[0]
        out = np.zeros((n, self.n_blocks * self.width))
        flat = idx + self.width * np.arange(self.n_blocks)
        out[np.arange(n)[:, None], flat] = 1.0
        return out

    def embed_batch(self, X) -> np.ndarray:
        return self._onehot(self.encode_batch(X))

    def encode_batch(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        return self._indices(X)

    def gram(self, idx: np.ndarray) -> np.ndarray:
        n, B = idx.shape
        W = self.width
        m = B * W
        G = np.zeros((m, m))
        for a in range(B):
            ia = idx[:, a]
            for b in range(a, B):
                joint = np.bincount(ia * W + idx[:, b], minlength=W * W)
                block = joint.reshape(W, W).astype(float)
                G[a * W:(a + 1) * W, b * W:(b + 1) * W] = block
                if b != a:
                    G[b * W:(b + 1) * W, a * W:(a + 1) * W] = block.T
        G /= n
        return G

    def dot_targets(self, idx: np.ndarray, F) -> np.ndarray:
        F = np.asarray(F, dtype=float)
        single = F.ndim == 1
        Fm = F[:, None] if single else F
        n, B = idx.shape
        out = np.empty((B * self.width, Fm.shape[1]))
        for t in range(Fm.shape[1]):
            col = Fm[:, t]
            for a in range(B):
                out[a * self.width:(a + 1) * self.width, t] = np.bincount(
                    idx[:, a], weights=col, minlength=self.width
                )
        out /= n
        return out[:, 0] if single else out

    def apply(self, idx: np.ndarray, v: np.ndarray) -> np.ndarray:
        blocks = np.asarray(v, dtype=float).reshape(self.n_blocks, self.width)
        out = np.zeros(idx.shape[0])
        for a in range(self.n_blocks):
            out += blocks[a, idx[:, a]]
        return out

    def sum_features(self, idx: np.ndarray) -> np.ndarray:
        out = np.empty(self.n_blocks * self.width)
        for a in range(self.n_blocks):
            out[a * self.width:(a + 1) * self.width] = np.bincount(
                idx[:, a], minlength=self.width
            )
        return out

    def encoded_count(self, idx: np.ndarray) -> int:
        return idx.shape[0]


class HistMap(_OneHotBlocks, FeatureMap):
    """Per-attribute equal-width binned indicators (marginal histograms).

    m = d * n_bins; each record activates exactly one bin per attribute.
    The upper domain edge is clamped into the last bin so the map is total
    on the closed box.
    """

    variant = "HIST"

    def __init__(self, domain: Domain, n_bins: int):
        if n_bins < 1:
            raise FeatureMapError("n_bins must be >= 1")
        self.domain = domain
        self.n_bins = int(n_bins)
        self.d = domain.d
        self.m = self.d * self.n_bins
        self.n_blocks = self.d
        self.width = self.n_bins

    def _indices(self, X) -> np.ndarray:
        X = self.domain.validate(X)
        lo = self.domain.lower_arr
        widths = (self.domain.upper_arr - lo) / self.n_bins
        idx = np.floor((X - lo) / widths).astype(np.int64)
        return np.clip(idx, 0, self.n_bins - 1)

    def sensitivity_l1(self) -> float:
        return float(self.d)

    def kernel_scale(self) -> float:
        return float(self.d)

    def to_dict(self) -> dict:
        return {
            "version": SERIALIZATION_VERSION,
            "variant": self.variant,
            "d": self.d,
            "m": self.m,
            "params": {"n_bins": self.n_bins},
            "matrices": {},
            "seed": None,
            "domain": self.domain.to_dict(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "HistMap":
        return cls(Domain.from_dict(data["domain"]), data["params"]["n_bins"])


class RffMap(FeatureMap):
    """Random Fourier features for the Gaussian kernel.

    Frequencies are i.i.d. N(0, sigma^-2 I_d); the embedding is
    [cos(x^T Omega), sin(x^T Omega)], so <Phi(x), Phi(x')> / m' estimates
    exp(-||x - x'||^2 / (2 sigma^2)).
    """

    variant = "RFF"

    def __init__(self, frequencies: np.ndarray, sigma: float,
                 domain: Domain | None = None, seed=None):
        frequencies = np.asarray(frequencies, dtype=float)
        if frequencies.ndim != 2:
            raise FeatureMapError("frequencies must be a (d, m/2) matrix")
        self.freqs = frequencies
        self.sigma = float(sigma)
        self.d, self.m_half = frequencies.shape
        self.m = 2 * self.m_half
        self.domain = domain if domain is not None else Domain.unit(self.d)
        self.seed = seed

    def embed_batch(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if not np.all(np.isfinite(X)):
            raise FeatureMapError("points must be finite")
        Z = X @ self.freqs
        return np.concatenate([np.cos(Z), np.sin(Z)], axis=1)

    def sensitivity_l1(self) -> float:
        return self.m_half * np.sqrt(2.0)

    def kernel_scale(self) -> float:
        return float(self.m_half)

    # Dense encoding: the (n, m) feature matrix itself.

    def encode_batch(self, X) -> np.ndarray:
        return self.embed_batch(X)

    def gram(self, P: np.ndarray) -> np.ndarray:
        return (P.T @ P) / P.shape[0]

    def dot_targets(self, P: np.ndarray, F) -> np.ndarray:
        return P.T @ np.asarray(F, dtype=float) / P.shape[0]

    def apply(self, P: np.ndarray, v: np.ndarray) -> np.ndarray:
        return P @ np.asarray(v, dtype=float)

    def sum_features(self, P: np.ndarray) -> np.ndarray:
        return P.sum(axis=0)

    def encoded_count(self, P: np.ndarray) -> int:
        return P.shape[0]

    def to_dict(self) -> dict:
        return {
            "version": SERIALIZATION_VERSION,
            "variant": self.variant,
            "d": self.d,
            "m": self.m,
            "params": {"sigma": self.sigma},
            "matrices": {"frequencies": self.freqs.ravel(order="C").tolist()},
            "seed": self.seed,
            "domain": self.domain.to_dict(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "RffMap":
        d, m = data["d"], data["m"]
        freqs = np.asarray(data["matrices"]["frequencies"]).reshape(d, m // 2)
        return cls(freqs, data["params"]["sigma"],
                   Domain.from_dict(data["domain"]), data["seed"])


class RaceMap(_OneHotBlocks, FeatureMap):
    """Concatenated one-hot encodings of R independent LSH bucket hashes.

    Uses p-stable (Gaussian) projection hashing with modular wrap:
    h_r(x) = floor((w_r^T x + b_r) / r_width) mod W, with w_r ~ N(0, I_d)
    and b_r ~ Unif[0, r_width).  m = R * W; each point activates exactly
    one bucket per hash.
    """

    variant = "RACE"

    def __init__(self, projections: np.ndarray, offsets: np.ndarray,
                 n_buckets: int, r_width: float,
                 domain: Domain | None = None, seed=None):
        projections = np.asarray(projections, dtype=float)
        offsets = np.asarray(offsets, dtype=float)
        if projections.ndim != 2 or offsets.shape != (projections.shape[0],):
            raise FeatureMapError("projections must be (R, d), offsets (R,)")
        if n_buckets < 2:
            raise FeatureMapError("need at least 2 buckets")
        if r_width <= 0:
            raise FeatureMapError("r_width must be positive")
        self.projections = projections
        self.offsets = offsets
        self.n_hashes, self.d = projections.shape
        self.n_buckets = int(n_buckets)
        self.r_width = float(r_width)
        self.m = self.n_hashes * self.n_buckets
        self.n_blocks = self.n_hashes
        self.width = self.n_buckets
        self.domain = domain if domain is not None else Domain.unit(self.d)
        self.seed = seed

    def _indices(self, X) -> np.ndarray:
        if not np.all(np.isfinite(X)):
            raise FeatureMapError("points must be finite")
        Z = (X @ self.projections.T + self.offsets) / self.r_width
        return np.mod(np.floor(Z).astype(np.int64), self.n_buckets)

    def sensitivity_l1(self) -> float:
        return float(self.n_hashes)

    def kernel_scale(self) -> float:
        return float(self.n_hashes)

    def to_dict(self) -> dict:
        return {
            "version": SERIALIZATION_VERSION,
            "variant": self.variant,
            "d": self.d,
            "m": self.m,
            "params": {
                "n_hashes": self.n_hashes,
                "n_buckets": self.n_buckets,
                "r_width": self.r_width,
            },
            "matrices": {
                "projections": self.projections.ravel(order="C").tolist(),
                "offsets": self.offsets.tolist(),
            },
            "seed": self.seed,
            "domain": self.domain.to_dict(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "RaceMap":
        p = data["params"]
        proj = np.asarray(data["matrices"]["projections"]).reshape(
            p["n_hashes"], data["d"]
        )
        return cls(proj, np.asarray(data["matrices"]["offsets"]),
                   p["n_buckets"], p["r_width"],
                   Domain.from_dict(data["domain"]), data["seed"])


# -- constructors ---------------------------------------------------------


def build_hist(domain: Domain, n_bins: int) -> HistMap:
    """Equal-width marginal histogram map over the given domain."""
    return HistMap(domain, n_bins)


def build_rff(d: int, m: int, sigma: float, seed,
              domain: Domain | None = None) -> RffMap:
    """Random Fourier feature map with m/2 frequencies ~ N(0, sigma^-2 I_d)."""
    if m % 2 != 0 or m <= 0:
        raise FeatureMapError("m must be a positive even integer")
    if sigma <= 0:
        raise FeatureMapError("sigma must be positive")
    rng = np.random.default_rng(seed)
    freqs = rng.normal(0.0, 1.0 / sigma, size=(d, m // 2))
    return RffMap(freqs, sigma, domain, seed)


def build_race(d: int, n_hashes: int, n_buckets: int, r_width: float, seed,
               domain: Domain | None = None) -> RaceMap:
    """RACE map: n_hashes Gaussian-projection LSH functions into n_buckets each."""
    if n_hashes < 1:
        raise FeatureMapError("need at least one hash")
    if n_buckets < 2:
        raise FeatureMapError("need at least 2 buckets")
    if r_width <= 0:
        raise FeatureMapError("r_width must be positive")
    rng = np.random.default_rng(seed)
    proj = rng.normal(0.0, 1.0, size=(n_hashes, d))
    offsets = rng.uniform(0.0, r_width, size=n_hashes)
    return RaceMap(proj, offsets, n_buckets, r_width, domain, seed)


def feature_map_from_dict(data: dict) -> FeatureMap:
    if data.get("version") != SERIALIZATION_VERSION:
        raise FeatureMapError(
            f"unsupported feature-map document version {data.get('version')!r}"
        )
    variant = data.get("variant")
    cls = {"HIST": HistMap, "RFF": RffMap, "RACE": RaceMap}.get(variant)
    if cls is None:
        raise FeatureMapError(f"unknown feature-map variant {variant!r}")
    return cls.from_dict(data)


# -- functional wrappers --------------------------------------------------


def embed(spec: FeatureMap, x) -> np.ndarray:
    return spec.embed(x)


def sensitivity_l1(spec: FeatureMap) -> float:
    return spec.sensitivity_l1()


def kernel_estimate(spec: FeatureMap, x, y) -> float:
    return spec.kernel_estimate(x, y)
