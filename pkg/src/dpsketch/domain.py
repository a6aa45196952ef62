"""Bounded data domain: an axis-aligned box with per-attribute kinds."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

CONTINUOUS = "continuous"
BINARY = "binary"


class DomainError(ValueError):
    """A record or bound violates the declared domain."""


@dataclass(frozen=True)
class Domain:
    """Axis-aligned box bounding all records, with per-attribute kinds.

    Binary attributes must have bounds {0, 1}; continuous attributes need
    lower < upper.  All records are expected to satisfy
    lower <= x <= upper componentwise.
    """

    lower: tuple[float, ...]
    upper: tuple[float, ...]
    kinds: tuple[str, ...] = field(default=())

    def __post_init__(self):
        lower = tuple(float(v) for v in self.lower)
        upper = tuple(float(v) for v in self.upper)
        kinds = tuple(self.kinds) if self.kinds else (CONTINUOUS,) * len(lower)
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)
        object.__setattr__(self, "kinds", kinds)
        if not (len(lower) == len(upper) == len(kinds)):
            raise DomainError("lower, upper and kinds must have equal length")
        if len(lower) == 0:
            raise DomainError("domain must have at least one attribute")
        for j, (lo, hi, kind) in enumerate(zip(lower, upper, kinds)):
            if kind == BINARY:
                if (lo, hi) != (0.0, 1.0):
                    raise DomainError(
                        f"binary attribute {j} must have bounds (0, 1), got ({lo}, {hi})"
                    )
            elif kind == CONTINUOUS:
                if not lo < hi:
                    raise DomainError(
                        f"attribute {j} needs lower < upper, got ({lo}, {hi})"
                    )
            else:
                raise DomainError(f"unknown attribute kind {kind!r}")

    @property
    def d(self) -> int:
        return len(self.lower)

    @property
    def lower_arr(self) -> np.ndarray:
        return np.asarray(self.lower, dtype=float)

    @property
    def upper_arr(self) -> np.ndarray:
        return np.asarray(self.upper, dtype=float)

    @classmethod
    def unit(cls, d: int, kinds: tuple[str, ...] | None = None) -> "Domain":
        """The unit box [0, 1]^d."""
        return cls((0.0,) * d, (1.0,) * d, kinds or (CONTINUOUS,) * d)

    def contains(self, x) -> bool:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        return bool(
            np.all(x >= self.lower_arr - 0.0) and np.all(x <= self.upper_arr + 0.0)
        )

    def validate(self, records) -> np.ndarray:
        """Check a (n, d) batch of records against the bounds; return the array."""
        x = np.atleast_2d(np.asarray(records, dtype=float))
        if x.shape[1] != self.d:
            raise DomainError(f"expected {self.d} attributes, got {x.shape[1]}")
        if not np.all(np.isfinite(x)):
            raise DomainError("records contain non-finite values")
        low = x < self.lower_arr
        high = x > self.upper_arr
        if low.any() or high.any():
            i, j = np.argwhere(low | high)[0]
            raise DomainError(
                f"record {i}, attribute {j}: value {x[i, j]} outside "
                f"[{self.lower[j]}, {self.upper[j]}]"
            )
        return x

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        """Draw n i.i.d. points: uniform per continuous attribute, fair coin per binary."""
        out = np.empty((n, self.d))
        for j, kind in enumerate(self.kinds):
            if kind == BINARY:
                out[:, j] = rng.integers(0, 2, size=n).astype(float)
            else:
                out[:, j] = rng.uniform(self.lower[j], self.upper[j], size=n)
        return out

    def to_dict(self) -> dict:
        return {
            "lower": list(self.lower),
            "upper": list(self.upper),
            "kinds": list(self.kinds),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Domain":
        return cls(tuple(data["lower"]), tuple(data["upper"]), tuple(data["kinds"]))
