"""Weighted particle samples and weight-degeneracy diagnostics.

Weights are kept unnormalized. Every diagnostic here (CV², negated
Shannon entropy, ESS) normalizes internally and is therefore invariant
under a positive rescaling of the weights.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class InvalidWeightsError(ValueError):
    """Raised for weight vectors that are negative, non-finite or all zero."""


def make_rng(seed: int | np.random.SeedSequence | None = None) -> np.random.Generator:
    """Return a reproducible random stream (PCG64) for ``seed``."""
    return np.random.Generator(np.random.PCG64(seed))


def _normalized(weights) -> np.ndarray:
    w = np.asarray(weights, dtype=float)
    if w.ndim != 1 or w.size == 0:
        raise InvalidWeightsError("weights must be a non-empty 1-D sequence")
    if not np.all(np.isfinite(w)):
        raise InvalidWeightsError("weights must be finite")
    if np.any(w < 0):
        raise InvalidWeightsError("weights must be nonnegative")
    wmax = w.max()
    if wmax <= 0:
        raise InvalidWeightsError("total weight must be positive")
    # divide by the max first so sums of squares cannot overflow
    w = w / wmax
    return w / np.sum(w)


def cv2(weights) -> float:
    """Squared coefficient of variation ``N * sum(w**2) / sum(w)**2 - 1``.

    Lies in ``[0, N - 1]``: zero for equal weights, ``N - 1`` when a
    single weight carries all the mass.
    """
    p = _normalized(weights)
    n = p.size
    if np.all(p == p[0]):
        return 0.0  # exact, where the formula below leaves rounding residue
    value = n * np.sum(p * p) - 1.0
    return float(min(max(value, 0.0), n - 1.0))


def entropy(weights) -> float:
    """Negated Shannon entropy ``sum(p * log(N * p))`` of the normalized weights.

    Uses ``0 * log 0 = 0``. Lies in ``[0, log N]``.
    """
    p = _normalized(weights)
    n = p.size
    if np.all(p == p[0]):
        return 0.0
    nz = p[p > 0]
    value = np.sum(nz * np.log(n * nz))
    return float(min(max(value, 0.0), np.log(n)))


def ess(weights) -> float:
    """Effective sample size ``N / (1 + cv2)``."""
    n = np.asarray(weights).size
    return n / (1.0 + cv2(weights))


def log_normalize(log_weights) -> tuple[np.ndarray, float]:
    """Shift log weights by their maximum.

    Returns ``(exp(logw - m), m)``; entries equal to ``-inf`` map to zero.
    """
    lw = np.asarray(log_weights, dtype=float)
    if np.any(np.isnan(lw)) or np.any(lw == np.inf):
        raise InvalidWeightsError("log weights contain NaN or +inf")
    m = lw.max()
    if not np.isfinite(m):
        raise InvalidWeightsError("all log weights are -inf")
    return np.exp(lw - m), float(m)


@dataclass(frozen=True)
class WeightedSample:
    """Particle positions with nonnegative unnormalized weights.

    ``log_scale`` records a factor pulled out of the stored weights for
    numerical range: the represented weights are
    ``weights * exp(log_scale)``. It does not affect any self-normalized
    quantity.
    """

    positions: np.ndarray
    weights: np.ndarray
    log_scale: float = 0.0

    def __post_init__(self):
        x = np.asarray(self.positions, dtype=float)
        w = np.asarray(self.weights, dtype=float)
        if x.ndim != 1 or w.ndim != 1 or x.size != w.size:
            raise InvalidWeightsError("positions and weights must be 1-D and of equal length")
        _normalized(w)
        object.__setattr__(self, "positions", x)
        object.__setattr__(self, "weights", w)

    @classmethod
    def uniform(cls, positions) -> WeightedSample:
        x = np.asarray(positions, dtype=float)
        return cls(x, np.ones_like(x))

    @classmethod
    def from_log_weights(cls, positions, log_weights) -> WeightedSample:
        w, m = log_normalize(log_weights)
        return cls(positions, w, m)

    def __len__(self) -> int:
        return self.positions.size

    @property
    def log_weights(self) -> np.ndarray:
        with np.errstate(divide="ignore"):
            return np.log(self.weights) + self.log_scale

    @property
    def normalized_weights(self) -> np.ndarray:
        return _normalized(self.weights)

    @property
    def total_log_weight(self) -> float:
        """``log(sum of represented weights)``."""
        return float(np.log(np.sum(self.weights)) + self.log_scale)

    def estimate(self, f=None) -> float:
        return self_normalized_estimate(self, f)

    def diagnostics(self) -> tuple[float, float, float]:
        """``(cv2, entropy, ess)`` of the weights."""
        c = cv2(self.weights)
        return c, entropy(self.weights), len(self) / (1.0 + c)


def self_normalized_estimate(sample: WeightedSample, f=None) -> float:
    """Return ``sum(w_i f(x_i)) / sum(w_i)``; ``f`` defaults to the identity.

    ``f`` is applied to the whole position array and must be vectorized.
    """
    p = sample.normalized_weights
    values = sample.positions if f is None else np.broadcast_to(
        np.asarray(f(sample.positions), dtype=float), sample.positions.shape
    )
    return float(np.dot(p, values))


def multinomial_resample(weights, m: int, rng: np.random.Generator) -> np.ndarray:
    """Draw ``m`` i.i.d. indices with ``P(i) = w_i / sum(w)``.

    ``weights`` may also be a :class:`WeightedSample`. Zero-weight
    indices are never returned.
    """
    if isinstance(weights, WeightedSample):
        weights = weights.weights
    if int(m) != m or m < 1:
        raise ValueError(f"number of draws must be a positive integer, got {m!r}")
    p = _normalized(weights)
    cdf = np.cumsum(p)
    cdf /= cdf[-1]
    u = rng.random(int(m))
    idx = np.searchsorted(cdf, u, side="right")
    return np.minimum(idx, p.size - 1)
