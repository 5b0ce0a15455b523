"""Scalar state-space models with Gaussian transitions and observations.

Every model here has the form::

    X[k+1] = m(X[k]) + sigma_w(X[k]) * W[k+1]
    Y[k]   = X[k] + sigma_v * V[k]

with standard normal ``W`` and ``V``. All density methods are vectorized
over their array arguments.
"""

from __future__ import annotations

import csv
import math
from collections.abc import Callable
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)


class InvalidParamsError(ValueError):
    pass


def norm_logpdf(x, mean, std):
    with np.errstate(over="ignore"):
        z = (np.asarray(x) - mean) / std
        return -0.5 * z * z - np.log(std) - LOG_SQRT_2PI


@dataclass(frozen=True)
class StateSpaceModel:
    """Scalar nonlinear state-space model with Gaussian noises.

    Args:
        transition_mean: ``m(x)``, vectorized.
        transition_std: ``sigma_w(x) > 0``, vectorized.
        obs_std: observation noise standard deviation ``sigma_v``.
        init_mean, init_std: Gaussian initial law of ``X[0]``.
        name: label used in reports.
    """

    transition_mean: Callable[[np.ndarray], np.ndarray]
    transition_std: Callable[[np.ndarray], np.ndarray]
    obs_std: float
    init_mean: float = 0.0
    init_std: float = 1.0
    name: str = "model"

    def __post_init__(self):
        if not self.obs_std > 0:
            raise InvalidParamsError("obs_std must be positive")
        if not self.init_std > 0:
            raise InvalidParamsError("init_std must be positive")

    def transition_log_density(self, x, x_new):
        """``log q(x, x_new)``."""
        x = np.asarray(x, dtype=float)
        return norm_logpdf(x_new, self.transition_mean(x), self.transition_std(x))

    def transition_sample(self, x, rng: np.random.Generator):
        x = np.asarray(x, dtype=float)
        eps = rng.standard_normal(x.shape)
        return self.transition_mean(x) + self.transition_std(x) * eps

    def likelihood_log_density(self, x, y):
        """``log g(x, y)``."""
        return norm_logpdf(y, x, self.obs_std)

    def initial_sample(self, rng: np.random.Generator, size=None):
        return self.init_mean + self.init_std * rng.standard_normal(size)

    def initial_log_density(self, x):
        return norm_logpdf(x, self.init_mean, self.init_std)

    # partial derivatives in the new state, used by pathwise gradients
    def transition_log_density_grad_new(self, x, x_new):
        x = np.asarray(x, dtype=float)
        s = self.transition_std(x)
        return -(np.asarray(x_new) - self.transition_mean(x)) / (s * s)

    def likelihood_log_density_grad_state(self, x, y):
        return (y - np.asarray(x)) / self.obs_std**2


@dataclass(frozen=True)
class ArchParams:
    """ARCH(1) parameters: ``sigma_w(x)**2 = beta0 + beta1 * x**2``."""

    beta0: float
    beta1: float
    sigma_v2: float

    @property
    def stationary_variance(self) -> float:
        if self.beta1 >= 1:
            raise InvalidParamsError("stationary variance requires beta1 < 1")
        return self.beta0 / (1.0 - self.beta1)

    @property
    def stationary_std(self) -> float:
        return math.sqrt(self.stationary_variance)


BENCHMARK_ARCH = ArchParams(1.0, 0.99, 10.0)


def arch_model(params: ArchParams) -> StateSpaceModel:
    """ARCH(1) state observed in additive Gaussian noise.

    The initial law is the Gaussian with the stationary variance
    ``beta0 / (1 - beta1)`` when ``beta1 < 1``, and ``N(0, beta0)``
    otherwise.
    """
    b0, b1, sv2 = float(params.beta0), float(params.beta1), float(params.sigma_v2)
    if not b0 > 0 or not sv2 > 0:
        raise InvalidParamsError("beta0 and sigma_v2 must be positive")
    if not b1 >= 0:
        raise InvalidParamsError("beta1 must be nonnegative")
    init_var = b0 / (1.0 - b1) if b1 < 1 else b0

    def mean(x):
        return np.zeros_like(np.asarray(x, dtype=float))

    def std(x):
        x = np.asarray(x, dtype=float)
        return np.sqrt(b0 + b1 * x * x)

    return StateSpaceModel(mean, std, math.sqrt(sv2), 0.0, math.sqrt(init_var),
                           name=f"arch({b0:g},{b1:g},{sv2:g})")


def linear_gaussian_model(phi: float, sigma_w: float, sigma_v: float,
                          init_mean: float = 0.0, init_std: float | None = None) -> StateSpaceModel:
    """AR(1) state observed in Gaussian noise.

    ``init_std`` defaults to the stationary standard deviation when
    ``|phi| < 1``.
    """
    if not sigma_w > 0 or not sigma_v > 0:
        raise InvalidParamsError("noise standard deviations must be positive")
    if init_std is None:
        if abs(phi) >= 1:
            raise InvalidParamsError("init_std is required for a nonstationary AR(1)")
        init_std = sigma_w / math.sqrt(1.0 - phi * phi)

    def mean(x):
        return phi * np.asarray(x, dtype=float)

    def std(x):
        return np.full_like(np.asarray(x, dtype=float), sigma_w)

    return StateSpaceModel(mean, std, float(sigma_v), float(init_mean), float(init_std),
                           name=f"ar1({phi:g},{sigma_w:g},{sigma_v:g})")


@dataclass
class ObservationSequence:
    """Observations ``y[k]`` for absolute indices ``offset, offset+1, ...``."""

    values: np.ndarray
    offset: int = 0
    regime_marks: list[tuple[int, str]] = field(default_factory=list)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim != 1:
            raise ValueError("observations must be 1-D")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("observations must be finite")

    def __len__(self):
        return self.values.size

    @property
    def steps(self) -> np.ndarray:
        return np.arange(self.offset, self.offset + self.values.size)

    def to_csv(self, path) -> Path:
        path = Path(path)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["k", "y"])
            for k, y in zip(self.steps, self.values):
                w.writerow([int(k), repr(float(y))])
        return path

    @classmethod
    def from_csv(cls, path) -> ObservationSequence:
        with Path(path).open(newline="") as fh:
            rows = list(csv.DictReader(fh))
        if not rows:
            raise ValueError(f"{path}: no observations")
        ks = [int(r["k"]) for r in rows]
        if ks != list(range(ks[0], ks[0] + len(ks))):
            raise ValueError(f"{path}: steps must be consecutive")
        return cls(np.array([float(r["y"]) for r in rows]), offset=ks[0])


def simulate(model: StateSpaceModel, steps: int, rng: np.random.Generator):
    """Draw ``(states, observations)`` of length ``steps`` from the model."""
    if steps < 1:
        raise ValueError("steps must be at least 1")
    w = rng.standard_normal(steps)
    v = rng.standard_normal(steps)
    x = np.empty(steps)
    x[0] = model.initial_sample(rng)
    for k in range(1, steps):
        prev = x[k - 1: k]
        x[k] = (model.transition_mean(prev) + model.transition_std(prev) * w[k])[0]
    y = x + model.obs_std * v
    return x, ObservationSequence(y)


def outlier_sequence(params: ArchParams, burn_in: int, onset: int, horizon: int,
                     level_multiplier: float, rng: np.random.Generator) -> ObservationSequence:
    """Simulated ARCH observations with a constant outlying tail.

    Simulates ``burn_in + horizon`` steps, keeps absolute indices
    ``burn_in .. burn_in + horizon - 1`` and sets every observation with
    absolute index ``>= onset`` to ``level_multiplier * sigma_s``.
    """
    if onset < burn_in:
        raise ValueError(f"onset {onset} precedes the end of burn-in {burn_in}")
    if horizon < 1:
        raise ValueError("horizon must be at least 1")
    _, full = simulate(arch_model(params), burn_in + horizon, rng)
    values = full.values[burn_in:].copy()
    rel = onset - burn_in
    marks = []
    if rel < horizon:
        values[rel:] = level_multiplier * params.stationary_std
        marks.append((onset, "outliers"))
    return ObservationSequence(values, offset=burn_in, regime_marks=marks)


def kalman_oracle(phi: float, sigma_w: float, sigma_v: float, obs: ObservationSequence,
                  prior_mean: float = 0.0, prior_var: float | None = None) -> list[tuple[float, float]]:
    """Exact filtering means and variances of the linear-Gaussian model.

    The prior applies to the state at the first observation; it defaults
    to the stationary law when ``|phi| < 1``.
    """
    if not sigma_w > 0 or not sigma_v > 0:
        raise InvalidParamsError("noise standard deviations must be positive")
    if prior_var is None:
        if abs(phi) >= 1:
            raise InvalidParamsError("prior_var is required for a nonstationary AR(1)")
        prior_var = sigma_w**2 / (1.0 - phi * phi)
    q, r = sigma_w**2, sigma_v**2
    mean, var = float(prior_mean), float(prior_var)
    out = []
    for k, y in enumerate(obs.values):
        if k > 0:
            mean, var = phi * mean, phi * phi * var + q
        gain = var / (var + r)
        mean, var = mean + gain * (y - mean), (1.0 - gain) * var
        out.append((mean, var))
    return out
