"""One step of the auxiliary particle filter.

First-stage selection draws ancestors with probabilities proportional to
``w_i * psi(x_i)``; each selected ancestor is moved through a proposal
kernel and the new particle gets the second-stage weight::

    phi(x, x') = l(x, x') / (psi(x) * r(x, x')),   l(x, x') = g(x', y) q(x, x')

No second resampling is performed. All densities are combined in log
space and exponentiated after subtracting the per-step maximum.
"""

from __future__ import annotations

from collections.abc import Callable
from dataclasses import dataclass

import numpy as np

from .models import StateSpaceModel, norm_logpdf
from .sample import WeightedSample, cv2, entropy, multinomial_resample


class DegenerateProposalError(ArithmeticError):
    pass


class ParticleDeathError(ArithmeticError):
    """All weights of a filter step vanished."""

    def __init__(self, message: str, step: int | None = None):
        super().__init__(message if step is None else f"{message} (step {step})")
        self.step = step


@dataclass(frozen=True)
class AdjustmentFunction:
    """First-stage multiplier ``psi(x, y_next)``, given by its logarithm."""

    log_evaluate: Callable[[np.ndarray, float], np.ndarray]
    label: str = "psi"

    def evaluate(self, x, y_next):
        return np.exp(self.log_evaluate(x, y_next))

    def scaled(self, c: float) -> AdjustmentFunction:
        """The function ``c * psi`` for ``c > 0``."""
        log_c = float(np.log(c))
        base = self.log_evaluate
        return AdjustmentFunction(lambda x, y: base(x, y) + log_c, f"{c:g}*{self.label}")


def constant_adjustment(value: float = 1.0) -> AdjustmentFunction:
    log_v = float(np.log(value))

    def log_psi(x, y):
        return np.full(np.shape(x), log_v)

    return AdjustmentFunction(log_psi, "one" if value == 1 else f"const({value:g})")


@dataclass(frozen=True)
class ProposalKernel:
    """Markov proposal ``r(x, .)`` sampled as ``x' = F(x, eps)``, ``eps ~ N(0, 1)``.

    ``mean`` and ``std`` are optional location/scale hints (used to place
    quadrature windows).
    """

    log_density: Callable[[np.ndarray, np.ndarray, float], np.ndarray]
    sample_via_noise: Callable[[np.ndarray, np.ndarray, float], np.ndarray]
    label: str = "r"
    mean: Callable[[np.ndarray, float], np.ndarray] | None = None
    std: Callable[[np.ndarray, float], np.ndarray] | None = None


def gaussian_kernel(mean: Callable, std: Callable, label: str) -> ProposalKernel:
    """Kernel ``N(mean(x, y), std(x, y)**2)``."""

    def log_density(x, x_new, y):
        return norm_logpdf(x_new, mean(x, y), std(x, y))

    def sample_via_noise(x, eps, y):
        return mean(x, y) + std(x, y) * eps

    return ProposalKernel(log_density, sample_via_noise, label, mean, std)


def prior_kernel(model: StateSpaceModel) -> ProposalKernel:
    """The model transition ``q`` used as proposal."""
    return gaussian_kernel(lambda x, y: model.transition_mean(np.asarray(x, dtype=float)),
                           lambda x, y: model.transition_std(np.asarray(x, dtype=float)),
                           "prior")


def unnormalized_kernel_log_density(model: StateSpaceModel, y_next: float):
    """Return ``(x, x') -> log l(x, x') = log g(x', y_next) + log q(x, x')``."""

    def log_l(x, x_new):
        return model.likelihood_log_density(x_new, y_next) + model.transition_log_density(x, x_new)

    return log_l


def log_phi_weight(psi: AdjustmentFunction, model: StateSpaceModel, kernel: ProposalKernel,
                   x, x_new, y_next):
    """Logarithm of the second-stage weight function."""
    log_psi = np.asarray(psi.log_evaluate(x, y_next), dtype=float)
    log_r = np.asarray(kernel.log_density(x, x_new, y_next), dtype=float)
    if np.any(log_psi == -np.inf):
        raise DegenerateProposalError("adjustment function vanishes at an ancestor")
    if np.any(log_r == -np.inf):
        raise DegenerateProposalError("proposal density vanishes at a proposed point")
    log_l = model.likelihood_log_density(x_new, y_next) + model.transition_log_density(x, x_new)
    return log_l - log_r - log_psi


def phi_weight(psi, model, kernel, x, x_new, y_next):
    """Second-stage weight ``l(x, x') / (psi(x) r(x, x'))``."""
    return np.exp(log_phi_weight(psi, model, kernel, x, x_new, y_next))


@dataclass(frozen=True)
class ApfStepOutput:
    """Result of one APF step.

    ``sample.log_weights`` equals ``log_weights`` (the exact log of
    ``phi``) up to rounding; ``sample.weights`` is the max-shifted version.
    """

    sample: WeightedSample
    ancestors: np.ndarray
    noises: np.ndarray
    log_weights: np.ndarray
    cv2: float
    entropy: float
    ess: float
    degenerate: bool

    @property
    def mean(self) -> float:
        return self.sample.estimate()


def first_stage_log_weights(sample: WeightedSample, psi: AdjustmentFunction, y_next: float):
    return sample.log_weights + np.asarray(psi.log_evaluate(sample.positions, y_next), dtype=float)


def draw_ancestors(sample, psi, y_next, m_out, rng, step=None):
    """Multinomial first-stage selection; returns ancestor indices."""
    lw = first_stage_log_weights(sample, psi, y_next)
    if np.any(np.isnan(lw)):
        raise ParticleDeathError("first-stage weights are NaN", step)
    top = lw.max()
    if top == -np.inf:
        raise ParticleDeathError("all first-stage weights are zero", step)
    return multinomial_resample(np.exp(lw - top), m_out, rng)


def finish_step(positions, ancestors, noises, log_w, step=None) -> ApfStepOutput:
    log_w = np.asarray(log_w, dtype=float)
    if np.any(np.isnan(log_w)) or not np.any(np.isfinite(log_w)):
        raise ParticleDeathError("all second-stage weights are zero or undefined", step)
    out_sample = WeightedSample.from_log_weights(positions, log_w)
    c = cv2(out_sample.weights)
    return ApfStepOutput(
        sample=out_sample,
        ancestors=ancestors,
        noises=noises,
        log_weights=log_w,
        cv2=c,
        entropy=entropy(out_sample.weights),
        ess=len(out_sample) / (1.0 + c),
        degenerate=np.unique(ancestors).size < 2 and ancestors.size > 1,
    )


def apf_step(sample: WeightedSample, model: StateSpaceModel, psi: AdjustmentFunction,
             kernel: ProposalKernel, y_next: float, m_out: int | None,
             rng: np.random.Generator, step: int | None = None) -> ApfStepOutput:
    """Nonadaptive APF step targeting the filter at the next observation.

    Random numbers are consumed in a fixed order: ``m_out`` uniforms for
    the ancestors, then ``m_out`` standard normals for the proposal noise.
    """
    m_out = len(sample) if m_out is None else int(m_out)
    ancestors = draw_ancestors(sample, psi, y_next, m_out, rng, step)
    noises = rng.standard_normal(m_out)
    x_anc = sample.positions[ancestors]
    x_new = np.asarray(kernel.sample_via_noise(x_anc, noises, y_next), dtype=float)
    log_w = log_phi_weight(psi, model, kernel, x_anc, x_new, y_next)
    return finish_step(x_new, ancestors, noises, log_w, step)


def initial_sample(model: StateSpaceModel, y0: float, n: int, rng: np.random.Generator) -> WeightedSample:
    """Particles from the model's initial law, weighted by the first likelihood."""
    x = model.initial_sample(rng, n)
    return WeightedSample.from_log_weights(x, model.likelihood_log_density(x, y0))
