"""Adaptive selection of the APF proposal kernel.

Two engines are provided:

* :func:`adaptive_apf_step` draws ancestors and proposal noise once and
  minimizes the empirical entropy (KLD estimate) or CV² (CSD estimate)
  of the resulting weights over the kernel parameter, with the noise
  held fixed, before proposing with the minimizer.
* :func:`ce_adapt_step` runs cross-entropy iterations: sample with the
  current parameter, then maximize the weighted log-density of the
  proposed moves, which for the Gaussian scale family has a closed form.
"""

from __future__ import annotations

import csv
import enum
import math
from collections.abc import Callable
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .apf import (
    AdjustmentFunction,
    ApfStepOutput,
    DegenerateProposalError,
    ProposalKernel,
    apf_step,
    draw_ancestors,
    finish_step,
    log_phi_weight,
)
from .models import StateSpaceModel
from .sample import WeightedSample, cv2, entropy

GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


class Criterion(str, enum.Enum):
    KLD = "kld"  # negated Shannon entropy of the weights
    CSD = "csd"  # squared coefficient of variation


class Optimizer(str, enum.Enum):
    GOLDEN = "golden-section"
    FD_DESCENT = "finite-difference-descent"


class CeDegeneracyError(ArithmeticError):
    def __init__(self, message: str, iteration: int):
        super().__init__(f"{message} (cross-entropy iteration {iteration})")
        self.iteration = iteration


@dataclass(frozen=True)
class ProposalFamily:
    """Parametric family of proposal kernels with a noise reparameterization.

    Args:
        make_kernel: ``theta -> ProposalKernel``.
        lower, upper: box constraints on ``theta``.
        noise_map: ``(theta, x, eps, y) -> x'`` with ``x' ~ r_theta(x, .)``
            when ``eps ~ N(0, 1)``.
        log_density_grad_theta: ``(theta, x, x', y) -> d/dtheta log r_theta(x, x')``
            at fixed ``x'``.
        log_density_grad_new: ``(theta, x, x', y) -> d/dx' log r_theta(x, x')``.
        noise_map_grad_theta: ``(theta, x, eps, y) -> d/dtheta F_theta(x, eps)``.
        ce_update: ``(theta, ancestors, proposals, normalized_weights, y) -> theta``,
            the maximizer of the weighted log-density of the moves.

    The three gradient callables are needed only for pathwise gradients;
    the scalar case returns arrays of shape ``(M,)`` and the vector case
    ``(M, theta_dim)``.
    """

    make_kernel: Callable[[object], ProposalKernel]
    lower: np.ndarray
    upper: np.ndarray
    noise_map: Callable | None = None
    log_density_grad_theta: Callable | None = None
    log_density_grad_new: Callable | None = None
    noise_map_grad_theta: Callable | None = None
    ce_update: Callable | None = None
    label: str = "family"

    def __post_init__(self):
        lo = np.atleast_1d(np.asarray(self.lower, dtype=float))
        hi = np.atleast_1d(np.asarray(self.upper, dtype=float))
        if lo.shape != hi.shape or np.any(~(lo < hi)):
            raise ValueError("family bounds must satisfy lower < upper")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @property
    def theta_dim(self) -> int:
        return self.lower.size

    def clip(self, theta):
        t = np.clip(np.atleast_1d(np.asarray(theta, dtype=float)), self.lower, self.upper)
        return float(t[0]) if self.theta_dim == 1 else t

    def propose(self, theta, x, eps, y):
        if self.noise_map is not None:
            return self.noise_map(theta, x, eps, y)
        return self.make_kernel(theta).sample_via_noise(x, eps, y)

    def log_midpoint(self):
        """Geometric midpoint of the box (arithmetic where a bound is <= 0)."""
        lo, hi = self.lower, self.upper
        mid = np.where(lo > 0, np.sqrt(np.abs(lo * hi)), 0.5 * (lo + hi))
        return float(mid[0]) if self.theta_dim == 1 else mid


@dataclass(frozen=True)
class AdaptOptions:
    criterion: Criterion = Criterion.KLD
    trigger_threshold: float = 0.0
    optimizer: Optimizer = Optimizer.GOLDEN
    max_evals: int = 60
    tolerance: float = 1e-3
    log_scale: bool = True

    def __post_init__(self):
        object.__setattr__(self, "criterion", Criterion(self.criterion))
        object.__setattr__(self, "optimizer", Optimizer(self.optimizer))
        if not self.tolerance > 0:
            raise ValueError("tolerance must be positive")
        if self.max_evals < 3:
            raise ValueError("max_evals must be at least 3")
        if not self.trigger_threshold >= 0:
            raise ValueError("trigger_threshold must be nonnegative")


@dataclass(frozen=True)
class CeOptions:
    sizes: tuple[int, ...] = (500,) * 5
    theta0: float = 10.0

    def __post_init__(self):
        sizes = tuple(int(s) for s in self.sizes)
        if not sizes or any(s < 1 for s in sizes):
            raise ValueError("cross-entropy needs at least one iteration and sizes >= 1")
        object.__setattr__(self, "sizes", sizes)

    @property
    def iterations(self) -> int:
        return len(self.sizes)

    @classmethod
    def constant(cls, iterations: int, size: int, theta0: float = 10.0) -> CeOptions:
        return cls((size,) * iterations, theta0)


@dataclass
class AdaptTrace:
    criterion: Criterion
    iterations: list[tuple[int, object, float, int]] = field(default_factory=list)
    adapted: bool = True

    @property
    def final_theta(self):
        return self.iterations[-1][1] if self.iterations else None

    def add(self, theta, objective, m):
        self.iterations.append((len(self.iterations), theta, float(objective), int(m)))

    def rows(self):
        for it, theta, obj, m in self.iterations:
            t = theta if np.ndim(theta) == 0 else ";".join(repr(float(v)) for v in theta)
            yield it, t, obj, m

    def to_csv(self, path) -> Path:
        path = Path(path)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["iter", "theta", "objective", "M"])
            for it, t, obj, m in self.rows():
                w.writerow([it, t if isinstance(t, str) else repr(float(t)), repr(obj), m])
        return path


# frozen-noise objective --------------------------------------------------

def _frozen_log_weights(theta, ancestors, noises, psi, model, family, y_next):
    x_new = np.asarray(family.propose(theta, ancestors, noises, y_next), dtype=float)
    kernel = family.make_kernel(theta)
    return x_new, log_phi_weight(psi, model, kernel, ancestors, x_new, y_next)


def _shifted(log_w):
    log_w = np.asarray(log_w, dtype=float)
    if np.any(np.isnan(log_w)) or not np.any(np.isfinite(log_w)):
        raise DegenerateProposalError("all weights vanish for this parameter")
    return np.exp(log_w - log_w.max())


def empirical_objective(criterion, theta, ancestors, noises, psi: AdjustmentFunction,
                        model: StateSpaceModel, family: ProposalFamily, y_next: float) -> float:
    """Entropy or CV² of ``phi_theta(a_i, F_theta(a_i, eps_i))`` with fixed ``a``, ``eps``."""
    ancestors = np.asarray(ancestors, dtype=float)
    noises = np.asarray(noises, dtype=float)
    if ancestors.shape != noises.shape or ancestors.size < 2:
        raise ValueError("ancestors and noises must have the same length >= 2")
    _, log_w = _frozen_log_weights(theta, ancestors, noises, psi, model, family, y_next)
    w = _shifted(log_w)
    return entropy(w) if Criterion(criterion) is Criterion.KLD else cv2(w)


def _pathwise_log_weight_grad(theta, ancestors, noises, psi, model, family, y_next):
    """Return ``(log w_i, d log w_i / d theta)`` along the frozen-noise path."""
    needed = (family.log_density_grad_theta, family.log_density_grad_new,
              family.noise_map_grad_theta)
    if any(f is None for f in needed):
        raise NotImplementedError(f"family {family.label!r} does not provide pathwise derivatives")
    ancestors = np.asarray(ancestors, dtype=float)
    noises = np.asarray(noises, dtype=float)
    x_new, log_w = _frozen_log_weights(theta, ancestors, noises, psi, model, family, y_next)
    d_new = (model.likelihood_log_density_grad_state(x_new, y_next)
             + model.transition_log_density_grad_new(ancestors, x_new)
             - family.log_density_grad_new(theta, ancestors, x_new, y_next))
    dF = np.asarray(family.noise_map_grad_theta(theta, ancestors, noises, y_next))
    d_theta = np.asarray(family.log_density_grad_theta(theta, ancestors, x_new, y_next))
    if dF.ndim == 2:
        grad = d_new[:, None] * dF - d_theta
    else:
        grad = d_new * dF - d_theta
    return log_w, grad


def grad_kld_estimate(theta, ancestors, noises, psi, model, family, y_next):
    """Pathwise derivative of the frozen-noise entropy objective.

    With mean-one weights ``v_i = N w_i / sum(w)`` this is
    ``N^-1 sum(dv_i * log v_i + dv_i)``, where ``dv_i`` is the derivative
    of ``v_i`` with the noise held fixed (the normalizer included).
    Returns a float for scalar families, an array otherwise.
    """
    log_w, g = _pathwise_log_weight_grad(theta, ancestors, noises, psi, model, family, y_next)
    w = _shifted(log_w)
    p = w / w.sum()
    n = p.size
    g_bar = p @ g
    dv = n * p.reshape(-1, *([1] * (g.ndim - 1))) * (g - g_bar)
    with np.errstate(divide="ignore", invalid="ignore"):
        log_v = np.where(p > 0, np.log(n * p), 0.0)
    result = np.mean(dv * (log_v.reshape(-1, *([1] * (g.ndim - 1))) + 1.0), axis=0)
    return float(result) if np.ndim(result) == 0 else result


def grad_csd_estimate(theta, ancestors, noises, psi, model, family, y_next):
    """Pathwise derivative of the frozen-noise CV² objective, ``N^-1 sum(2 v_i dv_i)``."""
    log_w, g = _pathwise_log_weight_grad(theta, ancestors, noises, psi, model, family, y_next)
    w = _shifted(log_w)
    p = w / w.sum()
    n = p.size
    g_bar = p @ g
    shape = (-1, *([1] * (g.ndim - 1)))
    v = (n * p).reshape(shape)
    result = np.mean(2.0 * v * v * (g - g_bar), axis=0)
    return float(result) if np.ndim(result) == 0 else result


# optimizers --------------------------------------------------------------

def minimize_scalar(objective: Callable[[float], float], domain, opts: AdaptOptions = AdaptOptions(),
                    log_scale: bool | None = None):
    """Golden-section search for the minimum of ``objective`` on ``domain``.

    Searches in ``log(theta)`` when ``log_scale`` (default from ``opts``)
    and the domain is positive. Stops once the bracket is narrower than
    ``opts.tolerance`` in ``theta`` units or after ``opts.max_evals``
    evaluations. Returns ``(theta_star, trace)`` where ``trace`` lists the
    evaluated ``(theta, value)`` pairs in order.
    """
    lo, hi = (float(v) for v in domain)
    if not lo < hi:
        raise ValueError(f"empty or inverted domain [{lo}, {hi}]")
    use_log = opts.log_scale if log_scale is None else log_scale
    use_log = use_log and lo > 0
    fwd = math.log if use_log else (lambda t: t)
    inv = math.exp if use_log else (lambda u: u)
    trace: list[tuple[float, float]] = []

    def f(u):
        t = min(max(inv(u), lo), hi)
        val = float(objective(t))
        trace.append((t, val))
        return val

    a, b = fwd(lo), fwd(hi)
    c = b - GOLDEN * (b - a)
    d = a + GOLDEN * (b - a)
    fc, fd = f(c), f(d)
    while len(trace) < opts.max_evals and inv(b) - inv(a) > opts.tolerance:
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - GOLDEN * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + GOLDEN * (b - a)
            fd = f(d)
    best = min(trace, key=lambda tv: tv[1])
    return best[0], trace


def minimize_fd_descent(objective, lower, upper, theta0, opts: AdaptOptions = AdaptOptions()):
    """Projected steepest descent with central finite differences and backtracking.

    Returns ``(theta_star, trace)`` like :func:`minimize_scalar`.
    """
    lower = np.atleast_1d(np.asarray(lower, dtype=float))
    upper = np.atleast_1d(np.asarray(upper, dtype=float))
    if np.any(~(lower < upper)):
        raise ValueError("empty or inverted domain")
    trace = []

    def f(t):
        val = float(objective(t if t.size > 1 else float(t[0])))
        trace.append((t.copy() if t.size > 1 else float(t[0]), val))
        return val

    x = np.clip(np.atleast_1d(np.asarray(theta0, dtype=float)), lower, upper)
    fx = f(x)
    step = 0.1 * float(np.min(upper - lower))
    while len(trace) + 2 * x.size < opts.max_evals:
        h = 1e-4 * (1.0 + np.abs(x))
        grad = np.empty_like(x)
        for j in range(x.size):
            e = np.zeros_like(x)
            e[j] = h[j]
            grad[j] = (f(np.clip(x + e, lower, upper)) - f(np.clip(x - e, lower, upper))) / (2 * h[j])
        gnorm = float(np.linalg.norm(grad))
        if gnorm == 0.0:
            break
        direction = -grad / gnorm
        improved = False
        while len(trace) < opts.max_evals and step > opts.tolerance:
            cand = np.clip(x + step * direction, lower, upper)
            fc = f(cand)
            if fc < fx - 1e-4 * step * gnorm * float(np.dot(direction, direction)) or (
                fc < fx and np.allclose(cand, x + step * direction)
            ):
                moved = float(np.linalg.norm(cand - x))
                x, fx, improved = cand, fc, True
                step *= 2.0
                if moved <= opts.tolerance:
                    improved = False
                break
            step *= 0.5
        if not improved:
            break
    best = min(trace, key=lambda tv: tv[1])
    return best[0], trace


# adaptive steps ----------------------------------------------------------

def adaptive_apf_step(sample: WeightedSample, model: StateSpaceModel, psi: AdjustmentFunction,
                      family: ProposalFamily, y_next: float, m_out: int | None,
                      opts: AdaptOptions, rng: np.random.Generator, pilot_theta=None,
                      step: int | None = None) -> tuple[ApfStepOutput, AdaptTrace]:
    """APF step whose kernel parameter minimizes the frozen-noise criterion.

    Ancestors and noises are drawn once, in the same order as
    :func:`~adaptive_apf.apf.apf_step`. The criterion is evaluated at
    ``pilot_theta`` (default: geometric midpoint of the family box); only
    if it exceeds ``opts.trigger_threshold`` is the parameter optimized.
    The optimizer's result replaces the pilot only if it strictly lowers
    the criterion.
    """
    m_out = len(sample) if m_out is None else int(m_out)
    ancestors = draw_ancestors(sample, psi, y_next, m_out, rng, step)
    noises = rng.standard_normal(m_out)
    x_anc = sample.positions[ancestors]
    pilot = family.clip(family.log_midpoint() if pilot_theta is None else pilot_theta)
    trace = AdaptTrace(opts.criterion)

    def objective(theta):
        try:
            return empirical_objective(opts.criterion, theta, x_anc, noises, psi, model, family, y_next)
        except DegenerateProposalError:
            return math.inf

    f_pilot = objective(pilot)
    trace.add(pilot, f_pilot, m_out)
    theta = pilot
    if f_pilot > opts.trigger_threshold:
        if family.theta_dim == 1 and opts.optimizer is Optimizer.GOLDEN:
            cand, evals = minimize_scalar(objective, (family.lower[0], family.upper[0]), opts)
        else:
            cand, evals = minimize_fd_descent(objective, family.lower, family.upper, pilot, opts)
        for t, v in evals:
            trace.add(t, v, m_out)
        f_cand = min(v for _, v in evals)
        if f_cand < f_pilot:
            theta = cand
        trace.add(theta, min(f_cand, f_pilot), m_out)
    else:
        trace.adapted = False
    x_new, log_w = _frozen_log_weights(theta, x_anc, noises, psi, model, family, y_next)
    return finish_step(x_new, ancestors, noises, log_w, step), trace


def ce_adapt_step(sample: WeightedSample, model: StateSpaceModel, psi: AdjustmentFunction,
                  family: ProposalFamily, y_next: float, m_out: int | None, opts: CeOptions,
                  rng: np.random.Generator, step: int | None = None) -> tuple[ApfStepOutput, AdaptTrace]:
    """Cross-entropy adaptation of the kernel parameter, then one APF step.

    Each iteration draws fresh ancestors and moves with the current
    parameter and replaces it by the maximizer of the weighted
    log-density of the moves. If an iteration produces no usable
    weights, it is retried once with the previous parameter and twice as
    many particles before :class:`CeDegeneracyError` is raised.
    """
    if family.ce_update is None:
        raise NotImplementedError(f"family {family.label!r} has no cross-entropy update")
    m_out = len(sample) if m_out is None else int(m_out)
    theta = family.clip(opts.theta0)
    trace = AdaptTrace(Criterion.KLD)
    for ell, size in enumerate(opts.sizes):
        for attempt, m in enumerate((size, 2 * size)):
            ancestors = draw_ancestors(sample, psi, y_next, m, rng, step)
            noises = rng.standard_normal(m)
            x_anc = sample.positions[ancestors]
            try:
                x_new, log_w = _frozen_log_weights(theta, x_anc, noises, psi, model, family, y_next)
                w = _shifted(log_w)
                new_theta = family.ce_update(theta, x_anc, x_new, w / w.sum(), y_next)
                if not np.all(np.isfinite(new_theta)):
                    raise DegenerateProposalError("non-finite parameter update")
            except DegenerateProposalError:
                if attempt == 1:
                    raise CeDegeneracyError("no usable importance weights", ell) from None
                continue
            trace.add(theta, entropy(w), m)
            theta = family.clip(new_theta)
            break
    out = apf_step(sample, model, psi, family.make_kernel(theta), y_next, m_out, rng, step)
    trace.add(theta, out.entropy, m_out)
    return out, trace
