"""Closed forms for models with Gaussian transition and observation noise.

For ``X' = m(x) + sigma_w(x) W`` observed as ``Y = X' + sigma_v V`` the
unnormalized kernel ``l(x, x') = g(x', y) q(x, x')`` factors as
``psi_star(x) * r_star(x, x')`` with

* ``psi_star(x) = N(y; m(x), sigma_w(x)**2 + sigma_v**2)`` (predictive likelihood),
* ``r_star(x, .) = N(tau(x, y), eta(x)**2)``, where
  ``tau = (sigma_w**2 y + sigma_v**2 m) / (sigma_w**2 + sigma_v**2)`` and
  ``eta**2 = sigma_w**2 sigma_v**2 / (sigma_w**2 + sigma_v**2)``.

The module also holds the scale family ``N(tau, (theta eta)**2)``, the
closed-form KLD over that family and quadrature evaluations of the
limiting KLD/CSD between the asymptotic target and instrumental laws of
one APF step.
"""

from __future__ import annotations

import math
import warnings

import numpy as np
from scipy import integrate, stats

from .adapt import ProposalFamily
from .apf import AdjustmentFunction, ProposalKernel, gaussian_kernel
from .models import StateSpaceModel, norm_logpdf
from .sample import WeightedSample

THETA_BOUNDS = (1e-2, 1e2)


class QuadratureError(ArithmeticError):
    def __init__(self, message: str, achieved: float):
        super().__init__(f"{message} (estimated error {achieved:.3g})")
        self.achieved = achieved


def tau(model: StateSpaceModel, x, y_next):
    """Mean of the optimal kernel."""
    x = np.asarray(x, dtype=float)
    sw2 = model.transition_std(x) ** 2
    sv2 = model.obs_std**2
    return (sw2 * y_next + sv2 * model.transition_mean(x)) / (sw2 + sv2)


def eta2(model: StateSpaceModel, x):
    """Variance of the optimal kernel (half the harmonic mean of the two variances)."""
    x = np.asarray(x, dtype=float)
    sw2 = model.transition_std(x) ** 2
    sv2 = model.obs_std**2
    return sw2 * sv2 / (sw2 + sv2)


def eta(model: StateSpaceModel, x):
    return np.sqrt(eta2(model, x))


def log_psi_star(model: StateSpaceModel, x, y_next):
    x = np.asarray(x, dtype=float)
    sd = np.sqrt(model.transition_std(x) ** 2 + model.obs_std**2)
    return norm_logpdf(y_next, model.transition_mean(x), sd)


def psi_star(model: StateSpaceModel, x, y_next):
    """Predictive likelihood ``N(y; m(x), sigma_w(x)**2 + sigma_v**2)``."""
    return np.exp(log_psi_star(model, x, y_next))


def psi_star_adjustment(model: StateSpaceModel) -> AdjustmentFunction:
    return AdjustmentFunction(lambda x, y: log_psi_star(model, x, y), "psi_star")


def r_star_kernel(model: StateSpaceModel) -> ProposalKernel:
    """The optimal kernel ``l(x, .) / psi_star(x)``; the observation is supplied per call."""
    return gaussian_kernel(lambda x, y: tau(model, x, y), lambda x, y: eta(model, x), "r_star")


def log_psi_chi2_prior(model: StateSpaceModel, x, y_next):
    """Log of ``sqrt(integral of g(x', y)**2 q(x, x') dx')``.

    Closed form::

        -0.5 log(2 pi sigma_v**2) + 0.25 log(sigma_v**2 / s2)
        - (y - m(x))**2 / (2 s2),         s2 = 2 sigma_w(x)**2 + sigma_v**2
    """
    x = np.asarray(x, dtype=float)
    sv2 = model.obs_std**2
    s2 = 2.0 * model.transition_std(x) ** 2 + sv2
    r = y_next - model.transition_mean(x)
    return -0.5 * math.log(2.0 * math.pi * sv2) + 0.25 * np.log(sv2 / s2) - r * r / (2.0 * s2)


def psi_chi2_prior(model: StateSpaceModel, x, y_next):
    """Chi-square optimal adjustment weight when the prior kernel is the proposal."""
    return np.exp(log_psi_chi2_prior(model, x, y_next))


def psi_chi2_prior_adjustment(model: StateSpaceModel) -> AdjustmentFunction:
    return AdjustmentFunction(lambda x, y: log_psi_chi2_prior(model, x, y), "psi_chi2_prior")


def scale_family(model: StateSpaceModel, bounds=THETA_BOUNDS) -> ProposalFamily:
    """Kernels ``N(tau(x, y), (theta * eta(x))**2)`` for ``theta`` in ``bounds``.

    ``theta = 1`` is the optimal kernel. The cross-entropy update is
    ``sqrt(sum_i p_i (x'_i - tau_i)**2 / eta_i**2)``.
    """

    def make_kernel(theta):
        theta = float(theta)
        if not theta > 0:
            raise ValueError("scale parameter must be positive")
        return gaussian_kernel(lambda x, y: tau(model, x, y),
                               lambda x, y: theta * eta(model, x),
                               f"scale({theta:.6g})")

    def noise_map(theta, x, eps, y):
        return tau(model, x, y) + (float(theta) * eta(model, x)) * eps

    def grad_theta(theta, x, x_new, y):
        z2 = (x_new - tau(model, x, y)) ** 2 / eta2(model, x)
        return z2 / theta**3 - 1.0 / theta

    def grad_new(theta, x, x_new, y):
        return -(x_new - tau(model, x, y)) / (theta * theta * eta2(model, x))

    def noise_grad(theta, x, eps, y):
        return eta(model, x) * eps

    def ce_update(theta, ancestors, proposals, weights, y):
        z2 = (proposals - tau(model, ancestors, y)) ** 2 / eta2(model, ancestors)
        return math.sqrt(float(np.dot(weights, z2)) / float(np.sum(weights)))

    return ProposalFamily(make_kernel, np.array([bounds[0]]), np.array([bounds[1]]),
                          noise_map=noise_map, log_density_grad_theta=grad_theta,
                          log_density_grad_new=grad_new, noise_map_grad_theta=noise_grad,
                          ce_update=ce_update, label="scale")


def kld_closed_form(theta: float, sample: WeightedSample, psi_star_values=None, *,
                    log_psi_star_values=None) -> float:
    """KLD between the auxiliary target and the scale-family instrumental law.

    The instrumental mixture uses unit adjustment weights. Either the
    optimal adjustment weights ``psi_star(x_i)`` or their logarithms
    must be given, aligned with ``sample``.
    """
    if not theta > 0:
        raise ValueError("theta must be positive")
    if log_psi_star_values is None:
        if psi_star_values is None:
            raise ValueError("psi_star values are required")
        with np.errstate(divide="ignore"):
            log_psi_star_values = np.log(np.asarray(psi_star_values, dtype=float))
    lpsi = np.asarray(log_psi_star_values, dtype=float)
    lw = sample.log_weights
    if lpsi.shape != lw.shape:
        raise ValueError("psi_star values must align with the sample")
    joint = lw + lpsi
    keep = np.isfinite(joint)
    top = joint[keep].max()
    p = np.zeros_like(joint)
    p[keep] = np.exp(joint[keep] - top)
    log_norm = top + math.log(p.sum())
    p /= p.sum()
    log_omega = sample.total_log_weight
    marginal = np.dot(p[keep], lpsi[keep] + log_omega - log_norm)
    return float(marginal + math.log(theta) + 0.5 * (theta**-2 - 1.0))


def kld_closed_form_theta_term(theta: float) -> float:
    """The ``theta``-dependent part ``log(theta) + (theta**-2 - 1) / 2``."""
    return math.log(theta) + 0.5 * (theta**-2 - 1.0)


# quadrature oracles for the limiting criteria ----------------------------

def stationary_nu(model: StateSpaceModel):
    """Default reference law: the model's Gaussian initial law."""
    return stats.norm(model.init_mean, model.init_std)


def _quad(f, a, b, points, what):
    pts = sorted(p for p in points if a < p < b)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", integrate.IntegrationWarning)
        val, err = integrate.quad(f, a, b, points=pts or None, limit=400,
                                  epsabs=1e-13, epsrel=1e-10)
    if not math.isfinite(val):
        raise QuadratureError(f"non-finite value integrating {what}", err)
    # quad warns conservatively; only give up when its own error estimate is poor
    if caught and err > 1e-6 * abs(val) + 1e-10:
        raise QuadratureError(f"quadrature of {what} did not converge", err)
    return val, err


def _limit_terms(nu, model, psi, kernel, y_next, want_kld, want_csd):
    """Log-scale building blocks of the limiting KLD/CSD identities.

    Returns a dict with ``log_nu_psi``, ``log_nu_l`` and optionally
    ``kld_inner`` (``nu x L(log phi) / nu L``) and ``log_nu_l_phi``.
    """
    mu_nu, sd_nu = float(nu.mean()), float(nu.std())
    xa, xb = mu_nu - 10 * sd_nu, mu_nu + 10 * sd_nu
    grid = np.linspace(xa, xb, 2001)

    def log_psi(x):
        return float(psi.log_evaluate(np.array([x]), y_next)[0])

    def window(x):
        xs = np.array([x])
        centers = [float(tau(model, xs, y_next)[0])]
        scales = [float(eta(model, xs)[0])]
        if kernel.mean is not None and kernel.std is not None:
            rm, rs = float(kernel.mean(xs, y_next)[0]), float(kernel.std(xs, y_next)[0])
            centers.append(rm)
            scales.append(rs)
            prec = 2.0 / scales[0] ** 2 - 1.0 / rs**2
            if prec > 0:
                scales.append(1.0 / math.sqrt(prec))
        s = max(scales)
        return min(centers) - 10 * s, max(centers) + 10 * s, centers

    def log_l(x, xp):
        return (float(model.likelihood_log_density(xp, y_next))
                + float(model.transition_log_density(np.array([x]), np.array([xp]))[0]))

    def log_r(x, xp):
        return float(kernel.log_density(np.array([x]), np.array([xp]), y_next)[0])

    # x-dependent log shifts keep every inner integrand O(1)
    def shift_l(x):
        c = float(tau(model, np.array([x]), y_next)[0])
        return log_l(x, c)

    def inner(x, kind):
        a, b, centers = window(x)
        s = shift_l(x)
        lpx = log_psi(x)
        if kind == "l":
            f = lambda xp: math.exp(log_l(x, xp) - s)
        elif kind == "l_log_phi":
            f = lambda xp: math.exp(log_l(x, xp) - s) * (log_l(x, xp) - log_r(x, xp) - lpx)
        else:
            f = lambda xp: math.exp(2 * (log_l(x, xp) - s) - log_r(x, xp))
        return _quad(f, a, b, centers, kind)[0]

    def outer_integral(log_weight, kind, what):
        # integral of exp(log_weight(x)) * inner(x, kind) dx, returned in log form
        # (or as a ratio-ready value for the signed log-phi integrand)
        lw = np.array([log_weight(x) for x in grid])
        s = lw.max()
        val, _ = _quad(lambda x: math.exp(log_weight(x) - s) * inner(x, kind), xa, xb,
                       [mu_nu, float(grid[lw.argmax()])], what)
        return s, val

    out = {}
    lp = np.array([log_psi(x) for x in grid]) + nu.logpdf(grid)
    s_psi = lp.max()
    val, _ = _quad(lambda x: math.exp(nu.logpdf(x) + log_psi(x) - s_psi), xa, xb,
                   [mu_nu, float(grid[lp.argmax()])], "nu(psi)")
    out["log_nu_psi"] = s_psi + math.log(val)

    def lw_l(x):
        return float(nu.logpdf(x)) + shift_l(x)

    s_l, j_l = outer_integral(lw_l, "l", "nu L")
    out["log_nu_l"] = s_l + math.log(j_l)
    if want_kld:
        s_k, j_log = outer_integral(lw_l, "l_log_phi", "nu x L(log phi)")
        out["kld_inner"] = math.exp(s_k - s_l) * j_log / j_l
    if want_csd:
        def lw_phi(x):
            return float(nu.logpdf(x)) + 2 * shift_l(x) - log_psi(x)

        s_p, j_phi = outer_integral(lw_phi, "l_phi", "nu x L(phi)")
        out["log_nu_l_phi"] = s_p + math.log(j_phi)
    return out


def limit_kld_quadrature(nu, model: StateSpaceModel, psi: AdjustmentFunction,
                         kernel: ProposalKernel, y_next: float) -> float:
    """Limiting KLD of one APF step from the reference law ``nu``.

    Evaluates ``nu x L{log[phi nu(psi) / nu L(1)]} / nu L(1)`` by nested
    adaptive quadrature. ``nu`` is a frozen scipy distribution (``logpdf``,
    ``mean``, ``std``).
    """
    t = _limit_terms(nu, model, psi, kernel, y_next, True, False)
    return t["kld_inner"] + t["log_nu_psi"] - t["log_nu_l"]


def limit_csd_quadrature(nu, model: StateSpaceModel, psi: AdjustmentFunction,
                         kernel: ProposalKernel, y_next: float) -> float:
    """Limiting CSD of one APF step: ``nu(psi) nu x L(phi) / (nu L(1))**2 - 1``."""
    t = _limit_terms(nu, model, psi, kernel, y_next, False, True)
    return math.expm1(t["log_nu_psi"] + t["log_nu_l_phi"] - 2 * t["log_nu_l"])


def limit_criteria_quadrature(nu, model, psi, kernel, y_next) -> tuple[float, float]:
    """``(limit KLD, limit CSD)`` sharing the common integrals."""
    t = _limit_terms(nu, model, psi, kernel, y_next, True, True)
    kld = t["kld_inner"] + t["log_nu_psi"] - t["log_nu_l"]
    csd = math.expm1(t["log_nu_psi"] + t["log_nu_l_phi"] - 2 * t["log_nu_l"])
    return kld, csd
