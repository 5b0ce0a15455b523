import math

import numpy as np
import pytest
from scipy import integrate, stats

from adaptive_apf import (
    QuadratureError,
    WeightedSample,
    constant_adjustment,
    eta,
    eta2,
    kld_closed_form,
    limit_criteria_quadrature,
    limit_csd_quadrature,
    limit_kld_quadrature,
    log_psi_chi2_prior,
    log_psi_star,
    make_rng,
    psi_chi2_prior,
    psi_star,
    psi_star_adjustment,
    r_star_kernel,
    scale_family,
    stationary_nu,
    tau,
)
from adaptive_apf.apf import ProposalKernel
from adaptive_apf.gaussian import kld_closed_form_theta_term


def test_optimal_kernel_geometry_frozen(arch):
    # sigma_w^2 = 1 at x = 0, sigma_v^2 = 10
    assert float(tau(arch, 0.0, 60.0)) == pytest.approx(60.0 / 11.0, rel=1e-15)
    assert float(eta2(arch, 0.0)) == pytest.approx(10.0 / 11.0, rel=1e-15)
    # x = 10: sigma_w^2 = 100, tau = 100 * 60 / 110
    assert float(tau(arch, 10.0, 60.0)) == pytest.approx(6000.0 / 110.0, rel=1e-14)
    assert float(eta(arch, 10.0)) == pytest.approx(math.sqrt(1000.0 / 110.0), rel=1e-14)
    assert float(log_psi_star(arch, 0.0, 60.0)) == pytest.approx(
        -0.5 * math.log(2 * math.pi * 11.0) - 3600.0 / 22.0, rel=1e-14)


@pytest.mark.parametrize("x", [-7.0, 0.0, 2.5, 30.0])
def test_factorization_of_unnormalized_kernel(arch, x):
    y = 25.0
    xs = np.array([x])
    xn = np.linspace(-40, 60, 11)
    log_l = arch.likelihood_log_density(xn, y) + arch.transition_log_density(np.full_like(xn, x), xn)
    log_fact = log_psi_star(arch, xs, y) + r_star_kernel(arch).log_density(np.full_like(xn, x), xn, y)
    np.testing.assert_allclose(log_l, log_fact, rtol=1e-12)
    # psi_star is the integral of l(x, .)
    sd = math.sqrt(1 + 0.99 * x * x)
    val = integrate.quad(lambda u: math.exp(float(arch.likelihood_log_density(u, y)))
                         * stats.norm.pdf(u, 0, sd), -200, 200, points=[0.0, y], limit=200)[0]
    assert float(psi_star(arch, xs, y)[0]) == pytest.approx(val, rel=1e-8)


@pytest.mark.parametrize("x", [0.0, 1.0, -5.0, 20.0])
def test_chi2_prior_weight_is_root_of_second_moment(arch, x):
    y = 12.0
    sd = math.sqrt(1 + 0.99 * x * x)
    lo, hi = min(0.0, y) - 12 * sd - 10, max(0.0, y) + 12 * sd + 10
    second = integrate.quad(lambda u: math.exp(2 * float(arch.likelihood_log_density(u, y)))
                            * stats.norm.pdf(u, 0, sd), lo, hi, points=[0.0, y / 2, y],
                            limit=400, epsabs=0, epsrel=1e-12)[0]
    assert float(psi_chi2_prior(arch, np.array([x]), y)[0]) == pytest.approx(math.sqrt(second), rel=1e-8)


def test_chi2_prior_weight_frozen_ratio(arch):
    # s2 = 2 sigma_w^2 + sigma_v^2 is 12 at x = 0 and 12 + 2 * 0.99 * 4 at x = 2
    s0, s2 = 12.0, 12.0 + 7.92
    expected = 0.25 * math.log(s0 / s2) - 36.0 / (2 * s2) + 36.0 / (2 * s0)
    got = float(log_psi_chi2_prior(arch, 2.0, 6.0) - log_psi_chi2_prior(arch, 0.0, 6.0))
    assert got == pytest.approx(expected, rel=1e-13)
    assert got == pytest.approx(0.4696811415765616, rel=1e-12)


def test_scale_family_members(arch):
    fam = scale_family(arch)
    x, xn = np.array([0.5, -3.0]), np.array([4.0, 2.0])
    k1, k2 = fam.make_kernel(1.0), fam.make_kernel(2.0)
    np.testing.assert_allclose(k1.log_density(x, xn, 10.0), r_star_kernel(arch).log_density(x, xn, 10.0))
    np.testing.assert_allclose(k2.log_density(x, xn, 10.0),
                               stats.norm.logpdf(xn, tau(arch, x, 10.0), 2 * eta(arch, x)))
    eps = np.array([0.3, -1.2])
    np.testing.assert_allclose(fam.noise_map(2.0, x, eps, 10.0), k2.sample_via_noise(x, eps, 10.0))
    with pytest.raises(ValueError):
        fam.make_kernel(0.0)
    assert fam.log_midpoint() == pytest.approx(1.0)
    assert fam.clip(1e9) == 100.0


def test_scale_family_derivatives(arch):
    fam = scale_family(arch)
    x, xn, eps, y, h = np.array([1.0, -2.0]), np.array([3.0, 0.5]), np.array([0.7, -0.4]), 8.0, 1e-6
    for theta in (0.5, 1.3):
        lp = lambda t: fam.make_kernel(t).log_density(x, xn, y)
        np.testing.assert_allclose(fam.log_density_grad_theta(theta, x, xn, y),
                                   (lp(theta + h) - lp(theta - h)) / (2 * h), rtol=1e-6)
        k = fam.make_kernel(theta)
        np.testing.assert_allclose(fam.log_density_grad_new(theta, x, xn, y),
                                   (k.log_density(x, xn + h, y) - k.log_density(x, xn - h, y)) / (2 * h),
                                   rtol=1e-6)
        np.testing.assert_allclose(fam.noise_map_grad_theta(theta, x, eps, y),
                                   (fam.noise_map(theta + h, x, eps, y) - fam.noise_map(theta - h, x, eps, y))
                                   / (2 * h), rtol=1e-6)


def test_ce_update_frozen(arch):
    fam = scale_family(arch)
    anc = np.array([0.0, 0.0])
    # tau = 60/11, eta^2 = 10/11; standardized squares 1 and 4 with weights 3:1
    t, e = 60.0 / 11.0, math.sqrt(10.0 / 11.0)
    props = np.array([t + e, t - 2 * e])
    got = fam.ce_update(5.0, anc, props, np.array([0.75, 0.25]), 60.0)
    assert got == pytest.approx(math.sqrt(0.75 + 1.0), rel=1e-12)


def test_kld_theta_term_frozen():
    assert kld_closed_form_theta_term(2.0) == pytest.approx(math.log(2.0) - 0.375, rel=1e-15)
    assert kld_closed_form_theta_term(2.0) == pytest.approx(0.3181471805599453, rel=1e-15)
    assert kld_closed_form_theta_term(1.0) == 0.0


def test_kld_closed_form_equal_weights_is_theta_term(arch):
    s = WeightedSample.uniform(np.zeros(5))
    for theta in (0.3, 1.0, 2.0, 7.0):
        assert kld_closed_form(theta, s, np.full(5, 0.2)) == pytest.approx(kld_closed_form_theta_term(theta))


def test_kld_closed_form_marginal_term(arch):
    w = np.array([1.0, 2.0, 1.0])
    psi = np.array([0.5, 0.1, 2.0])
    s = WeightedSample(np.zeros(3), w)
    q = w * psi / np.sum(w * psi)
    marginal = float(np.sum(q * np.log(psi * w.sum() / np.sum(w * psi))))
    assert kld_closed_form(1.0, s, psi) == pytest.approx(marginal, rel=1e-12)
    assert kld_closed_form(1.0, s, log_psi_star_values=np.log(psi)) == pytest.approx(marginal, rel=1e-12)
    with pytest.raises(ValueError):
        kld_closed_form(1.0, s)
    with pytest.raises(ValueError):
        kld_closed_form(-1.0, s, psi)
    with pytest.raises(ValueError):
        kld_closed_form(1.0, s, psi[:2])


def test_kld_closed_form_against_monte_carlo(arch):
    rng = make_rng(11)
    y, theta = 30.0, 1.7
    s = WeightedSample(arch.initial_sample(rng, 40), rng.uniform(0.5, 1.5, 40))
    lpsi = log_psi_star(arch, s.positions, y)
    target = s.weights * np.exp(lpsi - lpsi.max())
    target /= target.sum()
    m = 200_000
    idx = rng.choice(40, size=m, p=target)
    x = s.positions[idx]
    xn = tau(arch, x, y) + eta(arch, x) * rng.standard_normal(m)
    log_ratio = (np.log(target[idx] * s.weights.sum() / s.weights[idx])
                 + r_star_kernel(arch).log_density(x, xn, y)
                 - scale_family(arch).make_kernel(theta).log_density(x, xn, y))
    se = log_ratio.std() / math.sqrt(m)
    assert abs(kld_closed_form(theta, s, log_psi_star_values=lpsi) - log_ratio.mean()) < 3 * se


@pytest.fixture(scope="module")
def limits_one_rstar(arch):
    return limit_criteria_quadrature(stationary_nu(arch), arch, constant_adjustment(), r_star_kernel(arch), 60.0)


def test_limit_quadrature_matches_one_dimensional_oracle(arch, limits_one_rstar):
    # with unit adjustment and the optimal kernel, phi(x, x') = psi_star(x)
    nu = stationary_nu(arch)
    f = lambda x, p: nu.pdf(x) * float(psi_star(arch, np.array([x]), 60.0)[0]) ** p
    lp = lambda x: float(log_psi_star(arch, np.array([x]), 60.0)[0])
    pts = [0.0, 25.0, -25.0]
    i1 = integrate.quad(lambda x: f(x, 1), -100, 100, points=pts, limit=400)[0]
    i2 = integrate.quad(lambda x: f(x, 2), -100, 100, points=pts, limit=400)[0]
    il = integrate.quad(lambda x: f(x, 1) * lp(x), -100, 100, points=pts, limit=400)[0]
    kld, csd = limits_one_rstar
    assert kld == pytest.approx(il / i1 - math.log(i1), rel=1e-8)
    assert csd == pytest.approx(i2 / i1**2 - 1, rel=1e-8)
    # frozen values
    assert kld == pytest.approx(2.72301649058, rel=1e-9)
    assert csd == pytest.approx(22.4761456565, rel=1e-9)


def test_limits_vanish_for_optimal_pair(arch):
    nu = stats.norm(0.0, 3.0)
    psi, kernel = psi_star_adjustment(arch), r_star_kernel(arch)
    assert abs(limit_kld_quadrature(nu, arch, psi, kernel, 10.0)) < 1e-9
    assert abs(limit_csd_quadrature(nu, arch, psi, kernel, 10.0)) < 1e-9


def test_quadrature_error_on_nan_integrand(arch):
    bad = ProposalKernel(lambda x, xn, y: np.full(np.shape(xn), np.nan),
                         lambda x, e, y: x + e, "nan")
    with pytest.raises(QuadratureError) as info:
        limit_kld_quadrature(stats.norm(0, 1), arch, constant_adjustment(), bad, 1.0)
    assert info.value.achieved is not None
