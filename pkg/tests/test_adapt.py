import math

import numpy as np
import pytest

from adaptive_apf import (
    AdaptOptions,
    AdaptTrace,
    CeDegeneracyError,
    CeOptions,
    Criterion,
    Optimizer,
    ProposalFamily,
    apf_step,
    adaptive_apf_step,
    ce_adapt_step,
    constant_adjustment,
    empirical_objective,
    grad_csd_estimate,
    grad_kld_estimate,
    make_rng,
    minimize_fd_descent,
    minimize_scalar,
    multinomial_resample,
    psi_star_adjustment,
    scale_family,
)

Y = 60.0


def test_options_validation():
    assert AdaptOptions(criterion="csd").criterion is Criterion.CSD
    assert AdaptOptions(optimizer="finite-difference-descent").optimizer is Optimizer.FD_DESCENT
    for bad in ({"tolerance": 0.0}, {"max_evals": 2}, {"trigger_threshold": -1.0}, {"criterion": "x"}):
        with pytest.raises(ValueError):
            AdaptOptions(**bad)
    assert CeOptions().sizes == (500,) * 5 and CeOptions().theta0 == 10.0
    assert CeOptions.constant(3, 40, 2.0).iterations == 3
    with pytest.raises(ValueError):
        CeOptions(())
    with pytest.raises(ValueError):
        CeOptions((10, 0))


def test_family_bounds_validation(arch):
    fam = scale_family(arch)
    with pytest.raises(ValueError):
        ProposalFamily(fam.make_kernel, np.array([1.0]), np.array([1.0]))


def test_golden_section_on_quadratic():
    theta, trace = minimize_scalar(lambda t: (math.log(t) - math.log(2.0)) ** 2, (1e-2, 1e2))
    assert theta == pytest.approx(2.0, abs=1e-3)
    assert len(trace) <= AdaptOptions().max_evals
    assert min(v for _, v in trace) == (math.log(theta) - math.log(2.0)) ** 2


def test_golden_section_linear_scale_and_budget():
    opts = AdaptOptions(max_evals=8, log_scale=False)
    theta, trace = minimize_scalar(lambda t: (t - 3.3) ** 2, (-10.0, 10.0), opts)
    assert len(trace) == 8
    assert theta == min(trace, key=lambda tv: tv[1])[0]
    theta, _ = minimize_scalar(lambda t: (t - 3.3) ** 2, (-10.0, 10.0), AdaptOptions(log_scale=False))
    assert theta == pytest.approx(3.3, abs=1e-3)
    with pytest.raises(ValueError):
        minimize_scalar(lambda t: t, (1.0, 1.0))


def test_golden_section_boundary_minimum():
    theta, _ = minimize_scalar(lambda t: t, (0.5, 4.0))
    assert theta == pytest.approx(0.5, abs=2e-3)


def test_fd_descent_quadratic():
    f = lambda t: float(np.sum((np.atleast_1d(t) - np.array([1.0, -2.0])) ** 2))
    theta, trace = minimize_fd_descent(f, [-5, -5], [5, 5], [4.0, 4.0], AdaptOptions(max_evals=400))
    np.testing.assert_allclose(theta, [1.0, -2.0], atol=5e-3)
    theta, _ = minimize_fd_descent(lambda t: (t - 0.7) ** 2, [0.0], [3.0], [2.5], AdaptOptions(max_evals=200))
    assert theta == pytest.approx(0.7, abs=5e-3)
    theta, _ = minimize_fd_descent(f, [2, -5], [5, 5], [4.0, 4.0], AdaptOptions(max_evals=400))
    np.testing.assert_allclose(theta, [2.0, -2.0], atol=5e-3)


def _frozen(model, sample, m, seed, psi=None):
    rng = make_rng(seed)
    psi = constant_adjustment() if psi is None else psi
    anc = multinomial_resample(sample.weights * psi.evaluate(sample.positions, Y), m, rng)
    return sample.positions[anc], rng.standard_normal(m)


def test_objective_minimized_near_one(arch, stationary):
    fam = scale_family(arch)
    s = stationary(arch, 10_000, make_rng(0))
    a, e = _frozen(arch, s, 10_000, 1)
    one = constant_adjustment()
    f = {t: empirical_objective("kld", t, a, e, one, arch, fam, Y) for t in (0.5, 1.0, 2.0, 10.0)}
    assert all(f[1.0] <= f[t] for t in (0.5, 2.0, 10.0))
    g = {t: empirical_objective("csd", t, a, e, one, arch, fam, Y) for t in (0.5, 1.0, 2.0, 10.0)}
    assert all(g[1.0] <= g[t] for t in (0.5, 2.0, 10.0))


def test_objective_invariant_under_psi_rescaling(arch, stationary):
    fam = scale_family(arch)
    s = stationary(arch, 500, make_rng(0))
    a, e = _frozen(arch, s, 500, 2)
    psi = psi_star_adjustment(arch)
    for crit in ("kld", "csd"):
        v1 = empirical_objective(crit, 1.4, a, e, psi, arch, fam, Y)
        v2 = empirical_objective(crit, 1.4, a, e, psi.scaled(1e-30), arch, fam, Y)
        assert v1 == pytest.approx(v2, rel=1e-9)


def test_objective_with_optimal_weights_vanishes_at_one(arch, stationary):
    fam = scale_family(arch)
    s = stationary(arch, 300, make_rng(0))
    a, e = _frozen(arch, s, 300, 3, psi_star_adjustment(arch))
    assert empirical_objective("kld", 1.0, a, e, psi_star_adjustment(arch), arch, fam, Y) < 1e-12
    assert empirical_objective("csd", 1.0, a, e, psi_star_adjustment(arch), arch, fam, Y) < 1e-12


def test_objective_input_validation(arch):
    fam = scale_family(arch)
    with pytest.raises(ValueError):
        empirical_objective("kld", 1.0, np.zeros(3), np.zeros(2), constant_adjustment(), arch, fam, Y)


@pytest.mark.parametrize("theta", [0.5, 1.0, 2.0])
@pytest.mark.parametrize("crit", ["kld", "csd"])
def test_pathwise_gradient_matches_finite_differences(arch, stationary, theta, crit):
    fam = scale_family(arch)
    s = stationary(arch, 2000, make_rng(5))
    a, e = _frozen(arch, s, 2000, 6)
    one = constant_adjustment()
    grad = (grad_kld_estimate if crit == "kld" else grad_csd_estimate)(theta, a, e, one, arch, fam, Y)
    h = 1e-5 * theta
    fd = (empirical_objective(crit, theta + h, a, e, one, arch, fam, Y)
          - empirical_objective(crit, theta - h, a, e, one, arch, fam, Y)) / (2 * h)
    assert grad == pytest.approx(fd, rel=1e-5)


def test_gradient_needs_derivatives(arch):
    fam = scale_family(arch)
    bare = ProposalFamily(fam.make_kernel, fam.lower, fam.upper)
    with pytest.raises(NotImplementedError):
        grad_kld_estimate(1.0, np.zeros(3), np.zeros(3), constant_adjustment(), arch, bare, Y)


def test_gradient_small_at_one(arch, stationary):
    fam = scale_family(arch)
    s = stationary(arch, 100_000, make_rng(7))
    a, e = _frozen(arch, s, 100_000, 8)
    assert abs(grad_kld_estimate(1.0, a, e, constant_adjustment(), arch, fam, Y)) <= 0.05


def test_adaptive_step_frozen_noise_and_trace(arch, stationary):
    fam = scale_family(arch)
    s = stationary(arch, 1000, make_rng(0))
    out, trace = adaptive_apf_step(s, arch, constant_adjustment(), fam, Y, None, AdaptOptions(), make_rng(3))
    theta = trace.final_theta
    xa = s.positions[out.ancestors]
    np.testing.assert_allclose(out.sample.positions, fam.noise_map(theta, xa, out.noises, Y))
    assert trace.adapted and trace.iterations[0][1] == pytest.approx(1.0)
    assert trace.iterations[-1][2] == min(r[2] for r in trace.iterations)
    assert out.entropy == pytest.approx(trace.iterations[-1][2], rel=1e-9)
    # the ancestors and noises are the ones an ordinary step would draw
    ref = apf_step(s, arch, constant_adjustment(), fam.make_kernel(theta), Y, None, make_rng(3))
    np.testing.assert_array_equal(out.ancestors, ref.ancestors)
    np.testing.assert_allclose(out.sample.positions, ref.sample.positions)


def test_adaptive_step_threshold_skips(arch, stationary):
    fam = scale_family(arch)
    s = stationary(arch, 500, make_rng(0))
    opts = AdaptOptions(trigger_threshold=math.inf)
    out, trace = adaptive_apf_step(s, arch, constant_adjustment(), fam, Y, None, opts, make_rng(4), pilot_theta=3.0)
    ref = apf_step(s, arch, constant_adjustment(), fam.make_kernel(3.0), Y, None, make_rng(4))
    np.testing.assert_array_equal(out.sample.positions, ref.sample.positions)
    np.testing.assert_array_equal(out.sample.weights, ref.sample.weights)
    assert not trace.adapted and len(trace.iterations) == 1 and trace.final_theta == 3.0


def test_adaptive_step_fd_descent(arch, in_regime):
    s, rng, y = in_regime(arch, 2000, 0)
    opts = AdaptOptions(optimizer="finite-difference-descent", max_evals=80)
    out, trace = adaptive_apf_step(s, arch, constant_adjustment(), scale_family(arch), y, None, opts, rng,
                                   pilot_theta=3.0)
    assert 0.85 <= trace.final_theta <= 1.15


def test_ce_step_trace_and_target(arch, in_regime):
    s, rng, y = in_regime(arch, 5000, 1)
    out, trace = ce_adapt_step(s, arch, constant_adjustment(), scale_family(arch), y, None,
                               CeOptions.constant(5, 500, 10.0), rng)
    thetas = [r[1] for r in trace.iterations]
    assert len(trace.iterations) == 6
    assert [r[3] for r in trace.iterations] == [500] * 5 + [5000]
    assert thetas[0] == 10.0
    assert 0.8 <= thetas[-1] <= 1.2
    assert abs(thetas[1] - thetas[-1]) < 0.1 * abs(thetas[0] - thetas[1])
    assert len(out.sample) == 5000


def test_ce_degeneracy(arch, stationary):
    fam = scale_family(arch)
    bad = ProposalFamily(fam.make_kernel, fam.lower, fam.upper, noise_map=fam.noise_map,
                         ce_update=lambda *a: math.nan)
    with pytest.raises(CeDegeneracyError) as info:
        ce_adapt_step(stationary(arch, 100, make_rng(0)), arch, constant_adjustment(), bad, Y, None,
                      CeOptions.constant(2, 10), make_rng(1))
    assert info.value.iteration == 0
    with pytest.raises(NotImplementedError):
        ce_adapt_step(stationary(arch, 10, make_rng(0)), arch, constant_adjustment(),
                      ProposalFamily(fam.make_kernel, fam.lower, fam.upper), Y, None, CeOptions(), make_rng(1))


def test_ce_update_maximizes_weighted_log_likelihood(arch):
    fam = scale_family(arch)
    rng = make_rng(9)
    anc = rng.normal(0, 5, 50)
    props = rng.normal(10, 4, 50)
    w = rng.exponential(size=50)
    theta = fam.ce_update(1.0, anc, props, w / w.sum(), Y)
    q = lambda t: float(np.dot(w, fam.make_kernel(t).log_density(anc, props, Y)))
    grid = np.exp(np.linspace(np.log(1e-2), np.log(1e2), 1000))
    assert q(theta) >= max(q(t) for t in grid) - 1e-9


def test_trace_csv(tmp_path):
    tr = AdaptTrace(Criterion.KLD)
    tr.add(1.0, 0.5, 10)
    tr.add(np.array([0.5, 2.0]), 0.25, 10)
    path = tr.to_csv(tmp_path / "t.csv")
    lines = path.read_text().splitlines()
    assert lines == ["iter,theta,objective,M", "0,1.0,0.5,10", "1,0.5;2.0,0.25,10"]
    assert AdaptTrace(Criterion.CSD).final_theta is None
