"""Choosing the proposal scale by minimizing the weight criteria.

Kernels N(tau, (theta * eta)**2) are centered like the optimal kernel.
With the noise frozen, the entropy and CV² of the weights are smooth
functions of theta; both are minimized near theta = 1, which is also the
minimizer of the closed-form KLD. The cross-entropy iterations reach the
same value from theta0 = 10 in one step.
"""

import numpy as np

from adaptive_apf import (BENCHMARK_ARCH, AdaptOptions, CeOptions, WeightedSample, adaptive_apf_step,
                          arch_model, ce_adapt_step, constant_adjustment, empirical_objective,
                          grad_kld_estimate, make_rng, multinomial_resample, scale_family)

model = arch_model(BENCHMARK_ARCH)
family = scale_family(model)
one = constant_adjustment()
y = 60.0
rng = make_rng(3)
# a particle cloud already sitting in the outlier regime
sample = WeightedSample.uniform(rng.normal(55.0, 3.0, 5000))

anc = sample.positions[multinomial_resample(sample.weights, 5000, rng)]
eps = rng.standard_normal(5000)
print(f"{'theta':>7} {'entropy':>9} {'cv2':>9} {'d entropy':>10}")
for theta in (0.25, 0.5, 0.8, 1.0, 1.25, 2.0, 4.0):
    e = empirical_objective("kld", theta, anc, eps, one, model, family, y)
    c = empirical_objective("csd", theta, anc, eps, one, model, family, y)
    g = grad_kld_estimate(theta, anc, eps, one, model, family, y)
    print(f"{theta:7.2f} {e:9.4f} {c:9.4f} {g:10.4f}")

for crit in ("kld", "csd"):
    _, trace = adaptive_apf_step(sample, model, one, family, y, None, AdaptOptions(criterion=crit), rng)
    print(f"golden-section on {crit}: theta = {trace.final_theta:.4f} after {len(trace.iterations) - 2} evaluations")

_, trace = ce_adapt_step(sample, model, one, family, y, None, CeOptions.constant(5, 500), rng)
print("cross-entropy iterates:", np.round([row[1] for row in trace.iterations], 4))
