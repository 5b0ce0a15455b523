"""Weight degeneracy diagnostics on a single importance-sampling step.

We draw particles from the stationary law of the noisy ARCH model, move
them with the prior (bootstrap) kernel and weight them by the likelihood
of an observation that lies further and further in the tail. CV², the
negated entropy and the ESS all report the collapse.
"""

import numpy as np

from adaptive_apf import (BENCHMARK_ARCH, WeightedSample, apf_step, arch_model, constant_adjustment,
                          make_rng, prior_kernel)

model = arch_model(BENCHMARK_ARCH)
rng = make_rng(0)
sample = WeightedSample.uniform(model.initial_sample(rng, 5000))

print(f"{'y':>6} {'cv2':>10} {'entropy':>9} {'ess':>9}")
for y in (0.0, 10.0, 30.0, 60.0):
    out = apf_step(sample, model, constant_adjustment(), prior_kernel(model), y, None, rng)
    print(f"{y:6.1f} {out.cv2:10.2f} {out.entropy:9.3f} {out.ess:9.1f}")

# the diagnostics only see relative weights
w = rng.exponential(size=10)
c1, e1, _ = WeightedSample(np.arange(10.0), w).diagnostics()
c2, e2, _ = WeightedSample(np.arange(10.0), 1e-200 * w).diagnostics()
print(f"\nscale invariance: cv2 {c1:.12f} vs {c2:.12f}, entropy {e1:.12f} vs {e2:.12f}")
