"""Empirical entropy and CV² approach their limiting KLD and CSD.

One step with unit adjustment weights and the optimal kernel, started
from the stationary law: the limits are double integrals evaluated by
adaptive quadrature, and the Monte Carlo averages close in on them as N
grows.
"""

import numpy as np

from adaptive_apf import BENCHMARK_ARCH
from adaptive_apf.bench import convergence_study

rows, (kld, csd) = convergence_study(BENCHMARK_ARCH, 60.0, (1000, 10_000, 100_000), range(10))
print(f"limit KLD {kld:.5f}, limit CSD {csd:.4f}")
for n in (1000, 10_000, 100_000):
    e = np.array([r[2] for r in rows if r[0] == n])
    c = np.array([r[3] for r in rows if r[0] == n])
    print(f"N={n:>6}: entropy {e.mean():.4f} ± {e.std():.4f}   cv2 {c.mean():.3f} ± {c.std():.3f}")
