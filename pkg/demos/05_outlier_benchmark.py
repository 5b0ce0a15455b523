"""A reduced run of the outlier benchmark.

After 100 burn-in steps the observations jump to six stationary standard
deviations and stay there. Filters whose kernels are centered like the
optimal kernel follow immediately; the bootstrap filter, proposing from
the prior, does not. Scale up with the ``adaptive-apf bench`` command.
"""

from adaptive_apf.bench import BenchConfig, run_benchmark

config = BenchConfig(N=300, N_ref=15_000, runs=10)
report, _ = run_benchmark(config)
lo, hi = report.window
print(f"MSE against the reference over steps {lo}-{hi}")
for name in report.filters:
    ratio = report.ratio(name)
    print(f"  {name:16s} {report.aggregate(name):10.4f}   relative to bootstrap {ratio:.4f}")
