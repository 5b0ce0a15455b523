import pytest

from adaptive_apf import BENCHMARK_ARCH, arch_model, make_rng


@pytest.fixture
def rng():
    return make_rng(12345)


@pytest.fixture(scope="session")
def arch():
    return arch_model(BENCHMARK_ARCH)


ACCEPTANCE_LINES: list[str] = []


def report_line(name: str, ok: bool, detail: str = ""):
    line = f"[{'PASS' if ok else 'FAIL'}] {name}" + (f": {detail}" if detail else "")
    ACCEPTANCE_LINES.append(line)
    print("\n" + line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def report():
    return report_line


def stationary_sample(model, n, rng):
    from adaptive_apf import WeightedSample

    return WeightedSample.uniform(model.initial_sample(rng, n))


@pytest.fixture
def stationary():
    return stationary_sample




def outlier_regime_sample(model, n, seed, data_seed=2024):
    """Optimal-filter sample at the first outlying observation of the benchmark record.

    The next observation is again the outlier level, so one step from this
    sample is a single step inside the outlier regime.
    """
    from adaptive_apf import (BENCHMARK_ARCH, apf_step, initial_sample, outlier_sequence,
                              psi_star_adjustment, r_star_kernel)

    obs = outlier_sequence(BENCHMARK_ARCH, 100, 110, 12, 6.0, make_rng(data_seed))
    rng = make_rng(seed)
    s = initial_sample(model, obs.values[0], n, rng)
    for y in obs.values[1:11]:
        s = apf_step(s, model, psi_star_adjustment(model), r_star_kernel(model), y, None, rng).sample
    return s, rng, float(obs.values[11])


@pytest.fixture
def in_regime():
    return outlier_regime_sample
