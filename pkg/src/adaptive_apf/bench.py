"""Benchmark harness for the noisy-ARCH outlier experiment.

One observation record is simulated per configuration seed. A
high-resolution optimal filter provides reference means, every requested
filter is rerun ``runs`` times on the same record with its own derived
seed, and the per-step MSE of the filter means against the reference is
written to ``mse.csv`` together with per-run traces and a plot script.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import math
import time
import zlib
from collections.abc import Callable
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .adapt import (
    AdaptOptions,
    AdaptTrace,
    CeDegeneracyError,
    CeOptions,
    Criterion,
    adaptive_apf_step,
    ce_adapt_step,
    minimize_scalar,
)
from .apf import (
    ApfStepOutput,
    DegenerateProposalError,
    ParticleDeathError,
    apf_step,
    constant_adjustment,
    initial_sample,
    prior_kernel,
)
from .gaussian import (
    kld_closed_form,
    limit_criteria_quadrature,
    log_psi_star,
    psi_chi2_prior_adjustment,
    psi_star_adjustment,
    r_star_kernel,
    scale_family,
    stationary_nu,
)
from .models import BENCHMARK_ARCH, ArchParams, ObservationSequence, StateSpaceModel, arch_model, outlier_sequence
from .sample import WeightedSample, make_rng

FILTERS = ("bootstrap", "chi2-prior", "adaptive-csd", "adaptive-kld", "closed-form-kld", "ce", "optimal")
BUDGET_FILTER = "bootstrap-3n"
ALL_FILTERS = FILTERS + (BUDGET_FILTER,)
ADAPTIVE_FILTERS = ("adaptive-csd", "adaptive-kld", "closed-form-kld", "ce")
OUTLIER_WINDOW = 10  # the window is [onset, onset + OUTLIER_WINDOW]

NUMERICAL_ERRORS = (ParticleDeathError, CeDegeneracyError, DegenerateProposalError)


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class BenchConfig:
    """Parameters of one benchmark.

    ``horizon`` counts the filtered steps, which run from ``burn_in`` to
    ``burn_in + horizon - 1``. ``ce=None`` means ``L = 5`` iterations of
    ``N // 10`` particles starting from ``theta0 = 10``.
    """

    arch: ArchParams = BENCHMARK_ARCH
    N: int = 1000
    N_ref: int = 50_000
    runs: int = 50
    burn_in: int = 100
    onset: int = 110
    horizon: int = 26
    outlier_multiplier: float = 6.0
    filters: tuple[str, ...] = FILTERS + (BUDGET_FILTER,)
    seed: int = 2024
    ce: CeOptions | None = None
    adapt: AdaptOptions = AdaptOptions()
    output_dir: str = "bench_out"

    def __post_init__(self):
        object.__setattr__(self, "filters", tuple(self.filters))
        self.validate()

    def validate(self):
        unknown = [f for f in self.filters if f not in ALL_FILTERS]
        if unknown:
            raise ConfigError(f"unknown filter(s) {unknown}; valid: {', '.join(ALL_FILTERS)}")
        if len(set(self.filters)) != len(self.filters):
            raise ConfigError("filters must not repeat")
        if not self.arch.beta1 < 1:
            raise ConfigError("beta1 must be < 1 for a stationary benchmark model")
        if not (self.arch.beta0 > 0 and self.arch.beta1 >= 0 and self.arch.sigma_v2 > 0):
            raise ConfigError("ARCH parameters must satisfy beta0 > 0, beta1 >= 0, sigma_v2 > 0")
        if self.N < 2:
            raise ConfigError("N must be at least 2")
        if self.N_ref < 10 * self.N:
            raise ConfigError(f"N_ref ({self.N_ref}) must be at least 10 * N ({10 * self.N})")
        if self.runs < 2:
            raise ConfigError("runs must be at least 2")
        if self.burn_in < 0 or self.horizon < 1:
            raise ConfigError("burn_in must be >= 0 and horizon >= 1")
        if self.onset < self.burn_in:
            raise ConfigError(f"onset {self.onset} precedes the end of burn-in {self.burn_in}")
        if self.seed < 0:
            raise ConfigError("seed must be nonnegative")

    @property
    def ce_options(self) -> CeOptions:
        return self.ce if self.ce is not None else CeOptions.constant(5, max(self.N // 10, 1), 10.0)

    @property
    def steps(self) -> np.ndarray:
        return np.arange(self.burn_in, self.burn_in + self.horizon)

    @property
    def window(self) -> tuple[int, int]:
        return self.onset, self.onset + OUTLIER_WINDOW

    def scaled(self, factor: float) -> BenchConfig:
        """Multiply ``N``, ``N_ref`` and ``runs`` by ``factor`` (keeping the invariants)."""
        if not factor > 0:
            raise ConfigError("scale must be positive")
        n = max(2, int(round(self.N * factor)))
        return dataclasses.replace(self, N=n, N_ref=max(10 * n, int(round(self.N_ref * factor))),
                                   runs=max(2, int(round(self.runs * factor))))

    # serialization ---------------------------------------------------------

    def to_dict(self) -> dict:
        d = {
            "arch": dataclasses.asdict(self.arch),
            "N": self.N,
            "N_ref": self.N_ref,
            "runs": self.runs,
            "burn_in": self.burn_in,
            "onset": self.onset,
            "horizon": self.horizon,
            "outlier_multiplier": self.outlier_multiplier,
            "filters": list(self.filters),
            "seed": self.seed,
            "ce": None if self.ce is None else {"sizes": list(self.ce.sizes), "theta0": self.ce.theta0},
            "adapt": {
                "criterion": self.adapt.criterion.value,
                "trigger_threshold": self.adapt.trigger_threshold,
                "optimizer": self.adapt.optimizer.value,
                "max_evals": self.adapt.max_evals,
                "tolerance": self.adapt.tolerance,
                "log_scale": self.adapt.log_scale,
            },
            "output_dir": self.output_dir,
        }
        return d

    @classmethod
    def from_dict(cls, d: dict) -> BenchConfig:
        if not isinstance(d, dict):
            raise ConfigError("config must be a JSON object")
        known = {f.name for f in dataclasses.fields(cls)}
        extra = sorted(set(d) - known)
        if extra:
            raise ConfigError(f"unknown config key(s): {', '.join(extra)}")
        kw = dict(d)
        try:
            if "arch" in kw:
                kw["arch"] = ArchParams(**{k: float(v) for k, v in kw["arch"].items()})
            if kw.get("ce") is not None:
                kw["ce"] = CeOptions(tuple(kw["ce"]["sizes"]), float(kw["ce"].get("theta0", 10.0)))
            if "adapt" in kw:
                kw["adapt"] = AdaptOptions(**kw["adapt"])
            for k in ("N", "N_ref", "runs", "burn_in", "onset", "horizon", "seed"):
                if k in kw:
                    if isinstance(kw[k], bool) or int(kw[k]) != kw[k]:
                        raise ConfigError(f"{k} must be an integer")
                    kw[k] = int(kw[k])
            if "outlier_multiplier" in kw:
                kw["outlier_multiplier"] = float(kw["outlier_multiplier"])
            if "filters" in kw:
                if isinstance(kw["filters"], str):
                    raise ConfigError("filters must be a list of names")
                kw["filters"] = tuple(kw["filters"])
            if "output_dir" in kw:
                kw["output_dir"] = str(kw["output_dir"])
            return cls(**kw)
        except ConfigError:
            raise
        except (TypeError, ValueError, KeyError, AttributeError) as exc:
            raise ConfigError(f"invalid config: {exc}") from exc

    @classmethod
    def load(cls, path) -> BenchConfig:
        path = Path(path)
        try:
            text = path.read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        try:
            d = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: not valid JSON ({exc})") from exc
        return cls.from_dict(d)


# filters -----------------------------------------------------------------

@dataclass
class StepResult:
    output: ApfStepOutput
    theta: float | None = None
    trace: AdaptTrace | None = None


@dataclass
class FilterDef:
    """A filter variant: its particle count and a per-step transition.

    ``step(sample, y_next, rng, state, k)`` returns a :class:`StepResult`;
    ``state`` is a per-run dict (used for warm-started pilot parameters).
    """

    label: str
    n_particles: int
    step: Callable[..., StepResult]


def build_filter(name: str, config: BenchConfig, model: StateSpaceModel | None = None) -> FilterDef:
    """Return the step function of the named filter variant."""
    if name not in ALL_FILTERS:
        raise ConfigError(f"unknown filter {name!r}; valid: {', '.join(ALL_FILTERS)}")
    model = arch_model(config.arch) if model is None else model
    n = config.N
    one = constant_adjustment()
    family = scale_family(model)

    if name in ("bootstrap", BUDGET_FILTER):
        kernel = prior_kernel(model)

        def step(sample, y, rng, state, k):
            return StepResult(apf_step(sample, model, one, kernel, y, None, rng, k))

        return FilterDef(name, 3 * n if name == BUDGET_FILTER else n, step)

    if name == "chi2-prior":
        kernel, psi = prior_kernel(model), psi_chi2_prior_adjustment(model)

        def step(sample, y, rng, state, k):
            return StepResult(apf_step(sample, model, psi, kernel, y, None, rng, k))

        return FilterDef(name, n, step)

    if name == "optimal":
        kernel, psi = r_star_kernel(model), psi_star_adjustment(model)

        def step(sample, y, rng, state, k):
            return StepResult(apf_step(sample, model, psi, kernel, y, None, rng, k))

        return FilterDef(name, n, step)

    if name in ("adaptive-csd", "adaptive-kld"):
        crit = Criterion.CSD if name == "adaptive-csd" else Criterion.KLD
        opts = dataclasses.replace(config.adapt, criterion=crit)

        def step(sample, y, rng, state, k):
            out, trace = adaptive_apf_step(sample, model, one, family, y, None, opts, rng,
                                           pilot_theta=state.get("theta"), step=k)
            state["theta"] = trace.final_theta
            return StepResult(out, trace.final_theta, trace)

        return FilterDef(name, n, step)

    if name == "closed-form-kld":
        opts = config.adapt
        domain = (family.lower[0], family.upper[0])

        def step(sample, y, rng, state, k):
            lpsi = log_psi_star(model, sample.positions, y)
            theta, evals = minimize_scalar(
                lambda t: kld_closed_form(t, sample, log_psi_star_values=lpsi), domain, opts)
            trace = AdaptTrace(Criterion.KLD)
            for t, v in evals:
                trace.add(t, v, len(sample))
            trace.add(theta, min(v for _, v in evals), len(sample))
            out = apf_step(sample, model, one, family.make_kernel(theta), y, None, rng, k)
            return StepResult(out, theta, trace)

        return FilterDef(name, n, step)

    ce_opts = config.ce_options

    def step(sample, y, rng, state, k):
        out, trace = ce_adapt_step(sample, model, one, family, y, None, ce_opts, rng, k)
        return StepResult(out, trace.final_theta, trace)

    return FilterDef(name, n, step)


# runs --------------------------------------------------------------------

@dataclass
class FilterRunRecord:
    """Per-step output of one run of one filter.

    ``rows`` holds ``(k, mean, cv2, entropy, theta_or_None)``; ``adapt_rows``
    holds ``(k, iter, theta, objective, M)``. A failed run keeps the rows
    produced before the failure and sets ``failed_step``.
    """

    filter: str
    run: int
    rows: list[tuple] = field(default_factory=list)
    adapt_rows: list[tuple] = field(default_factory=list)
    duration: float = 0.0
    failed_step: int | None = None
    error: str | None = None

    @property
    def ok(self) -> bool:
        return self.failed_step is None

    @property
    def means(self) -> np.ndarray:
        return np.array([r[1] for r in self.rows])


def derived_seed(seed: int, label: str, run: int) -> np.random.SeedSequence:
    """Seed of run ``run`` of filter ``label``; a pure function of its arguments."""
    return np.random.SeedSequence(seed, spawn_key=(2, zlib.crc32(label.encode()), run))


def data_seed(seed: int) -> np.random.SeedSequence:
    return np.random.SeedSequence(seed, spawn_key=(0,))


def reference_seed(seed: int) -> np.random.SeedSequence:
    return np.random.SeedSequence(seed, spawn_key=(1,))


def observations_for(config: BenchConfig) -> ObservationSequence:
    return outlier_sequence(config.arch, config.burn_in, config.onset, config.horizon,
                            config.outlier_multiplier, make_rng(data_seed(config.seed)))


def run_filter(fdef: FilterDef, model: StateSpaceModel, obs: ObservationSequence,
               rng: np.random.Generator, run: int = 0) -> FilterRunRecord:
    """Run one filter over the whole record.

    Particles start from the model's initial law and are weighted by the
    first observation. Numerical failures end the run and are recorded.
    """
    rec = FilterRunRecord(fdef.label, run)
    state: dict = {}
    t0 = time.perf_counter()
    k = int(obs.offset)
    try:
        sample = initial_sample(model, float(obs.values[0]), fdef.n_particles, rng)
        c, e, _ = sample.diagnostics()
        rec.rows.append((k, sample.estimate(), c, e, None))
        for j in range(1, len(obs)):
            k = int(obs.offset + j)
            res = fdef.step(sample, float(obs.values[j]), rng, state, k)
            sample = res.output.sample
            rec.rows.append((k, sample.estimate(), res.output.cv2, res.output.entropy, res.theta))
            if res.trace is not None:
                rec.adapt_rows.extend((k, *row) for row in res.trace.rows())
    except NUMERICAL_ERRORS as exc:
        rec.failed_step = k
        rec.error = f"{type(exc).__name__}: {exc}"
    rec.duration = time.perf_counter() - t0
    return rec


def reference_means(config: BenchConfig, obs: ObservationSequence,
                    model: StateSpaceModel | None = None) -> np.ndarray:
    """Means of the optimal filter with ``N_ref`` particles."""
    model = arch_model(config.arch) if model is None else model
    fdef = build_filter("optimal", config, model)
    fdef = FilterDef("reference", config.N_ref, fdef.step)
    rec = run_filter(fdef, model, obs, make_rng(reference_seed(config.seed)))
    if not rec.ok:
        raise ParticleDeathError(f"reference filter failed: {rec.error}", rec.failed_step)
    return rec.means


@dataclass
class MseReport:
    """Per-step MSE of each filter's means against the reference means."""

    steps: np.ndarray
    filters: tuple[str, ...]
    mse: dict[str, np.ndarray]
    runs: dict[str, int]
    window: tuple[int, int]
    failures: dict[str, list[tuple[int, int, str]]] = field(default_factory=dict)
    reference: np.ndarray | None = None

    def window_mask(self) -> np.ndarray:
        lo, hi = self.window
        return (self.steps >= lo) & (self.steps <= hi)

    def aggregate(self, label: str) -> float:
        """Mean of the per-step MSE over the outlier window."""
        mask = self.window_mask()
        vals = self.mse[label][mask]
        return float(np.mean(vals)) if vals.size else math.nan

    def ratio(self, label: str, baseline: str = "bootstrap") -> float | None:
        """``aggregate(label) / aggregate(baseline)``; ``None`` if undefined."""
        if baseline not in self.mse or label not in self.mse:
            return None
        den = self.aggregate(baseline)
        if not den > 0:
            return None
        return self.aggregate(label) / den

    def step_mse(self, label: str, k: int) -> float:
        return float(self.mse[label][int(np.nonzero(self.steps == k)[0][0])])

    def table(self) -> dict[tuple[str, int], tuple[float, int]]:
        return {(f, int(k)): (float(self.mse[f][i]), self.runs[f])
                for f in self.filters for i, k in enumerate(self.steps)}


def compute_mse(records: list[FilterRunRecord], reference: np.ndarray, steps, window,
                filters) -> MseReport:
    steps = np.asarray(steps)
    mse, runs, failures = {}, {}, {}
    for f in filters:
        recs = sorted((r for r in records if r.filter == f), key=lambda r: r.run)
        good = [r for r in recs if r.ok]
        failures[f] = [(r.run, r.failed_step, r.error) for r in recs if not r.ok]
        runs[f] = len(good)
        if good:
            means = np.vstack([r.means for r in good])
            mse[f] = np.mean((means - reference[None, :]) ** 2, axis=0)
        else:
            mse[f] = np.full(steps.size, math.nan)
    return MseReport(steps, tuple(filters), mse, runs, tuple(window), failures, reference)


def run_benchmark(config: BenchConfig, progress: Callable[[str], None] | None = None):
    """Run the full study; returns ``(report, records)``."""
    model = arch_model(config.arch)
    obs = observations_for(config)
    ref = reference_means(config, obs, model)
    records = []
    for label in config.filters:
        fdef = build_filter(label, config, model)
        for run in range(config.runs):
            records.append(run_filter(fdef, model, obs, make_rng(derived_seed(config.seed, label, run)), run))
        if progress is not None:
            progress(label)
    report = compute_mse(records, ref, config.steps, config.window, config.filters)
    return report, records


# outputs -----------------------------------------------------------------

PLOT_SCRIPT = '''"""Plot per-step MSE (log scale) from mse.csv in this directory."""
import csv
import sys
from collections import defaultdict
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

here = Path(__file__).resolve().parent
curves = defaultdict(list)
with open(here / "mse.csv", newline="") as fh:
    for row in csv.DictReader(fh):
        curves[row["filter"]].append((int(row["step"]), float(row["mse"])))
fig, ax = plt.subplots(figsize=(7, 4))
for name, pts in sorted(curves.items()):
    pts.sort()
    ax.semilogy([k for k, _ in pts], [v for _, v in pts], marker=".", label=name)
ax.set_xlabel("step")
ax.set_ylabel("MSE")
ax.legend(fontsize=8)
fig.tight_layout()
target = sys.argv[1] if len(sys.argv) > 1 else str(here / "mse.png")
fig.savefig(target, dpi=120)
print(target)
'''


def _fmt(v) -> str:
    return "" if v is None else repr(float(v))


def _writer(path: Path):
    try:
        fh = path.open("w", newline="")
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc}") from exc
    return fh, csv.writer(fh, lineterminator="\n")


def write_mse_csv(report: MseReport, path) -> Path:
    path = Path(path)
    fh, w = _writer(path)
    with fh:
        w.writerow(["step", "filter", "mse", "runs"])
        for f in report.filters:
            for k, v in zip(report.steps, report.mse[f]):
                w.writerow([int(k), f, repr(float(v)), report.runs[f]])
    return path


def load_mse_csv(path) -> dict[tuple[str, int], tuple[float, int]]:
    """Parse ``mse.csv`` into ``{(filter, step): (mse, runs)}``."""
    out = {}
    with Path(path).open(newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != ["step", "filter", "mse", "runs"]:
            raise ValueError(f"{path}: unexpected header {reader.fieldnames}")
        for row in reader:
            out[(row["filter"], int(row["step"]))] = (float(row["mse"]), int(row["runs"]))
    return out


def write_trace_csv(records: list[FilterRunRecord], path) -> Path:
    path = Path(path)
    fh, w = _writer(path)
    with fh:
        w.writerow(["k", "run", "mean", "cv2", "entropy", "theta"])
        for r in sorted(records, key=lambda r: r.run):
            for k, mean, c, e, theta in r.rows:
                w.writerow([k, r.run, repr(float(mean)), repr(float(c)), repr(float(e)), _fmt(theta)])
    return path


def write_adapt_csv(records: list[FilterRunRecord], path) -> Path:
    path = Path(path)
    fh, w = _writer(path)
    with fh:
        w.writerow(["k", "run", "iter", "theta", "objective", "M"])
        for r in sorted(records, key=lambda r: r.run):
            for k, it, theta, obj, m in r.adapt_rows:
                t = theta if isinstance(theta, str) else repr(float(theta))
                w.writerow([k, r.run, it, t, repr(float(obj)), m])
    return path


def emit_outputs(report: MseReport | None, records: list[FilterRunRecord], output_dir,
                 config: BenchConfig | None = None) -> list[Path]:
    """Write the benchmark files and return their paths.

    Always writes ``config.json`` (the config echo, when given). With at
    least one filter it adds ``mse.csv``, ``summary.csv``, ``timing.csv``,
    ``trace_<filter>.csv``, ``adapt_<filter>.csv`` for filters that adapt,
    ``failures.csv`` when any run failed, and ``plot_mse.py``. Wall-clock
    times live only in ``timing.csv`` so the other files are reproducible
    byte for byte.
    """
    out = Path(output_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create output directory {out}: {exc}") from exc
    manifest = []
    if config is not None:
        p = out / "config.json"
        try:
            p.write_text(json.dumps(config.to_dict(), indent=2, sort_keys=True) + "\n")
        except OSError as exc:
            raise OSError(f"cannot write {p}: {exc}") from exc
        manifest.append(p)
    if report is None or not report.filters:
        return manifest
    manifest.append(write_mse_csv(report, out / "mse.csv"))
    p = out / "summary.csv"
    fh, w = _writer(p)
    with fh:
        w.writerow(["filter", "window_mse", "ratio_vs_bootstrap", "runs", "failed_runs"])
        for f in report.filters:
            w.writerow([f, repr(report.aggregate(f)), _fmt(report.ratio(f)), report.runs[f],
                        len(report.failures.get(f, []))])
    manifest.append(p)
    for f in report.filters:
        recs = [r for r in records if r.filter == f]
        manifest.append(write_trace_csv(recs, out / f"trace_{f}.csv"))
        if any(r.adapt_rows for r in recs):
            manifest.append(write_adapt_csv(recs, out / f"adapt_{f}.csv"))
    if any(report.failures.get(f) for f in report.filters):
        p = out / "failures.csv"
        fh, w = _writer(p)
        with fh:
            w.writerow(["filter", "run", "step", "error"])
            for f in report.filters:
                for run, k, msg in report.failures.get(f, []):
                    w.writerow([f, run, k, msg])
        manifest.append(p)
    p = out / "timing.csv"
    fh, w = _writer(p)
    with fh:
        w.writerow(["filter", "runs", "seconds"])
        for f in report.filters:
            recs = [r for r in records if r.filter == f]
            w.writerow([f, len(recs), f"{sum(r.duration for r in recs):.3f}"])
    manifest.append(p)
    p = out / "plot_mse.py"
    p.write_text(PLOT_SCRIPT)
    manifest.append(p)
    return manifest


# convergence study ---------------------------------------------------------

def convergence_study(params: ArchParams = BENCHMARK_ARCH, y_next: float = 60.0,
                      sizes=(1000, 10_000, 100_000), seeds=range(20)):
    """Entropy and CV² of one step from the stationary law versus their limits.

    The step uses unit adjustment weights and the optimal kernel. Returns
    ``(rows, (limit_kld, limit_csd))`` with rows ``(N, seed, entropy, cv2)``.
    """
    model = arch_model(params)
    limits = limit_criteria_quadrature(stationary_nu(model), model, constant_adjustment(),
                                       r_star_kernel(model), y_next)
    rows = []
    for n in sizes:
        for s in seeds:
            rng = make_rng(np.random.SeedSequence(int(s), spawn_key=(3, int(n))))
            smp = WeightedSample.uniform(model.initial_sample(rng, int(n)))
            out = apf_step(smp, model, constant_adjustment(), r_star_kernel(model), y_next, None, rng)
            rows.append((int(n), int(s), out.entropy, out.cv2))
    return rows, limits
