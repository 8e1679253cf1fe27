"""Monte Carlo study harness: replication loop, metrics, scenario grids.

Replications are independent; each gets its own simulation seed derived
from (base_seed, replication index), and each bootstrap run a seed derived
from (base_seed, replication index, method index). Aggregation is a pure
fold, so results are identical no matter how replications are scheduled.
"""

from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .bootstrap import percentile_bootstrap
from .errors import EstimationError, ScenarioFailedError, TooManyFailuresError
from .estimators import MethodSpec, estimate
from .simulate import SimConfig, simulate, true_values

FAILURE_BUDGET = 0.20  # a scenario aborts when a method fails more often


@dataclass(frozen=True)
class Scenario:
    """One cell of the study grid: a DGP, methods to run, and rep counts.

    ``b_boot = 0`` skips the bootstrap (coverage comes back as None).
    """

    sim: SimConfig
    methods: tuple[MethodSpec, ...]
    n_reps: int
    b_boot: int = 0
    base_seed: int = 0
    level: float = 0.95

    def __post_init__(self):
        object.__setattr__(self, "methods", tuple(self.methods))
        if self.n_reps < 2:
            raise ValueError("n_reps must be at least 2")
        if not self.methods:
            raise ValueError("at least one method is required")

    def label(self) -> str:
        sim = self.sim
        return (
            f"{sim.regime} n={sim.n} alpha={sim.alpha:g} "
            f"sigma=({sim.sigma_z},{sim.sigma_a},{sim.sigma_y})"
        )


@dataclass(frozen=True)
class StudyMetrics:
    """Performance summary of one method over a scenario's replications.

    ``abs_bias`` is |mean estimate - truth|; ``mean_abs_error`` is the mean
    of per-replication absolute errors; ``mce`` is the Monte Carlo standard
    error of the mean estimate. ``coverage`` is a percentage, or None when
    the bootstrap was skipped.
    """

    method: str
    target: str
    abs_bias: float
    rmse: float
    mce: float
    coverage: float | None
    n_successful: int
    mean_abs_error: float


def _rep_seed(base_seed, rep) -> int:
    return int(np.random.SeedSequence((base_seed, rep)).generate_state(1, np.uint64)[0])


def _boot_seed(base_seed, rep, method_index) -> int:
    ss = np.random.SeedSequence((base_seed, rep, 1 + method_index))
    return int(ss.generate_state(1, np.uint64)[0])


def _run_replication(scenario: Scenario, rep: int, estimate_fn):
    """One replication: simulate once, run every method.

    Returns per-method (ate, ci_lo, ci_hi) with NaNs marking failure.
    """
    cfg = scenario.sim.with_seed(_rep_seed(scenario.base_seed, rep))
    data, _ = simulate(cfg)
    out = np.full((len(scenario.methods), 3), np.nan)
    for m, spec in enumerate(scenario.methods):
        try:
            if scenario.b_boot > 0:
                boot = percentile_bootstrap(
                    data,
                    spec,
                    b=scenario.b_boot,
                    level=scenario.level,
                    seed=_boot_seed(scenario.base_seed, rep, m),
                    estimate_fn=estimate_fn,
                )
                out[m] = (boot.point.ate, boot.ci_lower[-1], boot.ci_upper[-1])
            else:
                res = (estimate_fn or estimate)(data, spec)
                out[m, 0] = res.ate
        except (EstimationError, TooManyFailuresError):
            pass
    return out


def _replication_worker(args):
    scenario, rep = args
    return _run_replication(scenario, rep, None)


def run_scenario(
    scenario: Scenario, estimate_fn=None, n_jobs: int = 1
) -> list[StudyMetrics]:
    """Run every replication of a scenario and summarize per method.

    ``estimate_fn`` swaps the estimator (testing hook); it forces serial
    execution. ``n_jobs > 1`` fans replications over worker processes; the
    output is identical either way.
    """
    reps = range(scenario.n_reps)
    if estimate_fn is not None or n_jobs <= 1:
        results = [_run_replication(scenario, r, estimate_fn) for r in reps]
    else:
        with ProcessPoolExecutor(max_workers=n_jobs) as pool:
            results = list(pool.map(_replication_worker, ((scenario, r) for r in reps)))
    stacked = np.stack(results)  # (reps, methods, 3)

    truth = true_values(scenario.sim).true_ate
    metrics = []
    for m, spec in enumerate(scenario.methods):
        ates = stacked[:, m, 0]
        ok = np.isfinite(ates)
        n_ok = int(ok.sum())
        if scenario.n_reps - n_ok > FAILURE_BUDGET * scenario.n_reps:
            raise ScenarioFailedError(
                f"method {spec.method} failed {scenario.n_reps - n_ok} of "
                f"{scenario.n_reps} replications in scenario [{scenario.label()}]"
            )
        est = ates[ok]
        abs_bias = float(abs(est.mean() - truth))
        mean_abs_error = float(np.mean(np.abs(est - truth)))
        rmse = float(np.sqrt(np.mean((est - truth) ** 2)))
        mce = float(est.std(ddof=1) / np.sqrt(n_ok))
        coverage = None
        if scenario.b_boot > 0:
            lo = stacked[ok, m, 1]
            hi = stacked[ok, m, 2]
            coverage = float(100.0 * np.mean((lo <= truth) & (truth <= hi)))
        metrics.append(
            StudyMetrics(
                method=spec.method,
                target="ate",
                abs_bias=abs_bias,
                rmse=rmse,
                mce=mce,
                coverage=coverage,
                n_successful=n_ok,
                mean_abs_error=mean_abs_error,
            )
        )
    return metrics


@dataclass(frozen=True)
class GridRow:
    """One scenario-method cell of a study grid, or its failure marker."""

    regime: str
    n: int
    alpha: float
    sigma_z: int
    sigma_a: int
    sigma_y: int
    method: str
    metrics: StudyMetrics | None
    error: str | None = None


def run_grid(scenarios, estimate_fn=None, n_jobs: int = 1) -> list[GridRow]:
    """Run a list of scenarios; emission order follows the input order.

    A scenario that trips the failure budget contributes error rows and the
    grid continues.
    """
    scenarios = list(scenarios)
    if not scenarios:
        raise ValueError("empty scenario list")
    rows = []
    for scenario in scenarios:
        sim = scenario.sim
        base = dict(
            regime=sim.regime,
            n=sim.n,
            alpha=sim.alpha,
            sigma_z=sim.sigma_z,
            sigma_a=sim.sigma_a,
            sigma_y=sim.sigma_y,
        )
        try:
            metrics = run_scenario(scenario, estimate_fn=estimate_fn, n_jobs=n_jobs)
        except ScenarioFailedError as exc:
            rows.extend(
                GridRow(**base, method=spec.method, metrics=None, error=str(exc))
                for spec in scenario.methods
            )
            continue
        rows.extend(
            GridRow(**base, method=met.method, metrics=met) for met in metrics
        )
    return rows


def default_n_jobs() -> int:
    """Worker count: the TVIV_THREADS environment variable, else 1."""
    raw = os.environ.get("TVIV_THREADS", "")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1
