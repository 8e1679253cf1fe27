"""Percentile bootstrap confidence intervals for any estimator."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import EstimationError, TooManyFailuresError
from .estimators import EstimateResult, MethodSpec, estimate
from .panel import PanelDataset, validate
from .errors import ValidationFailedError


@dataclass(frozen=True)
class BootstrapResult:
    """Point estimate plus percentile intervals over subject resamples.

    ``replicates`` has one row per successful resample and T+1 columns
    (per-period effects, then the ATE); ``ci_lower``/``ci_upper`` follow the
    same layout.
    """

    point: EstimateResult
    replicates: np.ndarray
    ci_lower: np.ndarray
    ci_upper: np.ndarray
    level: float
    b: int
    failures: int


def resample_indices(rng, n) -> np.ndarray:
    """Subject indices for one resample: n draws with replacement."""
    return rng.integers(0, n, size=n)


def percentile_bootstrap(
    data: PanelDataset,
    spec: MethodSpec,
    b: int = 1000,
    level: float = 0.95,
    seed: int = 0,
    estimate_fn=None,
) -> BootstrapResult:
    """Percentile bootstrap over subject-level resamples.

    Each resample draws n subjects with replacement, keeping every subject's
    periods together, and re-runs the estimator. Interval bounds are the
    (1-level)/2 and 1-(1-level)/2 empirical quantiles (linear interpolation
    of order statistics) of the successful replicates. Resamples where the
    estimator raises an EstimationError are dropped and counted.

    Per-resample random streams derive from ``(seed, resample index)``, so
    results do not depend on execution order.
    """
    if b < 2:
        raise ValueError("b must be at least 2")
    if not 0 < level < 1:
        raise ValueError("level must lie strictly inside (0, 1)")
    if estimate_fn is None:
        violations = validate(data)
        if violations:
            raise ValidationFailedError(violations)
        # Row subsets of a valid panel stay valid; skip re-validation per resample.
        estimate_fn = lambda d, s: estimate(d, s, validated=True)

    point = estimate_fn(data, spec)
    n = data.n
    T = data.n_periods
    children = np.random.SeedSequence(seed).spawn(b)
    rows = []
    failures = 0
    for child in children:
        idx = resample_indices(np.random.default_rng(child), n)
        try:
            res = estimate_fn(data.subset(idx), spec)
        except EstimationError:
            failures += 1
            continue
        rows.append(np.append(res.beta, res.ate))
    if failures > b / 2:
        raise TooManyFailuresError(
            f"{failures} of {b} resamples failed to estimate"
        )
    replicates = np.asarray(rows).reshape(len(rows), T + 1)
    lo = (1.0 - level) / 2.0
    ci = np.quantile(replicates, [lo, 1.0 - lo], axis=0, method="linear")
    return BootstrapResult(
        point=point,
        replicates=replicates,
        ci_lower=ci[0],
        ci_upper=ci[1],
        level=level,
        b=b,
        failures=failures,
    )
