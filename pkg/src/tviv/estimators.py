"""Time-varying instrumental-variable estimators.

Six methods share one pipeline. The standard two-stage estimator regresses
each period's treatment on every instrument (plus controls), then the
outcome on the predicted treatments. The robust variant first strips each
instrument of its dependence on the conditioning set, leaving residual
instruments that are orthogonal to measured history, and runs the same two
stages on those residuals with no controls. A closed-form solution on
centered matrices reproduces the robust estimate exactly and doubles as the
g-estimation form. Ridge and probit variants swap in a penalized second
stage or probit first stage.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import regression
from .errors import (
    InvalidConfigError,
    NoStableLambdaError,
    RankDeficientError,
    SeparationError,
    SingularMatrixError,
    ValidationFailedError,
)
from .panel import ConditioningSet, PanelDataset, resolve_controls, validate
from .regression import GlmFit, LinearFit, glm_fit, ols_fit, ridge_fit

METHODS = (
    "standard_2sls",
    "r2sls",
    "gest_closed_form",
    "ridge_r2sls",
    "r2sls_probit",
    "r2sls_probit_trick",
)

_RESIDUALIZED = frozenset(METHODS) - {"standard_2sls"}

INSTRUMENT_MODELS = ("auto", "logistic", "ols")


def default_lambda_grid() -> tuple[float, ...]:
    """Zero plus 50 log-spaced penalties between 1e-4 and 1e4."""
    return (0.0,) + tuple(np.logspace(-4, 4, 50))


@dataclass(frozen=True)
class RidgeOptions:
    """Penalty grid and stabilization tolerance for the ridge second stage."""

    grid: tuple[float, ...] = field(default_factory=default_lambda_grid)
    tol: float = 0.01

    def __post_init__(self):
        grid = tuple(float(g) for g in self.grid)
        if len(grid) < 1:
            raise InvalidConfigError("grid", "needs at least one point")
        if any(g < 0 for g in grid):
            raise InvalidConfigError("grid", "penalties must be nonnegative")
        if any(b <= a for a, b in zip(grid, grid[1:])):
            raise InvalidConfigError("grid", "must be strictly increasing")
        if not self.tol > 0:
            raise InvalidConfigError("tol", "must be positive")
        object.__setattr__(self, "grid", grid)


@dataclass(frozen=True)
class MethodSpec:
    """Which estimator to run and how its stages are configured.

    ``control_in_stages`` lists columns (see ``panel.resolve_controls``)
    entering both stages; the robust methods default to none, which is the
    point of residualizing. ``instrument_model`` picks the family for the
    instrument models: "auto" uses logistic for 0/1 instruments and OLS
    otherwise.
    """

    method: str
    conditioning: ConditioningSet = field(default_factory=ConditioningSet.simple)
    control_in_stages: tuple[str, ...] = ()
    ridge_options: RidgeOptions | None = None
    instrument_model: str = "auto"

    def __post_init__(self):
        if self.method not in METHODS:
            raise InvalidConfigError("method", f"must be one of {METHODS}")
        if self.instrument_model not in INSTRUMENT_MODELS:
            raise InvalidConfigError(
                "instrument_model", f"must be one of {INSTRUMENT_MODELS}"
            )
        object.__setattr__(self, "control_in_stages", tuple(self.control_in_stages))
        if self.method == "ridge_r2sls" and self.ridge_options is None:
            object.__setattr__(self, "ridge_options", RidgeOptions())
        if self.method != "ridge_r2sls" and self.ridge_options is not None:
            raise InvalidConfigError(
                "ridge_options", "only applicable to ridge_r2sls"
            )


@dataclass(frozen=True)
class EstimateResult:
    """Per-period effects and the machinery that produced them.

    ``ate`` is the sum of ``beta``. ``instrument_residuals`` is present for
    the residualizing methods, ``ridge_lambda`` for the ridge method, and
    ``instrument_predictions`` for the probit-trick method (the stage-A
    probabilities it uses as instruments).
    """

    beta: np.ndarray
    ate: float
    method: str
    first_stage: tuple
    second_stage: LinearFit
    instrument_residuals: np.ndarray | None = None
    ridge_lambda: float | None = None
    instrument_predictions: np.ndarray | None = None


def _rank_error(exc, stage, period=None):
    return RankDeficientError(column=exc.column, stage=stage, period=period)


def _is_binary(col) -> bool:
    return bool(np.isin(col, (0.0, 1.0)).all())


def residualize_instruments(data: PanelDataset, spec: MethodSpec):
    """Strip each instrument of its conditioning-set dependence.

    Fits the period-t instrument model on the conditioning design and
    returns (residual matrix, fitted models). Binary instruments get a
    logistic model under "auto"; continuous ones get OLS.
    """
    n, T = data.n, data.n_periods
    residuals = np.empty((n, T))
    fits = []
    for t in range(1, T + 1):
        z = data.instruments[:, t - 1]
        M = spec.conditioning.design(data, t)
        family = spec.instrument_model
        if family == "auto":
            family = "logistic" if _is_binary(z) else "ols"
        try:
            if family == "logistic":
                fit = glm_fit(M, z, link="logit")
                predicted = fit.fitted_probabilities
            else:
                fit = ols_fit(M, z)
                predicted = fit.fitted
        except RankDeficientError as exc:
            raise _rank_error(exc, "instrument model", t) from exc
        except SeparationError as exc:
            raise SeparationError(period=t) from exc
        residuals[:, t - 1] = z - predicted
        fits.append(fit)
    return residuals, fits


def _two_stage(y, treatments, instruments, controls):
    """Shared 2SLS core: OLS first stages, OLS second stage.

    ``instruments`` is the full (n, k) instrument block used in every
    first-stage regression. Returns (beta, first-stage fits, second stage).
    """
    n, T = treatments.shape
    X1 = np.column_stack([np.ones(n), instruments, controls])
    predicted = np.empty((n, T))
    first = []
    for t in range(T):
        try:
            fit = ols_fit(X1, treatments[:, t])
        except RankDeficientError as exc:
            raise _rank_error(exc, "first", t + 1) from exc
        predicted[:, t] = fit.fitted
        first.append(fit)
    X2 = np.column_stack([np.ones(n), predicted, controls])
    try:
        second = ols_fit(X2, y)
    except RankDeficientError as exc:
        raise _rank_error(exc, "second") from exc
    beta = second.coefficients[1 : T + 1].copy()
    return beta, tuple(first), second, predicted


def _result(method, beta, first, second, **extra):
    beta = np.asarray(beta, dtype=float)
    return EstimateResult(
        beta=beta,
        ate=float(beta.sum()),
        method=method,
        first_stage=first,
        second_stage=second,
        **extra,
    )


def standard_2sls(data: PanelDataset, spec: MethodSpec) -> EstimateResult:
    """Two-stage least squares on the raw instruments."""
    controls, _ = resolve_controls(data, spec.control_in_stages)
    beta, first, second, _ = _two_stage(
        data.outcome, data.treatments, data.instruments, controls
    )
    return _result("standard_2sls", beta, first, second)


def r2sls(data: PanelDataset, spec: MethodSpec) -> EstimateResult:
    """Two-stage least squares on residualized instruments."""
    controls, _ = resolve_controls(data, spec.control_in_stages)
    residuals, _ = residualize_instruments(data, spec)
    beta, first, second, _ = _two_stage(
        data.outcome, data.treatments, residuals, controls
    )
    return _result("r2sls", beta, first, second, instrument_residuals=residuals)


def gest_closed_form(data: PanelDataset, spec: MethodSpec) -> EstimateResult:
    """Closed-form solution on centered residual instruments.

    Solves (Z'A) beta = Z'Y on column-centered Y, A, Z-residual matrices,
    which is algebraically identical to the residualized two-stage estimate
    in the just-identified case.
    """
    residuals, _ = residualize_instruments(data, spec)
    Zc = residuals - residuals.mean(axis=0)
    Ac = data.treatments - data.treatments.mean(axis=0)
    Yc = data.outcome - data.outcome.mean()
    G = Zc.T @ Ac
    sv = np.linalg.svd(G, compute_uv=False)
    if sv[-1] <= 1e-12 * max(sv[0], 1.0):
        raise SingularMatrixError("instrument-treatment cross moment is singular")
    beta, *_ = np.linalg.lstsq(G, Zc.T @ Yc, rcond=None)
    fitted = Ac @ beta
    second = LinearFit(coefficients=beta, residuals=Yc - fitted, fitted=fitted)
    return _result(
        "gest_closed_form", beta, (), second, instrument_residuals=residuals
    )


def ridge_r2sls(data: PanelDataset, spec: MethodSpec) -> EstimateResult:
    """Residualized two-stage estimate with a ridge-stabilized second stage.

    Walks the penalty grid upward and keeps the first penalty whose
    coefficients all moved less than ``tol`` since the previous grid point.
    Intercept and control columns are never penalized.
    """
    opts = spec.ridge_options or RidgeOptions()
    controls, _ = resolve_controls(data, spec.control_in_stages)
    residuals, _ = residualize_instruments(data, spec)
    n, T = data.n, data.n_periods
    X1 = np.column_stack([np.ones(n), residuals, controls])
    predicted = np.empty((n, T))
    first = []
    for t in range(T):
        try:
            fit = ols_fit(X1, data.treatments[:, t])
        except RankDeficientError as exc:
            raise _rank_error(exc, "first", t + 1) from exc
        predicted[:, t] = fit.fitted
        first.append(fit)

    X2 = np.column_stack([np.ones(n), predicted, controls])
    mask = np.zeros(X2.shape[1], dtype=bool)
    mask[1 : T + 1] = True
    fits = []
    for lam in opts.grid:
        try:
            fits.append(ridge_fit(X2, data.outcome, lam, penalize=mask))
        except RankDeficientError as exc:
            raise _rank_error(exc, "second") from exc

    chosen = None
    if len(opts.grid) == 1:
        if np.isinf(opts.tol):
            chosen = 0
    else:
        for k in range(1, len(opts.grid)):
            step = np.abs(
                fits[k].coefficients[1 : T + 1] - fits[k - 1].coefficients[1 : T + 1]
            )
            if np.max(step) < opts.tol:
                chosen = k
                break
    if chosen is None:
        raise NoStableLambdaError(
            f"no penalty in [{opts.grid[0]:g}, {opts.grid[-1]:g}] stabilized "
            f"the coefficients within {opts.tol:g}; widen the grid"
        )
    second = fits[chosen]
    beta = second.coefficients[1 : T + 1].copy()
    return _result(
        "ridge_r2sls",
        beta,
        tuple(first),
        second,
        instrument_residuals=residuals,
        ridge_lambda=float(opts.grid[chosen]),
    )


def _probit_predictions(data, residuals):
    """Probit first-stage probabilities of each treatment on the residuals."""
    n, T = data.n, data.n_periods
    X1 = np.column_stack([np.ones(n), residuals])
    probs = np.empty((n, T))
    fits = []
    for t in range(T):
        try:
            fit = glm_fit(X1, data.treatments[:, t], link="probit")
        except RankDeficientError as exc:
            raise _rank_error(exc, "first", t + 1) from exc
        except SeparationError as exc:
            raise SeparationError(period=t + 1) from exc
        probs[:, t] = fit.fitted_probabilities
        fits.append(fit)
    return probs, tuple(fits)


def r2sls_probit(data: PanelDataset, spec: MethodSpec) -> EstimateResult:
    """Residualized two-stage estimate with probit first stages."""
    residuals, _ = residualize_instruments(data, spec)
    probs, fits = _probit_predictions(data, residuals)
    n, T = data.n, data.n_periods
    X2 = np.column_stack([np.ones(n), probs])
    try:
        second = ols_fit(X2, data.outcome)
    except RankDeficientError as exc:
        raise _rank_error(exc, "second") from exc
    beta = second.coefficients[1 : T + 1].copy()
    return _result(
        "r2sls_probit", beta, fits, second, instrument_residuals=residuals
    )


def r2sls_probit_trick(data: PanelDataset, spec: MethodSpec) -> EstimateResult:
    """Probit predictions reused as instruments inside a fully OLS 2SLS."""
    residuals, _ = residualize_instruments(data, spec)
    probs, _ = _probit_predictions(data, residuals)
    beta, first, second, _ = _two_stage(
        data.outcome, data.treatments, probs, np.zeros((data.n, 0))
    )
    return _result(
        "r2sls_probit_trick",
        beta,
        first,
        second,
        instrument_residuals=residuals,
        instrument_predictions=probs,
    )


_DISPATCH = {
    "standard_2sls": standard_2sls,
    "r2sls": r2sls,
    "gest_closed_form": gest_closed_form,
    "ridge_r2sls": ridge_r2sls,
    "r2sls_probit": r2sls_probit,
    "r2sls_probit_trick": r2sls_probit_trick,
}


def estimate(data: PanelDataset, spec: MethodSpec, *, validated=False) -> EstimateResult:
    """Validate the panel and dispatch to the configured method."""
    if not validated:
        violations = validate(data)
        if violations:
            raise ValidationFailedError(violations)
    return _DISPATCH[spec.method](data, spec)


def second_stage_design(data: PanelDataset, spec: MethodSpec) -> np.ndarray:
    """Design matrix of the method's second stage (for collinearity checks)."""
    controls, _ = resolve_controls(data, spec.control_in_stages)
    if spec.method == "standard_2sls":
        instruments = data.instruments
    else:
        instruments, _ = residualize_instruments(data, spec)
        if spec.method in ("r2sls_probit", "r2sls_probit_trick"):
            instruments, _ = _probit_predictions(data, instruments)
            if spec.method == "r2sls_probit":
                return np.column_stack([np.ones(data.n), instruments])
    _, _, _, predicted = _two_stage(
        data.outcome, data.treatments, instruments, controls
    )
    return np.column_stack([np.ones(data.n), predicted, controls])
