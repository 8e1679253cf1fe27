"""Instrument-strength and collinearity diagnostics.

All F forms are homoskedastic nested-model statistics. The conditional
statistic follows the one-per-treatment construction: partial the other
treatments' first-stage predictions out of the treatment of interest, then
test what predictive power the instrument block retains, charging T-1
degrees of freedom for the estimated nuisance directions.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConstantColumnError, RankDeficientError
from .estimators import MethodSpec, residualize_instruments
from .panel import PanelDataset, resolve_controls
from .regression import RANK_TOL, ols_fit


@dataclass(frozen=True)
class FirstStageDiagnostics:
    """Instrument-strength summary for a dataset/method pair."""

    f_stat: np.ndarray
    conditional_f: np.ndarray | None
    vif: np.ndarray
    z_correlations: np.ndarray


def _instrument_block(data: PanelDataset, spec: MethodSpec) -> np.ndarray:
    if spec.method == "standard_2sls":
        return data.instruments
    residuals, _ = residualize_instruments(data, spec)
    return residuals


def _rss(X, y):
    # Projection-based residual sum of squares; tolerates collinear X.
    coef, _, _, _ = np.linalg.lstsq(X, y, rcond=None)
    r = y - X @ coef
    return float(r @ r)


def first_stage_f(data: PanelDataset, spec: MethodSpec, period: int) -> float:
    """Joint F-statistic of the instrument block in one first-stage model.

    Compares the period-``period`` first stage (treatment on all
    instruments plus controls) against the instrument-free model.
    """
    if not 1 <= period <= data.n_periods:
        raise ValueError("period out of range")
    controls, _ = resolve_controls(data, spec.control_in_stages)
    inst = _instrument_block(data, spec)
    n = data.n
    k = inst.shape[1]
    y = data.treatments[:, period - 1]
    X_full = np.column_stack([np.ones(n), inst, controls])
    sv = np.linalg.svd(X_full, compute_uv=False)
    if sv[-1] <= RANK_TOL * sv[0]:
        raise RankDeficientError(stage="first", period=period)
    X_restricted = np.column_stack([np.ones(n), controls])
    rss_full = _rss(X_full, y)
    rss_restricted = _rss(X_restricted, y)
    df_den = n - X_full.shape[1]
    if rss_full <= 0.0:
        return float("inf")
    return float(((rss_restricted - rss_full) / k) / (rss_full / df_den))


def conditional_f(data: PanelDataset, spec: MethodSpec, period: int) -> float:
    """Conditional instrument-strength F for one treatment period.

    Residualizes the period's treatment on the first-stage predictions of
    every other treatment, regresses that residual on the instrument block,
    and forms the nested F with numerator degrees of freedom reduced by the
    T-1 nuisance directions. Near-zero values mean the instruments carry no
    predictive power for this treatment beyond what the others absorb.
    """
    T = data.n_periods
    if T < 2:
        raise ValueError("conditional F needs at least two periods")
    if not 1 <= period <= T:
        raise ValueError("period out of range")
    controls, _ = resolve_controls(data, spec.control_in_stages)
    inst = _instrument_block(data, spec)
    n = data.n
    k = inst.shape[1]
    if n <= k + controls.shape[1] + 1:
        raise RankDeficientError(stage="first", period=period)

    X1 = np.column_stack([np.ones(n), inst, controls])
    predictions = []
    for t in range(T):
        if t == period - 1:
            continue
        coef, _, _, _ = np.linalg.lstsq(X1, data.treatments[:, t], rcond=None)
        predictions.append(X1 @ coef)
    nuisance = np.column_stack([np.ones(n)] + predictions + [controls])
    y = data.treatments[:, period - 1]
    coef, _, _, _ = np.linalg.lstsq(nuisance, y, rcond=None)
    resid = y - nuisance @ coef

    rss_full = _rss(X1, resid)
    rss_restricted = _rss(np.column_stack([np.ones(n), controls]), resid)
    df_num = k - (T - 1)
    if df_num < 1:
        raise ValueError("more nuisance treatments than instruments")
    df_den = n - (1 + k + controls.shape[1])
    if rss_full <= 0.0:
        return float("inf")
    return float(max(rss_restricted - rss_full, 0.0) / df_num / (rss_full / df_den))


def vif(design: np.ndarray) -> np.ndarray:
    """Variance inflation factors of a design matrix.

    Each non-intercept column is regressed on the remaining non-intercept
    columns (with an intercept); VIF is 1/(1 - R^2) of that regression.
    Intercept columns get NaN.
    """
    X = np.asarray(design, dtype=float)
    if X.ndim != 2:
        raise ValueError("design must be a matrix")
    n, p = X.shape
    sv = np.linalg.svd(X, compute_uv=False)
    if sv[-1] <= RANK_TOL * sv[0]:
        raise RankDeficientError()
    is_intercept = np.array([np.all(X[:, j] == X[0, j]) for j in range(p)])
    out = np.full(p, np.nan)
    ones = np.ones(n)
    for j in range(p):
        if is_intercept[j]:
            continue
        others = [c for c in range(p) if c != j and not is_intercept[c]]
        Xj = np.column_stack([ones] + [X[:, c] for c in others])
        fit = ols_fit(Xj, X[:, j])
        tss = float(np.sum((X[:, j] - X[:, j].mean()) ** 2))
        rss = float(fit.residuals @ fit.residuals)
        r2 = 1.0 - rss / tss if tss > 0 else 0.0
        out[j] = np.inf if r2 >= 1.0 else 1.0 / (1.0 - r2)
    return out


@dataclass(frozen=True)
class BalanceRow:
    """Correlation of one covariate with the instrument, with its flag."""

    label: str
    correlation: float
    flagged: bool


BALANCE_FLAG_THRESHOLD = 0.08


def balance_table(
    data: PanelDataset, instrument_period: int, covariates
) -> list[BalanceRow]:
    """Pearson correlations between one instrument column and covariates.

    Covariates are referenced as in ``panel.resolve_controls``. Rows whose
    absolute correlation strictly exceeds 0.08 are flagged as potentially
    imbalanced.
    """
    if not 1 <= instrument_period <= data.n_periods:
        raise ValueError("instrument period out of range")
    z = data.instruments[:, instrument_period - 1]
    if np.ptp(z) == 0:
        raise ConstantColumnError(f"instrument z{instrument_period} has zero variance")
    matrix, labels = resolve_controls(data, covariates)
    rows = []
    for j, label in enumerate(labels):
        x = matrix[:, j]
        if np.ptp(x) == 0:
            raise ConstantColumnError(f"covariate {label} has zero variance")
        corr = float(np.corrcoef(z, x)[0, 1])
        rows.append(
            BalanceRow(
                label=label,
                correlation=corr,
                flagged=abs(corr) > BALANCE_FLAG_THRESHOLD,
            )
        )
    return rows


def instrument_correlations(data: PanelDataset, spec: MethodSpec | None = None) -> np.ndarray:
    """T x T correlation matrix of the (possibly residualized) instruments."""
    block = data.instruments if spec is None else _instrument_block(data, spec)
    corr = np.corrcoef(block, rowvar=False)
    corr = np.atleast_2d(corr)
    np.fill_diagonal(corr, 1.0)
    return corr


def first_stage_diagnostics(data: PanelDataset, spec: MethodSpec) -> FirstStageDiagnostics:
    """Assemble the full diagnostic set for a dataset/method pair."""
    from .estimators import second_stage_design

    T = data.n_periods
    f = np.array([first_stage_f(data, spec, t) for t in range(1, T + 1)])
    cond = None
    if T >= 2:
        cond = np.array([conditional_f(data, spec, t) for t in range(1, T + 1)])
    design = second_stage_design(data, spec)
    return FirstStageDiagnostics(
        f_stat=f,
        conditional_f=cond,
        vif=vif(design),
        z_correlations=instrument_correlations(data, spec),
    )
