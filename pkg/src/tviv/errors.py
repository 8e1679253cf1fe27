"""Exception hierarchy shared across the package."""

from __future__ import annotations


class TvivError(Exception):
    """Base class for all package errors."""


class NonFiniteError(TvivError):
    """Input contains NaN or infinite entries."""


class EstimationError(TvivError):
    """Base class for failures raised while fitting an estimator.

    Bootstrap resampling and the study runner catch this class to count a
    replication as failed without aborting the run.
    """


class RankDeficientError(EstimationError):
    """A design matrix is rank deficient beyond the singular-value tolerance."""

    def __init__(self, column=None, stage=None, period=None):
        self.column = column
        self.stage = stage
        self.period = period
        parts = ["rank-deficient design"]
        if stage is not None:
            parts.append(f"in {stage} stage")
        if period is not None:
            parts.append(f"period {period}")
        if column is not None:
            parts.append(f"(column {column})")
        super().__init__(" ".join(parts))


class SeparationError(EstimationError):
    """GLM coefficients diverged before convergence (separated data)."""

    def __init__(self, period=None):
        self.period = period
        msg = "coefficients diverged, data may be separated"
        if period is not None:
            msg += f" (period {period})"
        super().__init__(msg)


class NoVariationError(EstimationError):
    """Binary response is constant, so no GLM can be fit."""


class SingularMatrixError(EstimationError):
    """A closed-form solve hit a singular matrix."""


class NoStableLambdaError(EstimationError):
    """No grid point stabilized the ridge coefficients; the grid is too narrow."""


class ValidationFailedError(TvivError):
    """A dataset violates panel invariants."""

    def __init__(self, violations):
        self.violations = list(violations)
        head = "; ".join(str(v) for v in self.violations[:3])
        more = "" if len(self.violations) <= 3 else f" (+{len(self.violations) - 3} more)"
        super().__init__(f"{len(self.violations)} violation(s): {head}{more}")


class MissingColumnError(TvivError):
    """A required CSV column is absent."""

    def __init__(self, column):
        self.column = column
        super().__init__(f"missing column {column!r}")


class ParseError(TvivError):
    """A CSV cell or header could not be interpreted.

    ``row`` is the 1-based data-row index (0 for the header line).
    """

    def __init__(self, row, col, detail=""):
        self.row = row
        self.col = col
        msg = f"cannot parse row {row}, column {col!r}"
        if detail:
            msg += f": {detail}"
        super().__init__(msg)


class IoError(TvivError):
    """A file could not be read or written."""


class TooManyFailuresError(TvivError):
    """More than half of the bootstrap resamples failed to estimate."""


class ScenarioFailedError(TvivError):
    """More than 20% of a scenario's replications failed for some method."""


class EmptyCellError(TvivError):
    """A cluster-period cell needed for a preference proportion has no records."""

    def __init__(self, cluster, key):
        self.cluster = cluster
        self.key = key
        super().__init__(f"no prescriptions for cluster {cluster!r} in cell {key!r}")


class ConstantColumnError(TvivError):
    """A covariate has zero variance, so a correlation is undefined."""


class MalformedResultsError(TvivError):
    """A results CSV lacks the point/CI columns needed for plotting."""


class InvalidConfigError(TvivError, ValueError):
    """A configuration value is outside its domain; names the offending field."""

    def __init__(self, field, detail=""):
        self.field = field
        msg = f"invalid value for {field!r}"
        if detail:
            msg += f": {detail}"
        super().__init__(msg)
