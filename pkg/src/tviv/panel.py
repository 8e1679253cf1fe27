"""Longitudinal panel data model and wide-format CSV ingestion.

A panel holds, per subject: instruments and treatments for periods 1..T,
confounders (possibly several per period), an end-of-study outcome, and
time-fixed baseline covariates. Datasets are immutable after construction
and freely shareable across threads.
"""

from __future__ import annotations

import csv
import re
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    IoError,
    MissingColumnError,
    ParseError,
    ValidationFailedError,
)

# Wide CSV headers: z<t>, a<t>, l<t> / l<t>_<name>, y, bl_<name>.
_HEADER_RE = re.compile(r"^(z|a)(\d+)$|^l(\d+)(?:_(.+))?$|^y$|^bl_(.+)$")

DEFAULT_CONFOUNDER_NAME = "l"


@dataclass(frozen=True)
class Violation:
    """One invariant failure inside a dataset block.

    ``subject`` and ``period`` are 0-based array indices, or None when the
    violation is not tied to a single entry.
    """

    block: str
    reason: str
    subject: int | None = None
    period: int | None = None

    def __str__(self):
        where = ""
        if self.subject is not None:
            where += f" subject {self.subject}"
        if self.period is not None:
            where += f" period {self.period}"
        return f"{self.block}{where}: {self.reason}"


def _freeze(arr):
    arr = np.ascontiguousarray(np.asarray(arr, dtype=float))
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class PanelDataset:
    """Rectangular per-subject longitudinal record.

    Attributes
    ----------
    instruments : ndarray, shape (n, T)
        Instrument values; binary instruments stored as 0/1 reals.
    treatments : ndarray, shape (n, T)
        Treatment indicators, 0/1.
    confounders : ndarray, shape (n, T, q)
        Observed time-varying confounders, q variables per period.
    outcome : ndarray, shape (n,)
        Continuous end-of-study outcome.
    baseline : ndarray, shape (n, p)
        Time-fixed covariates (p may be 0).
    """

    instruments: np.ndarray
    treatments: np.ndarray
    confounders: np.ndarray
    outcome: np.ndarray
    baseline: np.ndarray = None
    confounder_names: tuple[str, ...] = None
    baseline_names: tuple[str, ...] = ()

    def __post_init__(self):
        z = _freeze(self.instruments)
        a = _freeze(self.treatments)
        y = _freeze(self.outcome)
        if z.ndim != 2:
            raise ValueError("instruments must be an (n, T) matrix")
        n, T = z.shape
        lraw = self.confounders
        l = np.asarray(lraw, dtype=float) if lraw is not None else np.zeros((n, T, 0))
        if l.ndim == 2:
            l = l[:, :, None]
        l = _freeze(l)
        b = self.baseline
        b = _freeze(b if b is not None else np.zeros((n, 0)))
        if a.shape != (n, T):
            raise ValueError("treatments must match instruments' (n, T) shape")
        if l.shape[:2] != (n, T):
            raise ValueError("confounders must be (n, T, q)")
        if y.shape != (n,):
            raise ValueError("outcome must be an n-vector")
        if b.ndim != 2 or b.shape[0] != n:
            raise ValueError("baseline must be an (n, p) matrix")
        names = self.confounder_names
        if names is None:
            names = (
                (DEFAULT_CONFOUNDER_NAME,)
                if l.shape[2] == 1
                else tuple(f"c{i + 1}" for i in range(l.shape[2]))
            )
        names = tuple(names)
        if len(names) != l.shape[2]:
            raise ValueError("confounder_names must have one entry per confounder")
        bnames = tuple(self.baseline_names)
        if len(bnames) != b.shape[1]:
            raise ValueError("baseline_names must have one entry per baseline column")
        object.__setattr__(self, "instruments", z)
        object.__setattr__(self, "treatments", a)
        object.__setattr__(self, "confounders", l)
        object.__setattr__(self, "outcome", y)
        object.__setattr__(self, "baseline", b)
        object.__setattr__(self, "confounder_names", names)
        object.__setattr__(self, "baseline_names", bnames)

    @property
    def n(self) -> int:
        return self.instruments.shape[0]

    @property
    def n_periods(self) -> int:
        return self.instruments.shape[1]

    @property
    def n_confounders(self) -> int:
        return self.confounders.shape[2]

    def subset(self, indices) -> "PanelDataset":
        """Row-subset (or resample) of the panel; keeps periods together."""
        idx = np.asarray(indices)
        return PanelDataset(
            instruments=self.instruments[idx],
            treatments=self.treatments[idx],
            confounders=self.confounders[idx],
            outcome=self.outcome[idx],
            baseline=self.baseline[idx],
            confounder_names=self.confounder_names,
            baseline_names=self.baseline_names,
        )


@dataclass(frozen=True)
class ConditioningSet:
    """Per-period variable set the instrument model conditions on.

    ``terms`` is drawn from {"z_lag", "a_lag", "l", "baseline"}. Lag terms
    are dropped at period 1, where only baseline and current confounders are
    available.
    """

    terms: tuple[str, ...]

    _ALLOWED = ("z_lag", "a_lag", "l", "baseline")

    def __post_init__(self):
        object.__setattr__(self, "terms", tuple(self.terms))
        for term in self.terms:
            if term not in self._ALLOWED:
                raise ValueError(f"unknown conditioning term {term!r}")

    @classmethod
    def simple(cls) -> "ConditioningSet":
        """Lagged instrument only."""
        return cls(terms=("z_lag",))

    @classmethod
    def complex(cls) -> "ConditioningSet":
        """Lagged instrument, lagged treatment, and current confounders."""
        return cls(terms=("z_lag", "a_lag", "l"))

    def design(self, data: PanelDataset, t: int) -> np.ndarray:
        """Design matrix (with intercept) for the period-``t`` instrument model.

        ``t`` is 1-based. Lag terms vanish at t = 1.
        """
        cols = [np.ones(data.n)]
        for term in self.terms:
            if term == "z_lag" and t >= 2:
                cols.append(data.instruments[:, t - 2])
            elif term == "a_lag" and t >= 2:
                cols.append(data.treatments[:, t - 2])
            elif term == "l":
                cols.append(data.confounders[:, t - 1, :].reshape(data.n, -1))
            elif term == "baseline" and data.baseline.shape[1]:
                cols.append(data.baseline)
        return np.column_stack(cols)


@dataclass(frozen=True)
class CounterfactualTarget:
    """Pair of treatment regimes whose outcome contrast is the estimand."""

    regime_treated: tuple[int, ...]
    regime_control: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "regime_treated", tuple(self.regime_treated))
        object.__setattr__(self, "regime_control", tuple(self.regime_control))
        if len(self.regime_treated) != len(self.regime_control):
            raise ValueError("regimes must cover the same number of periods")

    @classmethod
    def always_vs_never(cls, n_periods: int) -> "CounterfactualTarget":
        return cls((1,) * n_periods, (0,) * n_periods)

    def contrast(self, beta) -> float:
        """Effect of the treated regime versus control under per-period effects."""
        w = np.asarray(self.regime_treated, float) - np.asarray(self.regime_control, float)
        return float(np.asarray(beta, float) @ w)


def validate(data: PanelDataset) -> list[Violation]:
    """Check panel invariants; returns one Violation per offending entry."""
    out = []
    blocks = [
        ("z", data.instruments),
        ("a", data.treatments),
        ("y", data.outcome),
        ("bl", data.baseline),
    ]
    for name, arr in blocks:
        bad = ~np.isfinite(arr)
        for idx in np.argwhere(bad):
            subject = int(idx[0])
            period = int(idx[1]) if name in ("z", "a") else None
            out.append(Violation(name, "non-finite value", subject, period))
    bad = ~np.isfinite(data.confounders)
    for idx in np.argwhere(bad):
        out.append(Violation("l", "non-finite value", int(idx[0]), int(idx[1])))
    a = data.treatments
    nonbinary = np.isfinite(a) & (a != 0.0) & (a != 1.0)
    for idx in np.argwhere(nonbinary):
        out.append(Violation("a", "non-binary treatment", int(idx[0]), int(idx[1])))
    return out


def resolve_controls(data: PanelDataset, refs) -> tuple[np.ndarray, list[str]]:
    """Materialize control-column references into a matrix plus labels.

    Accepted references: ``l<t>`` (all confounders at period t),
    ``l<t>_<name>``, ``bl_<name>``, and ``baseline`` (all baseline columns).
    """
    cols, labels = [], []
    for ref in refs:
        m = re.match(r"^l(\d+)(?:_(.+))?$", ref)
        if m:
            t = int(m.group(1))
            if not 1 <= t <= data.n_periods:
                raise KeyError(f"control {ref!r}: period out of range")
            if m.group(2) is None:
                for j, name in enumerate(data.confounder_names):
                    cols.append(data.confounders[:, t - 1, j])
                    labels.append(f"l{t}_{name}" if data.n_confounders > 1 else f"l{t}")
            else:
                name = m.group(2)
                if name not in data.confounder_names:
                    raise KeyError(f"control {ref!r}: unknown confounder {name!r}")
                cols.append(data.confounders[:, t - 1, data.confounder_names.index(name)])
                labels.append(ref)
            continue
        if ref == "baseline":
            for j, name in enumerate(data.baseline_names):
                cols.append(data.baseline[:, j])
                labels.append(f"bl_{name}")
            continue
        if ref.startswith("bl_"):
            name = ref[3:]
            if name not in data.baseline_names:
                raise KeyError(f"control {ref!r}: unknown baseline column")
            cols.append(data.baseline[:, data.baseline_names.index(name)])
            labels.append(ref)
            continue
        raise KeyError(f"unrecognized control reference {ref!r}")
    if not cols:
        return np.zeros((data.n, 0)), []
    return np.column_stack(cols), labels


def _format_value(v: float) -> str:
    # 17 significant digits round-trips any IEEE double exactly.
    return format(v, ".17g")


def _headers(data: PanelDataset) -> list[str]:
    T = data.n_periods
    heads = [f"z{t}" for t in range(1, T + 1)] + [f"a{t}" for t in range(1, T + 1)]
    plain_l = data.n_confounders == 1 and data.confounder_names[0] == DEFAULT_CONFOUNDER_NAME
    for t in range(1, T + 1):
        for name in data.confounder_names:
            heads.append(f"l{t}" if plain_l else f"l{t}_{name}")
    heads.append("y")
    heads.extend(f"bl_{name}" for name in data.baseline_names)
    return heads


def write_csv(data: PanelDataset, path) -> None:
    """Write the wide-format CSV (one row per subject)."""
    heads = _headers(data)
    T, q = data.n_periods, data.n_confounders
    try:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(heads)
            for i in range(data.n):
                row = [_format_value(v) for v in data.instruments[i]]
                row += [_format_value(v) for v in data.treatments[i]]
                for t in range(T):
                    row += [_format_value(data.confounders[i, t, j]) for j in range(q)]
                row.append(_format_value(data.outcome[i]))
                row += [_format_value(v) for v in data.baseline[i]]
                writer.writerow(row)
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc


def _parse_headers(names, schema):
    """Map header position -> (block, period, sub-name) roles."""
    roles = []
    seen = set()
    for name in names:
        role_name = schema.get(name, name) if schema else name
        m = _HEADER_RE.match(role_name)
        if not m:
            raise ParseError(0, name, "unrecognized column")
        if role_name in seen:
            raise ParseError(0, name, "duplicate column")
        seen.add(role_name)
        if m.group(1):
            roles.append((m.group(1), int(m.group(2)), None))
        elif m.group(3):
            roles.append(("l", int(m.group(3)), m.group(4) or DEFAULT_CONFOUNDER_NAME))
        elif m.group(5):
            roles.append(("bl", None, m.group(5)))
        else:
            roles.append(("y", None, None))
    return roles


def read_csv(path, schema=None) -> PanelDataset:
    """Read a wide-format panel CSV.

    Parameters
    ----------
    path : str or Path
    schema : dict, optional
        Maps CSV column names to role names (``z1``, ``a2``, ``l1_bmi``,
        ``y``, ``bl_age``). Columns already named by role need no entry.
    """
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc
    if not rows:
        raise ParseError(0, "", "empty file")
    roles = _parse_headers(rows[0], schema)

    periods = [p for block, p, _ in roles if block in ("z", "a", "l")]
    T = max(periods) if periods else 0
    if T == 0:
        raise MissingColumnError("z1")
    l_names = []
    for block, _, sub in roles:
        if block == "l" and sub not in l_names:
            l_names.append(sub)
    for t in range(1, T + 1):
        for block in ("z", "a"):
            if (block, t, None) not in roles:
                raise MissingColumnError(f"{block}{t}")
        for name in l_names:
            if ("l", t, name) not in roles:
                label = f"l{t}" if name == DEFAULT_CONFOUNDER_NAME else f"l{t}_{name}"
                raise MissingColumnError(label)
    if ("y", None, None) not in roles:
        raise MissingColumnError("y")
    bl_names = [sub for block, _, sub in roles if block == "bl"]

    n = len(rows) - 1
    Z = np.empty((n, T))
    A = np.empty((n, T))
    L = np.empty((n, T, len(l_names)))
    Y = np.empty(n)
    B = np.empty((n, len(bl_names)))
    for i, row in enumerate(rows[1:], start=1):
        if len(row) != len(roles):
            raise ParseError(i, "", f"expected {len(roles)} fields, got {len(row)}")
        for (block, t, sub), cell in zip(roles, row):
            try:
                value = float(cell)
            except ValueError:
                raise ParseError(i, rows[0][roles.index((block, t, sub))], cell) from None
            if block == "z":
                Z[i - 1, t - 1] = value
            elif block == "a":
                A[i - 1, t - 1] = value
            elif block == "l":
                L[i - 1, t - 1, l_names.index(sub)] = value
            elif block == "y":
                Y[i - 1] = value
            else:
                B[i - 1, bl_names.index(sub)] = value

    data = PanelDataset(
        instruments=Z,
        treatments=A,
        confounders=L if l_names else None,
        outcome=Y,
        baseline=B,
        confounder_names=tuple(l_names) if l_names else None,
        baseline_names=tuple(bl_names),
    )
    violations = validate(data)
    if violations:
        raise ValidationFailedError(violations)
    return data
