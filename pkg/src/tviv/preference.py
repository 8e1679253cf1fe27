"""Preference-based instruments from prescription-style records.

A prescriber cluster's preference for the treatment is measured as the
proportion of its prescriptions that chose treatment 1, aggregated either
within calendar periods (each subject then reads off their cluster's
proportion for the calendar period their follow-up fell in) or within
follow-up times pooled across calendar time.
"""

from __future__ import annotations

import csv
from collections import Counter, defaultdict
from dataclasses import dataclass

import numpy as np

from .errors import EmptyCellError, IoError, MissingColumnError, ParseError

RECORD_COLUMNS = (
    "subject_id",
    "cluster_id",
    "calendar_period",
    "follow_up_time",
    "treatment",
)


@dataclass(frozen=True)
class PrescriptionRecord:
    """One prescription event for one subject at one follow-up time."""

    subject_id: str
    cluster_id: str
    calendar_period: int
    follow_up_time: int
    treatment: int

    def __post_init__(self):
        if self.follow_up_time < 1:
            raise ValueError("follow_up_time must be >= 1")
        if self.treatment not in (0, 1):
            raise ValueError("treatment must be 0 or 1")


@dataclass(frozen=True)
class PreferenceSeries:
    """Per-subject, per-follow-up instrument values in [0, 1]."""

    subjects: tuple[str, ...]
    values: np.ndarray
    variant: str
    cluster_sizes: dict

    @property
    def n_periods(self) -> int:
        return self.values.shape[1]


def _index_records(records):
    """Group records by subject and follow-up; subjects keep input order."""
    subjects = []
    by_subject = {}
    clusters = defaultdict(set)
    for rec in records:
        if rec.subject_id not in by_subject:
            subjects.append(rec.subject_id)
            by_subject[rec.subject_id] = {}
        slot = by_subject[rec.subject_id]
        if rec.follow_up_time in slot:
            raise ValueError(
                f"subject {rec.subject_id!r} has duplicate records at "
                f"follow-up {rec.follow_up_time}"
            )
        slot[rec.follow_up_time] = rec
        clusters[rec.cluster_id].add(rec.subject_id)
    if not subjects:
        raise ValueError("no records")
    T = max(max(slot) for slot in by_subject.values())
    for sid, slot in by_subject.items():
        for t in range(1, T + 1):
            if t not in slot:
                raise ValueError(f"subject {sid!r} has no record at follow-up {t}")
    sizes = {cid: len(members) for cid, members in clusters.items()}
    return subjects, by_subject, T, sizes


def _build(records, cell_key, variant, leave_one_out):
    records = list(records)
    subjects, by_subject, T, sizes = _index_records(records)

    treated = Counter()
    total = Counter()
    own = defaultdict(Counter)  # cell -> subject -> own record count
    own_treated = defaultdict(Counter)  # cell -> subject -> own treated count
    for rec in records:
        key = (rec.cluster_id, cell_key(rec))
        treated[key] += rec.treatment
        total[key] += 1
        own[key][rec.subject_id] += 1
        own_treated[key][rec.subject_id] += rec.treatment

    values = np.empty((len(subjects), T))
    for i, sid in enumerate(subjects):
        for t in range(1, T + 1):
            rec = by_subject[sid][t]
            key = (rec.cluster_id, cell_key(rec))
            num = treated[key]
            den = total[key]
            if leave_one_out:
                num -= own_treated[key][sid]
                den -= own[key][sid]
            if den == 0:
                raise EmptyCellError(rec.cluster_id, cell_key(rec))
            values[i, t - 1] = num / den
    return PreferenceSeries(
        subjects=tuple(subjects), values=values, variant=variant, cluster_sizes=sizes
    )


def build_pp_cal(records, leave_one_out: bool = False) -> PreferenceSeries:
    """Preference by calendar period.

    The cluster-level treated proportion is computed within each calendar
    period; a subject's period-t value is their cluster's proportion in the
    calendar period containing their period-t record. With
    ``leave_one_out`` the subject's own prescriptions are excluded from
    their cell, which guards single-subject clusters against the instrument
    collapsing onto the treatment itself.
    """
    return _build(records, lambda r: r.calendar_period, "calendar", leave_one_out)


def build_pp_t(records, leave_one_out: bool = False) -> PreferenceSeries:
    """Preference by follow-up time, pooled across calendar periods."""
    return _build(records, lambda r: r.follow_up_time, "follow_up", leave_one_out)


def read_records_csv(path) -> list[PrescriptionRecord]:
    """Read long-format prescription records.

    Expects columns subject_id, cluster_id, calendar_period,
    follow_up_time, treatment.
    """
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.DictReader(fh)
            if reader.fieldnames is None:
                raise ParseError(0, "", "empty file")
            for col in RECORD_COLUMNS:
                if col not in reader.fieldnames:
                    raise MissingColumnError(col)
            records = []
            for i, row in enumerate(reader, start=1):
                try:
                    records.append(
                        PrescriptionRecord(
                            subject_id=row["subject_id"],
                            cluster_id=row["cluster_id"],
                            calendar_period=int(row["calendar_period"]),
                            follow_up_time=int(row["follow_up_time"]),
                            treatment=int(row["treatment"]),
                        )
                    )
                except (ValueError, TypeError) as exc:
                    raise ParseError(i, "", str(exc)) from exc
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc
    return records
