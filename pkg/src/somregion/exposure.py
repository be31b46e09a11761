"""Mobility-trace exposure scoring and user-level co-prevalence.

A person's exposure difference between two partitions is the
visit-weighted mean relative difference in region prevalence across the
cells they visited:

    E_i = sum_k (|prev_A(k) - prev_B(k)| / prev_A(k)) * V_ik / V_i

Visits to cells outside the partitioned field are skipped (and counted);
cells where prev_A is zero contribute nothing and are flagged, since the
relative difference is undefined there.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import ValidationError
from .grid import GridField
from .ingest import MobilityTrace
from .partition import Partition


def region_prevalence(partition: Partition, field: GridField) -> dict[int, float]:
    """Positive share per cluster, pooled over the cluster's cells."""
    if partition.d != field.d:
        raise ValidationError(f"precision mismatch: partition d={partition.d}, field d={field.d}")
    totals: dict[int, int] = {}
    positives: dict[int, int] = {}
    for key, cid in partition.assignment.items():
        if key not in field.cells:
            raise ValidationError(f"partition cell ({key.lat_q},{key.lon_q}) missing from field")
        totals[cid] = totals.get(cid, 0) + field.cells[key].total
        positives[cid] = positives.get(cid, 0) + field.cells[key].positive
    return {cid: positives[cid] / totals[cid] for cid in totals}


@dataclass(frozen=True)
class PersonExposure:
    person_id: str
    exposure: float
    visits_counted: int
    visits_skipped: int
    zero_denominator_cells: int


def _score_trace(
    trace: MobilityTrace,
    prev_a: dict[int, float],
    prev_b: dict[int, float],
    part_a: Partition,
    part_b: Partition,
) -> PersonExposure:
    counted = 0
    skipped = 0
    flagged = 0
    weighted = 0.0
    for key in sorted(trace.visits, key=lambda k: (k.lat_q, k.lon_q)):
        count = trace.visits[key]
        if count < 0:
            raise ValidationError(f"trace {trace.person_id}: negative visit count at ({key.lat_q},{key.lon_q})")
        in_a = key in part_a.assignment
        in_b = key in part_b.assignment
        if not in_a and not in_b:
            skipped += count
            continue
        if in_a != in_b:
            raise ValidationError(
                f"trace {trace.person_id}: cell ({key.lat_q},{key.lon_q}) covered by only one partition"
            )
        counted += count
        e_a = prev_a[part_a.assignment[key]]
        e_b = prev_b[part_b.assignment[key]]
        if e_a == 0.0:
            flagged += 1
            continue
        weighted += (abs(e_a - e_b) / e_a) * count
    if counted == 0:
        raise ValidationError(f"trace {trace.person_id}: no in-boundary visits")
    return PersonExposure(
        person_id=trace.person_id,
        exposure=weighted / counted,
        visits_counted=counted,
        visits_skipped=skipped,
        zero_denominator_cells=flagged,
    )


def exposure_difference(
    trace: MobilityTrace, part_a: Partition, part_b: Partition, field: GridField
) -> float:
    """E_i for one person; raises if no visit falls inside the field."""
    prev_a = region_prevalence(part_a, field)
    prev_b = region_prevalence(part_b, field)
    return _score_trace(trace, prev_a, prev_b, part_a, part_b).exposure


@dataclass(frozen=True)
class ExposureReport:
    persons: tuple[PersonExposure, ...]
    mean: float
    sd: float                     # sample SD; 0.0 when only one person
    fraction_over_half: float
    invalid_traces: tuple[str, ...]

    @property
    def n(self) -> int:
        return len(self.persons)


def cohort_exposure(
    traces: Sequence[MobilityTrace], part_a: Partition, part_b: Partition, field: GridField
) -> ExposureReport:
    """Per-person exposure differences plus cohort mean, sample SD and the
    fraction of persons exceeding 0.5. Traces with no in-boundary visits
    are reported as invalid; all-invalid input is an error."""
    prev_a = region_prevalence(part_a, field)
    prev_b = region_prevalence(part_b, field)
    persons: list[PersonExposure] = []
    invalid: list[str] = []
    for trace in traces:
        try:
            persons.append(_score_trace(trace, prev_a, prev_b, part_a, part_b))
        except ValidationError:
            invalid.append(trace.person_id)
    if not persons:
        raise ValidationError(f"no valid traces (invalid: {', '.join(invalid[:10])})")
    values = np.array([p.exposure for p in persons])
    return ExposureReport(
        persons=tuple(persons),
        mean=float(values.mean()),
        sd=float(values.std(ddof=1)) if len(values) > 1 else 0.0,
        fraction_over_half=float((values > 0.5).mean()),
        invalid_traces=tuple(invalid),
    )


@dataclass(frozen=True)
class Coprevalence:
    p_a_given_b: Optional[float]  # None when no user has a positive-B post
    p_b_given_a: Optional[float]
    users_a: int
    users_b: int
    users_both: int


def user_coprevalence(posts_a, posts_b) -> Coprevalence:
    """Share of users positive for one process among users positive for
    the other, from two independently labeled copies of a corpus."""
    def positive_users(posts):
        users = set()
        for p in posts:
            if not p.user_id:
                raise ValidationError(f"post {p.id} has no user_id")
            if p.label == "positive":
                users.add(p.user_id)
        return users

    a_users = positive_users(posts_a)
    b_users = positive_users(posts_b)
    both = a_users & b_users
    return Coprevalence(
        p_a_given_b=(len(both) / len(b_users)) if b_users else None,
        p_b_given_a=(len(both) / len(a_users)) if a_users else None,
        users_a=len(a_users),
        users_b=len(b_users),
        users_both=len(both),
    )
