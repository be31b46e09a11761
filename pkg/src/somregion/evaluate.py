"""Partition quality metrics: pairwise-agreement similarity (c2),
within-cluster variance, holdout MSPE, and missing-data robustness.

The holdout harnesses re-run the constrained SOM on reduced fields and
compare against the full-data partition, so everything here is
deterministic given (field, params, plan).
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import ValidationError
from .grid import CellKey, GridField, CellCounts, cell_key, round_half_away
from .partition import ClusterStats, Partition, SomParams, run_constrained_som

HOLDOUT_KINDS = ("cells", "posts")
SUBSAMPLE_MODES = ("uniform", "ratio_preserving")


@dataclass(frozen=True)
class HoldoutPlan:
    """Holdout evaluation schedule: which unit to drop, how much, how often.

    fractions may include 0.0 as a degenerate no-op; each fold draws a
    fresh seeded sample of the given fraction.
    """

    kind: str
    fractions: tuple[float, ...] = (0.10, 0.25, 0.50, 0.75)
    k: int = 10
    seed: int = 0

    def validate(self) -> None:
        if self.kind not in HOLDOUT_KINDS:
            raise ValidationError(f"holdout kind must be one of {HOLDOUT_KINDS}, got {self.kind!r}")
        if self.k < 2:
            raise ValidationError(f"k must be >= 2, got {self.k}")
        for f in self.fractions:
            if not 0.0 <= f < 1.0:
                raise ValidationError(f"holdout fraction {f} outside [0, 1)")


@dataclass(frozen=True)
class EvalReport:
    metric: str
    fraction: float
    values: tuple[float, ...]
    mean: float
    sd: float


def _report(metric: str, fraction: float, values: Sequence[float]) -> EvalReport:
    vals = tuple(float(v) for v in values)
    mean = float(np.mean(vals))
    sd = float(np.std(vals, ddof=1)) if len(vals) > 1 else 0.0
    return EvalReport(metric=metric, fraction=fraction, values=vals, mean=mean, sd=sd)


# --------------------------------------------------------------------------
# c2 similarity

def _comb2(x: int) -> int:
    return x * (x - 1) // 2


def c2_similarity(y: Partition, y_prime: Partition) -> float:
    """Fraction of cell pairs treated consistently by both partitions
    (co-clustered in both, or separated in both).

    Computed exactly from the label contingency table; equal to the
    brute-force pair enumeration for any size.
    """
    cells_a = set(y.assignment)
    cells_b = set(y_prime.assignment)
    if cells_a != cells_b:
        diff = sorted(cells_a ^ cells_b, key=lambda k: (k.lat_q, k.lon_q))
        shown = ", ".join(f"({k.lat_q},{k.lon_q})" for k in diff[:10])
        more = "" if len(diff) <= 10 else f" (+{len(diff) - 10} more)"
        raise ValidationError(f"partitions cover different cells; symmetric difference: {shown}{more}")
    n = len(cells_a)
    if n < 2:
        raise ValidationError(f"c2 needs >= 2 cells, got {n}")
    joint: Counter = Counter()
    count_a: Counter = Counter()
    count_b: Counter = Counter()
    for key in cells_a:
        ca = y.assignment[key]
        cb = y_prime.assignment[key]
        joint[(ca, cb)] += 1
        count_a[ca] += 1
        count_b[cb] += 1
    together_both = sum(_comb2(v) for v in joint.values())
    together_a = sum(_comb2(v) for v in count_a.values())
    together_b = sum(_comb2(v) for v in count_b.values())
    agreements = _comb2(n) + 2 * together_both - together_a - together_b
    return agreements / _comb2(n)


# --------------------------------------------------------------------------
# within-cluster variance

@dataclass(frozen=True)
class VarianceReport:
    per_cluster: dict[int, float]     # multi-cell clusters only
    mean: float                       # mean of per_cluster values (0.0 if none)
    singletons: int

    @property
    def minimum(self) -> float:
        return min(self.per_cluster.values()) if self.per_cluster else 0.0

    @property
    def maximum(self) -> float:
        return max(self.per_cluster.values()) if self.per_cluster else 0.0


def cluster_variance(partition: Partition, field: GridField) -> VarianceReport:
    """Per-cluster s^2 of cell proportions around the cluster's pooled
    proportion (positives/totals of the whole cluster). Singletons have
    no s^2 and are excluded from the mean, but counted."""
    per_cluster: dict[int, float] = {}
    singletons = 0
    for cid, cells in partition.cluster_cells().items():
        if len(cells) < 2:
            singletons += 1
            continue
        tot = sum(field.cells[k].total for k in cells)
        pos = sum(field.cells[k].positive for k in cells)
        pooled = pos / tot
        ss = sum((field.proportion(k) - pooled) ** 2 for k in cells)
        per_cluster[cid] = ss / (len(cells) - 1)
    mean = float(np.mean(list(per_cluster.values()))) if per_cluster else 0.0
    return VarianceReport(per_cluster=per_cluster, mean=mean, singletons=singletons)


# --------------------------------------------------------------------------
# subsampling

def subsample_posts(posts, fraction: float, mode: str = "uniform", seed: int = 0, d: int | None = None):
    """Keep a fraction of posts.

    uniform: seeded sample without replacement, input order preserved.
    ratio_preserving: per cell (at precision d) keep round(fraction*total)
    posts of which round(fraction*positive) are positive, earliest first;
    deterministic, no randomness involved.
    """
    if not 0.0 < fraction <= 1.0:
        raise ValidationError(f"fraction must be in (0, 1], got {fraction}")
    if mode not in SUBSAMPLE_MODES:
        raise ValidationError(f"mode must be one of {SUBSAMPLE_MODES}, got {mode!r}")
    posts = list(posts)
    if mode == "uniform":
        k = round_half_away(fraction * len(posts))
        rng = np.random.default_rng(seed)
        picked = sorted(rng.permutation(len(posts))[:k])
        return [posts[i] for i in picked]

    if d is None:
        raise ValidationError("ratio_preserving subsampling needs the cell precision d")
    by_cell: dict[CellKey, list[int]] = {}
    for i, p in enumerate(posts):
        by_cell.setdefault(cell_key(p.lat, p.lon, d), []).append(i)
    keep: list[int] = []
    for key in sorted(by_cell, key=lambda k: (k.lat_q, k.lon_q)):
        idxs = by_cell[key]
        pos_idx = [i for i in idxs if posts[i].label == "positive"]
        neg_idx = [i for i in idxs if posts[i].label != "positive"]
        k_tot = round_half_away(fraction * len(idxs))
        k_pos = min(round_half_away(fraction * len(pos_idx)), k_tot)
        k_neg = k_tot - k_pos
        keep.extend(pos_idx[:k_pos])
        keep.extend(neg_idx[:k_neg])
    keep.sort()
    return [posts[i] for i in keep]


def _subsample_field_counts(field: GridField, keep_fraction: float) -> GridField:
    """Ratio-preserving reduction of per-cell counts (posts-holdout on a
    bare field). Cells whose reduced total rounds to zero are dropped."""
    cells: dict[CellKey, CellCounts] = {}
    for key, c in field.cells.items():
        total = round_half_away(keep_fraction * c.total)
        positive = min(round_half_away(keep_fraction * c.positive), total)
        if total >= 1:
            cells[key] = CellCounts(total=total, positive=positive)
    return GridField(d=field.d, cells=cells)


# --------------------------------------------------------------------------
# holdout harnesses

def _field_without(field: GridField, removed: set[CellKey]) -> GridField:
    return GridField(
        d=field.d,
        cells={k: CellCounts(total=c.total, positive=c.positive) for k, c in field.cells.items() if k not in removed},
    )


def _restrict(partition: Partition, keys: Sequence[CellKey], field: GridField) -> Partition:
    assignment = {k: partition.assignment[k] for k in keys}
    clusters: dict[int, ClusterStats] = {}
    for k, cid in assignment.items():
        stats = clusters.setdefault(cid, ClusterStats(cells=0, total=0, positive=0))
        stats.cells += 1
        stats.total += field.cells[k].total
        stats.positive += field.cells[k].positive
    for stats in clusters.values():
        stats.prevalence = stats.positive / stats.total
    return Partition(d=partition.d, assignment=assignment, clusters=clusters, meta={"method": "restriction"})


def _nearest_retained(held: Sequence[CellKey], retained: Sequence[CellKey], reduced: Partition) -> dict[CellKey, int]:
    """Assign each held-out cell the cluster of its nearest retained cell
    (Chebyshev); distance ties go to the smaller cluster id."""
    r_lat = np.array([k.lat_q for k in retained])
    r_lon = np.array([k.lon_q for k in retained])
    r_cid = np.array([reduced.assignment[k] for k in retained])
    out: dict[CellKey, int] = {}
    for k in held:
        dist = np.maximum(np.abs(r_lat - k.lat_q), np.abs(r_lon - k.lon_q))
        nearest = dist == dist.min()
        out[k] = int(r_cid[nearest].min())
    return out


def _holdout_draws(plan: HoldoutPlan, n: int):
    """Seeded holdout index sets, one per (fraction, fold), in plan order."""
    rng = np.random.default_rng(plan.seed)
    for fraction in plan.fractions:
        m = round_half_away(fraction * n)
        if n - m < 2:
            raise ValidationError(f"holdout fraction {fraction} leaves {n - m} < 2 cells")
        for fold in range(plan.k):
            yield fraction, fold, np.sort(rng.permutation(n)[:m])


def mspe(field: GridField, params: SomParams, plan: HoldoutPlan) -> dict[float, EvalReport]:
    """Mean squared difference between each cell's full-model cluster
    prevalence and its cluster prevalence after holdout.

    kind="cells": held-out cells are removed from the field, the reduced
    field is re-partitioned, and each held-out cell inherits the cluster
    of its nearest retained cell. kind="posts": per-cell counts are
    reduced ratio-preservingly (deterministic, so folds coincide) and all
    cells are scored against the reduced partition.
    """
    plan.validate()
    full = run_constrained_som(field, params)
    keys = field.sorted_keys()
    g_full = {k: full.clusters[full.assignment[k]].prevalence for k in keys}

    reports: dict[float, EvalReport] = {}
    if plan.kind == "cells":
        per_fraction: dict[float, list[float]] = {f: [] for f in plan.fractions}
        for fraction, _fold, held_idx in _holdout_draws(plan, len(keys)):
            held = [keys[i] for i in held_idx]
            if not held:
                per_fraction[fraction].append(0.0)
                continue
            held_set = set(held)
            retained = [k for k in keys if k not in held_set]
            reduced_field = _field_without(field, held_set)
            reduced = run_constrained_som(reduced_field, params)
            assigned = _nearest_retained(held, retained, reduced)
            err = [
                (g_full[k] - reduced.clusters[assigned[k]].prevalence) ** 2 for k in held
            ]
            per_fraction[fraction].append(float(np.mean(err)))
        for fraction in plan.fractions:
            reports[fraction] = _report("mspe_cells", fraction, per_fraction[fraction])
        return reports

    for fraction in plan.fractions:
        if fraction == 0.0:
            reports[fraction] = _report("mspe_posts", fraction, [0.0] * plan.k)
            continue
        reduced_field = _subsample_field_counts(field, 1.0 - fraction)
        if reduced_field.g < 2:
            raise ValidationError(f"holdout fraction {fraction} leaves {reduced_field.g} < 2 cells")
        reduced = run_constrained_som(reduced_field, params)
        retained = reduced_field.sorted_keys()
        dropped = [k for k in keys if k not in reduced_field.cells]
        assigned = _nearest_retained(dropped, retained, reduced) if dropped else {}
        err = []
        for k in keys:
            cid = assigned[k] if k in assigned else reduced.assignment[k]
            err.append((g_full[k] - reduced.clusters[cid].prevalence) ** 2)
        value = float(np.mean(err))
        reports[fraction] = _report("mspe_posts", fraction, [value] * plan.k)
    return reports


def grid_robustness(field: GridField, params: SomParams, plan: HoldoutPlan) -> dict[float, EvalReport]:
    """Mean c2 between the full-data partition restricted to retained
    cells and the partition re-learned on those cells alone."""
    plan.validate()
    if plan.kind != "cells":
        raise ValidationError("grid_robustness requires plan.kind == 'cells'")
    full = run_constrained_som(field, params)
    keys = field.sorted_keys()

    per_fraction: dict[float, list[float]] = {f: [] for f in plan.fractions}
    for fraction, _fold, held_idx in _holdout_draws(plan, len(keys)):
        held_set = {keys[i] for i in held_idx}
        retained = [k for k in keys if k not in held_set]
        reduced_field = _field_without(field, held_set)
        reduced = run_constrained_som(reduced_field, params)
        restricted = _restrict(full, retained, field)
        per_fraction[fraction].append(c2_similarity(restricted, reduced))
    return {f: _report("grid_robustness", f, per_fraction[f]) for f in plan.fractions}
