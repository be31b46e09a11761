"""Decimal-precision grid cells and per-cell positive-proportion fields.

Points are quantized by rounding latitude/longitude to ``d`` decimal
places (half away from zero, computed on the decimal representation so
no binary-float drift can flip a key). Cells are identified by the
scaled integer pair, which makes key equality exact.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field as dc_field
from decimal import Decimal, ROUND_HALF_UP
from typing import Optional, Sequence

import numpy as np
from scipy.stats import t as t_dist

from .errors import ValidationError

MIN_PRECISION = 1
MAX_PRECISION = 7


@dataclass(frozen=True, slots=True)
class CellKey:
    """Grid cell at decimal precision d, keyed by scaled integer coords."""

    lat_q: int
    lon_q: int
    d: int

    def center(self) -> tuple[float, float]:
        scale = 10**self.d
        return self.lat_q / scale, self.lon_q / scale

    def chebyshev(self, other: "CellKey") -> int:
        """Chebyshev distance in cell units (keys must share precision)."""
        if self.d != other.d:
            raise ValidationError(f"precision mismatch: {self.d} vs {other.d}")
        return max(abs(self.lat_q - other.lat_q), abs(self.lon_q - other.lon_q))


def _quantize(value: float, d: int) -> int:
    # Decimal(repr(x)) recovers the shortest decimal string for the float,
    # so 0.15 quantizes from "0.15", not from 0.1499999999999999944.
    return int(Decimal(repr(float(value))).scaleb(d).to_integral_value(rounding=ROUND_HALF_UP))


def round_half_away(x: float) -> int:
    """round() with ties away from zero, on the decimal representation."""
    return int(Decimal(repr(float(x))).to_integral_value(rounding=ROUND_HALF_UP))


def cell_key(lat: float, lon: float, d: int) -> CellKey:
    """Quantize a point to its grid cell, rounding half away from zero."""
    if not MIN_PRECISION <= d <= MAX_PRECISION:
        raise ValidationError(f"precision d={d} outside [{MIN_PRECISION}, {MAX_PRECISION}]")
    return CellKey(_quantize(lat, d), _quantize(lon, d), d)


@dataclass(slots=True)
class CellCounts:
    total: int = 0
    positive: int = 0
    users_total: Optional[int] = None
    users_positive: Optional[int] = None


@dataclass
class GridField:
    """Occupied cells with per-cell post counts (and optional user counts).

    ``user_centric=True`` switches proportion() to distinct-user counts;
    post counts are kept alongside either way.
    """

    d: int
    cells: dict[CellKey, CellCounts] = dc_field(default_factory=dict)
    user_centric: bool = False

    @property
    def g(self) -> int:
        return len(self.cells)

    def proportion(self, key: CellKey) -> float:
        c = self.cells[key]
        if self.user_centric:
            return c.users_positive / c.users_total
        return c.positive / c.total

    def sorted_keys(self) -> list[CellKey]:
        return sorted(self.cells, key=lambda k: (k.lat_q, k.lon_q))

    def validate(self) -> None:
        for key, c in self.cells.items():
            if key.d != self.d:
                raise ValidationError(f"cell {key} precision differs from field d={self.d}")
            if c.total < 1:
                raise ValidationError(f"cell {key} stored with total={c.total}")
            if not 0 <= c.positive <= c.total:
                raise ValidationError(f"cell {key} has positive={c.positive} of total={c.total}")


def bin_posts(posts: Sequence, d: int, boundary=None) -> GridField:
    """Count posts per occupied cell; drop cells whose center is outside
    the boundary when one is given.

    Every post must carry a label (classification happens upstream).
    """
    unlabeled = [p.id for p in posts if p.label is None]
    if unlabeled:
        shown = ", ".join(unlabeled[:10])
        more = "" if len(unlabeled) <= 10 else f" (+{len(unlabeled) - 10} more)"
        raise ValidationError(f"unlabeled posts cannot be binned: {shown}{more}")

    cells: dict[CellKey, CellCounts] = {}
    for p in posts:
        key = cell_key(p.lat, p.lon, d)
        c = cells.setdefault(key, CellCounts())
        c.total += 1
        if p.label == "positive":
            c.positive += 1

    if boundary is not None:
        from .ingest import point_in_boundary

        kept = {}
        for key, c in cells.items():
            lat, lon = key.center()
            if point_in_boundary(lat, lon, boundary):
                kept[key] = c
        cells = kept

    return GridField(d=d, cells=cells)


def user_centric_field(posts: Sequence, d: int) -> GridField:
    """Field whose proportions count distinct users instead of posts."""
    missing = [p.id for p in posts if not p.user_id]
    if missing:
        raise ValidationError(f"posts without user_id: {', '.join(missing[:10])}")
    unlabeled = [p.id for p in posts if p.label is None]
    if unlabeled:
        raise ValidationError(f"unlabeled posts cannot be binned: {', '.join(unlabeled[:10])}")

    cells: dict[CellKey, CellCounts] = {}
    users: dict[CellKey, set] = {}
    pos_users: dict[CellKey, set] = {}
    for p in posts:
        key = cell_key(p.lat, p.lon, d)
        c = cells.setdefault(key, CellCounts())
        c.total += 1
        if p.label == "positive":
            c.positive += 1
            pos_users.setdefault(key, set()).add(p.user_id)
        users.setdefault(key, set()).add(p.user_id)
    for key, c in cells.items():
        c.users_total = len(users[key])
        c.users_positive = len(pos_users.get(key, ()))
    return GridField(d=d, cells=cells, user_centric=True)


def pearson(field_a: GridField, field_b: GridField) -> float:
    """Sample Pearson correlation of proportions over common occupied cells."""
    common = sorted(set(field_a.cells) & set(field_b.cells), key=lambda k: (k.lat_q, k.lon_q))
    if len(common) < 2:
        raise ValidationError(f"need >= 2 common occupied cells, found {len(common)}")
    xs = np.array([field_a.proportion(k) for k in common])
    ys = np.array([field_b.proportion(k) for k in common])
    sx = xs - xs.mean()
    sy = ys - ys.mean()
    denom = np.sqrt((sx**2).sum() * (sy**2).sum())
    if denom == 0.0:
        raise ValidationError("correlation undefined: at least one proportion series is constant")
    return float((sx * sy).sum() / denom)


def _welch(xs: np.ndarray, ys: np.ndarray) -> tuple[float, float]:
    na, nb = len(xs), len(ys)
    ma, mb = xs.mean(), ys.mean()
    va, vb = xs.var(ddof=1), ys.var(ddof=1)
    se2 = va / na + vb / nb
    if se2 == 0.0:
        # degenerate: both samples constant
        return (0.0, 1.0) if ma == mb else (float("inf"), 0.0)
    t = (ma - mb) / np.sqrt(se2)
    df = se2**2 / ((va / na) ** 2 / (na - 1) + (vb / nb) ** 2 / (nb - 1))
    p = 2.0 * float(t_dist.sf(abs(t), df))
    return float(t), p


@dataclass(frozen=True)
class MonthPairTest:
    month_a: tuple[int, int]
    month_b: tuple[int, int]
    t: float
    p: float


def monthly_ttest(posts: Sequence, d: int) -> list[MonthPairTest]:
    """Welch t-test of cell proportions between each pair of adjacent
    UTC calendar months. Months with fewer than 2 occupied cells are
    skipped with a warning.
    """
    by_month: dict[tuple[int, int], list] = {}
    for p in posts:
        ts = p.timestamp
        by_month.setdefault((ts.year, ts.month), []).append(p)
    months = sorted(by_month)
    if len(months) < 2:
        return []

    fields = {m: bin_posts(by_month[m], d) for m in months}
    results = []
    for m_a, m_b in zip(months, months[1:]):
        fa, fb = fields[m_a], fields[m_b]
        if fa.g < 2 or fb.g < 2:
            warnings.warn(
                f"skipping month pair {m_a}->{m_b}: fewer than 2 occupied cells",
                stacklevel=2,
            )
            continue
        xs = np.array([fa.proportion(k) for k in fa.sorted_keys()])
        ys = np.array([fb.proportion(k) for k in fb.sorted_keys()])
        t, p_val = _welch(xs, ys)
        results.append(MonthPairTest(m_a, m_b, t, p_val))
    return results


def save_field(field: GridField, path) -> None:
    """Write the canonical fixture format: lat_q, lon_q, d, total, positive."""
    from .fileio import atomic_write_text

    lines = []
    for key in field.sorted_keys():
        c = field.cells[key]
        lines.append(f"{key.lat_q}\t{key.lon_q}\t{key.d}\t{c.total}\t{c.positive}\n")
    atomic_write_text(path, "".join(lines))


def load_field(path) -> GridField:
    from .errors import InputFormatError, MissingInputError
    import os

    if not os.path.exists(path):
        raise MissingInputError(f"field file not found: {path}")
    cells: dict[CellKey, CellCounts] = {}
    d = None
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            parts = line.rstrip("\n").split("\t")
            if len(parts) != 5:
                raise InputFormatError(
                    f"{path}:{lineno}: expected 5 fields, found {len(parts)}", line=lineno
                )
            try:
                lat_q, lon_q, dd, total, positive = (int(x) for x in parts)
            except ValueError as exc:
                raise InputFormatError(f"{path}:{lineno}: {exc}", line=lineno) from exc
            if d is None:
                d = dd
            elif dd != d:
                raise InputFormatError(f"{path}:{lineno}: mixed precisions {d} and {dd}", line=lineno)
            cells[CellKey(lat_q, lon_q, dd)] = CellCounts(total=total, positive=positive)
    if d is None:
        raise InputFormatError(f"{path}: empty field file")
    field = GridField(d=d, cells=cells)
    field.validate()
    return field
