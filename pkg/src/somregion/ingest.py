"""File ingestion, boundary membership, and synthetic corpus generation.

Input formats (exact grammar in README):
  posts   - TSV: id, user_id, lat, lon, timestamp (RFC 3339), label, text
            ("record-per-line" variant: one JSON object per line, same keys)
  boundary- GeoJSON FeatureCollection of Polygon/MultiPolygon features
            with a "name" property
  traces  - TSV: person_id, lat, lon, timestamp
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass
from datetime import datetime, timedelta, timezone
from typing import Iterable, Optional, Sequence

import numpy as np

from .errors import InputFormatError, MissingInputError, ValidationError
from .grid import CellKey, cell_key, round_half_away

LABELS = ("positive", "negative")


@dataclass(slots=True)
class GeoPost:
    """One geo-tagged, timestamped text item."""

    id: str
    lat: float
    lon: float
    timestamp: datetime
    text: str
    user_id: Optional[str] = None
    label: Optional[str] = None
    score: Optional[float] = None

    def validate(self) -> None:
        if not -90.0 <= self.lat <= 90.0:
            raise ValidationError(f"post {self.id}: lat {self.lat} outside [-90, 90]")
        if not -180.0 <= self.lon <= 180.0:
            raise ValidationError(f"post {self.id}: lon {self.lon} outside [-180, 180]")
        if self.label is not None and self.label not in LABELS:
            raise ValidationError(f"post {self.id}: label {self.label!r} not in {LABELS}")
        if self.score is not None and not 0.0 <= self.score <= 1.0:
            raise ValidationError(f"post {self.id}: score {self.score} outside [0, 1]")


@dataclass(frozen=True)
class Polygon:
    """Named polygon: one exterior ring plus optional hole/part rings.

    Rings are closed sequences of (lon, lat) vertices; membership is
    decided by the even-odd rule over all rings, so holes and multi-part
    shapes need no special casing.
    """

    name: str
    rings: tuple[tuple[tuple[float, float], ...], ...]


@dataclass(frozen=True)
class BoundarySet:
    polygons: tuple[Polygon, ...]

    def __post_init__(self):
        if not self.polygons:
            raise ValidationError("boundary set has no polygons")
        for poly in self.polygons:
            for ring in poly.rings:
                if len(ring) < 4:
                    raise ValidationError(f"polygon {poly.name}: ring with < 4 vertices")
                if ring[0] != ring[-1]:
                    raise ValidationError(f"polygon {poly.name}: ring not closed")


@dataclass(slots=True)
class TracePoint:
    person_id: str
    lat: float
    lon: float
    timestamp: datetime


@dataclass
class MobilityTrace:
    """Per-person visit counts by grid cell."""

    person_id: str
    visits: dict[CellKey, int]

    @property
    def total_visits(self) -> int:
        return sum(self.visits.values())


# --------------------------------------------------------------------------
# timestamps

def parse_rfc3339(value: str) -> datetime:
    raw = value.strip()
    if raw.endswith(("Z", "z")):
        raw = raw[:-1] + "+00:00"
    ts = datetime.fromisoformat(raw)
    if ts.tzinfo is None:
        ts = ts.replace(tzinfo=timezone.utc)
    return ts.astimezone(timezone.utc)


def format_rfc3339(ts: datetime) -> str:
    return ts.astimezone(timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


# --------------------------------------------------------------------------
# posts

_POST_FIELDS = ("id", "user_id", "lat", "lon", "timestamp", "label", "text")


def _escape_text(text: str) -> str:
    return text.replace("\\", "\\\\").replace("\t", "\\t").replace("\n", "\\n").replace("\r", "\\r")


def _unescape_text(text: str) -> str:
    out = []
    it = iter(range(len(text)))
    i = 0
    while i < len(text):
        ch = text[i]
        if ch == "\\" and i + 1 < len(text):
            nxt = text[i + 1]
            out.append({"\\": "\\", "t": "\t", "n": "\n", "r": "\r"}.get(nxt, "\\" + nxt))
            i += 2
        else:
            out.append(ch)
            i += 1
    return "".join(out)


def _parse_float(raw: str, field: str, lineno: int, path) -> float:
    try:
        return float(raw)
    except ValueError as exc:
        raise InputFormatError(
            f"{path}:{lineno}: field '{field}' is not a number: {raw!r}",
            line=lineno,
            field=field,
        ) from exc


def _post_from_record(rec: dict, lineno: int, path) -> GeoPost:
    for name in ("id", "lat", "lon", "timestamp"):
        if rec.get(name) in (None, ""):
            raise InputFormatError(
                f"{path}:{lineno}: missing required field '{name}'", line=lineno, field=name
            )
    if rec.get("text") is None:
        raise InputFormatError(
            f"{path}:{lineno}: missing required field 'text'", line=lineno, field="text"
        )
    label = rec.get("label") or None
    if label is not None and label not in LABELS:
        raise InputFormatError(
            f"{path}:{lineno}: field 'label' must be one of {LABELS}, got {label!r}",
            line=lineno,
            field="label",
        )
    try:
        ts = parse_rfc3339(str(rec["timestamp"]))
    except ValueError as exc:
        raise InputFormatError(
            f"{path}:{lineno}: field 'timestamp' is not RFC 3339: {rec['timestamp']!r}",
            line=lineno,
            field="timestamp",
        ) from exc
    return GeoPost(
        id=str(rec["id"]),
        user_id=(str(rec["user_id"]) if rec.get("user_id") else None),
        lat=float(rec["lat"]),
        lon=float(rec["lon"]),
        timestamp=ts,
        text=str(rec["text"]),
        label=label,
        score=(float(rec["score"]) if rec.get("score") not in (None, "") else None),
    )


def load_posts(path, format: str = "delimited") -> list[GeoPost]:
    """Load posts from a file, validating every record.

    format="delimited" expects the 7-field TSV grammar;
    format="record-per-line" expects one JSON object per line.
    Malformed records raise InputFormatError naming line and field;
    out-of-range coordinates raise with the offending field and the
    total count of out-of-range rows.
    """
    if format not in ("delimited", "record-per-line"):
        raise ValidationError(f"unknown posts format: {format!r}")
    if not os.path.exists(path):
        raise MissingInputError(f"posts file not found: {path}")

    posts: list[GeoPost] = []
    out_of_range: list[tuple[int, str]] = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            if format == "delimited":
                parts = line.split("\t", len(_POST_FIELDS) - 1)
                if len(parts) != len(_POST_FIELDS):
                    raise InputFormatError(
                        f"{path}:{lineno}: expected {len(_POST_FIELDS)} tab-separated fields, "
                        f"found {len(parts)}",
                        line=lineno,
                    )
                rec = dict(zip(_POST_FIELDS, parts))
                rec["lat"] = _parse_float(rec["lat"], "lat", lineno, path)
                rec["lon"] = _parse_float(rec["lon"], "lon", lineno, path)
                rec["text"] = _unescape_text(rec["text"])
            else:
                try:
                    rec = json.loads(line)
                except json.JSONDecodeError as exc:
                    raise InputFormatError(f"{path}:{lineno}: invalid JSON: {exc}", line=lineno) from exc
                if not isinstance(rec, dict):
                    raise InputFormatError(f"{path}:{lineno}: record is not an object", line=lineno)
            post = _post_from_record(rec, lineno, path)
            if not -90.0 <= post.lat <= 90.0:
                out_of_range.append((lineno, "lat"))
                continue
            if not -180.0 <= post.lon <= 180.0:
                out_of_range.append((lineno, "lon"))
                continue
            post.validate()
            posts.append(post)
    if out_of_range:
        lineno, field = out_of_range[0]
        raise InputFormatError(
            f"{path}:{lineno}: field '{field}' out of range "
            f"({len(out_of_range)} row(s) with out-of-range coordinates rejected)",
            line=lineno,
            field=field,
        )
    return posts


def save_posts(posts: Iterable[GeoPost], path) -> None:
    """Write posts in the delimited grammar (the inverse of load_posts)."""
    from .fileio import atomic_write_text

    lines = []
    for p in posts:
        lines.append(
            "\t".join(
                (
                    p.id,
                    p.user_id or "",
                    repr(float(p.lat)),
                    repr(float(p.lon)),
                    format_rfc3339(p.timestamp),
                    p.label or "",
                    _escape_text(p.text),
                )
            )
            + "\n"
        )
    atomic_write_text(path, "".join(lines))


# --------------------------------------------------------------------------
# boundaries

def _on_segment(px, py, ax, ay, bx, by) -> bool:
    if (px, py) == (ax, ay) or (px, py) == (bx, by):
        return True
    cross = (bx - ax) * (py - ay) - (by - ay) * (px - ax)
    if cross != 0.0:
        return False
    return min(ax, bx) <= px <= max(ax, bx) and min(ay, by) <= py <= max(ay, by)


def _even_odd(px: float, py: float, rings) -> bool:
    inside = False
    for ring in rings:
        for (ax, ay), (bx, by) in zip(ring, ring[1:]):
            if _on_segment(px, py, ax, ay, bx, by):
                return True
            if (ay > py) != (by > py):
                x_at = (bx - ax) * (py - ay) / (by - ay) + ax
                if px < x_at:
                    inside = not inside
    return inside


def point_in_boundary(lat: float, lon: float, boundary: BoundarySet) -> bool:
    """Even-odd membership test against any polygon; edges count as inside."""
    return any(_even_odd(lon, lat, poly.rings) for poly in boundary.polygons)


def load_boundary(path) -> BoundarySet:
    if not os.path.exists(path):
        raise MissingInputError(f"boundary file not found: {path}")
    with open(path, encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise InputFormatError(f"{path}: invalid JSON: {exc}") from exc
    if doc.get("type") != "FeatureCollection":
        raise InputFormatError(f"{path}: expected a FeatureCollection")
    polygons = []
    for i, feat in enumerate(doc.get("features", [])):
        geom = feat.get("geometry") or {}
        name = str((feat.get("properties") or {}).get("name", f"poly{i}"))
        gtype = geom.get("type")
        if gtype == "Polygon":
            ring_sets = [geom["coordinates"]]
        elif gtype == "MultiPolygon":
            ring_sets = geom["coordinates"]
        else:
            raise InputFormatError(f"{path}: feature {i}: unsupported geometry type {gtype!r}")
        rings = tuple(
            tuple((float(x), float(y)) for x, y in ring) for part in ring_sets for ring in part
        )
        polygons.append(Polygon(name=name, rings=rings))
    return BoundarySet(polygons=tuple(polygons))


# --------------------------------------------------------------------------
# mobility traces

def load_trace_points(path) -> list[TracePoint]:
    if not os.path.exists(path):
        raise MissingInputError(f"trace file not found: {path}")
    points = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 4:
                raise InputFormatError(
                    f"{path}:{lineno}: expected 4 tab-separated fields, found {len(parts)}",
                    line=lineno,
                )
            person, lat_s, lon_s, ts_s = parts
            lat = _parse_float(lat_s, "lat", lineno, path)
            lon = _parse_float(lon_s, "lon", lineno, path)
            if not -90.0 <= lat <= 90.0:
                raise InputFormatError(
                    f"{path}:{lineno}: field 'lat' out of range", line=lineno, field="lat"
                )
            if not -180.0 <= lon <= 180.0:
                raise InputFormatError(
                    f"{path}:{lineno}: field 'lon' out of range", line=lineno, field="lon"
                )
            try:
                ts = parse_rfc3339(ts_s)
            except ValueError as exc:
                raise InputFormatError(
                    f"{path}:{lineno}: field 'timestamp' is not RFC 3339", line=lineno, field="timestamp"
                ) from exc
            points.append(TracePoint(person_id=person, lat=lat, lon=lon, timestamp=ts))
    return points


def bin_trace_points(points: Sequence[TracePoint], d: int) -> list[MobilityTrace]:
    """Aggregate raw trace points into per-person visit counts by cell."""
    visits: dict[str, dict[CellKey, int]] = {}
    order: list[str] = []
    for pt in points:
        if pt.person_id not in visits:
            visits[pt.person_id] = {}
            order.append(pt.person_id)
        key = cell_key(pt.lat, pt.lon, d)
        visits[pt.person_id][key] = visits[pt.person_id].get(key, 0) + 1
    return [MobilityTrace(person_id=p, visits=visits[p]) for p in order]


# --------------------------------------------------------------------------
# synthetic corpora with planted regions

@dataclass
class SyntheticSpec:
    """Planted-region corpus: a rows x cols cell grid fully covered by
    connected regions, each with an exact positive proportion.

    Cells are (row, col) pairs mapped to CellKey(lat_q=row, lon_q=col, d).
    """

    rows: int
    cols: int
    regions: list[tuple[frozenset[tuple[int, int]], float]]
    posts_per_cell: int
    seed: int
    d: int = 3

    def validate(self) -> None:
        if self.rows < 1 or self.cols < 1:
            raise ValidationError("grid extent must be positive")
        if self.posts_per_cell < 1:
            raise ValidationError("posts_per_cell must be >= 1")
        extent = {(r, c) for r in range(self.rows) for c in range(self.cols)}
        seen: set[tuple[int, int]] = set()
        for i, (cells, p) in enumerate(self.regions):
            if not 0.0 <= p <= 1.0:
                raise ValidationError(f"region {i}: proportion {p} outside [0, 1]")
            if not cells:
                raise ValidationError(f"region {i} is empty")
            overlap = seen & cells
            if overlap:
                raise ValidationError(f"region {i} overlaps earlier regions at {sorted(overlap)[:5]}")
            if not cells <= extent:
                raise ValidationError(f"region {i} has cells outside the {self.rows}x{self.cols} extent")
            if not _connected_queen(cells):
                raise ValidationError(f"region {i} is not connected under queen adjacency")
            seen |= cells
        if seen != extent:
            missing = sorted(extent - seen)[:5]
            raise ValidationError(f"regions do not cover the extent; first missing cells: {missing}")


def _connected_queen(cells: frozenset[tuple[int, int]]) -> bool:
    start = next(iter(cells))
    stack = [start]
    seen = {start}
    while stack:
        r, c = stack.pop()
        for dr in (-1, 0, 1):
            for dc in (-1, 0, 1):
                nxt = (r + dr, c + dc)
                if nxt in cells and nxt not in seen:
                    seen.add(nxt)
                    stack.append(nxt)
    return len(seen) == len(cells)


def generate_synthetic(spec: SyntheticSpec):
    """Build a deterministic corpus with planted regions.

    Every cell gets exactly spec.posts_per_cell posts; the positive count
    in a cell of a region with proportion p is round(p * posts_per_cell)
    (ties away from zero), not a random draw. Positions are uniform inside
    the cell with a margin so re-binning is exact.

    Returns (posts, ground_truth_partition).
    """
    from .partition import Partition, ClusterStats

    spec.validate()
    rng = np.random.default_rng(spec.seed)
    scale = 10**spec.d
    half = 0.499 / scale

    region_of: dict[tuple[int, int], int] = {}
    for idx, (cells, _p) in enumerate(spec.regions):
        for cell in cells:
            region_of[cell] = idx

    base_ts = datetime(2017, 1, 25, tzinfo=timezone.utc)
    posts: list[GeoPost] = []
    assignment: dict[CellKey, int] = {}
    stats: dict[int, ClusterStats] = {
        i: ClusterStats(cells=0, total=0, positive=0) for i in range(len(spec.regions))
    }

    counter = 0
    for r in range(spec.rows):
        for c in range(spec.cols):
            idx = region_of[(r, c)]
            p = spec.regions[idx][1]
            n_pos = round_half_away(p * spec.posts_per_cell)
            key = CellKey(lat_q=r, lon_q=c, d=spec.d)
            assignment[key] = idx
            stats[idx].cells += 1
            stats[idx].total += spec.posts_per_cell
            stats[idx].positive += n_pos
            lat_c, lon_c = key.center()
            offs = rng.uniform(-half, half, size=(spec.posts_per_cell, 2))
            for i in range(spec.posts_per_cell):
                label = "positive" if i < n_pos else "negative"
                posts.append(
                    GeoPost(
                        id=f"s{r}_{c}_{i}",
                        user_id=f"u{counter}",
                        lat=float(lat_c + offs[i, 0]),
                        lon=float(lon_c + offs[i, 1]),
                        timestamp=base_ts + timedelta(seconds=counter),
                        text=f"synthetic {label} post",
                        label=label,
                    )
                )
                counter += 1

    for s in stats.values():
        s.prevalence = s.positive / s.total
    truth = Partition(
        d=spec.d,
        assignment=assignment,
        clusters=stats,
        meta={"method": "planted", "seed": spec.seed},
    )
    return posts, truth
