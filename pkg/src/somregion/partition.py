"""Partitioners over occupied grid cells.

Three methods produce cell -> cluster assignments:

* run_constrained_som - SOM variant whose winner search and neighborhood
  are bounded by a fixed Chebyshev radius tau, so clusters stay
  geographically adjacent; the primary method.
* run_traditional_som - plain SOM on (counts + coordinates); contiguity
  is NOT enforced and the output is flagged accordingly.
* polygon_partition - administrative baseline: one cluster per named
  polygon, cells assigned by center containment.

The constrained organization exists twice: readable per-node operations
(find_winner / update_weights on SomState, matching the published update
rule literally) and a fast array kernel (_som_kernel.organize) that
folds the cluster-mean reconciliation into a closed form. The reference
is kept for unit tests and cross-checking; production runs use the
kernel.
"""

from __future__ import annotations

import json
import math
import os
from collections import Counter
from dataclasses import dataclass, field as dc_field, asdict
from typing import Callable, Optional

import numpy as np

from ._som_kernel import organize
from .errors import InputFormatError, MissingInputError, ValidationError
from .grid import CellKey, GridField

WINNER_RULES = ("lexicographic", "product")
WEIGHT_SPACES = ("counts_scaled", "proportions")


@dataclass(frozen=True)
class SomParams:
    """Operational parameters shared by both SOM variants.

    winner_rule "lexicographic" picks the candidate with the smallest
    weight distance and breaks ties by the largest surrounding-cluster
    size; "product" minimizes distance * surrounding-cluster-size
    directly. sigma0 is the initial Gaussian radius of the traditional
    SOM only (defaults to half the grid extent).
    """

    tau: int = 3
    t_max: int = 50
    eta0: float = 0.1
    seed: int = 0
    winner_rule: str = "lexicographic"
    weight_space: str = "counts_scaled"
    sigma0: Optional[float] = None

    def validate(self) -> None:
        if self.tau < 1:
            raise ValidationError(f"tau must be >= 1, got {self.tau}")
        if self.t_max < 1:
            raise ValidationError(f"t_max must be >= 1, got {self.t_max}")
        if not 0.0 < self.eta0 < 1.0:
            raise ValidationError(f"eta0 must be in (0, 1), got {self.eta0}")
        if self.winner_rule not in WINNER_RULES:
            raise ValidationError(f"winner_rule must be one of {WINNER_RULES}")
        if self.weight_space not in WEIGHT_SPACES:
            raise ValidationError(f"weight_space must be one of {WEIGHT_SPACES}")


@dataclass
class ClusterStats:
    cells: int
    total: int
    positive: int
    prevalence: float = 0.0


@dataclass
class Partition:
    """Assignment of every occupied cell to exactly one cluster id."""

    d: int
    assignment: dict[CellKey, int]
    clusters: dict[int, ClusterStats]
    meta: dict = dc_field(default_factory=dict)

    def cluster_cells(self) -> dict[int, list[CellKey]]:
        out: dict[int, list[CellKey]] = {}
        for key in sorted(self.assignment, key=lambda k: (k.lat_q, k.lon_q)):
            out.setdefault(self.assignment[key], []).append(key)
        return out

    def check_exhaustive(self, field: GridField) -> None:
        missing = set(field.cells) - set(self.assignment)
        extra = set(self.assignment) - set(field.cells)
        if missing or extra:
            raise ValidationError(
                f"partition does not match field: {len(missing)} unassigned, {len(extra)} spurious"
            )


def learning_rate(t: int, params: SomParams) -> float:
    """eta(t) = eta0 * exp(-t / t_max)."""
    if not 0 <= t <= params.t_max:
        raise ValidationError(f"t={t} outside [0, {params.t_max}]")
    return params.eta0 * math.exp(-t / params.t_max)


def neighborhood(d: int, cluster_size: int) -> float:
    """h(d) = exp(-d / (cluster_size + 1)); wider for larger clusters."""
    if d < 0:
        raise ValidationError(f"distance must be >= 0, got {d}")
    if cluster_size < 1:
        raise ValidationError(f"cluster_size must be >= 1, got {cluster_size}")
    return math.exp(-d / (cluster_size + 1.0))


def _minmax_scale(col: np.ndarray) -> np.ndarray:
    lo = col.min()
    hi = col.max()
    if hi == lo:
        return np.zeros_like(col, dtype=float)
    return (col - lo) / (hi - lo)


def input_weights(field: GridField, weight_space: str) -> tuple[list[CellKey], np.ndarray]:
    """Per-cell input vectors in row-major key order.

    counts_scaled: (total, positive) counts, each min-max scaled to [0,1].
    proportions:   the positive proportion alone.
    """
    keys = field.sorted_keys()
    if weight_space == "counts_scaled":
        tot = np.array([field.cells[k].total for k in keys], dtype=float)
        pos = np.array([field.cells[k].positive for k in keys], dtype=float)
        X = np.column_stack([_minmax_scale(tot), _minmax_scale(pos)])
    elif weight_space == "proportions":
        X = np.array([[field.cells[k].positive / field.cells[k].total] for k in keys])
    else:
        raise ValidationError(f"weight_space must be one of {WEIGHT_SPACES}")
    return keys, X


def _neighbor_csr(keys: list[CellKey], tau: int) -> tuple[np.ndarray, np.ndarray]:
    """CSR lists of occupied cells within Chebyshev distance tau (self included)."""
    index = {(k.lat_q, k.lon_q): i for i, k in enumerate(keys)}
    idx: list[int] = []
    ptr = [0]
    offsets = [(dr, dc) for dr in range(-tau, tau + 1) for dc in range(-tau, tau + 1)]
    for k in keys:
        for dr, dc in offsets:
            j = index.get((k.lat_q + dr, k.lon_q + dc))
            if j is not None:
                idx.append(j)
        ptr.append(len(idx))
    return np.array(idx, dtype=np.int64), np.array(ptr, dtype=np.int64)


# --------------------------------------------------------------------------
# reference operations (literal per-node semantics)

@dataclass
class SomState:
    """Mutable organization state with explicit per-node weights.

    All nodes of a cluster share one weight value; update_weights restores
    that invariant by averaging after each presentation.
    """

    keys: list[CellKey]
    inputs: np.ndarray                      # (n, dim) fixed input vectors
    weights: np.ndarray                     # (n, dim) per-node weights
    cluster_of: np.ndarray                  # (n,) int64
    members: dict[int, set[int]]
    cycle: int = 0

    @property
    def n(self) -> int:
        return len(self.keys)

    def node_weight(self, i: int) -> np.ndarray:
        return self.weights[i]

    def candidates(self, v: int, tau: int) -> list[int]:
        """Occupied cells within Chebyshev distance tau of v's cell."""
        kv = self.keys[v]
        out = []
        for j, k in enumerate(self.keys):
            if max(abs(k.lat_q - kv.lat_q), abs(k.lon_q - kv.lon_q)) <= tau:
                out.append(j)
        return out


def build_state(field: GridField, params: SomParams) -> SomState:
    """Initial state: every occupied cell is a singleton cluster whose id
    is its row-major ordinal and whose weight is its own input vector."""
    keys, X = input_weights(field, params.weight_space)
    n = len(keys)
    return SomState(
        keys=keys,
        inputs=X,
        weights=X.copy(),
        cluster_of=np.arange(n, dtype=np.int64),
        members={i: {i} for i in range(n)},
    )


def _cheb(a: CellKey, b: CellKey) -> int:
    return max(abs(a.lat_q - b.lat_q), abs(a.lon_q - b.lon_q))


def find_winner(state: SomState, v: int, params: SomParams) -> int:
    """Winning node among cells within tau of v.

    Smallest weight distance wins (scaled by the surrounding-cluster size
    under the "product" rule); ties go to the cluster with the most cells
    inside the window, then to the smaller cluster id, then to the
    candidate nearest v, then to the smallest cell key.
    """
    cand = state.candidates(v, params.tau)
    window_size = Counter(int(state.cluster_of[j]) for j in cand)
    xv = state.inputs[v]
    product = params.winner_rule == "product"

    best_j = -1
    best_key: tuple = ()
    for j in cand:
        c = int(state.cluster_of[j])
        s = 0.0
        for q in range(state.inputs.shape[1]):
            diff = state.weights[j, q] - xv[q]
            s += diff * diff
        dist = math.sqrt(s)
        primary = dist * window_size[c] if product else dist
        kj = state.keys[j]
        key = (primary, -window_size[c], c, _cheb(kj, state.keys[v]), kj.lat_q, kj.lon_q)
        if best_j < 0 or key < best_key:
            best_j = j
            best_key = key
    return best_j


def update_weights(state: SomState, winner: int, v: int, t: int, params: SomParams) -> None:
    """Move every node in v's window toward v's input, re-share cluster
    weights as the mean over members, and hand v to the winner's cluster."""
    cand = state.candidates(v, params.tau)
    window_size = Counter(int(state.cluster_of[j]) for j in cand)
    eta = learning_rate(t, params)
    xv = state.inputs[v]
    win_key = state.keys[winner]

    for j in cand:
        h = neighborhood(_cheb(win_key, state.keys[j]), window_size[int(state.cluster_of[j])])
        state.weights[j] = state.weights[j] + (eta * h) * (xv - state.weights[j])

    old_c = int(state.cluster_of[v])
    win_c = int(state.cluster_of[winner])
    if old_c != win_c:
        state.cluster_of[v] = win_c
        state.members[old_c].discard(v)
        if not state.members[old_c]:
            del state.members[old_c]
        state.members[win_c].add(v)

    affected = {int(state.cluster_of[j]) for j in cand} | {win_c}
    if old_c in state.members:
        affected.add(old_c)
    for c in affected:
        rows = sorted(state.members[c])
        shared = state.weights[rows].mean(axis=0)
        state.weights[rows] = shared


def _run_reference(
    field: GridField,
    params: SomParams,
    on_cycle: Optional[Callable[[SomState, int], None]] = None,
) -> Partition:
    """Organization loop driven by the literal per-node operations.

    Slow; used by tests to cross-check the kernel. on_cycle(state, t) is
    invoked after every cycle.
    """
    params.validate()
    state = build_state(field, params)
    rng = np.random.default_rng(params.seed)
    for t in range(1, params.t_max + 1):
        order = rng.permutation(state.n)
        for v in order:
            winner = find_winner(state, int(v), params)
            update_weights(state, winner, int(v), t, params)
        state.cycle = t
        if on_cycle is not None:
            on_cycle(state, t)
    phi = state.cluster_of.copy()
    idx, ptr = _neighbor_csr(state.keys, params.tau)
    final = _split_components(phi, idx, ptr)
    return _assemble(field, state.keys, final, params, method="constrained_som", qe=None)


# --------------------------------------------------------------------------
# fast path

def _split_components(phi: np.ndarray, nbr_idx: np.ndarray, nbr_ptr: np.ndarray) -> np.ndarray:
    """Split every cluster into its tau-connected components and relabel
    densely, ordered by smallest member (row-major)."""
    n = len(phi)
    final = np.full(n, -1, dtype=np.int64)
    next_label = 0
    for i in range(n):
        if final[i] >= 0:
            continue
        final[i] = next_label
        stack = [i]
        while stack:
            j = stack.pop()
            for a in range(nbr_ptr[j], nbr_ptr[j + 1]):
                k = int(nbr_idx[a])
                if final[k] < 0 and phi[k] == phi[i]:
                    final[k] = next_label
                    stack.append(k)
        next_label += 1
    return final


def _assemble(
    field: GridField,
    keys: list[CellKey],
    labels: np.ndarray,
    params: SomParams,
    method: str,
    qe=None,
    extra_meta: Optional[dict] = None,
) -> Partition:
    assignment: dict[CellKey, int] = {}
    clusters: dict[int, ClusterStats] = {}
    for i, key in enumerate(keys):
        c = int(labels[i])
        assignment[key] = c
        stats = clusters.setdefault(c, ClusterStats(cells=0, total=0, positive=0))
        stats.cells += 1
        stats.total += field.cells[key].total
        stats.positive += field.cells[key].positive
    for stats in clusters.values():
        stats.prevalence = stats.positive / stats.total
    meta = {
        "method": method,
        "params": asdict(params),
        "contiguity_enforced": method == "constrained_som",
    }
    if qe is not None:
        meta["quantization_error"] = [float(x) for x in qe]
    if extra_meta:
        meta.update(extra_meta)
    return Partition(d=field.d, assignment=assignment, clusters=clusters, meta=meta)


def run_constrained_som(field: GridField, params: SomParams) -> Partition:
    """Organize occupied cells into contiguous, non-overlapping clusters.

    Cells start as singleton clusters and are repeatedly presented in
    seeded shuffled order; each presentation assigns the cell to the
    winning nearby cluster and pulls surrounding cluster weights toward
    the cell's input. Clusters are split into tau-connected components at
    termination, so the result always passes check_contiguity.
    """
    params.validate()
    if field.g == 0:
        raise ValidationError("cannot partition an empty field")
    keys, X = input_weights(field, params.weight_space)
    n = len(keys)
    lat_q = np.array([k.lat_q for k in keys], dtype=np.int64)
    lon_q = np.array([k.lon_q for k in keys], dtype=np.int64)
    nbr_idx, nbr_ptr = _neighbor_csr(keys, params.tau)
    rng = np.random.default_rng(params.seed)
    orders = np.stack([rng.permutation(n) for _ in range(params.t_max)]).astype(np.int64)
    etas = np.array([learning_rate(t, params) for t in range(1, params.t_max + 1)])
    product = params.winner_rule == "product"

    phi, _cw, qe = organize(lat_q, lon_q, X, nbr_idx, nbr_ptr, orders, etas, product)
    final = _split_components(phi, nbr_idx, nbr_ptr)
    return _assemble(field, keys, final, params, method="constrained_som", qe=qe)


# --------------------------------------------------------------------------
# baselines

def run_traditional_som(field: GridField, params: SomParams) -> Partition:
    """Plain SOM baseline on 4-dim inputs (counts + coordinates, min-max
    scaled); clusters are the groups of cells sharing a best-matching
    node. Contiguity is not enforced and the output is flagged as such."""
    params.validate()
    if field.g == 0:
        raise ValidationError("cannot partition an empty field")
    keys = field.sorted_keys()
    n = len(keys)
    tot = np.array([field.cells[k].total for k in keys], dtype=float)
    pos = np.array([field.cells[k].positive for k in keys], dtype=float)
    lat = np.array([k.lat_q for k in keys], dtype=float)
    lon = np.array([k.lon_q for k in keys], dtype=float)
    X = np.column_stack([_minmax_scale(c) for c in (tot, pos, lat, lon)])

    extent = max(lat.max() - lat.min(), lon.max() - lon.min())
    sigma0 = params.sigma0 if params.sigma0 is not None else max(extent / 2.0, 1.0)

    rng = np.random.default_rng(params.seed)
    W = rng.random((n, X.shape[1]))
    grid_pos = np.column_stack([lat, lon])
    for t in range(1, params.t_max + 1):
        eta = learning_rate(t, params)
        sigma = sigma0 * math.exp(-t / params.t_max)
        order = rng.permutation(n)
        for v in order:
            x = X[v]
            bmu = int(np.argmin(((W - x) ** 2).sum(axis=1)))
            d2 = ((grid_pos - grid_pos[bmu]) ** 2).sum(axis=1)
            h = np.exp(-d2 / (2.0 * sigma * sigma))
            W += eta * h[:, None] * (x - W)

    bmus = np.array([int(np.argmin(((W - X[i]) ** 2).sum(axis=1))) for i in range(n)])
    relabel: dict[int, int] = {}
    labels = np.empty(n, dtype=np.int64)
    for i in range(n):
        labels[i] = relabel.setdefault(int(bmus[i]), len(relabel))
    part = _assemble(field, keys, labels, params, method="traditional_som")
    part.meta["contiguity_enforced"] = False
    return part


def _ring_centroid(ring) -> tuple[float, float]:
    area2 = 0.0
    cx = 0.0
    cy = 0.0
    for (ax, ay), (bx, by) in zip(ring, ring[1:]):
        cross = ax * by - bx * ay
        area2 += cross
        cx += (ax + bx) * cross
        cy += (ay + by) * cross
    if area2 == 0.0:
        xs = [p[0] for p in ring[:-1]]
        ys = [p[1] for p in ring[:-1]]
        return sum(xs) / len(xs), sum(ys) / len(ys)
    return cx / (3.0 * area2), cy / (3.0 * area2)


def polygon_partition(field: GridField, boundary) -> Partition:
    """One cluster per named polygon; cells assigned by center containment
    (first matching polygon wins). Cells covered by no polygon fall back
    to the polygon with the nearest centroid, with a warning."""
    import warnings

    from .ingest import _even_odd

    if field.g == 0:
        raise ValidationError("cannot partition an empty field")
    keys = field.sorted_keys()
    centroids = [_ring_centroid(poly.rings[0]) for poly in boundary.polygons]
    labels = np.empty(len(keys), dtype=np.int64)
    uncovered = 0
    for i, key in enumerate(keys):
        lat, lon = key.center()
        label = -1
        for pi, poly in enumerate(boundary.polygons):
            if _even_odd(lon, lat, poly.rings):
                label = pi
                break
        if label < 0:
            uncovered += 1
            dists = [(cx - lon) ** 2 + (cy - lat) ** 2 for cx, cy in centroids]
            label = int(np.argmin(dists))
        labels[i] = label
    if uncovered:
        warnings.warn(
            f"{uncovered} cell(s) outside all polygons assigned to nearest centroid",
            stacklevel=2,
        )
    params = SomParams(tau=1)
    part = _assemble(
        field,
        keys,
        labels,
        params,
        method="polygon",
        extra_meta={"polygon_names": [p.name for p in boundary.polygons], "uncovered_cells": uncovered},
    )
    part.meta["contiguity_enforced"] = False
    return part


# --------------------------------------------------------------------------
# contiguity

@dataclass(frozen=True)
class ContiguityReport:
    ok: bool
    offending: tuple[int, ...]          # cluster ids with > 1 component
    components: dict[int, int]          # cluster id -> component count


def check_contiguity(partition: Partition, tau: int) -> ContiguityReport:
    """Count tau-connected components per cluster; ok iff every cluster
    forms exactly one."""
    offending = []
    components: dict[int, int] = {}
    for cid, cells in partition.cluster_cells().items():
        cell_set = {(k.lat_q, k.lon_q) for k in cells}
        seen: set[tuple[int, int]] = set()
        n_comp = 0
        for cell in sorted(cell_set):
            if cell in seen:
                continue
            n_comp += 1
            stack = [cell]
            seen.add(cell)
            while stack:
                r, c = stack.pop()
                for dr in range(-tau, tau + 1):
                    for dc in range(-tau, tau + 1):
                        nxt = (r + dr, c + dc)
                        if nxt in cell_set and nxt not in seen:
                            seen.add(nxt)
                            stack.append(nxt)
        components[cid] = n_comp
        if n_comp != 1:
            offending.append(cid)
    return ContiguityReport(ok=not offending, offending=tuple(sorted(offending)), components=components)


# --------------------------------------------------------------------------
# persistence

def save_partition(partition: Partition, out_dir) -> None:
    """Write partition.tsv (lat_q, lon_q, cluster_id), clusters.tsv
    (id, cells, posts, positives, prevalence) and meta.json."""
    from .fileio import atomic_write_text

    os.makedirs(out_dir, exist_ok=True)
    rows = sorted(partition.assignment.items(), key=lambda kv: (kv[0].lat_q, kv[0].lon_q))
    atomic_write_text(
        os.path.join(out_dir, "partition.tsv"),
        "".join(f"{key.lat_q}\t{key.lon_q}\t{cid}\n" for key, cid in rows),
    )
    summary = []
    for cid in sorted(partition.clusters):
        s = partition.clusters[cid]
        summary.append(f"{cid}\t{s.cells}\t{s.total}\t{s.positive}\t{s.prevalence!r}\n")
    atomic_write_text(os.path.join(out_dir, "clusters.tsv"), "".join(summary))
    atomic_write_text(
        os.path.join(out_dir, "meta.json"),
        json.dumps({"d": partition.d, "meta": partition.meta}, sort_keys=True, indent=2) + "\n",
    )


def load_partition(in_dir) -> Partition:
    cells_path = os.path.join(in_dir, "partition.tsv")
    summary_path = os.path.join(in_dir, "clusters.tsv")
    meta_path = os.path.join(in_dir, "meta.json")
    for path in (cells_path, summary_path, meta_path):
        if not os.path.exists(path):
            raise MissingInputError(f"partition file not found: {path}")
    with open(meta_path, encoding="utf-8") as fh:
        meta_doc = json.load(fh)
    d = int(meta_doc["d"])
    assignment: dict[CellKey, int] = {}
    with open(cells_path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            parts = line.split()
            if len(parts) != 3:
                raise InputFormatError(f"{cells_path}:{lineno}: expected 3 fields", line=lineno)
            lat_q, lon_q, cid = (int(x) for x in parts)
            assignment[CellKey(lat_q, lon_q, d)] = cid
    clusters: dict[int, ClusterStats] = {}
    with open(summary_path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            parts = line.rstrip("\n").split("\t")
            if len(parts) != 5:
                raise InputFormatError(f"{summary_path}:{lineno}: expected 5 fields", line=lineno)
            cid = int(parts[0])
            clusters[cid] = ClusterStats(
                cells=int(parts[1]),
                total=int(parts[2]),
                positive=int(parts[3]),
                prevalence=float(parts[4]),
            )
    return Partition(d=d, assignment=assignment, clusters=clusters, meta=meta_doc.get("meta", {}))
