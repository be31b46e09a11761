import numpy as np
import pytest

from somregion.cli import build_region_layout
from somregion.grid import CellCounts, CellKey, GridField, round_half_away
from somregion.partition import ClusterStats, Partition


def planted_field(rows, cols, layout, posts_per_cell, d=3):
    """Field + ground-truth partition for a planted-region layout,
    without materializing posts (counts are what the partitioners see)."""
    cells = {}
    assignment = {}
    stats = {}
    for idx, (region_cells, p) in enumerate(layout):
        n_pos = round_half_away(p * posts_per_cell)
        for r, c in region_cells:
            key = CellKey(r, c, d)
            cells[key] = CellCounts(total=posts_per_cell, positive=n_pos)
            assignment[key] = idx
        stats[idx] = ClusterStats(
            cells=len(region_cells),
            total=posts_per_cell * len(region_cells),
            positive=n_pos * len(region_cells),
            prevalence=n_pos / posts_per_cell,
        )
    field = GridField(d=d, cells=cells)
    truth = Partition(d=d, assignment=assignment, clusters=stats, meta={"method": "planted"})
    return field, truth


def random_field(rng, rows, cols, occupancy=1.0, max_total=20, d=3):
    cells = {}
    for r in range(rows):
        for c in range(cols):
            if rng.random() > occupancy:
                continue
            total = int(rng.integers(1, max_total + 1))
            positive = int(rng.integers(0, total + 1))
            cells[CellKey(r, c, d)] = CellCounts(total=total, positive=positive)
    return GridField(d=d, cells=cells)


def random_partition_pair(rng, n_cells=None):
    """Two random partitions over one random cell set (for c2 testing)."""
    n = int(n_cells if n_cells is not None else rng.integers(2, 201))
    keys = [CellKey(int(rng.integers(0, 100)), i, 3) for i in range(n)]
    parts = []
    for _ in range(2):
        k = int(rng.integers(1, n + 1))
        labels = rng.integers(0, k, size=n)
        assignment = {key: int(lb) for key, lb in zip(keys, labels)}
        clusters = {}
        for key, cid in assignment.items():
            stats = clusters.setdefault(cid, ClusterStats(cells=0, total=0, positive=0))
            stats.cells += 1
            stats.total += 1
        parts.append(Partition(d=3, assignment=assignment, clusters=clusters, meta={}))
    return parts[0], parts[1]


def c2_brute_force(y: Partition, y_prime: Partition) -> float:
    """Independent O(n^2) pair enumeration of the agreement index."""
    keys = sorted(y.assignment, key=lambda k: (k.lat_q, k.lon_q))
    n = len(keys)
    agree = 0
    for i in range(n):
        for j in range(i + 1, n):
            same_a = y.assignment[keys[i]] == y.assignment[keys[j]]
            same_b = y_prime.assignment[keys[i]] == y_prime.assignment[keys[j]]
            if same_a == same_b:
                agree += 1
    return agree / (n * (n - 1) // 2)


@pytest.fixture(scope="session")
def two_band_field():
    """30x30 grid, two horizontal bands with proportions 0.05 / 0.45."""
    layout = build_region_layout(30, 30, "bands:0.05,0.45")
    return planted_field(30, 30, layout, posts_per_cell=100)


@pytest.fixture(scope="session")
def quad_field_small():
    """20x20 grid, four quadrants with well-separated proportions."""
    layout = build_region_layout(20, 20, "quad:0.05,0.20,0.50,0.80")
    return planted_field(20, 20, layout, posts_per_cell=40)
