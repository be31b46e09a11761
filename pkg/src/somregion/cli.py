"""Command-line orchestration of the pipeline stages.

Every command writes its outputs atomically into --out together with a
run_config.json recording the exact flags and seed; identical config and
seed reproduce byte-identical outputs. Error classes map to distinct
exit codes: 2 usage (click), 3 missing input, 4 malformed input, 5
violated invariant.
"""

from __future__ import annotations

import functools
import json
import math
import os
import sys

import click

from . import __version__
from .errors import InputFormatError, MissingInputError, SomregionError, ValidationError
from .fileio import atomic_write_text
from .grid import GridField, bin_posts, load_field, monthly_ttest, pearson, save_field, user_centric_field
from .ingest import (
    SyntheticSpec,
    bin_trace_points,
    generate_synthetic,
    load_boundary,
    load_posts,
    load_trace_points,
    save_posts,
)
from .partition import (
    Partition,
    SomParams,
    check_contiguity,
    load_partition,
    polygon_partition,
    run_constrained_som,
    run_traditional_som,
    save_partition,
)

EXIT_CODES = {
    MissingInputError: 3,
    InputFormatError: 4,
    ValidationError: 5,
}


def _exit_code(exc: SomregionError) -> int:
    for cls, code in EXIT_CODES.items():
        if isinstance(exc, cls):
            return code
    return 1


def handle_errors(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except SomregionError as exc:
            code = _exit_code(exc)
            click.echo(f"error kind={type(exc).__name__} code={code}: {exc}", err=True)
            sys.exit(code)

    return wrapper


def _write_config(out_dir: str, command: str, config: dict) -> None:
    doc = {"command": command, "version": __version__, "config": config}
    atomic_write_text(os.path.join(out_dir, "run_config.json"), json.dumps(doc, sort_keys=True, indent=2) + "\n")


# --------------------------------------------------------------------------
# GeoJSON export

def _trace_rings(cells: list[tuple[int, int]]) -> list[list[tuple[int, int]]]:
    """Boundary rings of a union of unit squares, in doubled lattice
    coordinates (square for cell (lat,lon) spans 2*lon+-1 x 2*lat+-1).

    Each square contributes its four sides counter-clockwise; sides shared
    by two squares cancel. Remaining directed edges are chained into
    rings, taking the left-most turn at pinch vertices so that rings stay
    simple (diagonally touching squares yield separate rings). Outer
    rings come out counter-clockwise, holes clockwise.
    """
    edges: set[tuple[tuple[int, int], tuple[int, int]]] = set()
    for lat, lon in cells:
        x0, y0, x1, y1 = 2 * lon - 1, 2 * lat - 1, 2 * lon + 1, 2 * lat + 1
        for a, b in (
            ((x0, y0), (x1, y0)),
            ((x1, y0), (x1, y1)),
            ((x1, y1), (x0, y1)),
            ((x0, y1), (x0, y0)),
        ):
            if (b, a) in edges:
                edges.remove((b, a))
            else:
                edges.add((a, b))

    out_edges: dict[tuple[int, int], list[tuple[int, int]]] = {}
    for a, b in edges:
        out_edges.setdefault(a, []).append(b)

    def turn(din, dout) -> int:
        # cross product: >0 left turn, 0 straight, <0 right turn
        return din[0] * dout[1] - din[1] * dout[0]

    remaining = set(edges)
    rings = []
    while remaining:
        a, b = min(remaining)
        ring = [a, b]
        remaining.remove((a, b))
        prev, cur = a, b
        while cur != a:
            din = (cur[0] - prev[0], cur[1] - prev[1])
            candidates = [e for e in out_edges.get(cur, ()) if (cur, e) in remaining]
            best = max(candidates, key=lambda e: turn(din, (e[0] - cur[0], e[1] - cur[1])))
            remaining.remove((cur, best))
            ring.append(best)
            prev, cur = cur, best
        # drop collinear midpoints
        compact = []
        m = len(ring) - 1  # last repeats first
        for i in range(m):
            p_prev = ring[(i - 1) % m]
            p = ring[i]
            p_next = ring[(i + 1) % m]
            if turn((p[0] - p_prev[0], p[1] - p_prev[1]), (p_next[0] - p[0], p_next[1] - p[1])) != 0:
                compact.append(p)
        start = compact.index(min(compact))
        compact = compact[start:] + compact[:start]
        compact.append(compact[0])
        rings.append(compact)
    return rings


def _ring_area2(ring) -> int:
    area2 = 0
    for (ax, ay), (bx, by) in zip(ring, ring[1:]):
        area2 += ax * by - bx * ay
    return area2


def _point_in_ring(px: float, py: float, ring) -> bool:
    inside = False
    for (ax, ay), (bx, by) in zip(ring, ring[1:]):
        if (ay > py) != (by > py):
            x_at = (bx - ax) * (py - ay) / (by - ay) + ax
            if px < x_at:
                inside = not inside
    return inside


def _cluster_polygons(cells: list[tuple[int, int]]) -> list[list[list[tuple[int, int]]]]:
    """Group traced rings into polygons: each outer ring with the holes it
    contains (innermost containment wins)."""
    rings = _trace_rings(cells)
    outers = [(r, abs(_ring_area2(r))) for r in rings if _ring_area2(r) > 0]
    holes = [r for r in rings if _ring_area2(r) < 0]
    polygons = [[outer] for outer, _a in outers]
    for hole in holes:
        # a point just inside the void: right of the first edge midpoint
        (ax, ay), (bx, by) = hole[0], hole[1]
        dx, dy = bx - ax, by - ay
        norm = math.hypot(dx, dy)
        ux, uy = dx / norm, dy / norm
        px, py = (ax + bx) / 2.0 + 0.5 * uy, (ay + by) / 2.0 - 0.5 * ux
        containing = [
            i for i, (outer, _a) in enumerate(outers) if _point_in_ring(px, py, outer)
        ]
        if not containing:
            raise ValidationError("hole ring without a containing outer ring")
        innermost = min(containing, key=lambda i: outers[i][1])
        polygons[innermost].append(hole)
    return polygons


def export_geojson(partition: Partition, field: GridField, path) -> None:
    """One feature per cluster: the union of its member cells' squares
    (cell square = center +- 0.5 * 10^-d per coordinate), as a Polygon or
    MultiPolygon, with cluster_id, cell count and prevalence properties.
    Features are sorted by cluster_id; output bytes are deterministic."""
    denom = 2 * 10**partition.d

    def to_deg(ring):
        return [[x / denom, y / denom] for x, y in ring]  # (lon, lat)

    features = []
    for cid in sorted(partition.clusters):
        cells = [(k.lat_q, k.lon_q) for k, c in partition.assignment.items() if c == cid]
        cells.sort()
        polygons = _cluster_polygons(cells)
        if len(polygons) == 1:
            geometry = {"type": "Polygon", "coordinates": [to_deg(r) for r in polygons[0]]}
        else:
            geometry = {
                "type": "MultiPolygon",
                "coordinates": [[to_deg(r) for r in poly] for poly in polygons],
            }
        stats = partition.clusters[cid]
        features.append(
            {
                "type": "Feature",
                "properties": {
                    "cluster_id": cid,
                    "cells": stats.cells,
                    "prevalence": stats.prevalence,
                },
                "geometry": geometry,
            }
        )
    doc = {"type": "FeatureCollection", "features": features}
    atomic_write_text(path, json.dumps(doc, sort_keys=True, separators=(",", ":")) + "\n")


# --------------------------------------------------------------------------
# synthetic region layouts

def build_region_layout(rows: int, cols: int, spec: str):
    """Parse a region layout string.

    quad:p0,p1,p2,p3   - four quadrants (row-major: SW, SE, NW, NE)
    bands:p0,p1,...    - horizontal bands of near-equal height, south first
    """
    kind, _, rest = spec.partition(":")
    try:
        props = [float(x) for x in rest.split(",") if x != ""]
    except ValueError as exc:
        raise ValidationError(f"bad region proportions in {spec!r}: {exc}") from exc
    if kind == "quad":
        if len(props) != 4:
            raise ValidationError("quad layout needs exactly 4 proportions")
        if rows < 2 or cols < 2:
            raise ValidationError("quad layout needs rows >= 2 and cols >= 2")
        r_mid, c_mid = rows // 2, cols // 2
        quads = [[], [], [], []]
        for r in range(rows):
            for c in range(cols):
                quads[(2 if r >= r_mid else 0) + (1 if c >= c_mid else 0)].append((r, c))
        return [(frozenset(q), p) for q, p in zip(quads, props)]
    if kind == "bands":
        if not props:
            raise ValidationError("bands layout needs at least one proportion")
        if rows < len(props):
            raise ValidationError(f"bands layout needs rows >= {len(props)}")
        bounds = [round(i * rows / len(props)) for i in range(len(props) + 1)]
        regions = []
        for i, p in enumerate(props):
            cells = frozenset((r, c) for r in range(bounds[i], bounds[i + 1]) for c in range(cols))
            regions.append((cells, p))
        return regions
    raise ValidationError(f"unknown region layout kind {kind!r} (use quad: or bands:)")


# --------------------------------------------------------------------------
# commands

@click.group()
@click.version_option(version=__version__)
def main():
    """Contiguous regionalization of geo-tagged labeled text."""


def som_options(fn):
    fn = click.option("--tau", default=3, show_default=True, help="Neighborhood radius in cells (Chebyshev).")(fn)
    fn = click.option("--cycles", default=50, show_default=True, help="Learning cycles.")(fn)
    fn = click.option("--eta0", default=0.1, show_default=True, help="Initial learning rate.")(fn)
    fn = click.option(
        "--winner-rule",
        type=click.Choice(["lexicographic", "product"]),
        default="lexicographic",
        show_default=True,
    )(fn)
    fn = click.option(
        "--weight-space",
        type=click.Choice(["counts_scaled", "proportions"]),
        default="counts_scaled",
        show_default=True,
    )(fn)
    return fn


def _load_field_or_posts(field_path, posts_path, precision, boundary_path):
    if (field_path is None) == (posts_path is None):
        raise ValidationError("provide exactly one of --field or --posts")
    if field_path is not None:
        return load_field(field_path)
    posts = load_posts(posts_path)
    boundary = load_boundary(boundary_path) if boundary_path else None
    return bin_posts(posts, precision, boundary)


@main.command()
@click.option("--rows", default=30, show_default=True)
@click.option("--cols", default=30, show_default=True)
@click.option("--regions", default="quad:0.02,0.10,0.30,0.50", show_default=True)
@click.option("--posts-per-cell", default=50, show_default=True)
@click.option("--precision", default=3, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--out", required=True, type=click.Path())
@handle_errors
def synth(rows, cols, regions, posts_per_cell, precision, seed, out):
    """Generate a planted-region corpus: posts, field, and ground truth."""
    layout = build_region_layout(rows, cols, regions)
    spec = SyntheticSpec(
        rows=rows, cols=cols, regions=layout, posts_per_cell=posts_per_cell, seed=seed, d=precision
    )
    posts, truth = generate_synthetic(spec)
    os.makedirs(out, exist_ok=True)
    save_posts(posts, os.path.join(out, "posts.tsv"))
    save_field(bin_posts(posts, precision), os.path.join(out, "field.tsv"))
    save_partition(truth, os.path.join(out, "truth"))
    _write_config(
        out,
        "synth",
        {
            "rows": rows,
            "cols": cols,
            "regions": regions,
            "posts_per_cell": posts_per_cell,
            "precision": precision,
            "seed": seed,
        },
    )
    click.echo(f"wrote {len(posts)} posts over {rows * cols} cells to {out}")


@main.command()
@click.option("--posts", "posts_path", required=True, type=click.Path(), help="Labeled training posts.")
@click.option("--model-kind", type=click.Choice(["embedding", "linear"]), default="embedding", show_default=True)
@click.option("--dim", default=100, show_default=True)
@click.option("--epochs", default=20, show_default=True)
@click.option("--step", default=0.05, show_default=True)
@click.option("--min-freq", default=2, show_default=True)
@click.option("--folds", default=5, show_default=True, help="CV folds for the linear C grid search.")
@click.option("--seed", default=0, show_default=True)
@click.option("--score-posts", "score_path", type=click.Path(), default=None, help="Posts to score with the trained model.")
@click.option("--edge-fraction", default=None, type=float, help="Also write this fraction of edge cases from --score-posts.")
@click.option("--threshold", default=0.5, show_default=True)
@click.option("--top-k", default=25, show_default=True)
@click.option("--out", required=True, type=click.Path())
@handle_errors
def classify(posts_path, model_kind, dim, epochs, step, min_freq, folds, seed, score_path, edge_fraction, threshold, top_k, out):
    """Train a classifier on labeled posts and optionally score a corpus."""
    from . import classify as clf

    posts = load_posts(posts_path)
    labeled = [p for p in posts if p.label is not None]
    if not labeled:
        raise ValidationError(f"no labeled posts in {posts_path}")
    corpus = [(p.text, p.label) for p in labeled]
    if model_kind == "embedding":
        model = clf.train_embedding(corpus, dim=dim, epochs=epochs, step=step, seed=seed, min_freq=min_freq)
    else:
        model = clf.train_linear(corpus, folds=folds, seed=seed)

    os.makedirs(out, exist_ok=True)
    clf.save_model(model, os.path.join(out, "model.npz"))

    correct = sum(1 for t, lb in corpus if clf.classify(model, t, threshold) == lb)
    metrics = {
        "model": model.meta,
        "n_train": len(corpus),
        "vocab_size": model.vocab.size,
        "train_accuracy": correct / len(corpus),
    }
    atomic_write_text(os.path.join(out, "metrics.json"), json.dumps(metrics, sort_keys=True, indent=2) + "\n")

    feats = clf.top_features(model, top_k)
    atomic_write_text(
        os.path.join(out, "top_features.tsv"),
        "".join(f"{gram}\t{score!r}\n" for gram, score in feats),
    )

    if score_path is not None:
        to_score = load_posts(score_path)
        scores = []
        for p in to_score:
            prob = clf.predict(model, p.text)
            p.score = prob
            p.label = "positive" if prob >= threshold else "negative"
            scores.append((p.id, prob))
        save_posts(to_score, os.path.join(out, "scored_posts.tsv"))
        atomic_write_text(
            os.path.join(out, "scores.tsv"), "".join(f"{pid}\t{prob!r}\n" for pid, prob in scores)
        )
        if edge_fraction is not None:
            edge = clf.select_edge_cases(model, [p.text for p in to_score], edge_fraction)
            atomic_write_text(
                os.path.join(out, "edge_cases.tsv"),
                "".join(line.replace("\t", " ").replace("\n", " ") + "\n" for line in edge),
            )

    _write_config(
        out,
        "classify",
        {
            "posts": str(posts_path),
            "model_kind": model_kind,
            "dim": dim,
            "epochs": epochs,
            "step": step,
            "min_freq": min_freq,
            "folds": folds,
            "seed": seed,
            "score_posts": str(score_path) if score_path else None,
            "edge_fraction": edge_fraction,
            "threshold": threshold,
            "top_k": top_k,
        },
    )
    click.echo(f"trained {model_kind} model on {len(corpus)} posts (vocab {model.vocab.size})")


@main.command("grid")
@click.option("--posts", "posts_path", required=True, type=click.Path())
@click.option("--precision", default=3, show_default=True)
@click.option("--boundary", "boundary_path", type=click.Path(), default=None)
@click.option("--user-centric", is_flag=True, help="Also write a user-centric field and its Pearson r.")
@click.option("--ttest", is_flag=True, help="Also write adjacent-month Welch t-tests.")
@click.option("--out", required=True, type=click.Path())
@handle_errors
def grid_cmd(posts_path, precision, boundary_path, user_centric, ttest, out):
    """Bin labeled posts into a grid field (optionally boundary-filtered)."""
    posts = load_posts(posts_path)
    boundary = load_boundary(boundary_path) if boundary_path else None
    field = bin_posts(posts, precision, boundary)
    os.makedirs(out, exist_ok=True)
    save_field(field, os.path.join(out, "field.tsv"))
    summary = {"cells": field.g, "posts": sum(c.total for c in field.cells.values())}

    if user_centric:
        ufield = user_centric_field(posts, precision)
        save_field(ufield, os.path.join(out, "user_field.tsv"))
        try:
            summary["user_vs_post_pearson"] = pearson(field, ufield)
        except ValidationError:
            summary["user_vs_post_pearson"] = None  # undefined (constant series)
    if ttest:
        rows = []
        for res in monthly_ttest(posts, precision):
            rows.append(
                f"{res.month_a[0]}-{res.month_a[1]:02d}\t{res.month_b[0]}-{res.month_b[1]:02d}"
                f"\t{res.t!r}\t{res.p!r}\n"
            )
        atomic_write_text(os.path.join(out, "monthly_ttest.tsv"), "".join(rows))

    atomic_write_text(os.path.join(out, "summary.json"), json.dumps(summary, sort_keys=True, indent=2) + "\n")
    _write_config(
        out,
        "grid",
        {
            "posts": str(posts_path),
            "precision": precision,
            "boundary": str(boundary_path) if boundary_path else None,
            "user_centric": user_centric,
            "ttest": ttest,
        },
    )
    click.echo(f"binned {summary['posts']} posts into {field.g} cells at precision {precision}")


@main.command("partition")
@click.option("--field", "field_path", type=click.Path(), default=None)
@click.option("--posts", "posts_path", type=click.Path(), default=None)
@click.option("--boundary", "boundary_path", type=click.Path(), default=None)
@click.option("--precision", default=3, show_default=True, help="Binning precision when --posts is given.")
@click.option("--method", type=click.Choice(["constrained", "som", "polygon"]), default="constrained", show_default=True)
@click.option("--seed", default=0, show_default=True)
@som_options
@click.option("--out", required=True, type=click.Path())
@handle_errors
def partition_cmd(field_path, posts_path, boundary_path, precision, method, seed, tau, cycles, eta0, winner_rule, weight_space, out):
    """Partition occupied cells into clusters."""
    field = _load_field_or_posts(field_path, posts_path, precision, boundary_path)
    params = SomParams(
        tau=tau, t_max=cycles, eta0=eta0, seed=seed, winner_rule=winner_rule, weight_space=weight_space
    )
    if method == "constrained":
        part = run_constrained_som(field, params)
    elif method == "som":
        part = run_traditional_som(field, params)
    else:
        if boundary_path is None:
            raise ValidationError("--method polygon requires --boundary")
        part = polygon_partition(field, load_boundary(boundary_path))

    os.makedirs(out, exist_ok=True)
    save_partition(part, out)
    report = check_contiguity(part, tau)
    atomic_write_text(
        os.path.join(out, "contiguity.json"),
        json.dumps(
            {"ok": report.ok, "offending": list(report.offending), "tau": tau},
            sort_keys=True,
            indent=2,
        )
        + "\n",
    )
    _write_config(
        out,
        "partition",
        {
            "field": str(field_path) if field_path else None,
            "posts": str(posts_path) if posts_path else None,
            "boundary": str(boundary_path) if boundary_path else None,
            "precision": precision,
            "method": method,
            "seed": seed,
            "tau": tau,
            "cycles": cycles,
            "eta0": eta0,
            "winner_rule": winner_rule,
            "weight_space": weight_space,
        },
    )
    click.echo(f"{method}: {len(part.clusters)} clusters over {field.g} cells (contiguous: {report.ok})")


@main.command("evaluate")
@click.option("--field", "field_path", type=click.Path(), default=None)
@click.option("--posts", "posts_path", type=click.Path(), default=None)
@click.option("--boundary", "boundary_path", type=click.Path(), default=None)
@click.option("--precision", default=3, show_default=True)
@click.option("--holdout", type=click.Choice(["cells", "posts"]), default="cells", show_default=True)
@click.option("--fractions", default="0.10,0.25,0.50,0.75", show_default=True)
@click.option("--folds", default=10, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--metrics", default="mspe,robustness", show_default=True)
@som_options
@click.option("--out", required=True, type=click.Path())
@handle_errors
def evaluate_cmd(field_path, posts_path, boundary_path, precision, holdout, fractions, folds, seed, metrics, tau, cycles, eta0, winner_rule, weight_space, out):
    """Run holdout evaluation metrics against the constrained SOM."""
    from .evaluate import HoldoutPlan, grid_robustness, mspe

    field = _load_field_or_posts(field_path, posts_path, precision, boundary_path)
    try:
        fraction_values = tuple(float(x) for x in fractions.split(",") if x != "")
    except ValueError as exc:
        raise ValidationError(f"bad --fractions value {fractions!r}: {exc}") from exc
    params = SomParams(
        tau=tau, t_max=cycles, eta0=eta0, seed=seed, winner_rule=winner_rule, weight_space=weight_space
    )
    plan = HoldoutPlan(kind=holdout, fractions=fraction_values, k=folds, seed=seed)
    wanted = [m.strip() for m in metrics.split(",") if m.strip()]
    unknown = set(wanted) - {"mspe", "robustness"}
    if unknown:
        raise ValidationError(f"unknown metrics: {sorted(unknown)}")

    os.makedirs(out, exist_ok=True)
    summary: dict = {}
    for name in wanted:
        if name == "robustness" and holdout != "cells":
            raise ValidationError("robustness requires --holdout cells")
        reports = mspe(field, params, plan) if name == "mspe" else grid_robustness(field, params, plan)
        rows = []
        for fraction in fraction_values:
            rep = reports[fraction]
            for fold, value in enumerate(rep.values):
                rows.append(f"{rep.metric}\t{fraction!r}\t{fold}\t{value!r}\n")
        atomic_write_text(os.path.join(out, f"{name}.tsv"), "".join(rows))
        summary[name] = {
            repr(f): {"mean": reports[f].mean, "sd": reports[f].sd} for f in fraction_values
        }
    atomic_write_text(os.path.join(out, "summary.json"), json.dumps(summary, sort_keys=True, indent=2) + "\n")
    _write_config(
        out,
        "evaluate",
        {
            "field": str(field_path) if field_path else None,
            "posts": str(posts_path) if posts_path else None,
            "precision": precision,
            "holdout": holdout,
            "fractions": fractions,
            "folds": folds,
            "seed": seed,
            "metrics": metrics,
            "tau": tau,
            "cycles": cycles,
            "eta0": eta0,
            "winner_rule": winner_rule,
            "weight_space": weight_space,
        },
    )
    click.echo(f"evaluated {', '.join(wanted)} at fractions {fractions} over {folds} folds")


@main.command("exposure")
@click.option("--traces", "traces_path", type=click.Path(), default=None)
@click.option("--field", "field_path", required=True, type=click.Path())
@click.option("--partition-a", "part_a_dir", required=True, type=click.Path())
@click.option("--partition-b", "part_b_dir", required=True, type=click.Path())
@click.option("--coprev-posts-a", type=click.Path(), default=None)
@click.option("--coprev-posts-b", type=click.Path(), default=None)
@click.option("--out", required=True, type=click.Path())
@handle_errors
def exposure_cmd(traces_path, field_path, part_a_dir, part_b_dir, coprev_posts_a, coprev_posts_b, out):
    """Score mobility traces against two partitions (and/or co-prevalence)."""
    from .exposure import cohort_exposure, user_coprevalence

    if traces_path is None and not (coprev_posts_a and coprev_posts_b):
        raise ValidationError("provide --traces and/or both --coprev-posts-a/--coprev-posts-b")
    field = load_field(field_path)
    part_a = load_partition(part_a_dir)
    part_b = load_partition(part_b_dir)
    os.makedirs(out, exist_ok=True)
    summary: dict = {}

    if traces_path is not None:
        points = load_trace_points(traces_path)
        traces = bin_trace_points(points, field.d)
        report = cohort_exposure(traces, part_a, part_b, field)
        rows = [
            f"{p.person_id}\t{p.visits_counted}\t{p.visits_skipped}"
            f"\t{p.zero_denominator_cells}\t{p.exposure!r}\n"
            for p in report.persons
        ]
        atomic_write_text(os.path.join(out, "exposure.tsv"), "".join(rows))
        summary["exposure"] = {
            "n": report.n,
            "mean": report.mean,
            "sd": report.sd,
            "fraction_over_half": report.fraction_over_half,
            "invalid_traces": list(report.invalid_traces),
        }

    if coprev_posts_a and coprev_posts_b:
        cop = user_coprevalence(load_posts(coprev_posts_a), load_posts(coprev_posts_b))
        summary["coprevalence"] = {
            "p_a_given_b": cop.p_a_given_b,
            "p_b_given_a": cop.p_b_given_a,
            "users_a": cop.users_a,
            "users_b": cop.users_b,
            "users_both": cop.users_both,
        }

    atomic_write_text(os.path.join(out, "summary.json"), json.dumps(summary, sort_keys=True, indent=2) + "\n")
    _write_config(
        out,
        "exposure",
        {
            "traces": str(traces_path) if traces_path else None,
            "field": str(field_path),
            "partition_a": str(part_a_dir),
            "partition_b": str(part_b_dir),
            "coprev_posts_a": str(coprev_posts_a) if coprev_posts_a else None,
            "coprev_posts_b": str(coprev_posts_b) if coprev_posts_b else None,
        },
    )
    click.echo("exposure report written to " + out)


@main.command("export-geo")
@click.option("--partition", "part_dir", required=True, type=click.Path())
@click.option("--field", "field_path", required=True, type=click.Path())
@click.option("--out", required=True, type=click.Path())
@handle_errors
def export_geo(part_dir, field_path, out):
    """Export a partition as a GeoJSON FeatureCollection of cluster shapes."""
    part = load_partition(part_dir)
    field = load_field(field_path)
    part.check_exhaustive(field)
    export_geojson(part, field, out)
    doc = {
        "command": "export-geo",
        "version": __version__,
        "config": {"partition": str(part_dir), "field": str(field_path), "out": str(out)},
    }
    atomic_write_text(str(out) + ".run_config.json", json.dumps(doc, sort_keys=True, indent=2) + "\n")
    click.echo(f"wrote {out}")


if __name__ == "__main__":
    main()
