import json
import os

import pytest
from click.testing import CliRunner

from somregion.cli import build_region_layout, export_geojson, main
from somregion.errors import ValidationError
from somregion.grid import CellCounts, CellKey, GridField, load_field
from somregion.partition import ClusterStats, Partition, load_partition

runner = CliRunner()


def run_ok(args):
    result = runner.invoke(main, args, catch_exceptions=False)
    assert result.exit_code == 0, result.output
    return result


# --------------------------------------------------------------------------
# GeoJSON geometry

def geo_partition(assignments: dict[tuple[int, int], int], d=3):
    assignment = {CellKey(r, c, d): cid for (r, c), cid in assignments.items()}
    clusters = {}
    for key, cid in assignment.items():
        stats = clusters.setdefault(cid, ClusterStats(cells=0, total=0, positive=0))
        stats.cells += 1
        stats.total += 10
        stats.positive += 1
    for stats in clusters.values():
        stats.prevalence = stats.positive / stats.total
    field = GridField(
        d=d, cells={key: CellCounts(total=10, positive=1) for key in assignment}
    )
    return Partition(d=d, assignment=assignment, clusters=clusters, meta={}), field


def test_export_geojson_single_cell_square(tmp_path):
    part, field = geo_partition({(0, 0): 0})
    out = tmp_path / "map.geojson"
    export_geojson(part, field, out)
    doc = json.loads(out.read_text())
    assert doc["type"] == "FeatureCollection"
    (feature,) = doc["features"]
    assert feature["properties"] == {"cells": 1, "cluster_id": 0, "prevalence": 0.1}
    assert feature["geometry"]["type"] == "Polygon"
    (ring,) = feature["geometry"]["coordinates"]
    lons = sorted({pt[0] for pt in ring})
    lats = sorted({pt[1] for pt in ring})
    assert lons == [-0.0005, 0.0005]
    assert lats == [-0.0005, 0.0005]
    assert ring[0] == ring[-1]
    assert len(ring) == 5


def test_export_geojson_diagonal_cells_multipolygon(tmp_path):
    part, field = geo_partition({(0, 0): 0, (1, 1): 0})
    out = tmp_path / "map.geojson"
    export_geojson(part, field, out)
    (feature,) = json.loads(out.read_text())["features"]
    assert feature["geometry"]["type"] == "MultiPolygon"
    assert len(feature["geometry"]["coordinates"]) == 2
    for poly in feature["geometry"]["coordinates"]:
        assert len(poly) == 1  # no holes
        assert len(poly[0]) == 5


def test_export_geojson_edge_adjacent_cells_single_polygon(tmp_path):
    part, field = geo_partition({(0, 0): 0, (0, 1): 0, (0, 2): 0})
    out = tmp_path / "map.geojson"
    export_geojson(part, field, out)
    (feature,) = json.loads(out.read_text())["features"]
    assert feature["geometry"]["type"] == "Polygon"
    (ring,) = feature["geometry"]["coordinates"]
    lons = {pt[0] for pt in ring}
    assert max(lons) - min(lons) == pytest.approx(0.003, abs=1e-12)


def test_export_geojson_ring_cluster_has_hole(tmp_path):
    ring_cells = {(r, c): 0 for r in range(3) for c in range(3) if (r, c) != (1, 1)}
    ring_cells[(1, 1)] = 1
    part, field = geo_partition(ring_cells)
    out = tmp_path / "map.geojson"
    export_geojson(part, field, out)
    doc = json.loads(out.read_text())
    outer = doc["features"][0]["geometry"]
    assert outer["type"] == "Polygon"
    assert len(outer["coordinates"]) == 2  # exterior + hole
    hole_feature = doc["features"][1]["geometry"]
    assert hole_feature["type"] == "Polygon"


def test_export_geojson_deterministic_bytes(tmp_path):
    part, field = geo_partition({(0, 0): 0, (1, 1): 0, (0, 1): 1})
    a, b = tmp_path / "a.geojson", tmp_path / "b.geojson"
    export_geojson(part, field, a)
    export_geojson(part, field, b)
    assert a.read_bytes() == b.read_bytes()


def test_export_geojson_loadable_as_boundary(tmp_path):
    from somregion.ingest import load_boundary, point_in_boundary

    part, field = geo_partition({(0, 0): 0, (0, 1): 0, (5, 5): 1})
    out = tmp_path / "map.geojson"
    export_geojson(part, field, out)
    boundary = load_boundary(out)
    assert len(boundary.polygons) == 2
    assert point_in_boundary(0.0, 0.0005, boundary)
    assert point_in_boundary(0.005, 0.005, boundary)
    assert not point_in_boundary(0.002, 0.002, boundary)


def test_export_geojson_features_sorted_by_cluster_id(tmp_path):
    part, field = geo_partition({(0, 0): 2, (0, 1): 0, (0, 2): 1})
    out = tmp_path / "m.geojson"
    export_geojson(part, field, out)
    ids = [f["properties"]["cluster_id"] for f in json.loads(out.read_text())["features"]]
    assert ids == [0, 1, 2]


# --------------------------------------------------------------------------
# region layouts

def test_build_region_layout_quad():
    layout = build_region_layout(4, 6, "quad:0.1,0.2,0.3,0.4")
    assert len(layout) == 4
    assert sum(len(cells) for cells, _p in layout) == 24
    south_west = dict(layout)[frozenset((r, c) for r in range(2) for c in range(3))]
    assert south_west == 0.1


def test_build_region_layout_bands():
    layout = build_region_layout(6, 4, "bands:0.1,0.9")
    assert len(layout) == 2
    assert all(len(cells) == 12 for cells, _p in layout)


def test_build_region_layout_rejects_garbage():
    with pytest.raises(ValidationError):
        build_region_layout(4, 4, "hexes:0.1")
    with pytest.raises(ValidationError):
        build_region_layout(4, 4, "quad:0.1,0.2")


# --------------------------------------------------------------------------
# end-to-end pipeline

def test_synth_partition_evaluate_pipeline(tmp_path):
    synth_dir = tmp_path / "synth"
    run_ok(
        [
            "synth", "--rows", "12", "--cols", "12", "--regions", "bands:0.1,0.5",
            "--posts-per-cell", "20", "--seed", "5", "--out", str(synth_dir),
        ]
    )
    for name in ("posts.tsv", "field.tsv", "run_config.json"):
        assert (synth_dir / name).exists()
    assert (synth_dir / "truth" / "partition.tsv").exists()

    part_dir = tmp_path / "part"
    run_ok(
        [
            "partition", "--field", str(synth_dir / "field.tsv"),
            "--cycles", "15", "--seed", "5", "--out", str(part_dir),
        ]
    )
    contig = json.loads((part_dir / "contiguity.json").read_text())
    assert contig["ok"] is True

    eval_dir = tmp_path / "eval"
    run_ok(
        [
            "evaluate", "--field", str(synth_dir / "field.tsv"),
            "--holdout", "cells", "--fractions", "0.25", "--folds", "2",
            "--cycles", "10", "--seed", "5", "--out", str(eval_dir),
        ]
    )
    assert (eval_dir / "mspe.tsv").exists()
    assert (eval_dir / "robustness.tsv").exists()
    rows = (eval_dir / "robustness.tsv").read_text().strip().split("\n")
    assert len(rows) == 2  # one per fold
    assert all(r.split("\t")[0] == "grid_robustness" for r in rows)

    geo = tmp_path / "map.geojson"
    run_ok(["export-geo", "--partition", str(part_dir), "--field", str(synth_dir / "field.tsv"), "--out", str(geo)])
    assert geo.exists()
    assert (tmp_path / "map.geojson.run_config.json").exists()


def test_missing_input_exit_code_and_message(tmp_path):
    result = runner.invoke(main, ["partition", "--field", "/no/such/field.tsv", "--out", str(tmp_path / "o")])
    assert result.exit_code == 3
    assert "/no/such/field.tsv" in result.output


def test_conflicting_inputs_exit_code(tmp_path):
    result = runner.invoke(main, ["partition", "--out", str(tmp_path / "o")])
    assert result.exit_code == 5


def test_unknown_flag_usage_error():
    result = runner.invoke(main, ["partition", "--frobnicate"])
    assert result.exit_code == 2


def test_pipeline_reruns_byte_identical(tmp_path):
    args = [
        "synth", "--rows", "8", "--cols", "8", "--regions", "bands:0.2,0.6",
        "--posts-per-cell", "10", "--seed", "9",
    ]
    run_ok(args + ["--out", str(tmp_path / "a")])
    run_ok(args + ["--out", str(tmp_path / "b")])
    for name in ("posts.tsv", "field.tsv", "truth/partition.tsv", "truth/clusters.tsv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()

    for sub in ("pa", "pb"):
        run_ok(
            [
                "partition", "--field", str(tmp_path / "a" / "field.tsv"),
                "--cycles", "10", "--seed", "3", "--out", str(tmp_path / sub),
            ]
        )
    for name in ("partition.tsv", "clusters.tsv", "meta.json", "run_config.json"):
        assert (tmp_path / "pa" / name).read_bytes() == (tmp_path / "pb" / name).read_bytes()


def test_classify_cli_trains_and_scores(tmp_path):
    posts = tmp_path / "posts.tsv"
    rows = []
    for i in range(30):
        rows.append(f"p{i}\tu{i}\t0.0\t0.0\t2017-03-01T00:00:00Z\tpositive\tzork zork sighted\n")
        rows.append(f"n{i}\tu{i}x\t0.0\t0.0\t2017-03-01T00:00:00Z\tnegative\tblee blee noted\n")
    posts.write_text("".join(rows), encoding="utf-8")

    out = tmp_path / "clf"
    run_ok(
        [
            "classify", "--posts", str(posts), "--dim", "10", "--epochs", "10",
            "--seed", "1", "--score-posts", str(posts), "--edge-fraction", "0.1",
            "--out", str(out),
        ]
    )
    metrics = json.loads((out / "metrics.json").read_text())
    assert metrics["train_accuracy"] >= 0.99
    assert (out / "model.npz").exists()
    assert (out / "scored_posts.tsv").exists()
    scores = (out / "scores.tsv").read_text().strip().split("\n")
    assert len(scores) == 60
    edges = (out / "edge_cases.tsv").read_text().strip().split("\n")
    assert len(edges) == 6


def test_grid_cli_with_user_centric_and_ttest(tmp_path):
    posts = tmp_path / "posts.tsv"
    rows = []
    for month in (3, 4):
        for c in range(4):
            for i in range(5):
                label = "positive" if i < 1 + c % 3 else "negative"
                rows.append(
                    f"m{month}c{c}i{i}\tu{c}_{i}\t0.0\t{c / 1000}\t2017-0{month}-10T00:00:00Z\t{label}\tt\n"
                )
    posts.write_text("".join(rows), encoding="utf-8")
    out = tmp_path / "grid"
    run_ok(["grid", "--posts", str(posts), "--precision", "3", "--user-centric", "--ttest", "--out", str(out)])
    field = load_field(out / "field.tsv")
    assert field.g == 4
    assert (out / "user_field.tsv").exists()
    assert (out / "monthly_ttest.tsv").exists()
    summary = json.loads((out / "summary.json").read_text())
    assert summary["posts"] == 40
    assert summary["user_vs_post_pearson"] == pytest.approx(1.0)


def test_exposure_cli_end_to_end(tmp_path):
    synth_dir = tmp_path / "synth"
    run_ok(
        [
            "synth", "--rows", "10", "--cols", "10", "--regions", "bands:0.1,0.5",
            "--posts-per-cell", "20", "--seed", "2", "--out", str(synth_dir),
        ]
    )
    part_dir = tmp_path / "part"
    run_ok(
        ["partition", "--field", str(synth_dir / "field.tsv"), "--cycles", "15", "--seed", "2", "--out", str(part_dir)]
    )
    traces = tmp_path / "traces.tsv"
    lines = []
    for person in ("alice", "bob"):
        for i in range(10):
            lines.append(f"{person}\t{(i % 10) / 1000}\t{(i % 7) / 1000}\t2017-03-01T00:00:0{i % 10}Z\n")
    traces.write_text("".join(lines), encoding="utf-8")

    out = tmp_path / "exp"
    run_ok(
        [
            "exposure", "--traces", str(traces), "--field", str(synth_dir / "field.tsv"),
            "--partition-a", str(part_dir), "--partition-b", str(synth_dir / "truth"),
            "--coprev-posts-a", str(synth_dir / "posts.tsv"),
            "--coprev-posts-b", str(synth_dir / "posts.tsv"),
            "--out", str(out),
        ]
    )
    summary = json.loads((out / "summary.json").read_text())
    assert summary["exposure"]["n"] == 2
    assert summary["coprevalence"]["p_a_given_b"] == 1.0
    rows = (out / "exposure.tsv").read_text().strip().split("\n")
    assert len(rows) == 2


def test_partition_from_posts_with_boundary(tmp_path):
    synth_dir = tmp_path / "synth"
    run_ok(
        [
            "synth", "--rows", "6", "--cols", "6", "--regions", "bands:0.3",
            "--posts-per-cell", "10", "--seed", "1", "--out", str(synth_dir),
        ]
    )
    boundary = tmp_path / "boundary.geojson"
    boundary.write_text(
        json.dumps(
            {
                "type": "FeatureCollection",
                "features": [
                    {
                        "type": "Feature",
                        "properties": {"name": "west"},
                        "geometry": {
                            "type": "Polygon",
                            "coordinates": [
                                [[-0.001, -0.001], [0.0025, -0.001], [0.0025, 0.006], [-0.001, 0.006], [-0.001, -0.001]]
                            ],
                        },
                    }
                ],
            }
        ),
        encoding="utf-8",
    )
    out = tmp_path / "part"
    run_ok(
        [
            "partition", "--posts", str(synth_dir / "posts.tsv"), "--boundary", str(boundary),
            "--precision", "3", "--cycles", "10", "--seed", "1", "--out", str(out),
        ]
    )
    part = load_partition(out)
    # only the west half of the 6-column grid survives the boundary filter
    assert all(key.lon_q <= 2 for key in part.assignment)


def test_polygon_method_requires_boundary(tmp_path):
    synth_dir = tmp_path / "synth"
    run_ok(
        [
            "synth", "--rows", "4", "--cols", "4", "--regions", "bands:0.3",
            "--posts-per-cell", "5", "--seed", "1", "--out", str(synth_dir),
        ]
    )
    result = runner.invoke(
        main,
        ["partition", "--field", str(synth_dir / "field.tsv"), "--method", "polygon", "--out", str(tmp_path / "o")],
    )
    assert result.exit_code == 5
