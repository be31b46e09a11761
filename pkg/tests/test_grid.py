from datetime import datetime, timezone

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from somregion.errors import ValidationError
from somregion.grid import (
    CellCounts,
    CellKey,
    GridField,
    bin_posts,
    cell_key,
    load_field,
    monthly_ttest,
    pearson,
    round_half_away,
    save_field,
    user_centric_field,
)
from somregion.ingest import BoundarySet, GeoPost, Polygon

TS = datetime(2017, 3, 1, tzinfo=timezone.utc)


def post(pid, lat, lon, label="negative", user_id=None, ts=TS, text="x"):
    return GeoPost(id=pid, lat=lat, lon=lon, timestamp=ts, text=text, user_id=user_id, label=label)


# --------------------------------------------------------------------------
# cell_key

def _string_round(value: float, d: int) -> int:
    """Independent oracle: round the decimal string by hand."""
    s = repr(float(value))
    neg = s.startswith("-")
    if neg:
        s = s[1:]
    if "e" in s or "E" in s:  # no scientific notation expected in test inputs
        raise AssertionError(f"oracle cannot handle {s}")
    whole, _, frac = s.partition(".")
    frac = frac + "0" * d
    digits = whole + frac[:d]
    scaled = int(digits)
    rest = frac[d:]
    if rest and rest[0] >= "5":
        scaled += 1
    return -scaled if neg else scaled


def test_cell_key_rounding_example_precision_1():
    key = cell_key(40.83470082, -73.92287411, 1)
    assert (key.lat_q, key.lon_q) == (408, -739)
    assert key.center() == (40.8, -73.9)


def test_cell_key_precision_3_matches_string_oracle():
    key = cell_key(40.83470082, -73.92287411, 3)
    assert key.lat_q == _string_round(40.83470082, 3) == 40835
    assert key.lon_q == _string_round(-73.92287411, 3) == -73923
    assert key.center() == (40.835, -73.923)


def test_cell_key_zero():
    for d in range(1, 8):
        assert cell_key(0.0, 0.0, d) == CellKey(0, 0, d)


def test_cell_key_half_away_from_zero_not_bankers():
    assert cell_key(0.15, -0.15, 1) == CellKey(2, -2, 1)
    assert cell_key(0.25, 0.35, 1) == CellKey(3, 4, 1)
    assert cell_key(40.05, -40.05, 1) == CellKey(401, -401, 1)


def test_cell_key_matches_string_oracle_on_awkward_floats():
    values = [0.15, -0.15, 0.05, 1.005, 2.675, -2.675, 40.83470082, -73.92287411, 0.49999999]
    for v in values:
        for d in (1, 2, 3):
            assert cell_key(v, 0.0, d).lat_q == _string_round(v, d), (v, d)


def test_cell_key_rejects_bad_precision():
    with pytest.raises(ValidationError):
        cell_key(0.0, 0.0, 0)
    with pytest.raises(ValidationError):
        cell_key(0.0, 0.0, 8)


coords = st.floats(min_value=-89.9, max_value=89.9, allow_nan=False, allow_infinity=False)


@given(lat=coords, lon=coords, d=st.integers(min_value=1, max_value=6))
@settings(max_examples=200)
def test_cell_key_idempotent_under_requantization(lat, lon, d):
    key = cell_key(lat, lon, d)
    lat_c, lon_c = key.center()
    assert cell_key(lat_c, lon_c, d) == key


@given(lat=coords, lon=coords, d=st.integers(min_value=1, max_value=6))
@settings(max_examples=200)
def test_cell_center_within_half_cell_of_member_point(lat, lon, d):
    key = cell_key(lat, lon, d)
    lat_c, lon_c = key.center()
    half = 0.5 * 10**-d
    assert abs(lat_c - lat) <= half * (1 + 1e-9)
    assert abs(lon_c - lon) <= half * (1 + 1e-9)


@given(a=coords, b=coords, d=st.integers(min_value=1, max_value=5))
@settings(max_examples=200)
def test_refining_distinct_keys_keeps_them_distinct(a, b, d):
    ka = cell_key(a, 0.0, d)
    kb = cell_key(b, 0.0, d)
    if ka == kb:
        return
    fa = cell_key(*ka.center(), d + 1)
    fb = cell_key(*kb.center(), d + 1)
    assert fa != fb


def test_round_half_away():
    assert round_half_away(1.5) == 2
    assert round_half_away(-1.5) == -2
    assert round_half_away(2.5) == 3
    assert round_half_away(0.4999) == 0


# --------------------------------------------------------------------------
# binning

def test_bin_posts_counts_single_cell():
    posts = [post(f"p{i}", 0.0001 * 0, 0.0, label="positive" if i < 3 else "negative") for i in range(10)]
    field = bin_posts(posts, 3)
    assert field.g == 1
    key = next(iter(field.cells))
    assert field.cells[key].total == 10
    assert field.cells[key].positive == 3
    assert field.proportion(key) == pytest.approx(0.3)


def test_bin_posts_rejects_unlabeled():
    posts = [post("a", 0.0, 0.0), post("b", 0.0, 0.0, label=None)]
    with pytest.raises(ValidationError, match="b"):
        bin_posts(posts, 3)


def test_bin_posts_boundary_drops_outside_cell():
    ring = ((-0.5, -0.5), (0.5, -0.5), (0.5, 0.5), (-0.5, 0.5), (-0.5, -0.5))
    boundary = BoundarySet(polygons=(Polygon(name="box", rings=(ring,)),))
    posts = [post("in", 0.0, 0.0), post("out", 5.0, 5.0)]
    field = bin_posts(posts, 1, boundary)
    assert field.g == 1
    assert next(iter(field.cells)) == CellKey(0, 0, 1)


def test_bin_posts_total_equals_in_boundary_posts():
    rng = np.random.default_rng(0)
    posts = [
        post(f"p{i}", float(rng.uniform(-0.05, 0.05)), float(rng.uniform(-0.05, 0.05)))
        for i in range(200)
    ]
    field = bin_posts(posts, 2)
    assert sum(c.total for c in field.cells.values()) == 200


def test_bounding_box_precision_1_has_35_possible_cells():
    # lat in [40.496044, 40.915256], lon in [-74.255735, -73.700272]
    lat_lo, lat_hi = 40.496044, 40.915256
    lon_lo, lon_hi = -74.255735, -73.700272

    # independent oracle: quantize a dense sweep of the box
    reachable = set()
    for lat in np.linspace(lat_lo, lat_hi, 701):
        reachable.add(cell_key(float(lat), lon_lo, 1).lat_q)
    lat_keys = sorted(reachable)
    reachable = set()
    for lon in np.linspace(lon_lo, lon_hi, 701):
        reachable.add(cell_key(lat_lo, float(lon), 1).lon_q)
    lon_keys = sorted(reachable)
    assert len(lat_keys) * len(lon_keys) == 35

    # one post per reachable cell, clamped inside the box
    posts = []
    for lat_q in lat_keys:
        for lon_q in lon_keys:
            lat = min(max(lat_q / 10.0, lat_lo + 1e-9), lat_hi - 1e-9)
            lon = min(max(lon_q / 10.0, lon_lo + 1e-9), lon_hi - 1e-9)
            posts.append(post(f"p{lat_q}_{lon_q}", lat, lon))
    field = bin_posts(posts, 1)
    assert field.g == 35


# --------------------------------------------------------------------------
# user-centric fields

def test_user_centric_loud_user():
    posts = [post(f"p{i}", 0.0, 0.0, label="positive", user_id="u1") for i in range(100)]
    field = user_centric_field(posts, 3)
    key = next(iter(field.cells))
    assert field.cells[key].users_total == 1
    assert field.cells[key].users_positive == 1
    assert field.proportion(key) == 1.0


def test_user_centric_two_users_balanced():
    posts = [post(f"a{i}", 0.0, 0.0, label="positive", user_id="u1") for i in range(30)]
    posts += [post(f"b{i}", 0.0, 0.0, label="negative", user_id="u2") for i in range(3)]
    field = user_centric_field(posts, 3)
    key = next(iter(field.cells))
    assert field.proportion(key) == 0.5


def test_user_centric_equals_post_centric_when_all_users_distinct():
    rng = np.random.default_rng(1)
    posts = [
        post(
            f"p{i}",
            float(rng.uniform(0, 0.03)),
            float(rng.uniform(0, 0.03)),
            label="positive" if rng.random() < 0.4 else "negative",
            user_id=f"u{i}",
        )
        for i in range(300)
    ]
    ufield = user_centric_field(posts, 2)
    pfield = bin_posts(posts, 2)
    for key in pfield.cells:
        assert ufield.proportion(key) == pfield.proportion(key)


def test_user_centric_requires_user_ids():
    with pytest.raises(ValidationError):
        user_centric_field([post("p", 0.0, 0.0)], 3)


# --------------------------------------------------------------------------
# pearson

def _field_from_props(props: dict[tuple[int, int], tuple[int, int]], d=3) -> GridField:
    return GridField(
        d=d,
        cells={CellKey(r, c, d): CellCounts(total=t, positive=p) for (r, c), (t, p) in props.items()},
    )


def test_pearson_identity():
    field = _field_from_props({(0, 0): (10, 1), (0, 1): (10, 5), (1, 0): (10, 9)})
    assert pearson(field, field) == 1.0


def test_pearson_reversed():
    a = _field_from_props({(0, 0): (4, 1), (0, 1): (4, 2), (1, 0): (4, 3)})
    b = _field_from_props({(0, 0): (4, 3), (0, 1): (4, 2), (1, 0): (4, 1)})
    assert pearson(a, b) == pytest.approx(-1.0, abs=1e-12)


def test_pearson_hand_example_three_cells():
    a = _field_from_props({(0, 0): (10, 1), (0, 1): (10, 2), (1, 0): (10, 3)})
    b = _field_from_props({(0, 0): (10, 2), (0, 1): (10, 4), (1, 0): (10, 6)})
    assert pearson(a, b) == pytest.approx(1.0, abs=1e-12)


def test_pearson_requires_common_cells_and_variation():
    a = _field_from_props({(0, 0): (10, 1)})
    with pytest.raises(ValidationError):
        pearson(a, a)
    const = _field_from_props({(0, 0): (10, 5), (0, 1): (10, 5)})
    varying = _field_from_props({(0, 0): (10, 1), (0, 1): (10, 9)})
    with pytest.raises(ValidationError):
        pearson(const, varying)


# --------------------------------------------------------------------------
# monthly t-test

def month_posts(year, month, cell_props, prefix):
    ts = datetime(year, month, 15, tzinfo=timezone.utc)
    posts = []
    for (r, c), (total, positive) in cell_props.items():
        for i in range(total):
            posts.append(
                post(
                    f"{prefix}_{r}_{c}_{i}",
                    r / 1000.0,
                    c / 1000.0,
                    label="positive" if i < positive else "negative",
                    ts=ts,
                )
            )
    return posts


def test_monthly_ttest_identical_months():
    props = {(0, 0): (10, 2), (0, 1): (10, 5), (1, 1): (10, 8)}
    posts = month_posts(2017, 3, props, "a") + month_posts(2017, 4, props, "b")
    results = monthly_ttest(posts, 3)
    assert len(results) == 1
    assert results[0].t == 0.0
    assert results[0].p == 1.0


def test_monthly_ttest_disjoint_constant_months():
    props_zero = {(r, c): (10, 0) for r in range(3) for c in range(3)}
    props_one = {(r, c): (10, 10) for r in range(3) for c in range(3)}
    posts = month_posts(2017, 5, props_zero, "a") + month_posts(2017, 6, props_one, "b")
    results = monthly_ttest(posts, 3)
    assert len(results) == 1
    assert results[0].p < 0.01


def test_monthly_ttest_single_month_empty():
    posts = month_posts(2017, 3, {(0, 0): (5, 1), (1, 1): (5, 2)}, "a")
    assert monthly_ttest(posts, 3) == []


def test_monthly_ttest_skips_sparse_month_with_warning():
    posts = month_posts(2017, 3, {(0, 0): (5, 1)}, "a")
    posts += month_posts(2017, 4, {(0, 0): (5, 1), (1, 1): (5, 2)}, "b")
    with pytest.warns(UserWarning, match="fewer than 2"):
        assert monthly_ttest(posts, 3) == []


def test_monthly_ttest_welch_matches_scipy_on_generic_data():
    from scipy.stats import ttest_ind

    props_a = {(0, c): (20, 2 + c) for c in range(6)}
    props_b = {(0, c): (20, 9 + (c % 3)) for c in range(6)}
    posts = month_posts(2017, 7, props_a, "a") + month_posts(2017, 8, props_b, "b")
    (result,) = monthly_ttest(posts, 3)
    xs = [(2 + c) / 20 for c in range(6)]
    ys = [(9 + (c % 3)) / 20 for c in range(6)]
    expected = ttest_ind(xs, ys, equal_var=False)
    assert result.t == pytest.approx(expected.statistic, rel=1e-12)
    assert result.p == pytest.approx(expected.pvalue, rel=1e-9)


# --------------------------------------------------------------------------
# field export

def test_field_round_trip(tmp_path):
    field = _field_from_props({(0, 0): (10, 1), (5, -3): (7, 7), (-2, 4): (3, 0)})
    path = tmp_path / "field.tsv"
    save_field(field, path)
    loaded = load_field(path)
    assert loaded.d == field.d
    assert loaded.cells.keys() == field.cells.keys()
    for key in field.cells:
        assert (loaded.cells[key].total, loaded.cells[key].positive) == (
            field.cells[key].total,
            field.cells[key].positive,
        )


def test_field_export_bytes_deterministic(tmp_path):
    field = _field_from_props({(1, 2): (9, 3), (0, 0): (4, 1)})
    p1, p2 = tmp_path / "a.tsv", tmp_path / "b.tsv"
    save_field(field, p1)
    save_field(field, p2)
    assert p1.read_bytes() == p2.read_bytes()
