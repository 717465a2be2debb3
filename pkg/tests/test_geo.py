import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from crowdship.geo import (STORE, LocationError, build_travel_table, generate_locations, haversine_km,
                           load_locations_csv)


def test_default_universe_has_store_plus_988_points():
    locs = generate_locations(988, 6.0, 7)
    assert len(locs) == 989
    assert tuple(locs.coords[STORE]) == (0.0, 0.0)
    assert np.all(np.hypot(*locs.coords.T) <= 6.0 + 1e-12)


def test_single_point_lies_within_radius():
    locs = generate_locations(1, 6.0, 0)
    assert len(locs) == 2
    assert math.hypot(*locs.coords[1]) <= 6.0


def test_generation_is_deterministic():
    a = generate_locations(50, 3.0, 11)
    b = generate_locations(50, 3.0, 11)
    assert np.array_equal(a.coords, b.coords)
    assert not np.array_equal(a.coords, generate_locations(50, 3.0, 12).coords)


@pytest.mark.parametrize("count,radius", [(0, 6.0), (-3, 6.0), (5, 0.0), (5, -1.0)])
def test_generation_rejects_bad_arguments(count, radius):
    with pytest.raises(LocationError):
        generate_locations(count, radius, 0)


def test_three_four_five_triangle_at_30kmh():
    table = build_travel_table(np.array([[0.0, 0.0], [3.0, 4.0]]), 30.0)
    assert table.time(0, 1) == pytest.approx(10.0, abs=1e-12)
    assert table.time(1, 0) == table.time(0, 1)
    assert table.time(1, 1) == 0.0


@pytest.mark.parametrize("speed", [0.0, -5.0])
def test_non_positive_speed_rejected(speed):
    with pytest.raises(LocationError):
        build_travel_table(np.zeros((2, 2)), speed)


def test_unknown_location_raises():
    table = build_travel_table(np.zeros((2, 2)))
    with pytest.raises(IndexError):
        table.time(0, 2)


@given(st.integers(1, 30), st.floats(0.5, 20.0), st.integers(0, 10_000))
def test_metric_properties(count, radius, seed):
    table = build_travel_table(generate_locations(count, radius, seed), 30.0)
    m = table.minutes
    assert np.all(np.diag(m) == 0.0)
    assert np.all(m >= 0.0)
    assert np.array_equal(m, m.T)
    # triangle inequality over every (a, b, c)
    assert np.all(m[:, None, :] <= m[:, :, None] + m[None, :, :] + 1e-9)


def test_haversine_quarter_meridian():
    d = haversine_km(np.array([[0.0, 0.0], [90.0, 0.0]]))
    assert d[0, 1] == pytest.approx(math.pi / 2 * 6371.0088, rel=1e-12)


def test_csv_planar(tmp_path):
    p = tmp_path / "locs.csv"
    p.write_text("id,x_km,y_km\n0,0,0\n1,3,4\n2,0,1\n")
    locs = load_locations_csv(p)
    assert len(locs) == 3 and not locs.geographic
    assert build_travel_table(locs, 30.0).time(0, 1) == pytest.approx(10.0)


def test_csv_geographic(tmp_path):
    p = tmp_path / "locs.csv"
    p.write_text("id,lat,lon\n1,52.01,4.36\n0,52.0,4.35\n")
    locs = load_locations_csv(p)
    assert locs.geographic
    assert tuple(locs.coords[0]) == (52.0, 4.35)


def test_csv_missing_store(tmp_path):
    p = tmp_path / "locs.csv"
    p.write_text("id,x_km,y_km\n1,0,0\n2,1,1\n")
    with pytest.raises(LocationError, match=r"store location \(id 0\) absent"):
        load_locations_csv(p)


def test_csv_duplicate_names_id_and_line(tmp_path):
    p = tmp_path / "locs.csv"
    p.write_text("id,x_km,y_km\n0,0,0\n1,1,1\n1,2,2\n")
    with pytest.raises(LocationError, match=r"locs.csv:4: duplicate id 1"):
        load_locations_csv(p)


@pytest.mark.parametrize("body,line", [("0,0,0\n1,abc,2\n", 3), ("0,0,0\n1,2\n", 3)])
def test_csv_malformed_row_names_line(tmp_path, body, line):
    p = tmp_path / "locs.csv"
    p.write_text("id,x_km,y_km\n" + body)
    with pytest.raises(LocationError, match=rf"locs.csv:{line}:"):
        load_locations_csv(p)


def test_table_csv_dump(tmp_path):
    table = build_travel_table(np.array([[0.0, 0.0], [3.0, 4.0]]), 30.0)
    table.to_csv(tmp_path / "t.csv")
    lines = (tmp_path / "t.csv").read_text().splitlines()
    assert lines[0] == "from,to,minutes" and len(lines) == 5
    assert lines[2] == "0,1,10.000000"
