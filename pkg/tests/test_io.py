import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dropsoak import io as dio
from dropsoak.config import table_config


@settings(max_examples=500)
@given(st.floats(allow_nan=False, allow_infinity=False))
def test_float_format_round_trips(x):
    text = dio.fmt(x)
    assert float(text) == x
    assert "e" in text or text in ("inf", "-inf")


def test_format_special_values():
    assert dio.fmt(3) == "3"
    assert dio.fmt(np.int64(7)) == "7"
    assert dio.fmt(math.nan) == "nan"
    assert dio.fmt(1.5) == "1.5000000000000000e+00"


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 6), st.integers(1, 6), st.integers(0, 2**32))
def test_grid_round_trip(tmp_path_factory, nx, ny, seed):
    rng = np.random.default_rng(seed)
    grid = rng.normal(size=(nx, ny)) * 10.0 ** rng.integers(-20, 5)
    outside = rng.random((nx, ny)) < 0.2
    path = tmp_path_factory.mktemp("g") / "grid.csv"
    dio.write_grid_csv(path, 3600.0, (-0.1, 0.1, -0.1, 0.1), grid, "in_agar, z-integrated",
                       outside)
    meta, back = dio.read_grid_csv(path)
    assert meta["nx"] == nx and meta["ny"] == ny and meta["time_s"] == 3600.0
    assert meta["quantity"] == "in_agar, z-integrated"
    assert np.array_equal(back[~outside], grid[~outside])
    assert np.all(np.isnan(back[outside]))


def test_grid_header_required(tmp_path):
    p = tmp_path / "g.csv"
    p.write_text("1,2\n3,4\n")
    with pytest.raises(dio.FormatError):
        dio.read_grid_csv(p)


def test_profile_round_trip(tmp_path):
    edges = np.linspace(0, 0.02, 9)
    amount = np.arange(8) * 1.1e-9
    dio.write_profile_csv(tmp_path / "p.csv", 60.0, edges, amount, 2e-9, 5e-8, 1e-12)
    meta, e, a = dio.read_profile_csv(tmp_path / "p.csv")
    assert np.array_equal(e, edges) and np.array_equal(a, amount)
    assert meta == {"time_s": 60.0, "consumed_mol": 2e-9, "released_mol": 5e-8,
                    "particle_weight_mol": 1e-12}


def test_table_round_trip(tmp_path):
    dio.write_table_csv(tmp_path / "t.csv", ["time_s", "n"], [(0.0, 0), (10.0, 5)])
    header, rows = dio.read_table_csv(tmp_path / "t.csv")
    assert header == ["time_s", "n"]
    assert rows == [["0.0000000000000000e+00", "0"], ["1.0000000000000000e+01", "5"]]


# ---- config files


def test_config_file_round_trip(tmp_path):
    cfg = table_config(0.01, kb0=3e-9).with_overrides(
        rng_seed=2**63 + 5, snapshot_times_s=(0.0, 100.0), histogram_bins=(32, 16),
        **{"droplet.center": (0.001, -0.002), "growth.max_consumption_rate_m_s": math.inf})
    dio.dump_config(cfg, tmp_path / "c.yaml")
    assert dio.load_config(tmp_path / "c.yaml") == cfg


def test_config_auto_cap_round_trip(tmp_path):
    cfg = table_config(0.1, kb0=1e-8)
    dio.dump_config(cfg, tmp_path / "c.yaml")
    assert dio.load_config(tmp_path / "c.yaml") == cfg


def test_concentration_units(tmp_path):
    assert dio.parse_concentration("0.1 M") == pytest.approx(100.0)
    assert dio.parse_concentration("5 mol/m3") == 5.0
    for bad in (0.1, "0.1", "0.1 ppm", "x M", "-1 M"):
        with pytest.raises(dio.FormatError):
            dio.parse_concentration(bad)


def test_config_overrides_and_errors(tmp_path):
    p = tmp_path / "c.yaml"
    p.write_text("droplet_concentration: 0.001 M\nsoaking_rate_m_s: 5.5e-9\n"
                 "initial_consumption_rate_m_s: 1.0e-9\ntime_step_s: 20\n")
    cfg = dio.load_config(p, {"time_step_s": 5.0, "rng_seed": None})
    assert cfg.species.droplet_concentration_mol_m3 == pytest.approx(1.0)
    assert cfg.time_step_s == 5.0 and cfg.rng_seed == 0
    p.write_text("initial_consumption_rate_m_s: 0\nplate_radius: 0.1\n")
    with pytest.raises(dio.FormatError, match="unknown config keys"):
        dio.load_config(p)
    p.write_text("plate_radius_m: 0.1\n")
    with pytest.raises(dio.FormatError, match="kb0"):
        dio.load_config(p)
    p.write_text("initial_consumption_rate_m_s: fast\n")
    with pytest.raises(dio.FormatError, match="expected a number"):
        dio.load_config(p)
    p.write_text("[1, 2]\n")
    with pytest.raises(dio.FormatError):
        dio.load_config(p)


# ---- area series


def test_area_series_reading(tmp_path):
    p = tmp_path / "s.csv"
    p.write_text("# concentration: 0.01 M\ntime_s,area_m2\n0,3e-4\n1200,2.5e-4\n\n2400,2e-4\n")
    t, v, is_radius, tag = dio.read_area_series(p)
    assert list(t) == [0, 1200, 2400] and not is_radius and tag == "0.01 M"
    p.write_text("time_s,radius_m\n0,0.01\n100,0.009\n")
    t, v, is_radius, tag = dio.read_area_series(p)
    assert is_radius and tag == "s"
    with pytest.raises(dio.FormatError):
        dio.read_area_series(p, radius=False)


@pytest.mark.parametrize("body,row", [
    ("time_s,area_m2\n0,3e-4\n1200,2e-4\n600,1e-4\n", 4),
    ("time_s,area_m2\n0,3e-4\n1200,abc\n", 3),
    ("time_s,area_m2\n0,3e-4\n1200,-1\n", 3),
    ("time_s,area\n0,3e-4\n", 1),
    ("time_s,area_m2\n0,3e-4\n1200\n", 3),
])
def test_area_series_errors_name_the_row(tmp_path, body, row):
    p = tmp_path / "bad.csv"
    p.write_text(body)
    with pytest.raises(dio.FormatError) as info:
        dio.read_area_series(p)
    assert info.value.row == row
    assert f"row {row}" in str(info.value)


def test_area_series_write_read(tmp_path):
    dio.write_area_series(tmp_path / "a.csv", [0, 10], [1e-4, 9e-5], tag="0.1 M")
    t, v, _, tag = dio.read_area_series(tmp_path / "a.csv")
    assert list(v) == [1e-4, 9e-5] and tag == "0.1 M"


# ---- manifests


def test_manifest_checksums(tmp_path):
    (tmp_path / "a.csv").write_text("x\n")
    m = dio.write_manifest(tmp_path, "simulate", table_config(kb0=0), ["a.csv"], extra=1)
    assert dio.read_manifest(tmp_path)["outputs"] == m["outputs"]
    assert dio.verify_manifest(tmp_path) == []
    (tmp_path / "a.csv").write_text("y\n")
    assert dio.verify_manifest(tmp_path) == ["a.csv"]
    (tmp_path / "manifest.json").write_text("{")
    with pytest.raises(dio.FormatError):
        dio.read_manifest(tmp_path)


def test_error_record(tmp_path):
    rec = dio.write_error_record(tmp_path / "out", 2, "config_validation", "bad", row=3)
    assert json.loads((tmp_path / "out" / "error.json").read_text()) == rec
    assert rec["exit_code"] == 2 and rec["row"] == 3
