"""Delimited output, JSON reports, and manifest sidecars."""

import json
import math
from types import SimpleNamespace

import numpy as np
import pytest

from binsde.binned import estimate, make_grid
from binsde.errors import IOFormatError
from binsde.experiments import make_cell, run_mse
from binsde.integrate import FixedCount, SimulationConfig, generate_pairs
from binsde.io import (
    fmt,
    ingest_series,
    manifest_path,
    read_estimate_csv,
    read_mse_csv,
    read_pairs_csv,
    write_estimate_csv,
    write_fit_json,
    write_manifest,
    write_mse_csv,
    write_pairs_csv,
    write_rows_csv,
)
from binsde.models import builtin_model
from binsde.regression import fit_pipeline


def test_float_format_round_trips_exactly():
    for x in (0.1, 1.0 / 3.0, math.pi, 1e-17, 5e-324, -0.0, 12345.678901234567):
        assert float(fmt(x)) == x


def _tiny_pairs():
    return generate_pairs(
        builtin_model("ou"),
        SimulationConfig(dt_int=0.005),
        0.01,
        FixedCount(50),
        np.random.SeedSequence([100]),
    )


def test_pairs_csv_round_trip_is_bitwise(tmp_path):
    pairs = _tiny_pairs()
    path = tmp_path / "pairs.csv"
    write_pairs_csv(path, pairs, seed=100)
    back = read_pairs_csv(path)
    np.testing.assert_array_equal(back.starts, pairs.starts)
    np.testing.assert_array_equal(back.ends, pairs.ends)
    assert back.dt_obs == pairs.dt_obs
    assert back.model_name == "ou"
    assert back.scheme == "strong15"


def test_pairs_csv_rejects_malformed_input(tmp_path):
    bad = tmp_path / "bad.csv"
    bad.write_text("just,some,garbage\n1,2,3\n")
    with pytest.raises(IOFormatError):
        read_pairs_csv(bad)
    ragged = tmp_path / "ragged.csv"
    ragged.write_text("x_start,x_end\n0.1,0.2\n0.3\n")
    with pytest.raises(IOFormatError, match="fields"):
        read_pairs_csv(ragged, dt_obs=0.01)
    nonnum = tmp_path / "nonnum.csv"
    nonnum.write_text("x_start,x_end\n0.1,apple\n")
    with pytest.raises(IOFormatError, match="x_end"):
        read_pairs_csv(nonnum, dt_obs=0.01)


def test_pairs_csv_requires_a_time_step(tmp_path):
    path = tmp_path / "nodt.csv"
    path.write_text("x_start,x_end\n0.1,0.2\n")
    with pytest.raises(IOFormatError, match="dt_obs"):
        read_pairs_csv(path)
    assert read_pairs_csv(path, dt_obs=0.05).dt_obs == 0.05


def test_estimate_csv_round_trip_with_empty_bins(tmp_path):
    grid = make_grid(0.0, 1.0, 4)
    pairs = SimpleNamespace(
        starts=np.array([0.1, 0.15, 0.6, 0.62, 0.61]),
        ends=np.array([0.2, 0.1, 0.65, 0.6, 0.66]),
        dt_obs=0.01,
    )
    est = estimate(pairs, grid)
    path = tmp_path / "est.csv"
    write_estimate_csv(path, est, extra_meta={"note": "unit"})
    back = read_estimate_csv(path)
    np.testing.assert_array_equal(back.counts, est.counts)
    np.testing.assert_array_equal(back.grid.edges, est.grid.edges)
    assert back.dt_obs == est.dt_obs and back.mode == est.mode
    for field in ("drift", "diff2"):
        a, b = getattr(est, field), getattr(back, field)
        np.testing.assert_array_equal(np.isnan(a), np.isnan(b))
        ok = ~np.isnan(a)
        np.testing.assert_array_equal(a[ok], b[ok])
    # standard errors are not serialized; they come back unset
    assert np.isnan(back.drift_se).all() and np.isnan(back.diff2_se).all()


def test_mse_csv_round_trip(tmp_path):
    cell = make_cell("ou", -0.5, 0.5, 2, 20, 0.01, dt_int=0.005)
    res = run_mse(cell, mc=2, seed=4)
    path = tmp_path / "mse.csv"
    write_mse_csv(path, [res], extra_meta={"model": "ou"})
    meta, rows = read_mse_csv(path)
    assert meta["model"] == "ou"
    assert len(rows) == 1
    assert rows[0]["M"] == 20
    assert rows[0]["dt"] == 0.01
    assert rows[0]["dx"] == pytest.approx(0.5)
    assert rows[0]["mse_drift"] == res.mse_drift  # full-precision columns
    assert rows[0]["gen_seconds"] >= 0.0


def test_rows_csv_layout(tmp_path):
    path = tmp_path / "rows.csv"
    write_rows_csv(
        path,
        ["a", "b", "flag"],
        [{"a": 3, "b": 0.1, "flag": True}, {"a": 4, "b": float("nan"), "flag": False}],
        meta={"kind": "demo"},
    )
    text = path.read_text().splitlines()
    assert text[0] == "# kind = demo"
    assert text[1] == "a,b,flag"
    assert text[2].startswith("3,0.1") and text[2].endswith(",1")
    assert text[3].split(",")[1] == "nan"


def test_fit_json_structure(tmp_path):
    grid = make_grid(-1.0, 1.0, 12)
    c = grid.centers
    est = SimpleNamespace(
        grid=grid,
        dt_obs=0.01,
        mode="endpoint",
        counts=np.full(12, 400),
        drift=-c,
        drift_se=np.full(12, 0.01),
        diff2=np.ones(12),
        diff2_se=np.full(12, 0.01),
    )
    report = fit_pipeline(est, degree=3, method="ols", min_count=1)
    path = tmp_path / "fit.json"
    write_fit_json(path, report, meta={"source": "unit"})
    data = json.loads(path.read_text())
    assert data["source"] == "unit"  # meta merges into the top level
    for field in ("drift", "diff2"):
        assert data[field]["method"] == "ols"
        assert data[field]["degree"] == 3
        assert len(data[field]["coefficients"]) == 4
        assert "weighted_rmse" in data[field]["diagnostics"]
    back = np.asarray(data["drift"]["coefficients"])
    np.testing.assert_allclose(back, [0.0, -1.0, 0.0, 0.0], atol=1e-10)


def test_manifest_sidecar(tmp_path):
    out = tmp_path / "result.csv"
    out.write_text("x\n1\n")
    write_manifest(
        out,
        subcommand="estimate",
        config={"nb": 4},
        seed=7,
        inputs=["pairs.csv"],
        outputs=[str(out)],
        wall_seconds=1.25,
    )
    side = manifest_path(out)
    assert str(side).endswith("result.csv.manifest.json")
    data = json.loads(side.read_text())
    assert data["subcommand"] == "estimate"
    assert data["config"] == {"nb": 4}
    assert data["seed"] == 7
    assert data["inputs"] == ["pairs.csv"]
    assert data["wall_seconds"] == 1.25
    assert isinstance(data["version"], str) and data["version"]


def test_ingest_series_single_and_two_column(tmp_path):
    one = tmp_path / "series1.csv"
    one.write_text("value\n0.0\n1.0\n2.0\n3.0\n4.0\n5.0\n")
    p = ingest_series(one, dt_obs=0.1)
    np.testing.assert_array_equal(p.starts, [0.0, 2.0, 4.0])
    np.testing.assert_array_equal(p.ends, [1.0, 3.0, 5.0])

    two = tmp_path / "series2.csv"
    rows = ["t,x"] + [f"{0.05 * i},{float(i)}" for i in range(8)]
    two.write_text("\n".join(rows) + "\n")
    q = ingest_series(two, dt_obs=0.1, stride=2)
    np.testing.assert_array_equal(q.starts, [0.0, 4.0])
    np.testing.assert_array_equal(q.ends, [2.0, 6.0])


def test_ingest_series_validates_timestamps_and_shape(tmp_path):
    bad = tmp_path / "bad.csv"
    bad.write_text("t,x,extra\n0,1,2\n")
    with pytest.raises(IOFormatError, match="columns"):
        ingest_series(bad, dt_obs=0.1)
    skewed = tmp_path / "skewed.csv"
    skewed.write_text("t,x\n0.0,1.0\n0.1,2.0\n0.15,3.0\n0.2,1.0\n")
    with pytest.raises(IOFormatError):
        ingest_series(skewed, dt_obs=0.1)
    with pytest.raises(IOFormatError):
        ingest_series(bad, dt_obs=-0.1)
