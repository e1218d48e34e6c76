"""Delimited-text and JSON serialization.

CSV artifacts carry their metadata as leading ``# key = value`` comment
lines followed by a header row; floats are written with 17 significant
digits so a write/read round trip reproduces every value bit-exactly.
Fixed column orders:

pairs     x_start,x_end
estimate  x_k,count,drift_hat,diff2_hat
mse       M,dt,dx,mse_drift,se_drift,mse_diff,se_diff,gen_seconds

Fit results are JSON objects {method, lambda, degree, coefficients[],
diagnostics{}}; every run writes a JSON manifest sidecar recording the
resolved configuration, seed, version, paths, and wall time.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from . import __version__
from .binned import BinGrid, BinnedEstimate, make_grid
from .errors import IOFormatError
from .integrate import TransitionPairSet

__all__ = [
    "fmt",
    "write_pairs_csv",
    "read_pairs_csv",
    "write_estimate_csv",
    "read_estimate_csv",
    "write_mse_csv",
    "read_mse_csv",
    "write_rows_csv",
    "write_fit_json",
    "write_json",
    "manifest_path",
    "write_manifest",
    "ingest_series",
]


def fmt(x) -> str:
    """Full-precision float formatting (17 significant digits)."""
    return "%.17g" % float(x)


def _jsonable(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.floating):
        return float(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    return obj


def write_json(path, obj) -> None:
    Path(path).write_text(
        json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n"
    )


def _write_csv(path, meta: dict, header: str, rows) -> None:
    lines = [f"# {k} = {v}" for k, v in meta.items()]
    lines.append(header)
    lines.extend(rows)
    Path(path).write_text("\n".join(lines) + "\n")


def _read_csv(path):
    """-> (meta dict, header columns, data rows as string lists)."""
    meta = {}
    header = None
    rows = []
    for ln, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        if line.startswith("#"):
            body = line[1:].strip()
            if "=" in body:
                k, _, v = body.partition("=")
                meta[k.strip()] = v.strip()
            continue
        if header is None:
            header = [c.strip() for c in line.split(",")]
            continue
        cells = [c.strip() for c in line.split(",")]
        if len(cells) != len(header):
            raise IOFormatError(
                f"{path}: line {ln} has {len(cells)} fields, expected {len(header)}"
            )
        rows.append((ln, cells))
    if header is None:
        raise IOFormatError(f"{path}: no header row found")
    return meta, header, rows


def _parse_float(path, ln, text, column):
    try:
        return float(text)
    except ValueError:
        raise IOFormatError(
            f"{path}: line {ln}: cannot parse {column}={text!r} as a number"
        ) from None


# ---------------------------------------------------------------------------
# pairs


def write_pairs_csv(path, pairs: TransitionPairSet, seed=None,
                    extra_meta: dict = None) -> None:
    meta = {
        "model": pairs.model_name,
        "dt_obs": fmt(pairs.dt_obs),
        "dt_int": fmt(pairs.dt_int) if np.isfinite(pairs.dt_int) else "",
        "scheme": pairs.scheme,
        "n_pairs": str(len(pairs)),
    }
    if seed is not None:
        meta["seed"] = str(seed)
    meta.update(extra_meta or {})
    rows = (f"{fmt(s)},{fmt(e)}" for s, e in zip(pairs.starts, pairs.ends))
    _write_csv(path, meta, "x_start,x_end", rows)


def read_pairs_csv(path, dt_obs: float = None) -> TransitionPairSet:
    """Read a pair CSV; dt_obs from metadata unless overridden."""
    meta, header, rows = _read_csv(path)
    if header[:2] != ["x_start", "x_end"]:
        raise IOFormatError(
            f"{path}: expected header x_start,x_end; got {','.join(header)}"
        )
    if dt_obs is None:
        if "dt_obs" not in meta:
            raise IOFormatError(
                f"{path}: no dt_obs metadata; pass the observation step explicitly"
            )
        dt_obs = float(meta["dt_obs"])
    starts = np.empty(len(rows))
    ends = np.empty(len(rows))
    for i, (ln, cells) in enumerate(rows):
        starts[i] = _parse_float(path, ln, cells[0], "x_start")
        ends[i] = _parse_float(path, ln, cells[1], "x_end")
    bad = np.flatnonzero(~(np.isfinite(starts) & np.isfinite(ends)))
    if len(bad):
        raise IOFormatError(
            f"{path}: non-finite pair at data row {bad[0] + 1}"
        )
    dt_int = float(meta["dt_int"]) if meta.get("dt_int") else float("nan")
    return TransitionPairSet(
        starts=starts, ends=ends, dt_obs=float(dt_obs),
        model_name=meta.get("model", ""), scheme=meta.get("scheme", ""),
        dt_int=dt_int,
    )


# ---------------------------------------------------------------------------
# estimates


def write_estimate_csv(path, est: BinnedEstimate, extra_meta: dict = None) -> None:
    meta = {
        "dt_obs": fmt(est.dt_obs),
        "mode": est.mode,
        "grid_lo": fmt(est.grid.lo),
        "grid_hi": fmt(est.grid.hi),
        "nb": str(est.grid.nb),
    }
    meta.update(extra_meta or {})
    rows = (
        f"{fmt(x)},{int(c)},{fmt(a)},{fmt(d)}"
        for x, c, a, d in zip(est.grid.centers, est.counts, est.drift, est.diff2)
    )
    _write_csv(path, meta, "x_k,count,drift_hat,diff2_hat", rows)


def read_estimate_csv(path) -> BinnedEstimate:
    """Read an estimate CSV; the grid comes from metadata when present,
    otherwise it is inferred from the (uniform) center spacing."""
    meta, header, rows = _read_csv(path)
    if header != ["x_k", "count", "drift_hat", "diff2_hat"]:
        raise IOFormatError(
            f"{path}: expected header x_k,count,drift_hat,diff2_hat; "
            f"got {','.join(header)}"
        )
    if not rows:
        raise IOFormatError(f"{path}: estimate file has no bins")
    n = len(rows)
    centers = np.empty(n)
    counts = np.empty(n, dtype=np.int64)
    drift = np.empty(n)
    diff2 = np.empty(n)
    for i, (ln, cells) in enumerate(rows):
        centers[i] = _parse_float(path, ln, cells[0], "x_k")
        counts[i] = int(_parse_float(path, ln, cells[1], "count"))
        drift[i] = _parse_float(path, ln, cells[2], "drift_hat")
        diff2[i] = _parse_float(path, ln, cells[3], "diff2_hat")
    if {"grid_lo", "grid_hi", "nb"} <= meta.keys():
        grid = make_grid(float(meta["grid_lo"]), float(meta["grid_hi"]),
                         int(meta["nb"]))
        if grid.nb != n:
            raise IOFormatError(
                f"{path}: metadata declares {grid.nb} bins but file has {n} rows"
            )
    else:
        if n > 1:
            widths = np.diff(centers)
            w = widths[0]
            if w <= 0 or np.max(np.abs(widths - w)) > 1e-9 * abs(w):
                raise IOFormatError(
                    f"{path}: bin centers are not uniformly spaced; "
                    "cannot infer the grid"
                )
        else:
            raise IOFormatError(
                f"{path}: single bin without grid metadata; grid is ambiguous"
            )
        grid = make_grid(centers[0] - w / 2, centers[-1] + w / 2, n)
    if np.max(np.abs(grid.centers - centers)) > 1e-9 * max(grid.width, 1.0):
        raise IOFormatError(f"{path}: bin centers disagree with the grid")
    if "dt_obs" not in meta:
        raise IOFormatError(f"{path}: missing dt_obs metadata")
    nanarr = np.full(n, np.nan)
    return BinnedEstimate(
        grid=grid,
        dt_obs=float(meta["dt_obs"]),
        mode=meta.get("mode", "endpoint"),
        counts=counts,
        drift=drift,
        drift_se=nanarr.copy(),
        diff2=diff2,
        diff2_se=nanarr.copy(),
        n_pairs_in=int(counts.sum()),
        n_pairs_total=int(counts.sum()),
    )


# ---------------------------------------------------------------------------
# MSE tables


def write_mse_csv(path, results, extra_meta: dict = None) -> None:
    """One row per cell from a list of MSEResult."""
    meta = {}
    if results:
        c = results[0].cell
        meta.update({
            "model": c.model_name,
            "scheme": c.scheme,
            "dt_int": fmt(c.dt_int),
            "mode": c.mode,
        })
    meta.update(extra_meta or {})
    rows = []
    for r in results:
        c = r.cell
        dx = (c.hi - c.lo) / c.nb
        rows.append(",".join([
            str(c.m_per_bin), fmt(c.dt_obs), fmt(dx),
            fmt(r.mse_drift), fmt(r.mse_drift_se),
            fmt(r.mse_diff2), fmt(r.mse_diff2_se),
            fmt(r.gen_seconds),
        ]))
    _write_csv(path, meta, "M,dt,dx,mse_drift,se_drift,mse_diff,se_diff,gen_seconds",
               rows)


def write_rows_csv(path, columns, rows, meta: dict = None) -> None:
    """Generic dict-row CSV: ints verbatim, floats at full precision."""

    def cell(v):
        if isinstance(v, bool):
            return str(int(v))
        if isinstance(v, (int, np.integer)):
            return str(int(v))
        if isinstance(v, (float, np.floating)):
            return fmt(v)
        return str(v)

    body = (",".join(cell(r[c]) for c in columns) for r in rows)
    _write_csv(path, meta or {}, ",".join(columns), body)


def read_mse_csv(path):
    """-> (meta, list of row dicts with numeric values)."""
    meta, header, rows = _read_csv(path)
    expected = ["M", "dt", "dx", "mse_drift", "se_drift", "mse_diff",
                "se_diff", "gen_seconds"]
    if header != expected:
        raise IOFormatError(
            f"{path}: expected header {','.join(expected)}; got {','.join(header)}"
        )
    out = []
    for ln, cells in rows:
        vals = [_parse_float(path, ln, c, h) for c, h in zip(cells, header)]
        row = dict(zip(header, vals))
        row["M"] = int(row["M"])
        out.append(row)
    return meta, out


# ---------------------------------------------------------------------------
# fits and manifests


def fit_to_dict(fit) -> dict:
    return {
        "method": fit.method,
        "lambda": fit.lam,
        "degree": fit.degree,
        "coefficients": [float(c) for c in fit.coefficients],
        "diagnostics": _jsonable(fit.diagnostics),
    }


def write_fit_json(path, report, meta: dict = None) -> None:
    """Serialize a FitReport (or a single PolynomialFit under 'fit')."""
    obj = dict(meta or {})
    if hasattr(report, "drift"):
        obj["drift"] = fit_to_dict(report.drift)
        obj["diff2"] = fit_to_dict(report.diff2)
        if report.errors is not None:
            obj["errors"] = _jsonable(report.errors)
    else:
        obj["fit"] = fit_to_dict(report)
    write_json(path, obj)


def manifest_path(output_path) -> Path:
    p = Path(output_path)
    return p.with_name(p.name + ".manifest.json")


def write_manifest(output_path, subcommand: str, config: dict, seed,
                   inputs, outputs, wall_seconds: float) -> Path:
    """JSON sidecar describing one run, written next to its main output."""
    path = manifest_path(output_path)
    write_json(path, {
        "subcommand": subcommand,
        "config": _jsonable(config),
        "seed": seed,
        "version": __version__,
        "inputs": [str(p) for p in inputs],
        "outputs": [str(p) for p in outputs],
        "wall_seconds": wall_seconds,
    })
    return path


# ---------------------------------------------------------------------------
# external series ingestion


def ingest_series(path, dt_obs: float, stride: int = 1) -> TransitionPairSet:
    """Non-overlapping transition pairs from a stored scalar time series.

    The file is a single-column (value) or two-column (time,value) CSV,
    optionally with ``#`` comments and a non-numeric header row. A pair
    spans ``stride`` series steps (= dt_obs of time), and consecutive pairs
    advance by 2*stride steps so no sample is shared. Two-column files must
    have uniform timestamps (1e-9 relative) whose step matches
    dt_obs/stride.
    """
    from .integrate import pairs_from_series

    if dt_obs is None or not dt_obs > 0:
        raise IOFormatError(f"dt_obs must be positive, got {dt_obs!r}")
    if stride < 1:
        raise IOFormatError(f"stride must be >= 1, got {stride}")
    times = []
    values = []
    data_row = 0
    for ln, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        cells = [c.strip() for c in line.split(",")]
        if len(cells) > 2:
            raise IOFormatError(
                f"{path}: line {ln} has {len(cells)} columns; expected 1 or 2"
            )
        try:
            nums = [float(c) for c in cells]
        except ValueError:
            if data_row == 0:
                continue  # tolerated header row
            raise IOFormatError(
                f"{path}: line {ln}: non-numeric value {line!r}"
            ) from None
        data_row += 1
        if not all(np.isfinite(v) for v in nums):
            raise IOFormatError(
                f"{path}: non-finite value at data row {data_row} (line {ln})"
            )
        if len(nums) == 2:
            times.append(nums[0])
            values.append(nums[1])
        else:
            if times:
                raise IOFormatError(
                    f"{path}: line {ln}: mixed one- and two-column rows"
                )
            values.append(nums[0])
    if len(values) < 2:
        raise IOFormatError(f"{path}: fewer than 2 usable samples")
    values = np.asarray(values)

    if times:
        t = np.asarray(times)
        span = t[-1] - t[0]
        if span <= 0:
            raise IOFormatError(f"{path}: timestamps are not increasing")
        step = span / (len(t) - 1)
        drift_from_uniform = np.max(np.abs(t - (t[0] + step * np.arange(len(t)))))
        if drift_from_uniform > 1e-9 * span:
            raise IOFormatError(
                f"{path}: timestamps deviate from uniform spacing by "
                f"{drift_from_uniform:.3e} (tolerance {1e-9 * span:.3e})"
            )
        want = dt_obs / stride
        if abs(step - want) > 1e-9 * want:
            raise IOFormatError(
                f"{path}: timestamp step {step!r} does not match "
                f"dt_obs/stride = {want!r}"
            )
    pairs = pairs_from_series(values, dt_obs, stride=stride)
    return TransitionPairSet(
        starts=pairs.starts, ends=pairs.ends, dt_obs=pairs.dt_obs,
        model_name=f"series:{Path(path).name}",
    )
