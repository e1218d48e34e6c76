"""Command-line interface.

Subcommands: simulate, estimate, mse, sweep, fit, verify-integrals,
report. Each accepts a structured config file (--config) plus --set
overrides; explicit flags take precedence over both. Experiment
subcommands require --seed so no run is silently nondeterministic.

Exit codes: 0 success; 2 usage errors; 3 configuration errors; 4 I/O and
format errors; 5 computation failures (divergence, starvation,
non-convergence). Failures also emit one machine-readable JSON record on
stderr: {"error", "message", "exit_code"}.
"""

from __future__ import annotations

import functools
import json
import sys
import time
from pathlib import Path

import click
import numpy as np

from . import __version__
from . import config as cfgmod
from . import io as iomod
from .binned import estimate as bin_estimate
from .binned import make_grid
from .errors import (BinsdeError, ConfigError, IOFormatError,
                     ValidationError)
from .experiments import (REGIME_MDT_CONST, REGIME_MDT_GROWING, make_cell,
                          pooled_estimate, run_m_doubling, run_mse,
                          run_regime, run_sweep, timing_rows)
from .integrals import moment_table
from .integrate import (SCHEMES, FixedCount, FixedPerBin, SimulationConfig,
                        generate_pairs)
from .models import builtin_model
from .regression import fit_field, fit_pipeline

EXIT_CONFIG = 3
EXIT_IO = 4
EXIT_COMPUTE = 5


def _exit_code(err) -> int:
    if isinstance(err, (ConfigError, ValidationError)):
        return EXIT_CONFIG
    if isinstance(err, (IOFormatError, OSError)):
        return EXIT_IO
    return EXIT_COMPUTE


def _guarded(f):
    @functools.wraps(f)
    def wrapper(*args, **kwargs):
        try:
            return f(*args, **kwargs)
        except (BinsdeError, OSError) as err:
            code = _exit_code(err)
            record = {
                "error": type(err).__name__,
                "message": str(err),
                "exit_code": code,
            }
            click.echo(json.dumps(record), err=True)
            sys.exit(code)

    return wrapper


def _config_options(f):
    f = click.option("--set", "overrides", multiple=True, metavar="KEY=VALUE",
                     help="Override one config key.")(f)
    f = click.option("--config", "config_path", default=None,
                     type=click.Path(), help="Config file (key = value lines).")(f)
    return f


def _load_cfg(config_path, overrides) -> dict:
    cfg = cfgmod.load_config(config_path) if config_path else {}
    return cfgmod.apply_overrides(cfg, overrides)


def _pick(flag, cfg, key, getter, default=None):
    """Precedence: explicit flag > config key > default."""
    if flag is not None:
        return flag
    sentinel = object()
    got = getter(cfg, key, sentinel)
    return default if got is sentinel else got


def _require_seed(seed) -> int:
    if seed is None:
        raise ConfigError(
            "--seed is required (experiment results must be reproducible)"
        )
    return int(seed)


def _model_params(cfg: dict, param_flags) -> dict:
    params = {}
    for key, value in cfgmod.subkeys(cfg, "model.params").items():
        params[key] = cfgmod.get_float({key: value}, key)
    for item in param_flags or ():
        if "=" not in item:
            raise ConfigError(f"-p {item!r} is not of the form name=value")
        name, _, value = item.partition("=")
        try:
            params[name.strip()] = float(value)
        except ValueError:
            raise ConfigError(f"-p {item!r}: {value!r} is not a number") from None
    return params


def _resolve_grid(cfg, grid_l, nb, lo, hi):
    nb = int(_pick(nb, cfg, "grid.nb", cfgmod.get_int, 10))
    lo = _pick(lo, cfg, "grid.lo", cfgmod.get_float)
    hi = _pick(hi, cfg, "grid.hi", cfgmod.get_float)
    if (lo is None) != (hi is None):
        raise ConfigError("--grid-lo and --grid-hi must be given together")
    if lo is not None:
        return make_grid(lo, hi, nb)
    half = _pick(grid_l, cfg, "grid.L", cfgmod.get_float, 0.5)
    return make_grid(-half, half, nb)


def _resolve_sim(cfg, scheme, dt_int, burn_in, x0, max_pairs) -> SimulationConfig:
    return SimulationConfig(
        scheme=_pick(scheme, cfg, "sim.scheme", cfgmod.get_str, "strong15"),
        dt_int=float(_pick(dt_int, cfg, "sim.dt_int", cfgmod.get_float, 5e-4)),
        burn_in=_pick(burn_in, cfg, "sim.burn_in", cfgmod.get_float),
        x0=float(_pick(x0, cfg, "sim.x0", cfgmod.get_float, 0.0)),
        max_pairs=int(_pick(max_pairs, cfg, "sim.max_pairs", cfgmod.get_int,
                            20_000_000)),
    )


def _parse_cells(text: str):
    """'50:0.02,100:0.01' -> ((50, 0.02), (100, 0.01))."""
    cells = []
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        if ":" not in part:
            raise ConfigError(
                f"cell {part!r} is not of the form M:dt (e.g. 500:0.002)"
            )
        m, _, dt = part.partition(":")
        try:
            cells.append((int(m), float(dt)))
        except ValueError:
            raise ConfigError(f"cannot parse cell {part!r} as M:dt") from None
    if not cells:
        raise ConfigError("empty cell list")
    return tuple(cells)


@click.group()
@click.version_option(__version__)
def main():
    """Drift/diffusion estimation for 1-d stationary SDEs."""


# ---------------------------------------------------------------------------
# simulate


@main.command()
@click.option("--model", default=None, help="Built-in model name.")
@click.option("-p", "--param", "param_flags", multiple=True,
              metavar="NAME=VALUE", help="Model parameter override.")
@click.option("--grid-l", type=float, default=None,
              help="Half-width L of the symmetric bin interval.")
@click.option("--nb", type=int, default=None, help="Number of bins.")
@click.option("--grid-lo", type=float, default=None)
@click.option("--grid-hi", type=float, default=None)
@click.option("--m", "m_per_bin", type=int, default=None,
              help="Pairs per bin (fixed-per-bin collection).")
@click.option("--fixed-count", type=int, default=None,
              help="Collect exactly this many pairs instead of filling bins.")
@click.option("--dt-obs", type=float, default=None, help="Observation step.")
@click.option("--scheme", type=click.Choice(SCHEMES), default=None)
@click.option("--dt-int", type=float, default=None, help="Inner integration step.")
@click.option("--burn-in", type=float, default=None)
@click.option("--x0", type=float, default=None)
@click.option("--max-pairs", type=int, default=None)
@click.option("--seed", type=int, default=None)
@click.option("-o", "--output", required=True, type=click.Path())
@_config_options
@_guarded
def simulate(model, param_flags, grid_l, nb, grid_lo, grid_hi, m_per_bin,
             fixed_count, dt_obs, scheme, dt_int, burn_in, x0, max_pairs,
             seed, output, config_path, overrides):
    """Generate transition pairs from a built-in model and write them as CSV."""
    t0 = time.perf_counter()
    cfg = _load_cfg(config_path, overrides)
    seed = _require_seed(_pick(seed, cfg, "seed", cfgmod.get_int))
    name = _pick(model, cfg, "model.name", cfgmod.get_str, "cubic")
    params = _model_params(cfg, param_flags)
    mdl = builtin_model(name, **params)
    grid = _resolve_grid(cfg, grid_l, nb, grid_lo, grid_hi)
    sim = _resolve_sim(cfg, scheme, dt_int, burn_in, x0, max_pairs)
    dt = float(_pick(dt_obs, cfg, "sample.dt_obs", cfgmod.get_float, 0.01))
    fixed_count = _pick(fixed_count, cfg, "sample.fixed_count", cfgmod.get_int)
    if fixed_count is not None:
        stop = FixedCount(int(fixed_count))
    else:
        m_per_bin = int(_pick(m_per_bin, cfg, "sample.m", cfgmod.get_int, 500))
        stop = FixedPerBin(m_per_bin, grid)

    rng = np.random.default_rng(np.random.SeedSequence([seed]))
    pairs = generate_pairs(mdl, sim, dt, stop, rng)
    iomod.write_pairs_csv(output, pairs, seed=seed, extra_meta={
        "grid_lo": iomod.fmt(grid.lo), "grid_hi": iomod.fmt(grid.hi),
        "nb": str(grid.nb),
    })
    resolved = {
        "model.name": name, "model.params": params,
        "grid.lo": grid.lo, "grid.hi": grid.hi, "grid.nb": grid.nb,
        "sample.dt_obs": dt,
        "sample.stop": (f"fixed_count:{stop.n}" if isinstance(stop, FixedCount)
                        else f"fixed_per_bin:{stop.m}"),
        "sim.scheme": sim.scheme, "sim.dt_int": sim.dt_int,
        "sim.burn_in": sim.burn_in, "sim.x0": sim.x0,
        "sim.max_pairs": sim.max_pairs,
    }
    iomod.write_manifest(output, "simulate", resolved, seed, [], [output],
                         time.perf_counter() - t0)
    click.echo(f"wrote {len(pairs)} pairs to {output} "
               f"(generation {pairs.gen_seconds:.2f}s, "
               f"burn-in {pairs.burn_seconds:.2f}s)")


# ---------------------------------------------------------------------------
# estimate


@main.command("estimate")
@click.option("--pairs", "pairs_path", type=click.Path(), default=None,
              help="Pair CSV produced by simulate.")
@click.option("--series", "series_path", type=click.Path(), default=None,
              help="Raw scalar time-series CSV (1 or 2 columns).")
@click.option("--dt-obs", type=float, default=None,
              help="Observation step (required for --series).")
@click.option("--stride", type=int, default=None,
              help="Series steps per pair separation (series ingestion).")
@click.option("--grid-l", type=float, default=None)
@click.option("--nb", type=int, default=None)
@click.option("--grid-lo", type=float, default=None)
@click.option("--grid-hi", type=float, default=None)
@click.option("--mode", type=click.Choice(["endpoint", "center"]), default=None)
@click.option("--max-per-bin", type=int, default=None)
@click.option("-o", "--output", required=True, type=click.Path())
@_config_options
@_guarded
def estimate_cmd(pairs_path, series_path, dt_obs, stride, grid_l, nb, grid_lo,
                 grid_hi, mode, max_per_bin, output, config_path, overrides):
    """Bin transition pairs into drift / squared-diffusion estimates."""
    t0 = time.perf_counter()
    cfg = _load_cfg(config_path, overrides)
    pairs_path = _pick(pairs_path, cfg, "input.pairs", cfgmod.get_str)
    series_path = _pick(series_path, cfg, "input.series", cfgmod.get_str)
    if (pairs_path is None) == (series_path is None):
        raise ConfigError("give exactly one of --pairs or --series")
    dt_obs = _pick(dt_obs, cfg, "sample.dt_obs", cfgmod.get_float)
    if series_path is not None:
        stride = int(_pick(stride, cfg, "sample.stride", cfgmod.get_int, 1))
        if dt_obs is None:
            raise ConfigError("--dt-obs is required when ingesting a series")
        pairs = iomod.ingest_series(series_path, dt_obs, stride=stride)
        source = series_path
    else:
        pairs = iomod.read_pairs_csv(pairs_path, dt_obs=dt_obs)
        source = pairs_path
    grid = _resolve_grid(cfg, grid_l, nb, grid_lo, grid_hi)
    mode = _pick(mode, cfg, "estimate.mode", cfgmod.get_str, "endpoint")
    max_per_bin = _pick(max_per_bin, cfg, "estimate.max_per_bin", cfgmod.get_int)
    est = bin_estimate(pairs, grid, mode=mode, max_per_bin=max_per_bin)
    if not np.any(est.counts > 0):
        raise ValidationError(
            "all bins are empty: no pair start falls inside the grid"
        )
    iomod.write_estimate_csv(output, est, extra_meta={"source": str(source)})
    resolved = {
        "input": str(source), "mode": mode, "dt_obs": pairs.dt_obs,
        "grid.lo": grid.lo, "grid.hi": grid.hi, "grid.nb": grid.nb,
        "max_per_bin": max_per_bin,
    }
    iomod.write_manifest(output, "estimate", resolved, None, [source],
                         [output], time.perf_counter() - t0)
    filled = int(np.count_nonzero(est.counts))
    click.echo(f"wrote {grid.nb}-bin estimate to {output} "
               f"({filled} bins filled, {est.n_pairs_in} pairs in grid)")


# ---------------------------------------------------------------------------
# mse


_REGIMES = {"mdt_const": REGIME_MDT_CONST, "mdt_growing": REGIME_MDT_GROWING}


@main.command()
@click.option("--model", default=None)
@click.option("-p", "--param", "param_flags", multiple=True,
              metavar="NAME=VALUE")
@click.option("--grid-l", type=float, default=None)
@click.option("--nb", type=int, default=None)
@click.option("--grid-lo", type=float, default=None)
@click.option("--grid-hi", type=float, default=None)
@click.option("--regime", type=click.Choice(sorted(_REGIMES) + ["custom"]),
              default=None, help="Built-in (M, dt) ladder, or custom --cells.")
@click.option("--cells", default=None, metavar="M:DT,M:DT,...",
              help="Explicit cell list for --regime custom.")
@click.option("--mc", type=int, default=None, help="Realizations per cell.")
@click.option("--mode", type=click.Choice(["endpoint", "center"]), default=None)
@click.option("--scheme", type=click.Choice(SCHEMES), default=None)
@click.option("--dt-int", type=float, default=None)
@click.option("--burn-in", type=float, default=None)
@click.option("--workers", type=int, default=None,
              help="Parallel worker processes (results are identical for any value).")
@click.option("--seed", type=int, default=None)
@click.option("-o", "--output", required=True, type=click.Path())
@_config_options
@_guarded
def mse(model, param_flags, grid_l, nb, grid_lo, grid_hi, regime, cells, mc,
        mode, scheme, dt_int, burn_in, workers, seed, output, config_path,
        overrides):
    """Monte Carlo MSE of both estimators over a ladder of (M, dt) cells."""
    t0 = time.perf_counter()
    cfg = _load_cfg(config_path, overrides)
    seed = _require_seed(_pick(seed, cfg, "seed", cfgmod.get_int))
    name = _pick(model, cfg, "model.name", cfgmod.get_str, "cubic")
    params = _model_params(cfg, param_flags)
    builtin_model(name, **params)  # validate before the long run
    grid = _resolve_grid(cfg, grid_l, nb, grid_lo, grid_hi)
    regime = _pick(regime, cfg, "regime", cfgmod.get_str, "mdt_const")
    cells = _pick(cells, cfg, "regime.cells", cfgmod.get_str)
    if regime == "custom" or cells is not None:
        ladder = _parse_cells(cells) if cells else None
        if ladder is None:
            raise ConfigError("--regime custom requires --cells")
    else:
        ladder = _REGIMES[regime]
    mc = int(_pick(mc, cfg, "mc", cfgmod.get_int, 100))
    mode = _pick(mode, cfg, "estimate.mode", cfgmod.get_str, "endpoint")
    sim = _resolve_sim(cfg, scheme, dt_int, burn_in, None, None)
    workers = _pick(workers, cfg, "workers", cfgmod.get_int)

    results = run_regime(name, grid.lo, grid.hi, grid.nb, ladder, mc, seed,
                         model_params=params, workers=workers, mode=mode,
                         scheme=sim.scheme, dt_int=sim.dt_int,
                         burn_in=sim.burn_in, max_pairs=sim.max_pairs)
    resolved = {
        "model.name": name, "model.params": params,
        "grid.lo": grid.lo, "grid.hi": grid.hi, "grid.nb": grid.nb,
        "regime": regime, "cells": [[m, dt] for m, dt in ladder],
        "mc": mc, "mode": mode, "sim.scheme": sim.scheme,
        "sim.dt_int": sim.dt_int, "workers": workers,
    }
    iomod.write_mse_csv(output, results, extra_meta={"seed": str(seed)})
    summary = {
        "config": resolved,
        "seed": seed,
        "version": __version__,
        "cells": [{
            "M": r.cell.m_per_bin, "dt": r.cell.dt_obs,
            "mse_drift": r.mse_drift, "se_drift": r.mse_drift_se,
            "mse_diff": r.mse_diff2, "se_diff": r.mse_diff2_se,
            "bias2_drift": r.bias2_drift, "var_drift": r.var_drift,
            "bias2_diff": r.bias2_diff2, "var_diff": r.var_diff2,
            "pred_var_drift": r.pred_var_drift,
            "pred_var_diff": r.pred_var_diff2,
            "mc_used": r.mc_used, "n_diverged": r.n_diverged,
        } for r in results],
    }
    summary_path = Path(output).with_suffix(".summary.json")
    iomod.write_json(summary_path, summary)
    iomod.write_manifest(output, "mse", resolved, seed, [],
                         [output, str(summary_path)],
                         time.perf_counter() - t0)
    click.echo(f"wrote {len(results)} cells to {output}")
    for r in results:
        click.echo(
            f"  M={r.cell.m_per_bin:5d} dt={r.cell.dt_obs:<8g} "
            f"mse_drift={r.mse_drift:.4g} mse_diff={r.mse_diff2:.4g}"
        )


# ---------------------------------------------------------------------------
# sweep


@main.command()
@click.option("--model", default=None)
@click.option("-p", "--param", "param_flags", multiple=True,
              metavar="NAME=VALUE")
@click.option("--grid-l", type=float, default=None)
@click.option("--dx", default=None, metavar="DX,DX,...",
              help="Bin widths; each must tile the interval exactly.")
@click.option("--dt", default=None, metavar="DT,DT,...",
              help="Observation steps.")
@click.option("--m", "m_per_bin", type=int, default=None)
@click.option("--doubling", is_flag=True, default=False,
              help="Also run at 2M and report per-cell MSE ratios.")
@click.option("--mc", type=int, default=None)
@click.option("--scheme", type=click.Choice(SCHEMES), default=None)
@click.option("--dt-int", type=float, default=None)
@click.option("--burn-in", type=float, default=None)
@click.option("--workers", type=int, default=None)
@click.option("--seed", type=int, default=None)
@click.option("-o", "--output", required=True, type=click.Path())
@_config_options
@_guarded
def sweep(model, param_flags, grid_l, dx, dt, m_per_bin, doubling, mc, scheme,
          dt_int, burn_in, workers, seed, output, config_path, overrides):
    """MSE over the (bin width, observation step) grid."""
    t0 = time.perf_counter()
    cfg = _load_cfg(config_path, overrides)
    seed = _require_seed(_pick(seed, cfg, "seed", cfgmod.get_int))
    name = _pick(model, cfg, "model.name", cfgmod.get_str, "cubic")
    params = _model_params(cfg, param_flags)
    builtin_model(name, **params)
    half = float(_pick(grid_l, cfg, "grid.L", cfgmod.get_float, 0.5))
    dx_text = _pick(dx, cfg, "sweep.dx", cfgmod.get_str,
                    "0.025,0.05,0.1,0.25")
    dt_text = _pick(dt, cfg, "sweep.dt", cfgmod.get_str,
                    "0.0005,0.001,0.0025,0.005,0.007,0.01")
    dx_list = cfgmod.get_float_list({"v": dx_text}, "v")
    dt_list = cfgmod.get_float_list({"v": dt_text}, "v")
    m_per_bin = int(_pick(m_per_bin, cfg, "sweep.m", cfgmod.get_int, 500))
    mc = int(_pick(mc, cfg, "mc", cfgmod.get_int, 100))
    sim = _resolve_sim(cfg, scheme, dt_int, burn_in, None, None)
    workers = _pick(workers, cfg, "workers", cfgmod.get_int)
    kwargs = dict(model_params=params, workers=workers, scheme=sim.scheme,
                  dt_int=sim.dt_int, burn_in=sim.burn_in,
                  max_pairs=sim.max_pairs)

    outputs = [output]
    if doubling:
        res1, res2, ratios = run_m_doubling(name, -half, half, dx_list,
                                            dt_list, m_per_bin, 2 * m_per_bin,
                                            mc, seed, **kwargs)
        results = res1 + res2
        ratio_path = Path(output).with_suffix(".ratios.json")
        iomod.write_json(ratio_path, {"m1": m_per_bin, "m2": 2 * m_per_bin,
                                      "cells": ratios})
        outputs.append(str(ratio_path))
        in_band = [r for r in ratios if not r["degenerate"]
                   and 1.5 <= r["ratio_diff2"] <= 2.8]
        click.echo(
            f"doubling: {len(in_band)}/{len(ratios)} cells with "
            f"diffusion-MSE ratio in [1.5, 2.8]"
        )
    else:
        results, _ = run_sweep(name, -half, half, dx_list, dt_list, m_per_bin,
                               mc, seed, **kwargs)
    iomod.write_mse_csv(output, results, extra_meta={"seed": str(seed)})
    resolved = {
        "model.name": name, "model.params": params, "grid.L": half,
        "sweep.dx": dx_list, "sweep.dt": dt_list, "sweep.m": m_per_bin,
        "doubling": doubling, "mc": mc, "sim.scheme": sim.scheme,
        "sim.dt_int": sim.dt_int, "workers": workers,
    }
    iomod.write_manifest(output, "sweep", resolved, seed, [], outputs,
                         time.perf_counter() - t0)
    click.echo(f"wrote {len(results)} sweep cells to {output}")


# ---------------------------------------------------------------------------
# fit


@main.command()
@click.option("--input", "input_path", required=True, type=click.Path(),
              help="Estimate CSV.")
@click.option("--degree", type=int, default=None)
@click.option("--method", type=click.Choice(["ols", "ridge", "lasso"]),
              default=None)
@click.option("--lam", type=float, default=None,
              help="Fixed penalty (default: cross-validated).")
@click.option("--min-count", type=int, default=None,
              help="Exclude bins with fewer pairs than this.")
@click.option("--target", type=click.Choice(["both", "drift", "diff2"]),
              default=None)
@click.option("--truth-model", default=None,
              help="Built-in model to report coefficient errors against.")
@click.option("-p", "--param", "param_flags", multiple=True,
              metavar="NAME=VALUE", help="Truth-model parameter.")
@click.option("-o", "--output", required=True, type=click.Path())
@_config_options
@_guarded
def fit(input_path, degree, method, lam, min_count, target, truth_model,
        param_flags, output, config_path, overrides):
    """Fit polynomial coefficient forms to a binned estimate."""
    t0 = time.perf_counter()
    cfg = _load_cfg(config_path, overrides)
    degree = int(_pick(degree, cfg, "fit.degree", cfgmod.get_int, 7))
    method = _pick(method, cfg, "fit.method", cfgmod.get_str, "lasso")
    lam = _pick(lam, cfg, "fit.lam", cfgmod.get_float)
    min_count = int(_pick(min_count, cfg, "fit.min_count", cfgmod.get_int, 200))
    target = _pick(target, cfg, "fit.target", cfgmod.get_str, "both")
    truth_model = _pick(truth_model, cfg, "fit.truth_model", cfgmod.get_str)
    est = iomod.read_estimate_csv(input_path)
    truth = (builtin_model(truth_model, **_model_params(cfg, param_flags))
             if truth_model else None)
    meta = {
        "input": str(input_path), "target": target,
        "intercept": "unpenalized",
        "standardization": "weighted mean/std of non-constant columns",
    }
    if target == "both":
        report = fit_pipeline(est, degree=degree, method=method,
                              min_count=min_count, truth=truth, lam=lam)
        iomod.write_fit_json(output, report, meta=meta)
        shown = [("drift", report.drift), ("diff2", report.diff2)]
    else:
        single = fit_field(est, target, degree=degree, method=method,
                           min_count=min_count, lam=lam)
        iomod.write_fit_json(output, single, meta=meta)
        shown = [(target, single)]
    resolved = {
        "input": str(input_path), "degree": degree, "method": method,
        "lam": lam, "min_count": min_count, "target": target,
        "truth_model": truth_model,
    }
    iomod.write_manifest(output, "fit", resolved, None, [input_path],
                         [output], time.perf_counter() - t0)
    for label, f in shown:
        terms = " + ".join(
            f"{c:.4g}*x^{k}" for k, c in enumerate(f.coefficients)
            if abs(c) > 1e-10
        ) or "0"
        click.echo(f"{label}: {terms}  (method={f.method}, lambda={f.lam:g})")
    click.echo(f"wrote fit to {output}")


# ---------------------------------------------------------------------------
# verify-integrals


@main.command("verify-integrals")
@click.option("--dt", type=float, default=0.01, show_default=True)
@click.option("--n", type=int, default=1_000_000, show_default=True,
              help="Samples per moment.")
@click.option("--seed", type=int, default=None)
@click.option("-o", "--output", type=click.Path(), default=None,
              help="Also write the table as CSV.")
@_guarded
def verify_integrals(dt, n, seed, output):
    """Print measured vs analytic moments of the step integrals."""
    t0 = time.perf_counter()
    seed = _require_seed(seed)
    rng = np.random.default_rng(np.random.SeedSequence([seed]))
    rows = moment_table(dt, n, rng)
    header = f"{'moment':<16}{'measured':>15}{'std err':>13}{'analytic':>15}{'z':>8}"
    click.echo(header)
    click.echo("-" * len(header))
    worst = 0.0
    for r in rows:
        worst = max(worst, abs(r["z"]))
        click.echo(
            f"{r['spec']:<16}{r['measured']:>15.6e}{r['se']:>13.3e}"
            f"{r['analytic']:>15.6e}{r['z']:>8.2f}"
        )
    click.echo(f"worst |z| = {worst:.2f} over {len(rows)} moments "
               f"(dt={dt:g}, n={n})")
    if output:
        iomod.write_rows_csv(output, ["spec", "measured", "se", "analytic", "z"],
                             rows, meta={"dt": iomod.fmt(dt), "n": str(n),
                                         "seed": str(seed)})
        iomod.write_manifest(output, "verify-integrals",
                             {"dt": dt, "n": n}, seed, [], [output],
                             time.perf_counter() - t0)
        click.echo(f"wrote table to {output}")


# ---------------------------------------------------------------------------
# report


@main.command()
@click.option("--out-dir", required=True, type=click.Path())
@click.option("--model", default=None)
@click.option("-p", "--param", "param_flags", multiple=True,
              metavar="NAME=VALUE")
@click.option("--grid-l", type=float, default=None)
@click.option("--nb", type=int, default=None)
@click.option("--mc", type=int, default=None,
              help="Realizations per regime cell.")
@click.option("--fit-m", type=int, default=None,
              help="Pairs per bin for the estimate/fit stage.")
@click.option("--fit-dt", type=float, default=None)
@click.option("--fit-nb", type=int, default=None)
@click.option("--fit-mc", type=int, default=None,
              help="Realizations pooled into the estimate/fit stage.")
@click.option("--degree", type=int, default=None)
@click.option("--method", type=click.Choice(["ols", "ridge", "lasso"]),
              default=None)
@click.option("--workers", type=int, default=None)
@click.option("--figures/--no-figures", default=True, show_default=True)
@click.option("--seed", type=int, default=None)
@_config_options
@_guarded
def report(out_dir, model, param_flags, grid_l, nb, mc, fit_m, fit_dt, fit_nb,
           fit_mc, degree, method, workers, figures, seed, config_path,
           overrides):
    """End-to-end summary: regimes, pooled estimate, fit, timing, figures.

    Writes delimited outputs plus rendered PNG figures into --out-dir.
    """
    t0 = time.perf_counter()
    cfg = _load_cfg(config_path, overrides)
    seed = _require_seed(_pick(seed, cfg, "seed", cfgmod.get_int))
    name = _pick(model, cfg, "model.name", cfgmod.get_str, "cubic")
    params = _model_params(cfg, param_flags)
    mdl = builtin_model(name, **params)
    half = float(_pick(grid_l, cfg, "grid.L", cfgmod.get_float, 0.5))
    nb = int(_pick(nb, cfg, "grid.nb", cfgmod.get_int, 10))
    mc = int(_pick(mc, cfg, "mc", cfgmod.get_int, 20))
    fit_m = int(_pick(fit_m, cfg, "report.fit_m", cfgmod.get_int, 1000))
    fit_dt = float(_pick(fit_dt, cfg, "report.fit_dt", cfgmod.get_float, 0.01))
    fit_nb = int(_pick(fit_nb, cfg, "report.fit_nb", cfgmod.get_int, 20))
    fit_mc = int(_pick(fit_mc, cfg, "report.fit_mc", cfgmod.get_int, 50))
    degree = int(_pick(degree, cfg, "fit.degree", cfgmod.get_int, 7))
    method = _pick(method, cfg, "fit.method", cfgmod.get_str, "lasso")
    workers = _pick(workers, cfg, "workers", cfgmod.get_int)

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    outputs = []

    kwargs = dict(model_params=params, workers=workers)
    click.echo("running sampling regimes ...")
    res_const = run_regime(name, -half, half, nb, REGIME_MDT_CONST, mc,
                           seed, **kwargs)
    res_grow = run_regime(name, -half, half, nb, REGIME_MDT_GROWING, mc,
                          seed + 1, **kwargs)
    p_const = out / "mse_mdt_const.csv"
    p_grow = out / "mse_mdt_growing.csv"
    iomod.write_mse_csv(p_const, res_const, extra_meta={"seed": str(seed)})
    iomod.write_mse_csv(p_grow, res_grow, extra_meta={"seed": str(seed + 1)})
    outputs += [p_const, p_grow]

    timing = timing_rows(res_const) + timing_rows(res_grow)
    p_timing = out / "timing.csv"
    iomod.write_rows_csv(p_timing, list(timing[0].keys()), timing)
    outputs.append(p_timing)

    click.echo("pooling the estimate for the fit stage ...")
    cell = make_cell(name, -half, half, fit_nb, fit_m, fit_dt, cell_id=1000,
                     model_params=params)
    est = pooled_estimate(cell, fit_mc, seed + 2, workers=workers)
    p_est = out / "estimate.csv"
    iomod.write_estimate_csv(p_est, est, extra_meta={"seed": str(seed + 2),
                                                     "model": name})
    outputs.append(p_est)

    fit_report = fit_pipeline(est, degree=degree, method=method,
                              min_count=200, truth=mdl)
    p_fit = out / "fit.json"
    iomod.write_fit_json(p_fit, fit_report, meta={"model": name,
                                                  "input": str(p_est)})
    outputs.append(p_fit)

    if figures:
        from . import figures as figmod

        click.echo("rendering figures ...")
        outputs.append(figmod.fig_regimes(res_const, res_grow,
                                          out / "fig_regimes.png"))
        outputs.append(figmod.fig_estimate(est, out / "fig_estimate.png",
                                           model=mdl))
        outputs.append(figmod.fig_fit(est, fit_report, out / "fig_fit.png",
                                      min_count=200))
        outputs.append(figmod.fig_timing(timing, out / "fig_timing.png"))

    resolved = {
        "model.name": name, "model.params": params, "grid.L": half,
        "grid.nb": nb, "mc": mc, "report.fit_m": fit_m,
        "report.fit_dt": fit_dt, "report.fit_nb": fit_nb,
        "report.fit_mc": fit_mc, "fit.degree": degree, "fit.method": method,
        "figures": figures, "workers": workers,
    }
    iomod.write_manifest(out / "report", "report", resolved, seed, [],
                         [str(p) for p in outputs],
                         time.perf_counter() - t0)
    drift_terms = " + ".join(
        f"{c:.3g}*x^{k}" for k, c in enumerate(fit_report.drift.coefficients)
        if abs(c) > 1e-10
    ) or "0"
    click.echo(f"drift fit: {drift_terms}")
    click.echo(f"wrote {len(outputs)} artifacts to {out}/")


if __name__ == "__main__":
    main()
