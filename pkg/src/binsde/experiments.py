"""Monte Carlo experiment harness.

Runs ensembles of independent realizations of a sampling cell (model,
grid, pairs-per-bin target, observation step), bins each realization, and
aggregates error statistics against the model's true coefficients. Results
are independent of worker count and scheduling: every realization draws
from its own seed sequence keyed (global seed, cell id, realization id)
and the reduction runs in realization order.

Error metric: the bin-averaged squared error, mean over bins of
(estimate_k - truth(x_k))^2, reported together with its decomposition into
across-realization variance and squared bias, and with the small-noise
variance predictions D^2(x_k)/(M dt) for the drift and 2 D^4(x_k)/M for
the squared diffusion (averaged over bins the same way).
"""

from __future__ import annotations

import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .binned import BinGrid, BinnedEstimate, estimate, make_grid
from .errors import DivergenceError, ValidationError
from .integrate import (FixedPerBin, SimulationConfig, TransitionPairSet,
                        generate_pairs)
from .models import builtin_model

__all__ = [
    "Cell",
    "MSEResult",
    "REGIME_MDT_CONST",
    "REGIME_MDT_GROWING",
    "run_mse",
    "run_regime",
    "run_m_doubling",
    "run_sweep",
    "pooled_estimate",
    "timing_rows",
    "ou_exact_bin_pairs",
    "ou_exact_grid_pairs",
]

# (pairs per bin, observation step) ladders: constant vs growing M*dt
REGIME_MDT_CONST = ((50, 0.02), (100, 0.01), (200, 0.005), (500, 0.002),
                    (1000, 0.001))
REGIME_MDT_GROWING = ((50, 0.01), (100, 0.01), (200, 0.01), (500, 0.01),
                      (1000, 0.01))


@dataclass(frozen=True)
class Cell:
    """One sampling configuration, picklable for worker processes."""

    cell_id: int
    model_name: str
    model_params: tuple  # sorted (name, value) pairs
    lo: float
    hi: float
    nb: int
    m_per_bin: int
    dt_obs: float
    scheme: str = "strong15"
    dt_int: float = 5e-4
    burn_in: Optional[float] = None
    max_pairs: int = 20_000_000
    mode: str = "endpoint"

    def model(self):
        return builtin_model(self.model_name, **dict(self.model_params))

    def grid(self) -> BinGrid:
        return make_grid(self.lo, self.hi, self.nb)

    def sim(self) -> SimulationConfig:
        return SimulationConfig(scheme=self.scheme, dt_int=self.dt_int,
                                burn_in=self.burn_in, max_pairs=self.max_pairs)


def make_cell(model_name: str, lo: float, hi: float, nb: int, m_per_bin: int,
              dt_obs: float, cell_id: int = 0, model_params: dict = None,
              **kwargs) -> Cell:
    params = tuple(sorted((model_params or {}).items()))
    return Cell(cell_id=cell_id, model_name=model_name, model_params=params,
                lo=float(lo), hi=float(hi), nb=int(nb),
                m_per_bin=int(m_per_bin), dt_obs=float(dt_obs), **kwargs)


def _realization(cell: Cell, r: int, seed: int) -> dict:
    """Worker body: one realization of one cell. Divergence is reported in
    the payload rather than raised, so one bad path cannot abort the pool."""
    model = cell.model()
    grid = cell.grid()
    rng = np.random.default_rng(np.random.SeedSequence([seed, cell.cell_id, r]))
    try:
        pairs = generate_pairs(model, cell.sim(), cell.dt_obs,
                               FixedPerBin(cell.m_per_bin, grid), rng)
    except DivergenceError as err:
        return {"r": r, "diverged": True, "step": err.step}
    est = estimate(pairs, grid, mode=cell.mode, max_per_bin=cell.m_per_bin)
    return {
        "r": r,
        "diverged": False,
        "drift": est.drift,
        "diff2": est.diff2,
        "counts": est.counts,
        "n_pairs": len(pairs),
        "gen_seconds": pairs.gen_seconds,
        "burn_seconds": pairs.burn_seconds,
    }


def _realization_star(args):
    return _realization(*args)


def _run_ensemble(cell: Cell, mc: int, seed: int, workers: Optional[int]):
    """All realizations of a cell, in realization order."""
    if mc < 1:
        raise ValidationError(f"need at least one realization, got mc={mc}")
    tasks = [(cell, r, int(seed)) for r in range(mc)]
    if workers is not None and workers <= 1:
        payloads = [_realization(*t) for t in tasks]
    else:
        nw = workers or min(mc, os.cpu_count() or 1)
        chunk = max(1, mc // (4 * nw))
        with ProcessPoolExecutor(max_workers=nw) as pool:
            payloads = list(pool.map(_realization_star, tasks, chunksize=chunk))
    payloads.sort(key=lambda p: p["r"])
    return payloads


@dataclass(frozen=True)
class MSEResult:
    """Aggregated ensemble error statistics for one cell."""

    cell: Cell
    mc_requested: int
    mc_used: int
    n_diverged: int
    mse_drift: float
    mse_drift_se: float
    mse_diff2: float
    mse_diff2_se: float
    bias2_drift: float
    var_drift: float
    bias2_diff2: float
    var_diff2: float
    pred_var_drift: float
    pred_var_diff2: float
    gen_seconds: float
    burn_seconds: float
    n_pairs_mean: float
    per_bin: dict = field(default_factory=dict)

    @property
    def m_dt(self) -> float:
        return self.cell.m_per_bin * self.cell.dt_obs


def run_mse(cell: Cell, mc: int, seed: int, workers: Optional[int] = None,
            max_diverged_frac: float = 0.01) -> MSEResult:
    """Ensemble bin-averaged MSE of both estimators for one cell.

    Realizations that diverge are excluded; if more than
    ``max_diverged_frac`` of them do, the cell fails with DivergenceError.
    """
    model = cell.model()
    grid = cell.grid()
    centers = grid.centers
    a_true = np.array([model.drift(x) for x in centers])
    d2_true = np.array([model.diffusion(x) ** 2 for x in centers])

    payloads = _run_ensemble(cell, mc, seed, workers)
    good = [p for p in payloads if not p["diverged"]]
    n_div = mc - len(good)
    if n_div > max_diverged_frac * mc:
        raise DivergenceError(
            f"{n_div}/{mc} realizations diverged for cell {cell.cell_id} "
            f"({cell.model_name}, m={cell.m_per_bin}, dt={cell.dt_obs})"
        )
    if not good:
        raise ValidationError("no realizations survived; cannot aggregate")

    drift = np.stack([p["drift"] for p in good])   # (mc_used, nb)
    diff2 = np.stack([p["diff2"] for p in good])

    sq_err_drift = np.mean((drift - a_true) ** 2, axis=1)   # per realization
    sq_err_diff2 = np.mean((diff2 - d2_true) ** 2, axis=1)
    n = len(good)

    def _se(v):
        return float(np.std(v, ddof=1) / np.sqrt(n)) if n > 1 else float("nan")

    mean_drift = drift.mean(axis=0)
    mean_diff2 = diff2.mean(axis=0)
    var_drift_k = drift.var(axis=0, ddof=1) if n > 1 else np.full_like(mean_drift, np.nan)
    var_diff2_k = diff2.var(axis=0, ddof=1) if n > 1 else np.full_like(mean_diff2, np.nan)

    m, dt = cell.m_per_bin, cell.dt_obs
    result = MSEResult(
        cell=cell,
        mc_requested=mc,
        mc_used=n,
        n_diverged=n_div,
        mse_drift=float(sq_err_drift.mean()),
        mse_drift_se=_se(sq_err_drift),
        mse_diff2=float(sq_err_diff2.mean()),
        mse_diff2_se=_se(sq_err_diff2),
        bias2_drift=float(np.mean((mean_drift - a_true) ** 2)),
        var_drift=float(np.mean(var_drift_k)),
        bias2_diff2=float(np.mean((mean_diff2 - d2_true) ** 2)),
        var_diff2=float(np.mean(var_diff2_k)),
        pred_var_drift=float(np.mean(d2_true / (m * dt))),
        pred_var_diff2=float(np.mean(2.0 * d2_true ** 2 / m)),
        gen_seconds=float(sum(p["gen_seconds"] for p in good)),
        burn_seconds=float(sum(p["burn_seconds"] for p in good)),
        n_pairs_mean=float(np.mean([p["n_pairs"] for p in good])),
        per_bin={
            "centers": centers,
            "mean_drift": mean_drift,
            "mean_diff2": mean_diff2,
            "var_drift": var_drift_k,
            "var_diff2": var_diff2_k,
            "drift_true": a_true,
            "diff2_true": d2_true,
        },
    )
    return result


def run_regime(model_name: str, lo: float, hi: float, nb: int,
               ladder: Sequence, mc: int, seed: int,
               model_params: dict = None, workers: Optional[int] = None,
               **cell_kwargs):
    """run_mse over a ladder of (m_per_bin, dt_obs) cells."""
    results = []
    for i, (m, dt) in enumerate(ladder):
        cell = make_cell(model_name, lo, hi, nb, m, dt, cell_id=i,
                         model_params=model_params, **cell_kwargs)
        results.append(run_mse(cell, mc, seed, workers=workers))
    return results


def run_m_doubling(model_name: str, lo: float, hi: float,
                   dx_list: Sequence[float], dt_list: Sequence[float],
                   m1: int, m2: int, mc: int, seed: int,
                   model_params: dict = None, workers: Optional[int] = None,
                   **cell_kwargs):
    """Per-cell MSE ratios between pairs-per-bin counts m1 and m2 = 2*m1
    across the (bin width, observation step) sweep.

    Cells whose MSE is indistinguishable from zero (noiseless dynamics)
    are flagged degenerate rather than given a ratio. Returns
    (results_m1, results_m2, ratio_rows).
    """
    if m2 != 2 * m1:
        raise ValidationError(f"m2 must be exactly 2*m1, got m1={m1}, m2={m2}")
    res1, rows1 = run_sweep(model_name, lo, hi, dx_list, dt_list, m1, mc,
                            seed, model_params=model_params, workers=workers,
                            **cell_kwargs)
    res2, rows2 = run_sweep(model_name, lo, hi, dx_list, dt_list, m2, mc,
                            seed, model_params=model_params, workers=workers,
                            **cell_kwargs)
    tiny = 1e-14
    rows = []
    for r1, r2 in zip(rows1, rows2):
        degenerate = (r1["mse_drift"] < tiny or r2["mse_drift"] < tiny or
                      r1["mse_diff2"] < tiny or r2["mse_diff2"] < tiny)
        rows.append({
            "dx": r1["dx"],
            "dt_obs": r1["dt_obs"],
            "m1": m1,
            "m2": m2,
            "ratio_drift": (float("nan") if degenerate
                            else r1["mse_drift"] / r2["mse_drift"]),
            "ratio_diff2": (float("nan") if degenerate
                            else r1["mse_diff2"] / r2["mse_diff2"]),
            "degenerate": degenerate,
        })
    return res1, res2, rows


def run_sweep(model_name: str, lo: float, hi: float, dx_list: Sequence[float],
              dt_list: Sequence[float], m_per_bin: int, mc: int, seed: int,
              model_params: dict = None, workers: Optional[int] = None,
              **cell_kwargs):
    """MSE over the (bin width, observation step) grid.

    Each bin width must tile [lo, hi] exactly. Cell ids enumerate the grid
    row-major (dx outer, dt inner) so reruns reproduce bit-identically.
    """
    span = float(hi) - float(lo)
    cells = []
    for i, dx in enumerate(dx_list):
        nb = int(round(span / dx))
        if abs(nb * dx - span) > 1e-9 * span:
            raise ValidationError(
                f"bin width {dx} does not tile [{lo}, {hi}] exactly"
            )
        for j, dt in enumerate(dt_list):
            cells.append(make_cell(model_name, lo, hi, nb, m_per_bin, dt,
                                   cell_id=i * len(dt_list) + j,
                                   model_params=model_params, **cell_kwargs))
    results = [run_mse(c, mc, seed, workers=workers) for c in cells]
    rows = []
    for c, res in zip(cells, results):
        rows.append({
            "dx": (c.hi - c.lo) / c.nb,
            "dt_obs": c.dt_obs,
            "nb": c.nb,
            "m_per_bin": c.m_per_bin,
            "mse_drift": res.mse_drift,
            "mse_drift_se": res.mse_drift_se,
            "mse_diff2": res.mse_diff2,
            "mse_diff2_se": res.mse_diff2_se,
            "bias2_drift": res.bias2_drift,
            "var_drift": res.var_drift,
            "bias2_diff2": res.bias2_diff2,
            "var_diff2": res.var_diff2,
            "mc_used": res.mc_used,
        })
    return results, rows


def pooled_estimate(cell: Cell, mc: int, seed: int,
                    workers: Optional[int] = None) -> BinnedEstimate:
    """Ensemble-pooled binned estimate.

    Every realization contributes exactly m_per_bin pairs to each bin, so
    the mean over realizations of the per-bin estimates equals the pooled
    estimate over mc * m_per_bin pairs; the across-realization scatter
    yields its standard error directly.
    """
    payloads = [p for p in _run_ensemble(cell, mc, seed, workers)
                if not p["diverged"]]
    if len(payloads) < mc:
        raise DivergenceError(
            f"{mc - len(payloads)}/{mc} realizations diverged during pooling"
        )
    drift = np.stack([p["drift"] for p in payloads])
    diff2 = np.stack([p["diff2"] for p in payloads])
    n = len(payloads)
    grid = cell.grid()
    sqrt_n = np.sqrt(n)
    return BinnedEstimate(
        grid=grid,
        dt_obs=cell.dt_obs,
        mode=cell.mode,
        counts=np.full(grid.nb, n * cell.m_per_bin, dtype=np.int64),
        drift=drift.mean(axis=0),
        drift_se=(drift.std(axis=0, ddof=1) / sqrt_n if n > 1
                  else np.full(grid.nb, np.nan)),
        diff2=diff2.mean(axis=0),
        diff2_se=(diff2.std(axis=0, ddof=1) / sqrt_n if n > 1
                  else np.full(grid.nb, np.nan)),
        n_pairs_in=n * cell.m_per_bin * grid.nb,
        n_pairs_total=int(sum(p["n_pairs"] for p in payloads)),
    )


def timing_rows(results: Sequence[MSEResult]):
    """Wall-clock accounting per cell: generation vs burn-in, pair rate."""
    rows = []
    for res in results:
        c = res.cell
        total = res.gen_seconds + res.burn_seconds
        n_pairs = res.n_pairs_mean * res.mc_used
        rows.append({
            "cell_id": c.cell_id,
            "model": c.model_name,
            "m_per_bin": c.m_per_bin,
            "dt_obs": c.dt_obs,
            "nb": c.nb,
            "mc_used": res.mc_used,
            "pairs_total": n_pairs,
            "gen_seconds": res.gen_seconds,
            "burn_seconds": res.burn_seconds,
            "pairs_per_second": n_pairs / res.gen_seconds if res.gen_seconds > 0
                                 else float("inf"),
            "burn_fraction": res.burn_seconds / total if total > 0 else 0.0,
        })
    return rows


# ---------------------------------------------------------------------------
# exact pair synthesis for the linear model (test and validation aid)


def ou_exact_bin_pairs(theta: float, sigma: float, lo: float, hi: float,
                       m: int, dt_obs: float, rng) -> TransitionPairSet:
    """Exact transition pairs whose starts are stationary conditioned on
    [lo, hi]: the linear-drift model transitions in closed form, so these
    pairs carry no integration error at all."""
    from scipy.stats import truncnorm

    from .models import (ou_conditional_mean_factor, ou_conditional_var,
                         ou_stationary_std)

    rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
    s = ou_stationary_std(theta, sigma)
    a, b = lo / s, hi / s
    starts = truncnorm.rvs(a, b, scale=s, size=m, random_state=rng)
    mean = starts * ou_conditional_mean_factor(theta, dt_obs)
    sd = np.sqrt(ou_conditional_var(theta, sigma, dt_obs))
    ends = mean + sd * rng.standard_normal(m)
    return TransitionPairSet(starts=starts, ends=ends, dt_obs=float(dt_obs),
                             model_name="ou", scheme="exact", dt_int=0.0)


def ou_exact_grid_pairs(theta: float, sigma: float, grid: BinGrid, m: int,
                        dt_obs: float, rng) -> TransitionPairSet:
    """Exact pairs, m per bin, across a whole grid."""
    rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
    parts = [ou_exact_bin_pairs(theta, sigma, grid.edges[k], grid.edges[k + 1],
                                m, dt_obs, rng)
             for k in range(grid.nb)]
    return TransitionPairSet(
        starts=np.concatenate([p.starts for p in parts]),
        ends=np.concatenate([p.ends for p in parts]),
        dt_obs=float(dt_obs),
        model_name="ou",
        scheme="exact",
        dt_int=0.0,
    )
