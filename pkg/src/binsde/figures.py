"""Figure rendering for the report pipeline.

Every function renders one PNG from already-computed results and returns
the path written; nothing here recomputes statistics, so the figures are
pure views of the delimited outputs they sit next to.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

__all__ = [
    "fig_estimate",
    "fig_fit",
    "fig_regimes",
    "fig_sweep_heatmap",
    "fig_timing",
]

_DPI = 150


def _save(fig, path):
    path = Path(path)
    fig.tight_layout()
    fig.savefig(path, dpi=_DPI)
    plt.close(fig)
    return path


def fig_estimate(est, path, model=None):
    """Per-bin drift and squared-diffusion estimates with standard-error
    bars, with the model's true curves overlaid when available."""
    fig, (ax_a, ax_d) = plt.subplots(1, 2, figsize=(9, 3.6))
    x = est.grid.centers
    ok = ~est.empty
    ax_a.errorbar(x[ok], est.drift[ok], yerr=est.drift_se[ok], fmt="o",
                  ms=3.5, lw=1, capsize=2, label="binned estimate")
    ax_d.errorbar(x[ok], est.diff2[ok], yerr=est.diff2_se[ok], fmt="o",
                  ms=3.5, lw=1, capsize=2, color="tab:orange",
                  label="binned estimate")
    if model is not None:
        xs = np.linspace(est.grid.lo, est.grid.hi, 400)
        ax_a.plot(xs, [model.drift(v) for v in xs], "k-", lw=1, label="true")
        ax_d.plot(xs, [model.diffusion(v) ** 2 for v in xs], "k-", lw=1,
                  label="true")
    ax_a.set_xlabel("x")
    ax_a.set_ylabel("drift")
    ax_d.set_xlabel("x")
    ax_d.set_ylabel("squared diffusion")
    for ax in (ax_a, ax_d):
        ax.legend(fontsize=8)
        ax.grid(alpha=0.3)
    return _save(fig, path)


def fig_fit(est, report, path, min_count: int = 0):
    """Binned points with the fitted polynomial curves."""
    fig, (ax_a, ax_d) = plt.subplots(1, 2, figsize=(9, 3.6))
    x = est.grid.centers
    ok = (~est.empty) & (est.counts >= min_count)
    xs = np.linspace(est.grid.lo, est.grid.hi, 400)
    ax_a.plot(x[ok], est.drift[ok], "o", ms=3.5, label="binned estimate")
    ax_a.plot(xs, report.drift.predict(xs), "-", lw=1.2,
              label=f"{report.drift.method} fit")
    ax_d.plot(x[ok], est.diff2[ok], "o", ms=3.5, color="tab:orange",
              label="binned estimate")
    ax_d.plot(xs, report.diff2.predict(xs), "-", lw=1.2, color="tab:red",
              label=f"{report.diff2.method} fit")
    ax_a.set_xlabel("x")
    ax_a.set_ylabel("drift")
    ax_d.set_xlabel("x")
    ax_d.set_ylabel("squared diffusion")
    for ax in (ax_a, ax_d):
        ax.legend(fontsize=8)
        ax.grid(alpha=0.3)
    return _save(fig, path)


def fig_regimes(results_const, results_growing, path):
    """MSE vs pairs-per-bin for the two sampling regimes, log-log.

    Constant M*dt keeps the drift error flat; growing M*dt sends both
    errors down roughly like 1/M.
    """
    fig, (ax_a, ax_d) = plt.subplots(1, 2, figsize=(9, 3.6))
    for results, marker, name in ((results_const, "o", "M*dt constant"),
                                  (results_growing, "s", "M*dt growing")):
        if not results:
            continue
        m = [r.cell.m_per_bin for r in results]
        ax_a.errorbar(m, [r.mse_drift for r in results],
                      yerr=[r.mse_drift_se for r in results],
                      fmt=marker + "-", ms=4, lw=1, capsize=2, label=name)
        ax_d.errorbar(m, [r.mse_diff2 for r in results],
                      yerr=[r.mse_diff2_se for r in results],
                      fmt=marker + "-", ms=4, lw=1, capsize=2, label=name)
    for ax, title in ((ax_a, "drift MSE"), (ax_d, "squared-diffusion MSE")):
        ax.set_xscale("log")
        ax.set_yscale("log")
        ax.set_xlabel("pairs per bin M")
        ax.set_ylabel(title)
        ax.legend(fontsize=8)
        ax.grid(alpha=0.3, which="both")
    return _save(fig, path)


def fig_sweep_heatmap(rows, field, path, title=None):
    """Heatmap of one MSE field over the (dt, dx) sweep grid."""
    dxs = sorted({r["dx"] for r in rows})
    dts = sorted({r["dt_obs"] for r in rows})
    z = np.full((len(dxs), len(dts)), np.nan)
    for r in rows:
        z[dxs.index(r["dx"]), dts.index(r["dt_obs"])] = r[field]
    fig, ax = plt.subplots(figsize=(5.4, 3.8))
    with np.errstate(divide="ignore"):
        img = ax.imshow(np.log10(z), origin="lower", aspect="auto",
                        cmap="viridis")
    ax.set_xticks(range(len(dts)), [f"{v:g}" for v in dts], fontsize=8)
    ax.set_yticks(range(len(dxs)), [f"{v:g}" for v in dxs], fontsize=8)
    ax.set_xlabel("observation step dt")
    ax.set_ylabel("bin width dx")
    ax.set_title(title or f"log10 {field}", fontsize=10)
    fig.colorbar(img, ax=ax, shrink=0.9)
    return _save(fig, path)


def fig_timing(timing, path):
    """Wall-clock pair-generation time per cell, grouped by bin count."""
    fig, ax = plt.subplots(figsize=(5.4, 3.8))
    nbs = sorted({t["nb"] for t in timing})
    for nb in nbs:
        rows = sorted((t for t in timing if t["nb"] == nb),
                      key=lambda t: t["dt_obs"])
        ax.plot([t["dt_obs"] for t in rows],
                [t["gen_seconds"] for t in rows],
                "o-", ms=4, lw=1, label=f"{nb} bins")
    ax.set_xscale("log")
    ax.set_yscale("log")
    ax.set_xlabel("observation step dt")
    ax.set_ylabel("generation wall time (s)")
    ax.legend(fontsize=8)
    ax.grid(alpha=0.3, which="both")
    return _save(fig, path)
