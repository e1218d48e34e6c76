"""End-to-end acceptance suite.

Eleven numbered criteria cover the full pipeline: stochastic-integral
moments and identities, the exact-OU oracle, the two sampling regimes, bin
width insensitivity, published MSE values, M-doubling, polynomial recovery
at the two headline sampling settings, the centered-estimator bias law,
the truncated-moment expansion order, and the strong convergence orders of
the integrators. Each test prints one PASS/FAIL line; run with ``-s`` to
see them as they complete. The whole module takes roughly eight minutes
on one core.
"""

import math
import time

import numpy as np
import pytest
from scipy import stats

from binsde.binned import (
    estimate,
    estimate_centered,
    make_grid,
    richardson_check,
    truncated_expectation,
)
from binsde.experiments import (
    REGIME_MDT_CONST,
    REGIME_MDT_GROWING,
    make_cell,
    ou_exact_bin_pairs,
    pooled_estimate,
    run_m_doubling,
    run_mse,
    run_regime,
)
from binsde.integrals import derive_multiple_integrals, moment_table, sample_step_noise
from binsde.integrate import (
    FixedPerBin,
    SimulationConfig,
    generate_pairs,
    strong_error_sweep,
)
from binsde.models import (
    builtin_model,
    density_from_model,
    ou_conditional_mean_factor,
    ou_conditional_var,
)
from binsde.regression import fit_field

SEED_BASE = 20260816


def _report(num, ok, detail):
    line = f"[criterion {num:02d}] {'PASS' if ok else 'FAIL'}: {detail}"
    print(line)
    assert ok, line


# ---------------------------------------------------------------------------
# criterion 1: moment suite at three observation steps


def test_criterion_01_integral_moments():
    t0 = time.perf_counter()
    watched = {"i1^2", "i11^2", "i01^2", "i10^2", "i11", "i111", "i1*i11"}
    worst = 0.0
    for k, dt in enumerate((0.005, 0.01, 0.02)):
        rng = np.random.default_rng(np.random.SeedSequence([SEED_BASE, k]))
        rows = moment_table(dt, 1_000_000, rng)
        seen = {r["spec"] for r in rows}
        assert watched <= seen
        for r in rows:
            if r["spec"] in watched:
                worst = max(worst, abs(r["z"]))
    elapsed = time.perf_counter() - t0
    ok = worst <= 3.0 and elapsed < 30.0
    _report(1, ok, f"worst |z| = {worst:.2f} (limit 3), {elapsed:.1f}s (limit 30s)")


# ---------------------------------------------------------------------------
# criterion 2: deterministic integral identities


def test_criterion_02_identities_bit_exact():
    dt = 0.01
    rng = np.random.default_rng(np.random.SeedSequence([SEED_BASE, 99]))
    mi = derive_multiple_integrals(sample_step_noise(dt, rng, n=1_000_000))
    ok_11 = np.array_equal(mi.i11, 0.5 * (mi.i1 * mi.i1 - dt))
    ok_111 = np.array_equal(
        mi.i111, (mi.i1 * mi.i1 * mi.i1 - 3.0 * dt * mi.i1) / 6.0
    )
    # I01 + I10 = dW dt re-associates the subtraction that defines I01, so
    # the comparison allows one ulp at the magnitude of the summands
    err = np.abs((mi.i01 + mi.i10) - mi.i1 * dt)
    bound = np.spacing(np.maximum(np.abs(mi.i01), np.abs(mi.i10)))
    n_bad = int(np.count_nonzero(err > bound))
    ok = ok_11 and ok_111 and n_bad == 0
    _report(
        2,
        ok,
        f"I11 exact={ok_11}, I111 exact={ok_111}, "
        f"I01+I10 ulp violations={n_bad}/1000000",
    )


# ---------------------------------------------------------------------------
# criterion 3: exact OU conditional moments, every bin


def test_criterion_03_ou_oracle():
    t0 = time.perf_counter()
    theta = sigma = 1.0
    dt, m = 0.01, 100_000
    grid = make_grid(-0.5, 0.5, 10)
    model = builtin_model("ou")
    pairs = generate_pairs(
        model,
        SimulationConfig(),
        dt,
        FixedPerBin(m, grid),
        np.random.SeedSequence([31]),
    )
    est = estimate(pairs, grid)
    dens = density_from_model(model)
    f = ou_conditional_mean_factor(theta, dt)
    vc = ou_conditional_var(theta, sigma, dt)
    z_a = np.empty(grid.nb)
    z_d = np.empty(grid.nb)
    for b in range(grid.nb):
        lo, hi = grid.edges[b], grid.edges[b + 1]
        ex = truncated_expectation(dens, lambda x: x, lo, hi)
        ex2 = truncated_expectation(dens, lambda x: x * x, lo, hi)
        pred_a = ex * (f - 1.0) / dt
        pred_d = (ex2 * (f - 1.0) ** 2 + vc) / dt
        z_a[b] = (est.drift[b] - pred_a) / est.drift_se[b]
        z_d[b] = (est.diff2[b] - pred_d) / est.diff2_se[b]
    elapsed = time.perf_counter() - t0
    wa, wd = np.abs(z_a).max(), np.abs(z_d).max()
    ok = wa <= 3.0 and wd <= 3.0 and elapsed < 60.0
    _report(
        3,
        ok,
        f"max |z| drift {wa:.2f}, diffusion {wd:.2f} (limit 3), "
        f"{elapsed:.1f}s (limit 60s)",
    )


# ---------------------------------------------------------------------------
# criteria 4+5 share six regime runs (two ladders, three bin counts)


@pytest.fixture(scope="module")
def regime_runs():
    runs = {}
    for regime, ladder, seed in (
        ("const", REGIME_MDT_CONST, 1001),
        ("growing", REGIME_MDT_GROWING, 1002),
    ):
        for nb in (10, 20, 40):
            runs[regime, nb] = run_regime(
                "cubic", -0.5, 0.5, nb, ladder, mc=100, seed=seed
            )
    return runs


def test_criterion_04_regime_dichotomy(regime_runs):
    const = regime_runs["const", 20]
    growing = regime_runs["growing", 20]
    mse_const = np.array([r.mse_drift for r in const])
    ratio = mse_const.max() / mse_const.min()

    ms = np.array([r.cell.m_per_bin for r in growing], dtype=float)
    mse_drift = np.array([r.mse_drift for r in growing])
    rho = stats.spearmanr(ms, mse_drift).statistic

    mse_diff2 = np.array([r.mse_diff2 for r in growing])
    slope = np.polyfit(np.log(ms), np.log(mse_diff2), 1)[0]

    ok = ratio <= 2.0 and rho <= -0.8 and abs(slope + 1.0) <= 0.2
    _report(
        4,
        ok,
        f"const drift-MSE max/min {ratio:.2f} (limit 2); growing Spearman "
        f"{rho:.2f} (limit -0.8), diffusion slope {slope:.3f} (-1 +- 0.2)",
    )


def test_criterion_05_bin_width_insensitivity(regime_runs):
    worst = 0.0
    for regime in ("const", "growing"):
        stacks = [regime_runs[regime, nb] for nb in (10, 20, 40)]
        for i in range(len(stacks[0])):
            for field in ("mse_drift", "mse_diff2"):
                vals = np.array([getattr(s[i], field) for s in stacks])
                worst = max(worst, vals.max() / vals.min())
    ok = worst <= 1.5
    _report(5, ok, f"worst per-cell MSE max/min across NB 10/20/40 = {worst:.3f} (limit 1.5)")


# ---------------------------------------------------------------------------
# criterion 6: published double-well MSE values


def test_criterion_06_published_values():
    cell1 = make_cell("dw_additive", -1.0, 1.0, 20, 1000, 0.01, cell_id=61)
    cell2 = make_cell("dw_additive", -1.0, 1.0, 20, 2000, 0.01, cell_id=62)
    r1 = run_mse(cell1, mc=100, seed=2026)
    r2 = run_mse(cell2, mc=100, seed=2026)
    checks = (
        ("drift MSE (1000, 0.01)", r1.mse_drift, 0.025),
        ("diffusion MSE (1000, 0.01)", r1.mse_diff2, 1.4e-4),
        ("drift MSE (2000, 0.01)", r2.mse_drift, 0.0123),
    )
    ok = all(ref / 2.0 <= got <= ref * 2.0 for _, got, ref in checks)
    detail = "; ".join(f"{name} {got:.4g} vs {ref:g}" for name, got, ref in checks)
    _report(6, ok, detail + " (factor-2 bands)")


# ---------------------------------------------------------------------------
# criterion 7: doubling M should roughly halve the MSE


def test_criterion_07_m_doubling():
    _, _, rows = run_m_doubling(
        "cubic",
        -0.5,
        0.5,
        [0.025, 0.05, 0.1, 0.25],
        [0.0005, 0.001, 0.0025, 0.005, 0.007, 0.01],
        500,
        1000,
        mc=60,
        seed=77,
    )
    ratios = [r["ratio_drift"] for r in rows] + [r["ratio_diff2"] for r in rows]
    ratios = np.array(ratios)
    in_band = np.count_nonzero((ratios >= 1.5) & (ratios <= 2.8))
    frac = in_band / len(ratios)
    ok = frac >= 0.8
    _report(
        7,
        ok,
        f"{in_band}/{len(ratios)} MSE ratios in [1.5, 2.8] "
        f"({100 * frac:.0f}%, need 80%)",
    )


# ---------------------------------------------------------------------------
# criterion 8: polynomial recovery succeeds at (1000, 0.01), fails at
# (1000, 0.001)


def _pipeline_coefficients(dt_obs, cell_id):
    cell = make_cell("cubic", -0.5, 0.5, 20, 1000, dt_obs, cell_id=cell_id)
    est = pooled_estimate(cell, mc=300, seed=1)
    drift = fit_field(est, target="drift", lam=0.03)
    diff2 = fit_field(est, target="diff2", lam=0.03)
    return drift.coefficients, diff2.coefficients


def test_criterion_08_table_recovery_and_negative_result():
    good_a, good_d = _pipeline_coefficients(0.01, cell_id=90)
    bad_a, _ = _pipeline_coefficients(0.001, cell_id=81)

    others = np.delete(np.abs(good_a), 3)
    good_drift_ok = -1.2 <= good_a[3] <= -0.85 and np.all(others <= 0.1)
    want = np.array([0.5, 1.0, 0.5])
    good_diff_ok = bool(np.all(np.abs(good_d[:3] - want) <= 0.05))

    # the short-step row must not recover the cubic: either the x^3 weight
    # collapses or spurious high-degree terms dominate it
    high = abs(bad_a[5]) + abs(bad_a[7])
    bad_ok = abs(bad_a[3]) < 0.5 or high > abs(bad_a[3])

    ok = good_drift_ok and good_diff_ok and bad_ok
    _report(
        8,
        ok,
        f"good drift x^3 {good_a[3]:.3f} (others max {others.max():.3f}); "
        f"good diffusion {good_d[2]:.3f},{good_d[1]:.3f},{good_d[0]:.3f} vs "
        f"0.5,1,0.5; bad row x^3 {bad_a[3]:.3f} with degree-5/7 mass "
        f"{high:.3f}",
    )


# ---------------------------------------------------------------------------
# criterion 9: centered-estimator bias law


def test_criterion_09_centered_bias_law():
    theta = sigma = 1.0
    dt, center, m = 0.01, 0.4, 1_000_000
    sd2 = sigma**2 / (2.0 * theta)
    rng = np.random.default_rng(np.random.SeedSequence([17]))
    measured = {}
    for dx in (0.1, 0.05):
        g = make_grid(center - dx / 2, center + dx / 2, 1)
        pairs = ou_exact_bin_pairs(theta, sigma, g.lo, g.hi, m, dt, rng)
        gap = estimate_centered(pairs, g).drift[0] - estimate(pairs, g).drift[0]
        pred = (-center / sd2) / 12.0 * dx * dx / dt
        measured[dx] = (gap, pred)
    r1 = measured[0.1][0] / measured[0.1][1]
    r2 = measured[0.05][0] / measured[0.05][1]
    scale = measured[0.1][0] / measured[0.05][0]
    ok = 0.7 <= r1 <= 1.3 and 0.7 <= r2 <= 1.3 and 8.0 / 3.0 <= scale <= 6.0
    _report(
        9,
        ok,
        f"bias/prediction {r1:.2f} (dx=0.1), {r2:.2f} (dx=0.05) in [0.7, 1.3]; "
        f"halving scale {scale:.2f} (~4x)",
    )


# ---------------------------------------------------------------------------
# criterion 10: fourth-order residual of the truncated-moment expansion


def test_criterion_10_expansion_order():
    cases = (
        ("ou", 0.4),
        ("cubic", 0.25),
    )
    fs = (
        (lambda x: x, lambda x: np.ones_like(np.asarray(x, float)), lambda x: np.zeros_like(np.asarray(x, float))),
        (lambda x: x * x, lambda x: 2.0 * x, lambda x: np.full_like(np.asarray(x, float), 2.0)),
        (np.sin, np.cos, lambda x: -np.sin(x)),
    )
    worst_lo, worst_hi = np.inf, 0.0
    for name, center in cases:
        dens = density_from_model(builtin_model(name))
        for f, f1, f2 in fs:
            out = richardson_check(dens, f, f1, f2, center, [0.1, 0.05, 0.025])
            for r in out["ratios"]:
                worst_lo = min(worst_lo, r)
                worst_hi = max(worst_hi, r)
    ok = worst_lo >= 12.0 and worst_hi <= 20.0
    _report(
        10,
        ok,
        f"Richardson ratios span [{worst_lo:.1f}, {worst_hi:.1f}] within [12, 20]",
    )


# ---------------------------------------------------------------------------
# criterion 11: strong convergence orders of the integrators


def test_criterion_11_strong_orders():
    res = strong_error_sweep(
        builtin_model("cubic"),
        [2e-4, 1e-4, 5e-5, 2.5e-5],
        6.25e-6,
        0.5,
        2000,
        np.random.SeedSequence([911]),
    )
    s_mil = res["slopes"]["milstein"]
    s_15 = res["slopes"]["strong15"]
    ok = abs(s_mil - 1.0) <= 0.25 and abs(s_15 - 1.5) <= 0.25
    _report(
        11,
        ok,
        f"milstein slope {s_mil:.2f} (1 +- 0.25), strong15 slope {s_15:.2f} "
        f"(1.5 +- 0.25)",
    )
