"""Weighted polynomial regression: least squares, ridge, and lasso paths."""

import numpy as np
import pytest
from numpy.polynomial import polynomial as npp

from binsde.binned import make_grid
from binsde.errors import ConvergenceError, ValidationError
from binsde.models import builtin_model
from binsde.regression import (
    FitReport,
    fit_field,
    fit_pipeline,
    fit_polynomial,
    lambda_max,
)


def _poly_data(seed=0, n=60, coef=(0.5, -1.0, 0.0, 2.0), noise=0.0):
    rng = np.random.default_rng(seed)
    x = rng.uniform(-1.0, 1.0, n)
    y = npp.polyval(x, np.asarray(coef, float)) + noise * rng.normal(size=n)
    return x, y


def test_ols_recovers_exact_polynomial():
    x, y = _poly_data()
    fit = fit_polynomial(x, y, degree=3, method="ols")
    np.testing.assert_allclose(fit.coefficients, [0.5, -1.0, 0.0, 2.0], atol=1e-10)
    np.testing.assert_allclose(fit.predict(x), y, atol=1e-10)
    assert fit.diagnostics["weighted_r2"] == pytest.approx(1.0)
    assert fit.diagnostics["weighted_rmse"] < 1e-10
    assert fit.diagnostics["n_points"] == 60


def test_ols_requires_enough_informative_points():
    x, y = _poly_data(n=3)
    with pytest.raises(ValidationError):
        fit_polynomial(x, y, degree=3, method="ols")
    # plenty of points but a single repeated abscissa is rank deficient
    x = np.full(20, 0.7)
    y = np.ones(20)
    with pytest.raises(ValidationError):
        fit_polynomial(x, y, degree=3, method="ols")


def test_weighting_matches_replication():
    rng = np.random.default_rng(5)
    x, y = _poly_data(seed=6, n=25, noise=0.3)
    w = rng.integers(1, 5, size=25).astype(float)
    weighted = fit_polynomial(x, y, degree=3, method="ols", weights=w)
    xr = np.repeat(x, w.astype(int))
    yr = np.repeat(y, w.astype(int))
    replicated = fit_polynomial(xr, yr, degree=3, method="ols")
    np.testing.assert_allclose(
        weighted.coefficients, replicated.coefficients, atol=1e-10
    )


def test_lasso_without_penalty_matches_least_squares():
    x, y = _poly_data(seed=7, n=80, noise=0.05)
    ols = fit_polynomial(x, y, degree=3, method="ols")
    lasso = fit_polynomial(x, y, degree=3, method="lasso", lam=0.0)
    np.testing.assert_allclose(lasso.coefficients, ols.coefficients, atol=1e-6)


def test_ridge_without_penalty_matches_least_squares():
    x, y = _poly_data(seed=8, n=80, noise=0.05)
    ols = fit_polynomial(x, y, degree=3, method="ols")
    ridge = fit_polynomial(x, y, degree=3, method="ridge", lam=0.0)
    np.testing.assert_allclose(ridge.coefficients, ols.coefficients, atol=1e-6)


def test_penalty_at_lambda_max_zeroes_every_slope():
    x, y = _poly_data(seed=9, n=50, noise=0.2)
    w = np.ones_like(x)
    top = lambda_max(x, y, w, degree=3)
    fit = fit_polynomial(x, y, degree=3, method="lasso", lam=top * 1.0001)
    assert np.all(fit.coefficients[1:] == 0.0)
    # the intercept is never penalized, so it lands on the weighted mean
    assert fit.coefficients[0] == pytest.approx(y.mean(), rel=1e-10)
    np.testing.assert_array_equal(fit.active, [0])
    just_below = fit_polynomial(x, y, degree=3, method="lasso", lam=top * 0.999)
    assert len(just_below.active) > 1


def test_lasso_zeros_are_exact_and_kkt_is_satisfied():
    # odd signal: the penalty must produce exact zeros (not merely small
    # values) while keeping enough support to track the data
    x, y = _poly_data(seed=10, n=200, coef=(0.0, 1.0, 0.0, -2.0), noise=0.02)
    fit = fit_polynomial(x, y, degree=5, method="lasso", lam=0.05)
    dropped = np.flatnonzero(fit.coefficients == 0.0)
    assert len(dropped) >= 2, fit.coefficients
    assert len(fit.active) >= 1
    assert fit.diagnostics["kkt_max_violation"] < 1e-6
    assert fit.diagnostics["n_iter"] >= 1
    resid = y - fit.predict(x)
    assert np.sqrt(np.mean(resid**2)) < 0.2


def test_relaxed_refit_unshrinks_the_kept_support():
    x, y = _poly_data(seed=11, n=300, coef=(0.3, 0.0, 0.0, -1.5), noise=0.05)
    w = np.full_like(x, 2.0)
    shrunk = fit_polynomial(x, y, degree=4, method="lasso", lam=0.02, weights=w)
    relaxed = fit_polynomial(
        x, y, degree=4, method="lasso", lam=0.02, weights=w, refit=True
    )
    assert relaxed.diagnostics["refit"] == "ols-on-support"
    np.testing.assert_allclose(
        relaxed.diagnostics["cd_coefficients"], shrunk.coefficients, atol=1e-12
    )
    # zeros survive the refit, kept coefficients are re-estimated without
    # shrinkage: they must equal a direct weighted solve on the support
    support = np.flatnonzero(shrunk.coefficients[1:]) + 1
    np.testing.assert_array_equal(
        np.flatnonzero(relaxed.coefficients[1:]) + 1, support
    )
    cols = np.column_stack([x**j for j in (0, *support)])
    sw = np.sqrt(w)
    sol = np.linalg.lstsq(sw[:, None] * cols, sw * y, rcond=None)[0]
    assert relaxed.coefficients[0] == pytest.approx(sol[0], rel=1e-10)
    np.testing.assert_allclose(relaxed.coefficients[support], sol[1:], rtol=1e-10)


def test_training_error_grows_with_penalty():
    x, y = _poly_data(seed=12, n=150, noise=0.1)
    rmses = [
        fit_polynomial(x, y, degree=4, method="lasso", lam=lam).diagnostics[
            "weighted_rmse"
        ]
        for lam in (0.0, 0.01, 0.1, 1.0)
    ]
    assert all(b >= a - 1e-12 for a, b in zip(rmses, rmses[1:]))


def test_heavy_ridge_shrinks_toward_weighted_mean():
    x, y = _poly_data(seed=13, n=80, noise=0.1)
    fit = fit_polynomial(x, y, degree=3, method="ridge", lam=1e8)
    assert np.all(np.abs(fit.coefficients[1:]) < 1e-4)
    assert fit.coefficients[0] == pytest.approx(y.mean(), abs=1e-4)


def test_cross_validation_selects_and_reports_a_path():
    x, y = _poly_data(seed=14, n=240, coef=(0.0, 1.0, 0.0, -2.0), noise=0.3)
    fit = fit_polynomial(x, y, degree=5, method="lasso")
    d = fit.diagnostics
    assert len(d["lambda_grid"]) == 30
    assert len(d["cv_mse"]) == 30 and len(d["cv_se"]) == 30
    assert d["cv_rule"] == "1se"
    assert fit.lam in d["lambda_grid"]
    # the one-standard-error choice never undercuts the raw minimizer
    assert fit.lam >= d["lambda_min_rule"]


def test_unconverged_descent_raises():
    x, y = _poly_data(seed=15, n=100, noise=0.1)
    with pytest.raises(ConvergenceError):
        fit_polynomial(x, y, degree=4, method="lasso", lam=0.01, tol=0.0, max_iter=1)


class SimpleEstimate:
    def __init__(self, **kw):
        self.__dict__.update(kw)


def _synthetic_estimate(drift_coef, diff2_coef, nb=20, counts_value=500):
    grid = make_grid(-1.0, 1.0, nb)
    c = grid.centers
    counts = np.full(nb, counts_value, dtype=np.int64)
    return SimpleEstimate(
        grid=grid,
        dt_obs=0.01,
        mode="endpoint",
        counts=counts,
        drift=npp.polyval(c, np.asarray(drift_coef, float)),
        drift_se=np.full(nb, 0.01),
        diff2=npp.polyval(c, np.asarray(diff2_coef, float)),
        diff2_se=np.full(nb, 0.01),
    )


def test_fit_field_excludes_thin_bins():
    est = _synthetic_estimate([0.0, 1.0], [1.0, 0.0])
    est.counts[:4] = 10
    est.drift[0] = 50.0  # junk that the count filter must drop
    fit = fit_field(est, target="drift", degree=2, method="ols", min_count=100)
    assert fit.diagnostics["bins_used"] == 16
    assert fit.diagnostics["target"] == "drift"
    assert fit.diagnostics["min_count"] == 100
    np.testing.assert_allclose(fit.coefficients, [0.0, 1.0, 0.0], atol=1e-8)


def test_fit_field_validation():
    est = _synthetic_estimate([0.0, 1.0], [1.0, 0.0])
    with pytest.raises(ValidationError):
        fit_field(est, target="curvature")
    est.counts[:] = 10
    with pytest.raises(ValidationError):
        fit_field(est, target="drift", min_count=100)


def test_fit_pipeline_reports_truth_errors():
    # drift -x^3 and squared diffusion 0.5 (1 + x)^2 on a clean estimate
    est = _synthetic_estimate([0.0, 0.0, 0.0, -1.0], [0.5, 1.0, 0.5])
    truth = builtin_model("cubic")
    report = fit_pipeline(est, degree=4, method="ols", min_count=1, truth=truth)
    assert isinstance(report, FitReport)
    np.testing.assert_allclose(
        report.drift.coefficients, [0.0, 0.0, 0.0, -1.0, 0.0], atol=1e-8
    )
    np.testing.assert_allclose(
        report.diff2.coefficients, [0.5, 1.0, 0.5, 0.0, 0.0], atol=1e-8
    )
    # truth errors are reported per coefficient
    assert np.all(report.errors["drift_abs_error"] < 1e-8)
    assert np.all(report.errors["diff2_abs_error"] < 1e-8)
