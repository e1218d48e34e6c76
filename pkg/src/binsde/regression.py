"""Weighted polynomial regression on binned estimates.

Fits y_k ~ sum_j c_j x_k^j with per-bin weights (normally the bin counts,
since per-bin estimator variance scales like 1/count). Three methods:

``ols``    weighted least squares via lstsq on the sqrt-weight-scaled design
``ridge``  L2 penalty on standardized non-constant columns, closed form
``lasso``  L1 penalty, cyclic coordinate descent on standardized columns

The constant term is never penalized; penalized methods center it out and
de-standardize afterwards, so reported coefficients are always in the raw
monomial basis, lowest order first. When no penalty strength is supplied
for lasso/ridge it is chosen by deterministic k-fold cross-validation with
folds assigned by rank of x modulo the fold count, so every fold spans the
full x range and results carry no RNG dependence.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from numba import njit
from numpy.polynomial import polynomial as npp

from .errors import ConvergenceError, ValidationError

__all__ = ["PolynomialFit", "FitReport", "fit_polynomial", "fit_field",
           "fit_pipeline", "lambda_max"]

_METHODS = ("ols", "ridge", "lasso")


@dataclass(frozen=True)
class PolynomialFit:
    """A fitted polynomial: coefficients[j] multiplies x**j."""

    method: str
    degree: int
    coefficients: np.ndarray
    lam: float
    diagnostics: dict = field(default_factory=dict)

    def predict(self, x):
        return npp.polyval(np.asarray(x, dtype=float), self.coefficients)

    @property
    def active(self) -> np.ndarray:
        """Indices of coefficients kept (|c| > 1e-10)."""
        return np.flatnonzero(np.abs(self.coefficients) > 1e-10)


def _validate_xyw(x, y, weights):
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.ndim != 1 or x.shape != y.shape:
        raise ValidationError("x and y must be equal-length 1-d arrays")
    if weights is None:
        w = np.ones_like(x)
    else:
        w = np.asarray(weights, dtype=float)
        if w.shape != x.shape:
            raise ValidationError("weights must match x in length")
        if np.any(w < 0):
            raise ValidationError("weights must be non-negative")
    keep = np.isfinite(x) & np.isfinite(y) & (w > 0)
    x, y, w = x[keep], y[keep], w[keep]
    if len(x) < 2:
        raise ValidationError(f"need at least 2 usable points, got {len(x)}")
    return x, y, w


def _standardize(X, w):
    """Weighted mean/std per column; zero-variance columns get scale 0 and
    are excluded from penalized updates."""
    W = w.sum()
    mu = (w[:, None] * X).sum(axis=0) / W
    var = (w[:, None] * (X - mu) ** 2).sum(axis=0) / W
    scale = np.sqrt(var)
    Z = np.zeros_like(X)
    ok = scale > 0
    Z[:, ok] = (X[:, ok] - mu[ok]) / scale[ok]
    return Z, mu, scale, ok


def lambda_max(x, y, weights=None, degree: int = 3) -> float:
    """Smallest penalty at which the lasso keeps every non-constant
    coefficient at zero."""
    x, y, w = _validate_xyw(x, y, weights)
    X = np.column_stack([x ** j for j in range(1, degree + 1)])
    Z, _, _, ok = _standardize(X, w)
    W = w.sum()
    ybar = (w * y).sum() / W
    rho = np.abs((w[:, None] * Z).T @ (y - ybar)) / W
    return float(rho[ok].max()) if ok.any() else 0.0


def _soft(v, t):
    if v > t:
        return v - t
    if v < -t:
        return v + t
    return 0.0


@njit(cache=True)
def _cd_sweeps(Z, yc, wz, wsum, lam, beta, cols, tol, max_iter):
    n = Z.shape[0]
    r = yc.copy()
    for j in range(Z.shape[1]):
        if beta[j] != 0.0:
            for i in range(n):
                r[i] -= Z[i, j] * beta[j]
    delta = 0.0
    for it in range(1, max_iter + 1):
        delta = 0.0
        for jj in range(cols.shape[0]):
            j = cols[jj]
            bj = beta[j]
            acc = 0.0
            for i in range(n):
                acc += wz[i, j] * r[i]
            rho = acc / wsum + bj
            if rho > lam:
                bnew = rho - lam
            elif rho < -lam:
                bnew = rho + lam
            else:
                bnew = 0.0
            if bnew != bj:
                step = bj - bnew
                for i in range(n):
                    r[i] += Z[i, j] * step
                beta[j] = bnew
                d = abs(bnew - bj)
                if d > delta:
                    delta = d
        if delta <= tol:
            return it, delta
    return -1, delta


def _lasso_cd(Z, yc, w, lam, beta, ok, tol, max_iter):
    """Cyclic coordinate descent on standardized columns.

    Minimizes (1/2W) sum w (yc - Z beta)^2 + lam * sum |beta|; columns have
    weighted mean-square one, so each update is a plain soft-threshold.
    Returns (beta, n_iter, max_delta_final).
    """
    cols = np.flatnonzero(ok)
    wz = np.ascontiguousarray(w[:, None] * Z)
    it, delta = _cd_sweeps(np.ascontiguousarray(Z), np.ascontiguousarray(yc),
                           wz, float(w.sum()), float(lam), beta, cols,
                           float(tol), int(max_iter))
    if it < 0:
        raise ConvergenceError(
            f"lasso coordinate descent did not reach tol={tol} in "
            f"{max_iter} sweeps (last max update {delta:.3e})"
        )
    return beta, it, delta


def _ridge_closed(Z, yc, w, lam, ok):
    W = w.sum()
    cols = np.flatnonzero(ok)
    Zk = Z[:, cols]
    G = (w[:, None] * Zk).T @ Zk / W + lam * np.eye(len(cols))
    b = (w[:, None] * Zk).T @ yc / W
    beta = np.zeros(Z.shape[1])
    beta[cols] = np.linalg.solve(G, b)
    return beta


def _fit_penalized(x, y, w, degree, method, lam, tol, max_iter, beta0=None):
    """Fit at one penalty; returns raw-basis coefficients, KKT info and the
    standardized solution (reusable as a warm start at a nearby penalty)."""
    X = np.column_stack([x ** j for j in range(1, degree + 1)]) if degree else \
        np.empty((len(x), 0))
    Z, mu, scale, ok = _standardize(X, w)
    W = w.sum()
    ybar = (w * y).sum() / W
    yc = y - ybar
    n_iter = 0
    if degree == 0 or not ok.any():
        beta = np.zeros(X.shape[1])
    elif method == "ridge":
        beta = _ridge_closed(Z, yc, w, lam, ok)
    else:
        beta = np.zeros(X.shape[1])
        if beta0 is not None and beta0.shape == beta.shape:
            beta[ok] = beta0[ok]
        beta, n_iter, _ = _lasso_cd(Z, yc, w, lam, beta, ok, tol, max_iter)

    kkt = 0.0
    if method == "lasso" and ok.any():
        r = yc - Z @ beta
        rho = ((w[:, None] * Z).T @ r) / W
        for j in np.flatnonzero(ok):
            if beta[j] != 0.0:
                kkt = max(kkt, abs(rho[j] - lam * np.sign(beta[j])))
            else:
                kkt = max(kkt, max(0.0, abs(rho[j]) - lam))

    coef = np.zeros(degree + 1)
    slopes = np.zeros(X.shape[1])
    slopes[ok] = beta[ok] / scale[ok]
    coef[1:] = slopes
    coef[0] = ybar - float(slopes @ mu)
    return coef, n_iter, kkt, beta


def _cv_folds(x, n_folds):
    """Fold id per point: rank of x (ties broken by position) modulo
    n_folds, so folds interleave across the x range."""
    order = np.argsort(x, kind="stable")
    fold = np.empty(len(x), dtype=int)
    fold[order] = np.arange(len(x)) % n_folds
    return fold


def _weighted_mse(y, yhat, w):
    return float((w * (y - yhat) ** 2).sum() / w.sum())


def fit_polynomial(x, y, degree: int, method: str = "ols", weights=None,
                   lam: Optional[float] = None, cv_folds: int = 5,
                   lam_grid=None, tol: float = 1e-8,
                   max_iter: int = 100_000, refit: bool = False) -> PolynomialFit:
    """Fit a degree-``degree`` polynomial to (x, y) with the given method.

    For penalized methods, ``lam=None`` selects the penalty from
    ``lam_grid`` (default: 30 log-spaced values spanning [1e-5, 1e-1] times
    the data's lambda_max) by weighted cross-validated MSE.

    ``refit=True`` (lasso only) adds a debiasing step: the penalty is used
    purely to select the support, and the returned coefficients are the
    unpenalized least-squares solution on that support (relaxed lasso).
    Shrunk-to-zero coefficients stay exactly zero. The shrunk solution and
    its KKT check are kept in diagnostics under ``cd_coefficients``.
    """
    if method not in _METHODS:
        raise ValidationError(f"method must be one of {_METHODS}, got {method!r}")
    if degree < 0:
        raise ValidationError(f"degree must be >= 0, got {degree}")
    x, y, w = _validate_xyw(x, y, weights)

    if method == "ols":
        if len(x) < degree + 1:
            raise ValidationError(
                f"ols with degree {degree} needs >= {degree + 1} points, got {len(x)}"
            )
        X = np.column_stack([x ** j for j in range(degree + 1)])
        sw = np.sqrt(w)
        coef, _, rank, _ = np.linalg.lstsq(sw[:, None] * X, sw * y, rcond=None)
        if rank < degree + 1:
            raise ValidationError(
                f"design matrix is rank deficient (rank {rank} < {degree + 1}); "
                "reduce the degree or supply more distinct x values"
            )
        fit = PolynomialFit(method=method, degree=degree,
                            coefficients=coef, lam=0.0)
        return _with_quality(fit, x, y, w, {"n_points": len(x)})

    # penalized path
    diagnostics: dict = {"n_points": len(x)}
    if lam is None:
        lmax = lambda_max(x, y, w, degree)
        if lmax == 0.0:
            lam = 0.0
            grid = np.array([0.0])
        else:
            grid = (np.asarray(lam_grid, dtype=float) if lam_grid is not None
                    else lmax * np.geomspace(1e-1, 1e-5, 30))
            grid = np.sort(grid)[::-1]
            lam = _select_lambda(x, y, w, degree, method, grid, cv_folds,
                                 tol, max_iter, diagnostics)
    warm = None
    if lam > 0.0:
        # warm-start descent: tiny penalties on near-collinear columns can
        # need >1e5 cold sweeps, a handful of coarse path fits avoids that
        top = lambda_max(x, y, w, degree)
        if top > lam:
            for step in np.geomspace(top, lam, 12)[:-1]:
                _, _, _, warm = _fit_penalized(x, y, w, degree, method,
                                               float(step), max(tol, 1e-6),
                                               max_iter, beta0=warm)
    coef, n_iter, kkt, _ = _fit_penalized(x, y, w, degree, method, lam, tol,
                                          max_iter, beta0=warm)
    diagnostics.update({"n_iter": n_iter, "kkt_max_violation": kkt})
    if refit and method == "lasso":
        diagnostics["cd_coefficients"] = coef.tolist()
        diagnostics["refit"] = "ols-on-support"
        support = np.flatnonzero(coef[1:]) + 1
        Xs = np.column_stack([x ** j for j in (0, *support)])
        sw = np.sqrt(w)
        # lstsq min-norm solution: a collinear selected support must yield
        # a finite (if wild) answer, not an error
        sol = np.linalg.lstsq(sw[:, None] * Xs, sw * y, rcond=None)[0]
        coef = np.zeros_like(coef)
        coef[0] = sol[0]
        coef[support] = sol[1:]
    fit = PolynomialFit(method=method, degree=degree, coefficients=coef,
                        lam=float(lam))
    return _with_quality(fit, x, y, w, diagnostics)


def _select_lambda(x, y, w, degree, method, grid, cv_folds, tol, max_iter,
                   diagnostics):
    """One-standard-error rule over a descending penalty path.

    Per fold the path is walked from the strongest penalty down with warm
    starts; the chosen lambda is the largest one whose mean validation MSE
    is within one standard error (over folds) of the minimum, which guards
    against the near-OLS blowup a bare minimum rule invites on strongly
    collinear polynomial columns.
    """
    n_folds = min(cv_folds, len(x))
    if n_folds < 2:
        raise ValidationError("cross-validation needs at least 2 points")
    grid = np.sort(np.asarray(grid, dtype=float))[::-1]
    fold = _cv_folds(x, n_folds)
    fold_mse = np.full((n_folds, len(grid)), np.nan)
    fold_w = np.zeros(n_folds)
    for k in range(n_folds):
        tr = fold != k
        va = ~tr
        if not va.any() or tr.sum() < 2:
            continue
        fold_w[k] = float(w[va].sum())
        warm = None
        tol_cv = max(tol, 1e-6)  # selection needs far less than the final solve
        for i, lam in enumerate(grid):
            try:
                coef, _, _, warm = _fit_penalized(x[tr], y[tr], w[tr], degree,
                                                  method, lam, tol_cv,
                                                  max_iter, beta0=warm)
            except ConvergenceError:
                fold_mse[k, i] = np.inf  # disqualify, keep walking the path
                continue
            yhat = npp.polyval(x[va], coef)
            fold_mse[k, i] = float((w[va] * (y[va] - yhat) ** 2).sum()) / fold_w[k]
    used = fold_w > 0
    if not used.any():
        raise ValidationError("cross-validation produced no usable folds")
    fw = fold_w[used] / fold_w[used].sum()
    cv_mse = fw @ fold_mse[used]
    if not np.isfinite(cv_mse).any():
        raise ConvergenceError(
            "no penalty on the cross-validation grid converged"
        )
    cv_se = np.std(fold_mse[used], axis=0, ddof=1) / np.sqrt(used.sum()) \
        if used.sum() > 1 else np.zeros(len(grid))
    best = int(np.nanargmin(np.where(np.isfinite(cv_mse), cv_mse, np.nan)))
    cut = cv_mse[best] + cv_se[best]
    qualify = np.isfinite(cv_mse) & (cv_mse <= cut)
    chosen = int(np.argmax(qualify))  # largest qualifying penalty
    diagnostics["lambda_grid"] = grid.tolist()
    diagnostics["cv_mse"] = cv_mse.tolist()
    diagnostics["cv_se"] = cv_se.tolist()
    diagnostics["lambda_min_rule"] = float(grid[best])
    diagnostics["cv_rule"] = "1se"
    return float(grid[chosen])


def _with_quality(fit, x, y, w, extra):
    yhat = fit.predict(x)
    mse = _weighted_mse(y, yhat, w)
    ybar = (w * y).sum() / w.sum()
    tss = _weighted_mse(y, np.full_like(y, ybar), w)
    diag = dict(fit.diagnostics)
    diag.update(extra)
    diag["weighted_rmse"] = float(np.sqrt(mse))
    diag["weighted_r2"] = float(1.0 - mse / tss) if tss > 0 else float("nan")
    return PolynomialFit(method=fit.method, degree=fit.degree,
                         coefficients=fit.coefficients, lam=fit.lam,
                         diagnostics=diag)


def fit_field(est, target: str = "drift", degree: int = 7,
              method: str = "lasso", min_count: int = 200,
              refit: bool = True, **kwargs) -> PolynomialFit:
    """Fit a polynomial to one field of a binned estimate.

    Bins with fewer than ``min_count`` pairs (or non-finite values) are
    excluded; remaining bins are weighted by their counts. Lasso fits are
    debiased by default: the penalty selects the support and the reported
    coefficients are re-estimated without shrinkage on that support (pass
    ``refit=False`` for the raw shrunk solution).
    """
    if target not in ("drift", "diff2"):
        raise ValidationError(f"target must be 'drift' or 'diff2', got {target!r}")
    y = est.drift if target == "drift" else est.diff2
    keep = (est.counts >= min_count) & np.isfinite(y)
    if keep.sum() < 2:
        raise ValidationError(
            f"only {int(keep.sum())} bins meet min_count={min_count}; too few usable bins"
        )
    fit = fit_polynomial(est.grid.centers[keep], y[keep], degree=degree,
                         method=method, weights=est.counts[keep],
                         refit=refit, **kwargs)
    diag = dict(fit.diagnostics)
    diag["target"] = target
    diag["min_count"] = min_count
    diag["bins_used"] = int(keep.sum())
    return PolynomialFit(method=fit.method, degree=fit.degree,
                         coefficients=fit.coefficients, lam=fit.lam,
                         diagnostics=diag)


@dataclass(frozen=True)
class FitReport:
    """Paired drift / squared-diffusion fits from one binned estimate,
    with per-coefficient absolute errors when the truth is available."""

    drift: PolynomialFit
    diff2: PolynomialFit
    errors: Optional[dict] = None


def _pad(c, n):
    out = np.zeros(n)
    out[: len(c)] = c
    return out


def fit_pipeline(est, degree: int = 7, method: str = "lasso",
                 min_count: int = 200, truth=None, **kwargs) -> FitReport:
    """Fit drift and squared diffusion from one binned estimate.

    ``truth`` may be a model carrying polynomial coefficients
    (drift_poly / diffusion_poly); the squared-diffusion truth is the
    self-convolution of the diffusion polynomial. Per-coefficient absolute
    errors against the truth are reported when available.
    """
    drift_fit = fit_field(est, "drift", degree=degree, method=method,
                          min_count=min_count, **kwargs)
    diff2_fit = fit_field(est, "diff2", degree=degree, method=method,
                          min_count=min_count, **kwargs)
    errors = None
    if truth is not None and truth.drift_poly is not None \
            and truth.diffusion_poly is not None:
        d2_true = np.convolve(truth.diffusion_poly, truth.diffusion_poly)
        n = max(degree + 1, len(truth.drift_poly), len(d2_true))
        errors = {
            "drift_abs_error": np.abs(
                _pad(drift_fit.coefficients, n) - _pad(truth.drift_poly, n)
            ),
            "diff2_abs_error": np.abs(
                _pad(diff2_fit.coefficients, n) - _pad(d2_true, n)
            ),
        }
    return FitReport(drift=drift_fit, diff2=diff2_fit, errors=errors)
