"""Scalar SDE models dX = A(X) dt + D(X) dW and their stationary laws.

A model bundles the drift A, the diffusion D, their first two derivatives,
and (when available in closed form) the stationary probability density

    rho(x) = N * D(x)^-2 * exp( int 2 A(y) / D(y)^2 dy ),

the zero of the stationary Fokker-Planck operator
L rho = -(A rho)' + 0.5 (D^2 rho)''.

Four named models are built in:

``cubic``
    A = -gamma x^3, D = sigma1 + sigma2 x.
``dw_additive``
    A = -gamma x (x^2 - b0), D = sigma.
``dw_multiplicative``
    A = -gamma x (x^2 - b0), D = sigma1 + sigma2 x^2.
``ou``
    A = -theta x, D = sigma, with exact Gaussian stationary law and exact
    conditional moments, used as the analytic oracle in tests.

Drift and diffusion of the built-ins are polynomials; their coefficient
arrays (lowest power first) are carried on the model so fast integration
kernels can evaluate them without calling back into Python.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from numpy.polynomial import polynomial as npp
from scipy import integrate as _sint

from .errors import NonNormalizableError, ValidationError

__all__ = [
    "SDEModel",
    "ITECoefficients",
    "TabulatedDensity",
    "Density",
    "builtin_model",
    "ite_coefficients",
    "stationary_density",
    "density_from_model",
    "density_from_table",
    "uniform_density",
    "fokker_planck_residual",
    "ou_conditional_mean_factor",
    "ou_conditional_var",
    "ou_stationary_std",
]

BUILTIN_NAMES = ("cubic", "dw_additive", "dw_multiplicative", "ou")

# log-density drop below the mode treated as "effectively zero" when the
# support of a built-in model is located automatically
_SUPPORT_DROP = 60.0


def _poly_fn(coef):
    c = np.asarray(coef, dtype=float)

    def f(x):
        return npp.polyval(x, c)

    return f


@dataclass(frozen=True)
class SDEModel:
    """Immutable description of a scalar SDE dX = A(X) dt + D(X) dW.

    All callables accept scalars or numpy arrays. ``drift_poly`` and
    ``diffusion_poly`` (lowest power first) are set for the built-in models
    and enable the compiled trajectory kernel; models built from arbitrary
    callables leave them ``None`` and fall back to a pure-Python stepper.
    """

    name: str
    drift: Callable
    drift_d1: Callable
    drift_d2: Callable
    diffusion: Callable
    diffusion_d1: Callable
    diffusion_d2: Callable
    params: dict = field(default_factory=dict)
    stationary_pdf: Optional[Callable] = None
    support: Optional[tuple] = None
    correlation_time: Optional[float] = None
    drift_poly: Optional[np.ndarray] = None
    diffusion_poly: Optional[np.ndarray] = None


@dataclass(frozen=True)
class ITECoefficients:
    """The seven state-dependent coefficients of the Ito-Taylor expansion.

    X_{t+dt} ~ X_t + b0 I_(0) + b1 I_(1) + b2 I_(1,1) + b3 I_(0,1)
             + b4 I_(1,0) + b5 I_(0,0) + b6 I_(1,1,1)

    with b0 = A, b1 = D, b2 = D D', b3 = A D' + D^2 D''/2, b4 = D A',
    b5 = A A' + D^2 A''/2 and b6 = D (D'^2 + D D'').
    """

    b0: Callable
    b1: Callable
    b2: Callable
    b3: Callable
    b4: Callable
    b5: Callable
    b6: Callable

    def as_tuple(self):
        return (self.b0, self.b1, self.b2, self.b3, self.b4, self.b5, self.b6)


def ite_coefficients(model: SDEModel) -> ITECoefficients:
    """Derive the expansion coefficients b0..b6 from a model's callables."""
    a, a1, a2 = model.drift, model.drift_d1, model.drift_d2
    d, d1, d2 = model.diffusion, model.diffusion_d1, model.diffusion_d2

    def b2(x):
        return d(x) * d1(x)

    def b3(x):
        return a(x) * d1(x) + 0.5 * d(x) * d(x) * d2(x)

    def b4(x):
        return d(x) * a1(x)

    def b5(x):
        return a(x) * a1(x) + 0.5 * d(x) * d(x) * a2(x)

    def b6(x):
        return d(x) * (d1(x) * d1(x) + d(x) * d2(x))

    return ITECoefficients(b0=a, b1=d, b2=b2, b3=b3, b4=b4, b5=b5, b6=b6)


def _find_support(logpdf, hard_lo, hard_hi, scale):
    """Window where the unnormalized log-density is within _SUPPORT_DROP
    of its mode. Vector scan; adequate for setting integration windows."""
    lo = hard_lo if np.isfinite(hard_lo) else -100.0 * scale
    hi = hard_hi if np.isfinite(hard_hi) else 100.0 * scale
    if np.isfinite(hard_lo):
        lo = hard_lo + 1e-9 * max(scale, abs(hard_lo))
    grid = np.linspace(lo, hi, 40001)
    with np.errstate(all="ignore"):
        lf = np.asarray(logpdf(grid), dtype=float)
    ok = np.isfinite(lf)
    if not ok.any():
        raise ValidationError("log-density not finite anywhere on the probe window")
    top = lf[ok].max()
    keep = ok & (lf >= top - _SUPPORT_DROP)
    idx = np.flatnonzero(keep)
    step = grid[1] - grid[0]
    left = max(lo, grid[idx[0]] - step)
    right = min(hi, grid[idx[-1]] + step)
    return (left, right)


def _normalized_pdf_from_log(logpdf, support):
    """Turn an unnormalized log-density into a normalized pdf callable."""
    lo, hi = support
    probe = np.linspace(lo, hi, 8193)
    with np.errstate(all="ignore"):
        shift = float(np.nanmax(logpdf(probe)))

    def unnorm(x):
        with np.errstate(all="ignore"):
            out = np.exp(logpdf(x) - shift)
        return np.where(np.isfinite(out), out, 0.0)

    z, _ = _sint.quad(lambda t: float(unnorm(t)), lo, hi, limit=400)
    if not np.isfinite(z) or z <= 0.0:
        raise NonNormalizableError("stationary density has no finite mass")

    def pdf(x):
        return unnorm(x) / z

    return pdf


def builtin_model(name: str, **params) -> SDEModel:
    """Construct one of the built-in models.

    Parameters default to the values used throughout the experiment suite:
    cubic(gamma=1, sigma1=sigma2=1/sqrt 2), dw_additive(gamma=2, b0=0.5,
    sigma=0.5), dw_multiplicative(gamma=2, b0=0.5, sigma1=sigma2=0.5),
    ou(theta=1, sigma=1). Diffusion must be strictly positive on the
    model's support.
    """
    if name == "cubic":
        return _make_cubic(**params)
    if name == "dw_additive":
        return _make_dw_additive(**params)
    if name == "dw_multiplicative":
        return _make_dw_multiplicative(**params)
    if name == "ou":
        return _make_ou(**params)
    raise ValidationError(
        f"unknown model {name!r}; built-ins are {', '.join(BUILTIN_NAMES)}"
    )


def _require_positive(**kwargs):
    for key, value in kwargs.items():
        if not (value > 0.0):
            raise ValidationError(f"parameter {key} must be positive, got {value!r}")


def _make_cubic(gamma=1.0, sigma1=math.sqrt(0.5), sigma2=math.sqrt(0.5)):
    _require_positive(gamma=gamma, sigma1=sigma1)
    if sigma2 < 0.0:
        raise ValidationError(f"parameter sigma2 must be >= 0, got {sigma2!r}")
    drift_c = np.array([0.0, 0.0, 0.0, -gamma])
    diff_c = np.array([sigma1, sigma2])

    if sigma2 > 0.0:
        hard_lo = -sigma1 / sigma2

        def logpdf(x):
            # -2 log D + int 2A/D^2, closed form for A = -g x^3, D = s1+s2 x
            u = sigma1 + sigma2 * x
            s2_4 = sigma2 ** 4
            integral = (-2.0 * gamma / s2_4) * (
                0.5 * u * u - 3.0 * sigma1 * u + 3.0 * sigma1 ** 2 * np.log(u)
                + sigma1 ** 3 / u
            )
            return -2.0 * np.log(u) + integral

    else:
        hard_lo = -np.inf

        def logpdf(x):
            return -0.5 * gamma * x ** 4 / sigma1 ** 2

    scale = max(1.0, sigma1 / max(sigma2, 1e-12) if sigma2 > 0 else (sigma1 * sigma1 / gamma) ** 0.25)
    support = _find_support(logpdf, hard_lo, np.inf, scale)
    pdf = _normalized_pdf_from_log(logpdf, support)
    return _assemble_poly_model(
        "cubic",
        drift_c,
        diff_c,
        params={"gamma": gamma, "sigma1": sigma1, "sigma2": sigma2},
        stationary_pdf=pdf,
        support=support,
        correlation_time=2.0,
    )


def _make_dw_additive(gamma=2.0, b0=0.5, sigma=0.5):
    _require_positive(gamma=gamma, b0=b0, sigma=sigma)
    drift_c = np.array([0.0, gamma * b0, 0.0, -gamma])
    diff_c = np.array([sigma])

    def logpdf(x):
        return (gamma / sigma ** 2) * (b0 * x * x - 0.5 * x ** 4)

    scale = max(1.0, math.sqrt(b0))
    support = _find_support(logpdf, -np.inf, np.inf, scale)
    pdf = _normalized_pdf_from_log(logpdf, support)
    return _assemble_poly_model(
        "dw_additive",
        drift_c,
        diff_c,
        params={"gamma": gamma, "b0": b0, "sigma": sigma},
        stationary_pdf=pdf,
        support=support,
        correlation_time=2.0,
    )


def _make_dw_multiplicative(gamma=2.0, b0=0.5, sigma1=0.5, sigma2=0.5):
    _require_positive(gamma=gamma, b0=b0, sigma1=sigma1)
    if sigma2 < 0.0:
        raise ValidationError(f"parameter sigma2 must be >= 0, got {sigma2!r}")
    drift_c = np.array([0.0, gamma * b0, 0.0, -gamma])
    diff_c = np.array([sigma1, 0.0, sigma2])

    if sigma2 > 0.0:

        def logpdf(x):
            # u = s1 + s2 x^2; int 2A/D^2 = -(g/s2^2)(log u + s1/u) - g b0/(s2 u)
            u = sigma1 + sigma2 * x * x
            return (
                -2.0 * np.log(u)
                - (gamma / sigma2 ** 2) * (np.log(u) + sigma1 / u)
                - gamma * b0 / (sigma2 * u)
            )

    else:

        def logpdf(x):
            return (gamma / sigma1 ** 2) * (b0 * x * x - 0.5 * x ** 4)

    scale = max(1.0, math.sqrt(b0))
    support = _find_support(logpdf, -np.inf, np.inf, scale)
    pdf = _normalized_pdf_from_log(logpdf, support)
    return _assemble_poly_model(
        "dw_multiplicative",
        drift_c,
        diff_c,
        params={"gamma": gamma, "b0": b0, "sigma1": sigma1, "sigma2": sigma2},
        stationary_pdf=pdf,
        support=support,
        correlation_time=2.0,
    )


def _make_ou(theta=1.0, sigma=1.0):
    _require_positive(theta=theta, sigma=sigma)
    drift_c = np.array([0.0, -theta])
    diff_c = np.array([sigma])
    sd = sigma / math.sqrt(2.0 * theta)

    def pdf(x):
        return np.exp(-0.5 * (np.asarray(x, dtype=float) / sd) ** 2) / (
            sd * math.sqrt(2.0 * math.pi)
        )

    return _assemble_poly_model(
        "ou",
        drift_c,
        diff_c,
        params={"theta": theta, "sigma": sigma},
        stationary_pdf=pdf,
        support=(-8.0 * sd, 8.0 * sd),
        correlation_time=1.0 / theta,
    )


def _assemble_poly_model(name, drift_c, diff_c, params, stationary_pdf, support,
                         correlation_time):
    d1c = npp.polyder(diff_c) if len(diff_c) > 1 else np.array([0.0])
    d2c = npp.polyder(diff_c, 2) if len(diff_c) > 2 else np.array([0.0])
    a1c = npp.polyder(drift_c) if len(drift_c) > 1 else np.array([0.0])
    a2c = npp.polyder(drift_c, 2) if len(drift_c) > 2 else np.array([0.0])
    model = SDEModel(
        name=name,
        drift=_poly_fn(drift_c),
        drift_d1=_poly_fn(a1c),
        drift_d2=_poly_fn(a2c),
        diffusion=_poly_fn(diff_c),
        diffusion_d1=_poly_fn(d1c),
        diffusion_d2=_poly_fn(d2c),
        params=dict(params),
        stationary_pdf=stationary_pdf,
        support=support,
        correlation_time=correlation_time,
        drift_poly=np.asarray(drift_c, dtype=float),
        diffusion_poly=np.asarray(diff_c, dtype=float),
    )
    _check_diffusion_positive(model)
    return model


def _check_diffusion_positive(model):
    lo, hi = model.support
    probe = np.linspace(lo, hi, 2001)
    dvals = np.asarray(model.diffusion(probe), dtype=float)
    if not (dvals > 0.0).all():
        raise ValidationError(
            f"diffusion of model {model.name!r} is not strictly positive on "
            f"its support ({lo:.6g}, {hi:.6g})"
        )


# ---------------------------------------------------------------------------
# stationary density, tabulated from the generic Fokker-Planck closed form


@dataclass(frozen=True)
class TabulatedDensity:
    """Stationary density sampled on a uniform grid, trapezoid-normalized."""

    x: np.ndarray
    rho: np.ndarray

    def mean(self) -> float:
        return float(np.trapezoid(self.x * self.rho, self.x))

    def var(self) -> float:
        m = self.mean()
        return float(np.trapezoid((self.x - m) ** 2 * self.rho, self.x))

    def std(self) -> float:
        return math.sqrt(self.var())

    def cdf_values(self) -> np.ndarray:
        c = _sint.cumulative_trapezoid(self.rho, self.x, initial=0.0)
        return c / c[-1]

    def as_callable(self):
        from scipy.interpolate import CubicSpline

        spline = CubicSpline(self.x, self.rho)
        lo, hi = self.x[0], self.x[-1]

        def pdf(t):
            t = np.asarray(t, dtype=float)
            out = np.clip(spline(t), 0.0, None)
            return np.where((t < lo) | (t > hi), 0.0, out)

        return pdf


def stationary_density(model: SDEModel, support=None, grid_n: int = 4096) -> TabulatedDensity:
    """Tabulate the stationary density via rho ~ D^-2 exp(int 2A/D^2).

    The exponent is accumulated by cumulative trapezoid quadrature on the
    grid, so no closed form is needed. When ``support`` is omitted the
    model's declared support is used and then refined to
    [mean - 6 std, mean + 6 std] (clipped to the declared support).
    Raises NonNormalizableError when the density fails to decay toward the
    ends of the model's declared support.
    """
    if support is None and model.support is None:
        raise ValidationError("model declares no support; pass one explicitly")
    if grid_n < 16:
        raise ValidationError(f"grid_n too small: {grid_n}")

    base = model.support if model.support is not None else tuple(support)
    full = _tabulate_density(model, base, grid_n)
    logr = np.log(np.clip(full.rho, 1e-300, None))
    if logr[[0, -1]].max() > logr.max() - 20.0:
        raise NonNormalizableError(
            "stationary density does not decay on the declared support; "
            "the model may have no normalizable stationary law"
        )

    if support is not None:
        if tuple(support) == tuple(base):
            return full
        return _tabulate_density(model, tuple(support), grid_n)

    m, s = full.mean(), full.std()
    lo = max(base[0], m - 6.0 * s)
    hi = min(base[1], m + 6.0 * s)
    return _tabulate_density(model, (lo, hi), grid_n)


def _tabulate_density(model, support, grid_n):
    lo, hi = float(support[0]), float(support[1])
    if not (hi > lo):
        raise ValidationError(f"empty support ({lo}, {hi})")
    x = np.linspace(lo, hi, int(grid_n))
    with np.errstate(all="ignore"):
        d2 = np.asarray(model.diffusion(x), dtype=float) ** 2
        integrand = 2.0 * np.asarray(model.drift(x), dtype=float) / d2
        expo = _sint.cumulative_trapezoid(integrand, x, initial=0.0)
        logrho = expo - np.log(d2)
    logrho = np.where(np.isfinite(logrho), logrho, -np.inf)
    logrho -= logrho.max()
    rho = np.exp(logrho)
    z = np.trapezoid(rho, x)
    if not np.isfinite(z) or z <= 0.0:
        raise NonNormalizableError("stationary density has no finite mass")
    return TabulatedDensity(x=x, rho=rho / z)


def fokker_planck_residual(model: SDEModel, tab: TabulatedDensity) -> float:
    """Sup-norm of -(A rho)' + 0.5 (D^2 rho)'' on the grid interior,
    with derivatives by central finite differences."""
    x, rho = tab.x, tab.rho
    a_rho = np.asarray(model.drift(x), dtype=float) * rho
    d2_rho = np.asarray(model.diffusion(x), dtype=float) ** 2 * rho
    first = np.gradient(a_rho, x)
    second = np.gradient(np.gradient(d2_rho, x), x)
    resid = -first + 0.5 * second
    return float(np.abs(resid[2:-2]).max())


# ---------------------------------------------------------------------------
# density wrapper used by truncated-expectation quadrature


@dataclass(frozen=True)
class Density:
    """A probability density with derivative, usable in quadrature checks."""

    pdf: Callable
    dpdf: Callable
    support: tuple


def density_from_model(model: SDEModel) -> Density:
    """Analytic density wrapper; requires the model's closed-form pdf.

    The derivative uses (log rho)' = (2A - 2 D D') / D^2, which follows
    from the stationary Fokker-Planck closed form, so no numerical
    differentiation is involved.
    """
    if model.stationary_pdf is None:
        raise ValidationError(f"model {model.name!r} has no closed-form stationary pdf")
    pdf = model.stationary_pdf

    def dpdf(x):
        d = model.diffusion(x)
        slope = (2.0 * model.drift(x) - 2.0 * d * model.diffusion_d1(x)) / (d * d)
        return pdf(x) * slope

    return Density(pdf=pdf, dpdf=dpdf, support=model.support)


def density_from_table(tab: TabulatedDensity) -> Density:
    from scipy.interpolate import CubicSpline

    spline = CubicSpline(tab.x, tab.rho)
    deriv = spline.derivative()
    lo, hi = tab.x[0], tab.x[-1]

    def pdf(t):
        t = np.asarray(t, dtype=float)
        return np.where((t < lo) | (t > hi), 0.0, np.clip(spline(t), 0.0, None))

    def dpdf(t):
        t = np.asarray(t, dtype=float)
        return np.where((t < lo) | (t > hi), 0.0, deriv(t))

    return Density(pdf=pdf, dpdf=dpdf, support=(float(lo), float(hi)))


def uniform_density(lo: float, hi: float) -> Density:
    if not (hi > lo):
        raise ValidationError(f"empty interval ({lo}, {hi})")
    h = 1.0 / (hi - lo)

    def pdf(t):
        t = np.asarray(t, dtype=float)
        return np.where((t < lo) | (t > hi), 0.0, h)

    def dpdf(t):
        return np.zeros_like(np.asarray(t, dtype=float))

    return Density(pdf=pdf, dpdf=dpdf, support=(float(lo), float(hi)))


# ---------------------------------------------------------------------------
# exact Ornstein-Uhlenbeck conditional moments (analytic oracle)


def ou_conditional_mean_factor(theta: float, dt: float) -> float:
    """E[X_{t+dt} | X_t = x] = x * exp(-theta dt); returns the factor."""
    return math.exp(-theta * dt)


def ou_conditional_var(theta: float, sigma: float, dt: float) -> float:
    """Var[X_{t+dt} | X_t] = sigma^2 (1 - exp(-2 theta dt)) / (2 theta)."""
    return sigma * sigma * (-math.expm1(-2.0 * theta * dt)) / (2.0 * theta)


def ou_stationary_std(theta: float, sigma: float) -> float:
    return sigma / math.sqrt(2.0 * theta)
