"""Multiple stochastic integrals over one time step.

A step of length dt needs the pair (dW, dZ) with

    dW = W_{t+dt} - W_t,            dZ = int_t^{t+dt} (W_s - W_t) ds,

jointly Gaussian with Var dW = dt, Var dZ = dt^3/3, Cov = dt^2/2. They are
sampled from two independent standard normals U1, U2 as

    dW = sqrt(dt) U1,     dZ = 0.5 dt^{3/2} (U1 + U2 / sqrt(3)).

Every multiple integral the order-1.5 scheme needs then follows in closed
form: I_(0) = dt, I_(0,0) = dt^2/2, I_(1) = dW, I_(1,0) = dZ,
I_(0,1) = dW dt - dZ, I_(1,1) = (dW^2 - dt)/2 and
I_(1,1,1) = (dW^3 - 3 dt dW)/6.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ValidationError

__all__ = [
    "StepNoise",
    "MultipleIntegrals",
    "MomentEstimate",
    "sample_step_noise",
    "derive_multiple_integrals",
    "integrals_from_values",
    "n_ones",
    "analytic_moment",
    "estimate_moment",
    "moment_table",
    "CANONICAL_MOMENTS",
]

# multi-index of each integral: the word alpha in I_alpha
ALPHA = {
    "i0": (0,),
    "i1": (1,),
    "i00": (0, 0),
    "i11": (1, 1),
    "i10": (1, 0),
    "i01": (0, 1),
    "i111": (1, 1, 1),
}

_SQRT3_INV = 1.0 / math.sqrt(3.0)


@dataclass(frozen=True)
class StepNoise:
    """Jointly sampled (dW, dZ) for steps of length dt. Arrays or scalars."""

    dt: float
    dw: np.ndarray
    dz: np.ndarray


@dataclass(frozen=True)
class MultipleIntegrals:
    """All multiple stochastic integrals consumed by the integrators."""

    dt: float
    i0: float
    i00: float
    i1: np.ndarray
    i11: np.ndarray
    i10: np.ndarray
    i01: np.ndarray
    i111: np.ndarray


def sample_step_noise(dt: float, rng: np.random.Generator, n: int | None = None) -> StepNoise:
    """Draw (dW, dZ) for one step (n=None) or a batch of n steps."""
    if not (dt > 0.0):
        raise ValidationError(f"dt must be positive, got {dt!r}")
    shape = (2,) if n is None else (int(n), 2)
    u = rng.standard_normal(shape)
    u1 = u[..., 0]
    u2 = u[..., 1]
    dw = math.sqrt(dt) * u1
    dz = 0.5 * dt * math.sqrt(dt) * (u1 + u2 * _SQRT3_INV)
    return StepNoise(dt=dt, dw=dw, dz=dz)


def derive_multiple_integrals(noise: StepNoise) -> MultipleIntegrals:
    """Closed-form multiple integrals from one (dW, dZ) sample.

    Each field is a single rounding of the expressions below, so the
    identities hold bit-exactly when evaluated in the same orientation:
    i11 == 0.5*(i1*i1 - dt), i111 == (i1*i1*i1 - 3.0*dt*i1)/6.0 and
    i01 == i1*dt - i10. The re-associated sum i01 + i10 may differ from
    i1*dt by one ulp (double rounding), never more.
    """
    dt, dw, dz = noise.dt, noise.dw, noise.dz
    return MultipleIntegrals(
        dt=dt,
        i0=dt,
        i00=0.5 * dt * dt,
        i1=dw,
        i11=0.5 * (dw * dw - dt),
        i10=dz,
        i01=dw * dt - dz,
        i111=(dw * dw * dw - 3.0 * dt * dw) / 6.0,
    )


def integrals_from_values(dt, i1=0.0, i11=0.0, i10=0.0, i01=0.0, i111=0.0) -> MultipleIntegrals:
    """Hand-built integrals object (deterministic ones fixed by dt)."""
    return MultipleIntegrals(dt=dt, i0=dt, i00=0.5 * dt * dt,
                             i1=i1, i11=i11, i10=i10, i01=i01, i111=i111)


def n_ones(alpha) -> int:
    """Number of ones in the multi-index; odd total implies zero mean."""
    return sum(1 for a in alpha if a == 1)


def _spec_items(spec):
    """Normalize a moment spec to sorted (name, power) items."""
    if isinstance(spec, str):
        spec = {spec: 1}
    if isinstance(spec, dict):
        items = list(spec.items())
    else:
        items = [(name, 1) for name in spec]
    merged: dict = {}
    for name, power in items:
        if name not in ALPHA:
            raise ValidationError(f"unknown integral {name!r}; known: {sorted(ALPHA)}")
        if int(power) != power or power < 1:
            raise ValidationError(f"power for {name!r} must be a positive integer")
        merged[name] = merged.get(name, 0) + int(power)
    return tuple(sorted(merged.items()))


# E[prod I_a^p] closed forms, from the joint Gaussian law of (dW, dZ).
# Keys are the normalized item tuples produced by _spec_items; values are
# (coefficient, power of dt).
_ANALYTIC = {
    (("i1", 1),): (0.0, 0.0),
    (("i1", 2),): (1.0, 1.0),
    (("i1", 4),): (3.0, 2.0),
    (("i11", 1),): (0.0, 0.0),
    (("i11", 2),): (0.5, 2.0),
    (("i11", 4),): (15.0 / 4.0, 4.0),
    (("i10", 1),): (0.0, 0.0),
    (("i10", 2),): (1.0 / 3.0, 3.0),
    (("i01", 1),): (0.0, 0.0),
    (("i01", 2),): (1.0 / 3.0, 3.0),
    (("i111", 1),): (0.0, 0.0),
    (("i111", 2),): (1.0 / 6.0, 3.0),
    (("i1", 1), ("i11", 1)): (0.0, 0.0),
    (("i1", 1), ("i10", 1)): (0.5, 2.0),
    (("i01", 1), ("i1", 1)): (0.5, 2.0),
    (("i01", 1), ("i11", 1)): (0.0, 0.0),
    (("i10", 1), ("i11", 1)): (0.0, 0.0),
    (("i01", 1), ("i10", 1)): (1.0 / 6.0, 3.0),
    (("i1", 1), ("i111", 1)): (0.0, 0.0),
    (("i11", 1), ("i111", 1)): (0.0, 0.0),
}


def analytic_moment(spec, dt: float) -> float:
    """Closed-form E[prod I^p] for the canonical moment set.

    Falls back to the parity rule (odd total number of Brownian factors
    implies zero mean) for products not in the table; raises for even-parity
    products without a tabulated value.
    """
    items = _spec_items(spec)
    known = _ANALYTIC.get(items)
    if known is not None:
        coef, power = known
        return coef * dt ** power
    total_ones = sum(n_ones(ALPHA[name]) * p for name, p in items)
    if total_ones % 2 == 1:
        return 0.0
    raise ValidationError(f"no closed form tabulated for moment {items!r}")


@dataclass(frozen=True)
class MomentEstimate:
    value: float
    se: float
    n: int


def estimate_moment(spec, dt: float, n: int, rng: np.random.Generator) -> MomentEstimate:
    """Monte Carlo estimate of E[prod I^p] with its standard error."""
    if n < 2:
        raise ValidationError(f"need n >= 2 samples, got {n}")
    items = _spec_items(spec)
    mi = derive_multiple_integrals(sample_step_noise(dt, rng, n=n))
    prod = np.ones(n)
    for name, power in items:
        prod = prod * np.asarray(getattr(mi, name)) ** power
    value = float(prod.mean())
    se = float(prod.std(ddof=1) / math.sqrt(n))
    return MomentEstimate(value=value, se=se, n=n)


CANONICAL_MOMENTS = (
    {"i1": 2},
    {"i1": 4},
    {"i11": 1},
    {"i11": 2},
    {"i11": 4},
    {"i10": 2},
    {"i01": 2},
    {"i111": 1},
    {"i111": 2},
    {"i1": 1, "i11": 1},
    {"i1": 1, "i10": 1},
    {"i1": 1, "i01": 1},
    {"i11": 1, "i01": 1},
    {"i11": 1, "i10": 1},
    {"i01": 1, "i10": 1},
    {"i1": 1, "i111": 1},
    {"i11": 1, "i111": 1},
)


def moment_table(dt: float, n: int, rng: np.random.Generator):
    """Measured-vs-analytic rows for the canonical moment set.

    Returns a list of dicts with keys spec, measured, se, analytic, z.
    One shared (dW, dZ) sample of size n is reused for every row so the
    table is reproducible from a single stream.
    """
    mi = derive_multiple_integrals(sample_step_noise(dt, rng, n=n))
    rows = []
    for spec in CANONICAL_MOMENTS:
        items = _spec_items(spec)
        prod = np.ones(n)
        for name, power in items:
            prod = prod * np.asarray(getattr(mi, name)) ** power
        measured = float(prod.mean())
        se = float(prod.std(ddof=1) / math.sqrt(n))
        exact = analytic_moment(spec, dt)
        label = "*".join(
            name if p == 1 else f"{name}^{p}" for name, p in items
        )
        z = (measured - exact) / se if se > 0 else math.inf
        rows.append({
            "spec": label,
            "measured": measured,
            "se": se,
            "analytic": exact,
            "z": z,
        })
    return rows
