"""Trajectory integration and transition-pair collection.

Three explicit schemes step dX = A dt + D dW, each consuming the multiple
stochastic integrals of one step:

``euler``      X + B0 I_(0) + B1 I_(1)
``milstein``   ... + B2 I_(1,1)
``strong15``   ... + B3 I_(0,1) + B4 I_(1,0) + B5 I_(0,0) + B6 I_(1,1,1)

with the coefficients B0..B6 from :func:`binsde.models.ite_coefficients`.

Pair generation integrates at an inner step dt_int (default 5e-4), retains
the state every dt_obs of simulated time after a burn-in, and forms the
transition pairs (X_t, X_{t+dt_obs}) from consecutive retained states, so
successive pairs occupy adjacent, non-overlapping time intervals. Built-in
models carry polynomial drift/diffusion coefficients and run through a
compiled kernel; any other model runs through a pure-Python stepper that
consumes the identical noise stream and reproduces the kernel arithmetic.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass
from typing import Optional

import numpy as np
from numba import njit

from .binned import assign_bin
from .errors import DivergenceError, StarvationError, ValidationError
from .integrals import StepNoise, derive_multiple_integrals
from .models import SDEModel, ite_coefficients

__all__ = [
    "SCHEMES",
    "SimulationConfig",
    "TransitionPairSet",
    "FixedCount",
    "FixedPerBin",
    "step",
    "generate_pairs",
    "observations",
    "pairs_from_series",
    "strong_error_sweep",
]

SCHEMES = ("euler", "milstein", "strong15")
_SCHEME_CODE = {"euler": 0, "milstein": 1, "strong15": 2}

_CHUNK_STEPS = 32768
_SQRT3_INV = 1.0 / math.sqrt(3.0)


@dataclass(frozen=True)
class SimulationConfig:
    """How a trajectory is integrated and sampled.

    burn_in=None means 10x the model's correlation time. max_pairs bounds
    fixed_per_bin collection; exceeding it raises StarvationError naming
    the deficient bins. divergence_limit aborts a realization once
    |X| > limit.
    """

    scheme: str = "strong15"
    dt_int: float = 5e-4
    burn_in: Optional[float] = None
    x0: float = 0.0
    max_pairs: int = 20_000_000
    divergence_limit: float = 1e6


@dataclass(frozen=True)
class StopRule:
    pass


@dataclass(frozen=True)
class FixedCount(StopRule):
    """Collect exactly n pairs."""

    n: int


@dataclass(frozen=True)
class FixedPerBin(StopRule):
    """Collect until every bin of ``grid`` holds at least m pair starts,
    stopping at the first pair index where that becomes true."""

    m: int
    grid: object


@dataclass(frozen=True)
class TransitionPairSet:
    """Non-overlapping transition pairs separated by exactly dt_obs."""

    starts: np.ndarray
    ends: np.ndarray
    dt_obs: float
    model_name: str = ""
    scheme: str = ""
    dt_int: float = float("nan")
    gen_seconds: float = 0.0
    burn_seconds: float = 0.0
    n_steps: int = 0

    def __len__(self):
        return len(self.starts)


def observations(pairs: TransitionPairSet) -> np.ndarray:
    """The retained-state series the pairs were formed from."""
    if len(pairs) == 0:
        return np.empty(0)
    return np.append(pairs.starts, pairs.ends[-1])


# ---------------------------------------------------------------------------
# stepping


def step(model: SDEModel, x, mi, scheme: str = "strong15"):
    """Advance one step of length mi.dt from state x (scalar or array)."""
    code = _SCHEME_CODE.get(scheme)
    if code is None:
        raise ValidationError(f"unknown scheme {scheme!r}; choose from {SCHEMES}")
    return _step_coeffs(ite_coefficients(model), x, mi, code)


def _step_coeffs(c, x, mi, code):
    out = x + c.b0(x) * mi.i0
    out = out + c.b1(x) * mi.i1
    if code >= 1:
        out = out + c.b2(x) * mi.i11
    if code >= 2:
        out = out + c.b3(x) * mi.i01
        out = out + c.b4(x) * mi.i10
        out = out + c.b5(x) * mi.i00
        out = out + c.b6(x) * mi.i111
    return out


@njit(cache=True)
def _pv(c, x):
    # mirrors numpy.polynomial.polynomial.polyval's Horner recurrence
    r = c[len(c) - 1]
    for k in range(len(c) - 2, -1, -1):
        r = c[k] + r * x
    return r


@njit(cache=True)
def _chunk_kernel(x, ac, a1c, a2c, dc, d1c, d2c, dt, code, z, stride, phase,
                  obs, divlimit):
    """Step len(z) times; record the state every ``stride`` steps.

    Returns (x, n_obs, phase, diverged_step); diverged_step is -1 when the
    chunk completed. The arithmetic matches the pure-Python stepper
    operation for operation so both paths produce identical trajectories.
    """
    n = z.shape[0]
    nobs = 0
    sdt = math.sqrt(dt)
    czc = 0.5 * dt * sdt
    i0 = dt
    i00 = 0.5 * dt * dt
    for s in range(n):
        u1 = z[s, 0]
        u2 = z[s, 1]
        dw = sdt * u1
        dz = czc * (u1 + u2 * _SQRT3_INV)
        i1 = dw
        i11 = 0.5 * (dw * dw - dt)
        a = _pv(ac, x)
        d = _pv(dc, x)
        out = x + a * i0
        out = out + d * i1
        if code >= 1:
            d1 = _pv(d1c, x)
            out = out + d * d1 * i11
        if code >= 2:
            a1 = _pv(a1c, x)
            a2 = _pv(a2c, x)
            d2 = _pv(d2c, x)
            i10 = dz
            i01 = dw * dt - dz
            i111 = (dw * dw * dw - 3.0 * dt * dw) / 6.0
            out = out + (a * d1 + 0.5 * d * d * d2) * i01
            out = out + d * a1 * i10
            out = out + (a * a1 + 0.5 * d * d * a2) * i00
            out = out + d * (d1 * d1 + d * d2) * i111
        x = out
        if not np.isfinite(x) or x > divlimit or x < -divlimit:
            return x, nobs, phase, s
        phase += 1
        if phase == stride:
            obs[nobs] = x
            nobs += 1
            phase = 0
    return x, nobs, phase, -1


def _chunk_python(model, coeffs, x, dt, code, z, stride, phase, obs, divlimit):
    """Pure-Python twin of _chunk_kernel for models without polynomial
    coefficient arrays. Consumes the identical noise stream."""
    nobs = 0
    sdt = math.sqrt(dt)
    czc = 0.5 * dt * sdt
    for s in range(z.shape[0]):
        u1 = z[s, 0]
        u2 = z[s, 1]
        dw = sdt * u1
        dz = czc * (u1 + u2 * _SQRT3_INV)
        mi = derive_multiple_integrals(StepNoise(dt=dt, dw=dw, dz=dz))
        x = _step_coeffs(coeffs, x, mi, code)
        if not np.isfinite(x) or abs(x) > divlimit:
            return x, nobs, phase, s
        phase += 1
        if phase == stride:
            obs[nobs] = x
            nobs += 1
            phase = 0
    return x, nobs, phase, -1


def _as_rng(seed):
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def _resolve_stride(dt_obs, dt_int):
    stride = int(round(dt_obs / dt_int))
    if stride < 1 or abs(stride * dt_int - dt_obs) > 1e-9 * dt_obs:
        raise ValidationError(
            f"dt_obs={dt_obs!r} must be a positive integer multiple of dt_int={dt_int!r}"
        )
    return stride


def _resolve_burn_in(model, sim):
    if sim.burn_in is not None:
        if sim.burn_in < 0:
            raise ValidationError(f"burn_in must be >= 0, got {sim.burn_in!r}")
        return float(sim.burn_in)
    if model.correlation_time is None:
        raise ValidationError(
            "model declares no correlation time; set burn_in explicitly"
        )
    return 10.0 * float(model.correlation_time)


class _Stepper:
    """Runs chunks through the compiled kernel or the Python fallback."""

    def __init__(self, model, scheme, dt, stride, divlimit, force_python=False):
        self.code = _SCHEME_CODE.get(scheme)
        if self.code is None:
            raise ValidationError(f"unknown scheme {scheme!r}; choose from {SCHEMES}")
        self.dt = float(dt)
        self.stride = int(stride)
        self.divlimit = float(divlimit)
        self.use_kernel = (
            model.drift_poly is not None
            and model.diffusion_poly is not None
            and not force_python
        )
        if self.use_kernel:
            from numpy.polynomial import polynomial as npp

            ac = np.ascontiguousarray(model.drift_poly, dtype=float)
            dc = np.ascontiguousarray(model.diffusion_poly, dtype=float)

            def der(c, m):
                return np.ascontiguousarray(
                    npp.polyder(c, m) if len(c) > m else [0.0], dtype=float
                )

            self._polys = (ac, der(ac, 1), der(ac, 2), dc, der(dc, 1), der(dc, 2))
        else:
            self._model = model
            self._coeffs = ite_coefficients(model)

    def run(self, x, z, phase, obs):
        if self.use_kernel:
            ac, a1c, a2c, dc, d1c, d2c = self._polys
            return _chunk_kernel(x, ac, a1c, a2c, dc, d1c, d2c, self.dt,
                                 self.code, z, self.stride, phase, obs,
                                 self.divlimit)
        return _chunk_python(self._model, self._coeffs, x, self.dt, self.code,
                             z, self.stride, phase, obs, self.divlimit)


def generate_pairs(model: SDEModel, sim: SimulationConfig, dt_obs: float,
                   stop: StopRule, rng, _force_python: bool = False) -> TransitionPairSet:
    """Integrate one stationary trajectory and collect transition pairs.

    ``rng`` may be a numpy Generator, a SeedSequence, or an integer seed.
    Stops per the stop rule: FixedCount(n) keeps exactly the first n pairs;
    FixedPerBin(m, grid) keeps exactly the pairs up to the first index at
    which every bin of the grid holds >= m pair starts. Wall-clock time of
    collection (gen_seconds) and of burn-in (burn_seconds) are recorded
    separately on the result.
    """
    rng = _as_rng(rng)
    stride = _resolve_stride(dt_obs, sim.dt_int)
    burn_in = _resolve_burn_in(model, sim)
    if isinstance(stop, FixedCount):
        if stop.n < 1:
            raise ValidationError(f"need at least one pair, got n={stop.n}")
        if stop.n > sim.max_pairs:
            raise ValidationError(
                f"fixed_count n={stop.n} exceeds max_pairs={sim.max_pairs}"
            )
    elif isinstance(stop, FixedPerBin):
        if stop.m < 1:
            raise ValidationError(f"need at least one pair per bin, got m={stop.m}")
    else:
        raise ValidationError(f"unknown stop rule {stop!r}")

    stepper = _Stepper(model, sim.scheme, sim.dt_int, stride,
                       sim.divergence_limit, force_python=_force_python)
    x = float(sim.x0)
    n_steps = 0

    # burn-in: consume exactly the burn steps, discarding observations
    t0 = time.perf_counter()
    n_burn = int(round(burn_in / sim.dt_int))
    scratch = np.empty(_CHUNK_STEPS // stride + 2)
    done = 0
    while done < n_burn:
        take = min(_CHUNK_STEPS, n_burn - done)
        z = rng.standard_normal((take, 2))
        x, _, _, dstep = stepper.run(x, z, 0, scratch)
        if dstep >= 0:
            raise DivergenceError(
                f"trajectory diverged during burn-in at step {done + dstep}",
                step=done + dstep, value=x,
            )
        done += take
    n_steps += n_burn
    burn_seconds = time.perf_counter() - t0

    # collection: the state at burn-in end is the first retained observation
    t1 = time.perf_counter()
    chunks = [np.array([x])]
    total_obs = 1
    phase = 0
    if isinstance(stop, FixedPerBin):
        grid = stop.grid
        counts = np.zeros(grid.nb, dtype=np.int64)
        pending_start = x  # last observation, becomes a start on the next one
    while True:
        z = rng.standard_normal((_CHUNK_STEPS, 2))
        x, nobs, phase, dstep = stepper.run(x, z, phase, scratch)
        if dstep >= 0:
            raise DivergenceError(
                f"trajectory diverged at inner step {n_steps + dstep}",
                step=n_steps + dstep, value=x,
            )
        n_steps += _CHUNK_STEPS
        if nobs == 0:
            continue
        new = scratch[:nobs].copy()
        chunks.append(new)
        total_obs += nobs
        n_pairs = total_obs - 1
        if isinstance(stop, FixedCount):
            if n_pairs >= stop.n:
                break
        else:
            # pair starts gained this chunk: previous tail + all new obs but the last
            starts_new = np.concatenate(([pending_start], new[:-1]))
            pending_start = new[-1]
            idx = assign_bin(grid, starts_new)
            np.add.at(counts, idx[idx >= 0], 1)
            if counts.min() >= stop.m:
                break
            if n_pairs > sim.max_pairs:
                raise StarvationError(
                    "fixed_per_bin budget exhausted at "
                    f"{n_pairs} pairs; bin counts {counts.tolist()} "
                    f"(target {stop.m})",
                    counts=counts.copy(), target=stop.m,
                )
    gen_seconds = time.perf_counter() - t1

    obs = np.concatenate(chunks)
    if isinstance(stop, FixedCount):
        obs = obs[: stop.n + 1]
    else:
        obs = obs[: _first_full_index(grid, obs, stop.m) + 2]
    return TransitionPairSet(
        starts=obs[:-1],
        ends=obs[1:],
        dt_obs=float(dt_obs),
        model_name=model.name,
        scheme=sim.scheme,
        dt_int=sim.dt_int,
        gen_seconds=gen_seconds,
        burn_seconds=burn_seconds,
        n_steps=n_steps,
    )


def _first_full_index(grid, obs, m):
    """Index of the first pair at which every bin holds >= m starts."""
    starts = obs[:-1]
    idx = assign_bin(grid, starts)
    cut = -1
    for b in range(grid.nb):
        pos = np.flatnonzero(idx == b)
        if len(pos) < m:
            raise StarvationError(
                f"bin {b} holds only {len(pos)} of {m} required pair starts",
                target=m,
            )
        cut = max(cut, pos[m - 1])
    return int(cut)


# ---------------------------------------------------------------------------
# series ingestion


def pairs_from_series(values, dt_obs: float, stride: int = 1) -> TransitionPairSet:
    """Non-overlapping pairs (U_i, U_{i+stride}) from a retained series.

    The two samples of a pair are ``stride`` series steps apart (dt_obs of
    simulated time), and consecutive pairs advance by 2*stride so no sample
    is shared between pairs: a series of N values yields floor(N/(2 stride))
    pairs when N is a multiple of 2*stride.
    """
    values = np.asarray(values, dtype=float)
    if values.ndim != 1:
        raise ValidationError(f"series must be one-dimensional, got shape {values.shape}")
    if stride < 1:
        raise ValidationError(f"stride must be >= 1, got {stride}")
    if len(values) < stride + 1:
        raise ValidationError(
            f"series of {len(values)} values is too short for stride {stride}"
        )
    first = np.arange(0, len(values) - stride, 2 * stride)
    return TransitionPairSet(
        starts=values[first],
        ends=values[first + stride],
        dt_obs=float(dt_obs),
    )


# ---------------------------------------------------------------------------
# strong-convergence measurement


def strong_error_sweep(model: SDEModel, dt_list, dt_ref: float, t_final: float,
                       n_paths: int, rng, schemes=("milstein", "strong15"),
                       x0: float = 0.0):
    """RMS endpoint error of coarse-step paths against a shared fine path.

    One ensemble of Brownian paths is generated at dt_ref and integrated
    with the order-1.5 scheme as the reference. For every coarse dt the
    increments (dW, dZ) are aggregated exactly over the coarse windows
    (dZ_coarse = sum dz_i + dt_ref * sum W_partial) and each scheme is
    stepped with them, so all paths share the same Brownian motion.
    Returns {"errors": {scheme: {dt: rmse}}, "slopes": {scheme: slope}}.
    """
    rng = _as_rng(rng)
    dt_list = sorted(float(d) for d in dt_list)
    ratios = []
    for d in dt_list:
        r = int(round(d / dt_ref))
        if abs(r * dt_ref - d) > 1e-12 * d or r < 1:
            raise ValidationError(f"dt {d} is not a multiple of dt_ref {dt_ref}")
        ratios.append(r)
    n_fine = int(round(t_final / dt_ref))

    x_ref = np.full(n_paths, float(x0))
    levels = []
    for scheme in schemes:
        if scheme not in _SCHEME_CODE:
            raise ValidationError(f"unknown scheme {scheme!r}; choose from {SCHEMES}")
        for d, r in zip(dt_list, ratios):
            levels.append({
                "scheme": scheme, "dt": d, "ratio": r,
                "x": np.full(n_paths, float(x0)),
                "dw": np.zeros(n_paths), "dz": np.zeros(n_paths),
                "wpart": np.zeros(n_paths), "k": 0,
            })

    sdt = math.sqrt(dt_ref)
    czc = 0.5 * dt_ref * sdt
    for _ in range(n_fine):
        u = rng.standard_normal((n_paths, 2))
        dw = sdt * u[:, 0]
        dz = czc * (u[:, 0] + u[:, 1] * _SQRT3_INV)
        mi = derive_multiple_integrals(StepNoise(dt=dt_ref, dw=dw, dz=dz))
        x_ref = step(model, x_ref, mi, "strong15")
        for lv in levels:
            lv["dz"] += dz + dt_ref * lv["wpart"]
            lv["wpart"] += dw
            lv["dw"] += dw
            lv["k"] += 1
            if lv["k"] == lv["ratio"]:
                agg = derive_multiple_integrals(
                    StepNoise(dt=lv["dt"], dw=lv["dw"], dz=lv["dz"])
                )
                lv["x"] = step(model, lv["x"], agg, lv["scheme"])
                lv["dw"] = np.zeros(n_paths)
                lv["dz"] = np.zeros(n_paths)
                lv["wpart"] = np.zeros(n_paths)
                lv["k"] = 0

    errors = {scheme: {} for scheme in schemes}
    for lv in levels:
        err = float(np.sqrt(np.mean((lv["x"] - x_ref) ** 2)))
        errors[lv["scheme"]][lv["dt"]] = err
    slopes = {}
    for scheme in schemes:
        ds = np.array(sorted(errors[scheme]))
        es = np.array([errors[scheme][d] for d in ds])
        slopes[scheme] = float(np.polyfit(np.log(ds), np.log(es), 1)[0])
    return {"errors": errors, "slopes": slopes}
