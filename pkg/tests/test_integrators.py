"""Trajectory integration schemes, stop rules, and pair generation."""

import numpy as np
import pytest

from binsde.binned import assign_bin, make_grid
from binsde.errors import DivergenceError, StarvationError, ValidationError
from binsde.integrals import integrals_from_values, sample_step_noise
from binsde.integrate import (
    SCHEMES,
    FixedCount,
    FixedPerBin,
    SimulationConfig,
    generate_pairs,
    observations,
    pairs_from_series,
    step,
    strong_error_sweep,
)
from binsde.models import builtin_model, ite_coefficients


def test_unknown_scheme_is_rejected():
    m = builtin_model("ou")
    mi = integrals_from_values(0.01, i1=0.05)
    with pytest.raises(ValidationError, match="unknown scheme"):
        step(m, 0.3, mi, scheme="heun")


def test_step_matches_hand_built_expansion():
    m = builtin_model("cubic")
    c = ite_coefficients(m)
    dt = 0.01
    mi = integrals_from_values(dt, i1=0.11, i11=-0.003, i10=2e-4, i01=-1e-4, i111=5e-5)
    x = 0.4
    euler = x + c.b0(x) * dt + c.b1(x) * mi.i1
    milstein = euler + c.b2(x) * mi.i11
    full = (
        milstein
        + c.b3(x) * mi.i01
        + c.b4(x) * mi.i10
        + c.b5(x) * mi.i00
        + c.b6(x) * mi.i111
    )
    assert step(m, x, mi, "euler") == pytest.approx(euler, rel=1e-14)
    assert step(m, x, mi, "milstein") == pytest.approx(milstein, rel=1e-14)
    assert step(m, x, mi, "strong15") == pytest.approx(full, rel=1e-14)


def test_additive_noise_collapses_milstein_to_euler():
    m = builtin_model("ou")
    mi = integrals_from_values(0.01, i1=0.07, i11=0.002, i10=1e-4, i01=2e-4, i111=1e-5)
    x = np.linspace(-1.0, 1.0, 7)
    np.testing.assert_array_equal(step(m, x, mi, "euler"), step(m, x, mi, "milstein"))
    assert not np.allclose(step(m, x, mi, "euler"), step(m, x, mi, "strong15"))


def test_fixed_count_yields_exact_chain_of_transitions():
    m = builtin_model("ou")
    sim = SimulationConfig(dt_int=0.005)
    pairs = generate_pairs(m, sim, 0.01, FixedCount(500), np.random.SeedSequence([21]))
    assert len(pairs) == 500
    assert pairs.dt_obs == 0.01
    assert pairs.model_name == "ou"
    assert pairs.scheme == "strong15"
    # consecutive transitions share their junction sample
    np.testing.assert_array_equal(pairs.starts[1:], pairs.ends[:-1])
    obs = observations(pairs)
    assert len(obs) == 501
    np.testing.assert_array_equal(obs[:-1], pairs.starts)
    assert obs[-1] == pairs.ends[-1]
    assert pairs.n_steps > 0 and pairs.gen_seconds >= 0.0


def test_observation_step_must_be_multiple_of_inner_step():
    m = builtin_model("ou")
    with pytest.raises(ValidationError):
        generate_pairs(
            m, SimulationConfig(dt_int=0.005), 0.0107, FixedCount(10), 0
        )


def test_stop_rule_validation():
    m = builtin_model("ou")
    sim = SimulationConfig(dt_int=0.005, max_pairs=100)
    with pytest.raises(ValidationError):
        generate_pairs(m, sim, 0.01, FixedCount(0), 0)
    with pytest.raises(ValidationError):
        generate_pairs(m, sim, 0.01, FixedCount(101), 0)
    with pytest.raises(ValidationError):
        generate_pairs(m, sim, 0.01, FixedPerBin(0, make_grid(-1, 1, 4)), 0)
    with pytest.raises(ValidationError):
        generate_pairs(m, sim, 0.01, "everything", 0)


def test_fixed_per_bin_quota_is_met_and_minimal():
    m = builtin_model("ou")
    grid = make_grid(-0.5, 0.5, 4)
    sim = SimulationConfig(dt_int=0.005)
    pairs = generate_pairs(
        m, sim, 0.01, FixedPerBin(50, grid), np.random.SeedSequence([22])
    )
    idx = assign_bin(grid, pairs.starts)
    counts = np.bincount(idx[idx >= 0], minlength=grid.nb)
    assert counts.min() >= 50
    # one pair fewer must leave the quota unmet: collection stops immediately
    short = assign_bin(grid, pairs.starts[:-1])
    short_counts = np.bincount(short[short >= 0], minlength=grid.nb)
    assert short_counts.min() == 49


def test_generation_is_deterministic_in_the_seed():
    m = builtin_model("cubic")
    sim = SimulationConfig(dt_int=0.005)
    a = generate_pairs(m, sim, 0.01, FixedCount(300), np.random.SeedSequence([77]))
    b = generate_pairs(m, sim, 0.01, FixedCount(300), np.random.SeedSequence([77]))
    np.testing.assert_array_equal(a.starts, b.starts)
    np.testing.assert_array_equal(a.ends, b.ends)
    c = generate_pairs(m, sim, 0.01, FixedCount(300), np.random.SeedSequence([78]))
    assert not np.array_equal(a.ends, c.ends)


def test_python_fallback_matches_compiled_path_bitwise():
    m = builtin_model("cubic")
    sim = SimulationConfig(dt_int=0.005)
    fast = generate_pairs(m, sim, 0.01, FixedCount(200), np.random.SeedSequence([9]))
    slow = generate_pairs(
        m, sim, 0.01, FixedCount(200), np.random.SeedSequence([9]), _force_python=True
    )
    np.testing.assert_array_equal(fast.starts, slow.starts)
    np.testing.assert_array_equal(fast.ends, slow.ends)


def test_divergent_trajectory_raises():
    # an explicit step of 2.0 on a cubic drift explodes within a few steps
    m = builtin_model("cubic")
    sim = SimulationConfig(dt_int=2.0, x0=1.5, divergence_limit=1e3)
    with pytest.raises(DivergenceError):
        generate_pairs(m, sim, 2.0, FixedCount(10), np.random.SeedSequence([1]))


def test_starved_bins_raise_with_counts():
    m = builtin_model("ou")
    # the stationary law never visits [5, 6], so the quota cannot fill
    grid = make_grid(5.0, 6.0, 2)
    sim = SimulationConfig(dt_int=0.01, max_pairs=2_000)
    with pytest.raises(StarvationError) as err:
        generate_pairs(m, sim, 0.01, FixedPerBin(5, grid), np.random.SeedSequence([2]))
    assert err.value.counts.shape == (2,)
    assert err.value.target == 5


def test_pairs_from_series_layout_and_validation():
    values = np.arange(12.0)
    p1 = pairs_from_series(values, 0.1)
    np.testing.assert_array_equal(p1.starts, [0.0, 2.0, 4.0, 6.0, 8.0, 10.0])
    np.testing.assert_array_equal(p1.ends, [1.0, 3.0, 5.0, 7.0, 9.0, 11.0])
    p2 = pairs_from_series(values, 0.2, stride=2)
    np.testing.assert_array_equal(p2.starts, [0.0, 4.0, 8.0])
    np.testing.assert_array_equal(p2.ends, [2.0, 6.0, 10.0])
    assert p2.dt_obs == 0.2
    with pytest.raises(ValidationError):
        pairs_from_series(values, 0.1, stride=0)
    with pytest.raises(ValidationError):
        pairs_from_series(values.reshape(3, 4), 0.1)
    with pytest.raises(ValidationError):
        pairs_from_series(values[:2], 0.1, stride=2)


def test_strong_error_sweep_orders_schemes_and_steps():
    m = builtin_model("ou")
    res = strong_error_sweep(
        m, [0.02, 0.01], 0.0025, 0.1, 40, np.random.SeedSequence([3])
    )
    assert set(res["errors"]) == set(SCHEMES[1:])
    for scheme in res["errors"]:
        errs = res["errors"][scheme]
        assert set(errs) == {0.02, 0.01}
        assert errs[0.02] > errs[0.01] > 0.0
    assert np.isfinite(res["slopes"]["milstein"])
    assert np.isfinite(res["slopes"]["strong15"])


def test_strong_error_sweep_validation():
    m = builtin_model("ou")
    rng = np.random.SeedSequence([4])
    with pytest.raises(ValidationError):
        strong_error_sweep(m, [0.0107], 0.0025, 0.1, 10, rng)
    with pytest.raises(ValidationError):
        strong_error_sweep(m, [0.01], 0.0025, 0.1, 10, rng, schemes=("heun",))
