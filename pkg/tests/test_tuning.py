import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from myis.models import ToySpec, make_gaussian, make_toy
from myis.tuning import (
    TuneResult,
    gaussian_lambda_star,
    gaussian_ne_ratio,
    kong_limit,
    lambda_star_residual,
    lambda_sweep,
    pilot_ne_ratio,
    tune,
    tune_lambda,
    tune_step,
)

toy20 = make_toy(ToySpec(beta=1, d=20))


def _grid_root(s, lo, hi, points=200_001):
    """Sign change of the residual on a fine grid, refined by bisection."""
    grid = np.linspace(lo, hi, points)
    vals = np.array([lambda_star_residual(s, g) for g in grid])
    i = int(np.nonzero(np.sign(vals[:-1]) != np.sign(vals[1:]))[0][0])
    a, b = grid[i], grid[i + 1]
    for _ in range(200):
        m = 0.5 * (a + b)
        if np.sign(lambda_star_residual(s, m)) == np.sign(lambda_star_residual(s, a)):
            a = m
        else:
            b = m
    return 0.5 * (a + b)


# -- Gaussian analytics ----------------------------------------------------------


def test_lambda_star_examples():
    assert gaussian_lambda_star([2.0, 2.0, 2.0]) == 2.0 / 3.0
    assert gaussian_lambda_star([1.0]) == 1.0
    root = gaussian_lambda_star([1.0, 4.0])
    assert 0.5 < root < 2.0
    assert root == pytest.approx(_grid_root([1.0, 4.0], 0.5, 2.0), abs=1e-10)
    hand = (2 * root - 1) / ((1 + root) * (1 + 2 * root)) + (2 * root - 4) / ((4 + root) * (4 + 2 * root))
    assert abs(hand) < 1e-12


def test_lambda_star_rejects_nonpositive():
    with pytest.raises(ValueError):
        gaussian_lambda_star([1.0, 0.0])


@given(s=arrays(float, st.integers(1, 12), elements=st.floats(0.01, 100.0)))
def test_lambda_star_bracket_and_residual(s):
    root = gaussian_lambda_star(s)
    d = s.size
    assert s.min() / d <= root <= s.max() / d
    assert abs(lambda_star_residual(s, root)) < 1e-12


def test_kong_limit_values():
    assert kong_limit(4) == pytest.approx(1.5**2 / 1.25**4, rel=1e-15)
    assert kong_limit(4) == pytest.approx(0.9216, abs=1e-12)
    for d in (1, 2, 8, 50):
        assert gaussian_ne_ratio(np.ones(d), 1.0 / d) == pytest.approx(kong_limit(d), rel=1e-12)


# -- step size -------------------------------------------------------------------


@pytest.fixture(scope="module")
def toy20_lambda():
    return tune_lambda(toy20, "my_mala", seed=1)


def test_tune_step_mala_acceptance(toy20_lambda):
    res = tune_step(toy20, toy20_lambda.lam, "my_mala", seed=2)
    assert res.converged and 0.50 <= res.acc_rate <= 0.65
    assert res.step <= 4 * toy20_lambda.lam


def test_tune_step_hmc_acceptance(toy20_lambda):
    res = tune_step(toy20, toy20_lambda.lam, "my_hmc", seed=3)
    assert res.converged and 0.58 <= res.acc_rate <= 0.72
    assert res.target_acc == 0.65


def test_tune_step_shrinks_huge_start():
    model = make_gaussian(np.eye(1))
    for seed in range(20):
        res = tune_step(model, 1.0, "my_barker", step0=1e4, seed=seed)
        assert res.step < 1e4
        assert res.acc_rate > 0.3


def test_tune_step_flags_failure():
    res = tune_step(toy20, 0.05, "my_mala", target_acc=0.999, seed=1, max_batches=5, cap_factor=1e-6)
    assert isinstance(res, TuneResult)
    with pytest.raises(ValueError):
        tune_step(toy20, 0.05, "my_mala", target_acc=1.5)


# -- lambda ----------------------------------------------------------------------


def test_tiny_lambda_weights_are_flat():
    model = make_toy(ToySpec(beta=1, d=1))
    ratio, _ = pilot_ne_ratio(model, 1e-8, "my_mala", 1e-8, 10_000, seed=1)
    assert ratio > 0.99


def test_tune_lambda_window_and_confirmation(toy20_lambda):
    res = toy20_lambda
    assert res.converged and 0.4 <= res.ne_ratio <= 0.8
    assert 0.0 <= res.acc_rate <= 1.0
    fresh, _ = pilot_ne_ratio(toy20, res.lam, "my_mala", res.step, 10_000, seed=99)
    assert abs(fresh - res.ne_ratio) <= 0.1


def test_tune_lambda_gaussian_brackets_optimum():
    model = make_gaussian(np.eye(4))
    res = tune_lambda(model, "my_mala", seed=2)
    lams = [p["lam"] for p in res.probes]
    assert min(lams) <= 0.25 <= max(lams)
    assert 0.125 <= res.lam <= 0.5 * 1.0001


def test_tune_lambda_exhaustion_returns_best_probe():
    res = tune_lambda(toy20, "my_mala", window=(0.5, 0.5001), max_probes=3, pilot_n=2000, seed=3)
    assert not res.converged and len(res.probes) == 3
    best = min(res.probes, key=lambda p: abs(p["ne_ratio"] - 0.50005))
    assert res.lam == best["lam"]


def test_tune_lambda_argument_checks():
    with pytest.raises(ValueError):
        tune_lambda(toy20, "p_mala")
    with pytest.raises(ValueError):
        tune_lambda(toy20, "my_mala", window=(0.8, 0.4))
    with pytest.raises(ValueError):
        tune_lambda(toy20, "my_mala", lam0=-1.0)


def test_tune_with_fixed_lambda():
    res = tune(make_gaussian(np.eye(2)), "my_hmc", lam=0.5, seed=1)
    assert res.lam == 0.5 and res.converged and math.isfinite(res.step)
    assert set(res.to_dict()) >= {"lam", "ne_ratio", "step", "acc_rate", "pilot_n"}


def test_lambda_sweep_rows():
    rows = lambda_sweep(make_toy(ToySpec(1, 3)), [0.01, 0.1, 1.0], "my_mala", 3000, tune_steps=False, seed=1)
    assert [r["lam"] for r in rows] == [0.01, 0.1, 1.0]
    assert rows[0]["ne_ratio"] > rows[-1]["ne_ratio"]
    assert all(0 < r["mcmc_ess_ratio"] for r in rows)
