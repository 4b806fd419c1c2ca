import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from myis.envelope import EnvelopeView, ProxError, TargetModel, envelope_grad, envelope_value, log_weight
from myis.models import ToySpec, gaussian_envelope_value, make_gaussian, make_toy
from oracles import central_fd, envelope_1d
from zoo import centre, sample_points

MODEL_NAMES = ["toy1", "toy4", "gaussian", "trendfilter", "poisson", "nuclear"]
laplace = make_toy(ToySpec(beta=1, d=1))
quartic = make_toy(ToySpec(beta=4, d=1))


# -- worked examples ------------------------------------------------------------


def test_gaussian_envelope_value_example():
    view = EnvelopeView(make_gaussian(np.eye(1)), 1.0)
    assert envelope_value(view, 2.0) == pytest.approx(1.0, abs=1e-14)


@pytest.mark.parametrize("x, expected", [(0.0, 0.0), (2.0, 1.75)])
def test_abs_envelope_value(x, expected):
    assert envelope_value(EnvelopeView(laplace, 0.5), x) == pytest.approx(expected, abs=1e-14)


def test_abs_envelope_grad_and_weight():
    view = EnvelopeView(laplace, 0.5)
    assert envelope_grad(view, 2.0) == pytest.approx([1.0], abs=1e-14)
    assert log_weight(view, 2.0) == pytest.approx(-0.25, abs=1e-14)


def test_gaussian_grad_matches_fd():
    view = EnvelopeView(make_gaussian(np.eye(2)), 1.0)
    x = np.array([2.0, 0.0])
    g = envelope_grad(view, x)
    np.testing.assert_allclose(g, [1.0, 0.0], atol=1e-14)
    fd = central_fd(view.value, x, 1e-5)
    assert np.linalg.norm(fd - g) <= 1e-6 * np.linalg.norm(g)


def test_quartic_log_weight_against_golden_section():
    lam = 0.25
    expected = envelope_1d(lambda y: y**4, 1.0, lam) - 1.0
    assert log_weight(EnvelopeView(quartic, lam), 1.0) == pytest.approx(expected, abs=1e-8)


@pytest.mark.parametrize("name", MODEL_NAMES)
def test_grad_and_weight_vanish_at_minimiser(models, name):
    model = models[name]
    x = centre(model)
    view = EnvelopeView(model, 0.3)
    scale = 1.0 + np.max(np.abs(x))
    assert np.max(np.abs(envelope_grad(view, x))) <= 1e-6 * scale / 0.3
    assert abs(log_weight(view, x)) <= 1e-8 * (1.0 + abs(model.potential(x)))


def test_gaussian_envelope_closed_form():
    Omega = np.array([[2.0, 0.3], [0.3, 0.5]])
    view = EnvelopeView(make_gaussian(Omega), 0.7)
    rng = np.random.default_rng(0)
    for x in rng.normal(size=(20, 2)) * 3:
        assert envelope_value(view, x) == pytest.approx(gaussian_envelope_value(Omega, 0.7, x), rel=1e-12)


# -- errors ---------------------------------------------------------------------


def _halfline():
    """``psi(x) = x`` on ``x >= 0`` and ``+inf`` elsewhere."""
    return TargetModel(
        dim=1,
        potential=lambda x: float(x[0]) if x[0] >= 0 else math.inf,
        prox=lambda x, lam: np.maximum(np.asarray(x, dtype=float) - lam, 0.0),
    )


def test_weight_is_zero_outside_domain():
    view = EnvelopeView(_halfline(), 0.5)
    assert log_weight(view, -1.0) == -math.inf
    assert np.isfinite(envelope_value(view, -1.0))
    assert envelope_grad(view, -1.0) == pytest.approx([-2.0])


def test_broken_prox_raises():
    bad = TargetModel(
        dim=1,
        potential=lambda x: float(x[0]) if x[0] >= 0 else math.inf,
        prox=lambda x, lam: np.asarray(x, dtype=float) - 10.0,
    )
    with pytest.raises(ProxError):
        envelope_value(EnvelopeView(bad, 0.5), 1.0)


@pytest.mark.parametrize("lam", [0.0, -1.0, math.inf, math.nan])
def test_bad_lambda(lam):
    with pytest.raises(ValueError):
        EnvelopeView(laplace, lam)


def test_non_finite_point_rejected():
    with pytest.raises(ValueError):
        envelope_value(EnvelopeView(laplace, 1.0), math.nan)


def test_dim_validation():
    with pytest.raises(ValueError):
        TargetModel(dim=0, potential=lambda x: 0.0, prox=lambda x, lam: x)


# -- properties -----------------------------------------------------------------


lams = st.floats(min_value=1e-4, max_value=10.0)
seeds = st.integers(min_value=0, max_value=2**31)


@pytest.mark.parametrize("name", MODEL_NAMES)
@given(lam=lams, seed=seeds)
def test_envelope_below_potential(models, name, lam, seed):
    model = models[name]
    x = sample_points(name, model, 1, np.random.default_rng(seed))[0]
    view = EnvelopeView(model, lam)
    psi = model.potential(x)
    assert envelope_value(view, x) <= psi + 1e-12 * (1.0 + abs(psi))
    assert log_weight(view, x) <= 1e-12 * (1.0 + abs(psi))


@pytest.mark.parametrize("name", MODEL_NAMES)
@given(lam=lams, seed=seeds)
def test_grad_lipschitz(models, name, lam, seed):
    model = models[name]
    x, y = sample_points(name, model, 2, np.random.default_rng(seed))
    view = EnvelopeView(model, lam)
    gx, gy = envelope_grad(view, x), envelope_grad(view, y)
    gap = np.linalg.norm(x - y)
    assert np.linalg.norm(gx - gy) <= gap / lam * (1.0 + 1e-7) + 1e-9


@pytest.mark.parametrize("name", MODEL_NAMES)
@given(lam=lams, seed=seeds)
def test_model_prox_firmly_nonexpansive(models, name, lam, seed):
    model = models[name]
    x, y = sample_points(name, model, 2, np.random.default_rng(seed))
    px, py = model.prox(x, lam), model.prox(y, lam)
    lhs = float((px - py) @ (px - py))
    rhs = float((x - y) @ (px - py))
    assert lhs <= rhs + 1e-7 * (1.0 + float((x - y) @ (x - y)))


@pytest.mark.parametrize("name", MODEL_NAMES)
@given(seed=seeds)
def test_envelope_increases_as_lambda_shrinks(models, name, seed):
    model = models[name]
    x = sample_points(name, model, 1, np.random.default_rng(seed))[0]
    values = [envelope_value(EnvelopeView(model, lam), x) for lam in (1.0, 0.3, 0.1, 0.03, 0.01)]
    psi = model.potential(x)
    tol = 1e-9 * (1.0 + abs(psi))
    assert all(b >= a - tol for a, b in zip(values, values[1:]))
    assert values[-1] <= psi + tol


@pytest.mark.parametrize("model", [laplace, quartic], ids=["abs", "quartic"])
def test_minimiser_preserved_on_grid(model):
    grid = np.linspace(-3, 3, 601)
    view = EnvelopeView(model, 0.5)
    env = [envelope_value(view, g) for g in grid]
    pot = [model.potential(np.array([g])) for g in grid]
    assert np.argmin(env) == np.argmin(pot)


@pytest.mark.parametrize("name", ["toy1", "toy4", "gaussian", "poisson", "nuclear"])
def test_fd_agreement_at_safe_points(models, name):
    model = models[name]
    rng = np.random.default_rng(5)
    lam, h = 0.1, 1e-5
    view = EnvelopeView(model, lam)
    checked = 0
    for x in sample_points(name, model, 50, rng):
        if model.kink_distance(x, lam) <= 10 * h:
            continue
        g = envelope_grad(view, x)
        fd = central_fd(view.value, x, h)
        assert np.linalg.norm(fd - g) <= 1e-5 * max(np.linalg.norm(g), 1e-3)
        checked += 1
    assert checked >= 10
