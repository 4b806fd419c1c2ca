import math

import numpy as np
import pytest
from scipy import integrate

from myis import io
from myis.models import (
    CheckerboardSpec,
    PoissonDataSpec,
    ToySpec,
    TrendSignal,
    checkerboard,
    generate_poisson_data,
    generate_trend_data,
    make_checkerboard,
    make_poisson,
    make_toy,
    make_trendfilter,
    trend_grid,
    trend_mean,
)
from myis.prox import diff_matrix
from myis.samplers import SamplerConfig, run_chain
from oracles import central_fd
from zoo import sample_points

MODEL_NAMES = ["toy1", "toy4", "gaussian", "trendfilter", "poisson", "nuclear"]


# -- toys ------------------------------------------------------------------------


def test_toy_examples():
    assert make_toy(ToySpec(beta=1, d=20)).potential(np.ones(20)) == 20.0
    with pytest.raises(ValueError):
        ToySpec(beta=2)
    with pytest.raises(ValueError):
        ToySpec(beta=1, d=0)


def test_quartic_second_moment():
    expected = math.gamma(0.75) / math.gamma(0.25)
    num = integrate.quad(lambda x: x * x * math.exp(-(x**4)), -np.inf, np.inf)[0]
    den = integrate.quad(lambda x: math.exp(-(x**4)), -np.inf, np.inf)[0]
    assert num / den == pytest.approx(expected, rel=1e-10)
    assert expected == pytest.approx(0.33799, abs=1e-5)
    trace = run_chain(SamplerConfig(kind="p_mala", step=0.5, n=100_000, seed=3), make_toy(ToySpec(4, 1)), 0.25)
    assert np.mean(trace.states[:, 0] ** 2) == pytest.approx(expected, rel=0.05)


def test_laplace_variance_quadrature():
    var = integrate.quad(lambda x: x * x * 0.5 * math.exp(-abs(x)), -np.inf, np.inf)[0]
    assert var == pytest.approx(2.0, rel=1e-10)


# -- trendfilter -----------------------------------------------------------------


def test_trend_signal():
    assert trend_mean(35.0) == 35.0
    assert trend_mean(80.0) == 5.0
    assert trend_mean(70.0) == 0.0
    t = trend_grid(100)
    assert t.size == 100 and np.allclose(np.diff(t), np.diff(t)[0])


def test_trendfilter_potential_at_data():
    model, y = make_trendfilter(TrendSignal(m=40, alpha=2.5, seed=4), k=1)
    assert model.potential(y) == pytest.approx(2.5 * np.abs(diff_matrix(40, 2) @ y).sum(), rel=1e-14)
    assert model.dim == 40


def test_trend_data_deterministic():
    a, b = generate_trend_data(TrendSignal(seed=7)), generate_trend_data(TrendSignal(seed=7))
    np.testing.assert_array_equal(a[1], b[1])
    assert not np.array_equal(a[1], generate_trend_data(TrendSignal(seed=8))[1])


# -- checkerboard ----------------------------------------------------------------


def test_checkerboard_pattern():
    X0 = checkerboard()
    assert X0.shape == (64, 64)
    assert set(np.unique(X0)) == {0.0, 0.7, 1.0}
    assert np.linalg.matrix_rank(X0) == 2
    assert X0[0, 0] == 0.0 and X0[0, 8] == 1.0 and X0[0, 40] == 0.7


def test_checkerboard_model():
    model, Y = make_checkerboard()
    assert model.dim == 4096
    alpha = 1.15 / 0.01
    nuc = np.linalg.svd(Y, compute_uv=False).sum()
    assert model.potential(Y.ravel()) == pytest.approx(alpha * nuc, rel=1e-12)
    Y2 = make_checkerboard(CheckerboardSpec())[1]
    np.testing.assert_array_equal(Y, Y2)


# -- Poisson ---------------------------------------------------------------------


def test_poisson_data():
    counts, truth = generate_poisson_data(PoissonDataSpec())
    assert len(counts) == 50 and all(c.size == 5 for c in counts)
    assert all(np.all(c >= 0) and c.dtype.kind == "i" for c in counts)
    assert truth["mu"] == 0.0
    again, _ = generate_poisson_data(PoissonDataSpec())
    assert all(np.array_equal(a, b) for a, b in zip(counts, again))
    _, drawn = generate_poisson_data(PoissonDataSpec(mu_true=None, seed=3))
    assert abs(drawn["mu"]) <= 5.0
    with pytest.raises(ValueError):
        PoissonDataSpec(I=0)


def test_poisson_gradient():
    model, counts = make_poisson(PoissonDataSpec(I=6, seed=5))
    rng = np.random.default_rng(0)
    for _ in range(10):
        u = rng.normal(size=7)
        g = model.exact_grad(u)
        fd = central_fd(model.potential, u, 1e-6)
        assert np.linalg.norm(fd - g) <= 1e-7 * np.linalg.norm(g)
        eta, mu = u[:6], u[6]
        n = np.array([c.size for c in counts])
        ys = np.array([c.sum() for c in counts])
        np.testing.assert_allclose(g[:6], eta / 9 - mu / 9 + n * np.exp(eta) - ys, rtol=1e-12)
    u = np.zeros(7)
    u[6] = 1.7
    assert model.exact_grad(u)[6] == pytest.approx(1.7 * (6 / 9 + 1 / 100), rel=1e-14)


# -- shared properties -----------------------------------------------------------


@pytest.mark.parametrize("name", MODEL_NAMES)
def test_midpoint_convexity(models, name):
    model = models[name]
    rng = np.random.default_rng(1)
    pts = sample_points(name, model, 60, rng)
    for x, y in zip(pts[::2], pts[1::2]):
        fx, fy = model.potential(x), model.potential(y)
        assert model.potential(0.5 * (x + y)) <= 0.5 * (fx + fy) + 1e-9 * (1 + abs(fx) + abs(fy))


def test_datasets_round_trip(tmp_path):
    _, y = make_trendfilter(TrendSignal(m=25, seed=2))
    np.testing.assert_array_equal(io.read_vector_csv(io.write_vector_csv(tmp_path / "y.csv", y)), y)
    _, counts = make_poisson(PoissonDataSpec(I=7, seed=2))
    back = io.read_counts_csv(io.write_counts_csv(tmp_path / "c.csv", counts))
    assert all(np.array_equal(a, b) for a, b in zip(counts, back))
    M = np.random.default_rng(0).normal(size=(4, 3))
    np.testing.assert_array_equal(io.read_matrix(io.write_matrix_csv(tmp_path / "m.csv", M)), M)
    (tmp_path / "bad.csv").write_text("class_id,count\n0,-1\n")
    with pytest.raises(ValueError):
        io.read_counts_csv(tmp_path / "bad.csv")
