import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from myis import estimators as est
from myis.estimators import (
    EstimateReport,
    WeightedSample,
    WeightError,
    acf,
    batch_means_cov,
    build_report,
    kong_ess,
    mcmc_ess,
    plugin_xi,
    plugin_xi_diag,
    relative_efficiency,
    snis_estimate,
    weighted_cdf,
    weighted_quantile,
)
from myis.models import make_gaussian
from myis.samplers import SamplerConfig, run_chain
from oracles import ar1

# -- point estimates -------------------------------------------------------------


def test_snis_examples():
    rng = np.random.default_rng(0)
    v = rng.normal(size=(50, 3))
    np.testing.assert_allclose(snis_estimate(WeightedSample(v, np.full(50, -3.0))), v.mean(axis=0), rtol=1e-13)
    const = WeightedSample(np.full(50, 2.5), rng.normal(size=50))
    assert snis_estimate(const)[0] == pytest.approx(2.5, rel=1e-15)
    two = WeightedSample(np.array([0.0, 1.0]), np.array([0.0, -0.25]))
    expected = math.exp(-0.25) / (1 + math.exp(-0.25))
    assert snis_estimate(two)[0] == pytest.approx(expected, rel=1e-14)
    assert expected == pytest.approx(0.43782, abs=1e-5)


def test_all_zero_weights():
    ws = WeightedSample(np.arange(3.0), np.full(3, -np.inf))
    for f in (snis_estimate, kong_ess, lambda w: weighted_cdf(w, 0, 0.0), lambda w: weighted_quantile(w, 0, 0.5)):
        with pytest.raises(WeightError):
            f(ws)


def test_weighted_sample_validation():
    with pytest.raises(ValueError):
        WeightedSample(np.zeros(3), np.zeros(2))
    with pytest.raises(ValueError):
        WeightedSample(np.zeros(2), np.array([0.0, np.nan]))
    with pytest.raises(ValueError):
        WeightedSample(np.zeros(2), np.array([0.0, np.inf]))


def test_weighted_cdf_examples():
    rng = np.random.default_rng(1)
    ws = WeightedSample(rng.normal(size=200), rng.normal(size=200))
    assert weighted_cdf(ws, 0, np.inf) == 1.0
    assert weighted_cdf(ws, 0, -np.inf) == 0.0
    x = rng.normal(size=101)
    flat = WeightedSample(x, np.zeros(101))
    for s in (-1.0, 0.0, 0.7):
        assert weighted_cdf(flat, 0, s) == pytest.approx(np.mean(x <= s), abs=1e-15)


def test_weighted_quantile_examples():
    x = np.random.default_rng(2).normal(size=101)
    flat = WeightedSample(x, np.zeros(101))
    assert weighted_quantile(flat, 0, 0.0) == x.min()
    assert weighted_quantile(flat, 0, 0.5) == np.median(x)
    ws = WeightedSample(np.array([3.0, 1.0, 2.0]), np.log([0.5, 0.2, 0.3]))
    assert weighted_quantile(ws, 0, 0.4) == 2.0
    assert weighted_quantile(ws, 0, 0.6) == 3.0
    assert weighted_quantile(ws, 0, 0.5) == 2.0  # cumulative weight hits alpha exactly
    with pytest.raises(ValueError):
        weighted_quantile(ws, 0, 1.5)


def test_kong_examples():
    assert kong_ess(np.zeros(40)) == pytest.approx(40.0, rel=1e-15)
    lw = np.full(30, -np.inf)
    lw[7] = 0.0
    assert kong_ess(lw) == pytest.approx(1.0)
    assert kong_ess(WeightedSample(np.zeros(3), np.log([1.0, 0.5, 0.25]))) < 3.0


# -- batch means -----------------------------------------------------------------


def test_batch_means_examples():
    np.testing.assert_array_equal(batch_means_cov(np.full((100, 2), 3.0)), np.zeros((2, 2)))
    x = np.random.default_rng(3).normal(size=(60, 3))
    np.testing.assert_allclose(batch_means_cov(x, 1), np.cov(x, rowvar=False), rtol=1e-12)
    iid = np.random.default_rng(4).normal(size=100_000)
    assert batch_means_cov(iid)[0, 0] == pytest.approx(1.0, rel=0.10)
    with pytest.raises(ValueError):
        batch_means_cov(np.arange(5.0), 3)


def test_batch_means_drops_remainder():
    x = np.random.default_rng(5).normal(size=103)
    np.testing.assert_allclose(batch_means_cov(x, 10), batch_means_cov(x[:100], 10), rtol=1e-14)


def test_plugin_xi_unit_weights_reduces_to_batch_means():
    v = ar1(20_000, 0.6, np.random.default_rng(6))[:, None] * [1.0, -2.0] + np.random.default_rng(7).normal(size=(20_000, 2))
    ws = WeightedSample(v, np.zeros(20_000))
    np.testing.assert_allclose(plugin_xi(ws), batch_means_cov(v), rtol=1e-10, atol=1e-12)


def test_plugin_xi_iid_oracle():
    rng = np.random.default_rng(8)
    n = 100_000
    xi = rng.normal(1.0, 2.0, size=n)
    assert plugin_xi(WeightedSample(xi, np.zeros(n)))[0, 0] == pytest.approx(4.0, rel=0.15)
    # independent weights inflate the variance by E[w^2] / E[w]^2
    lw = rng.uniform(-1.0, 0.0, size=n)
    w = np.exp(lw)
    factor = np.mean(w * w) / np.mean(w) ** 2
    assert plugin_xi(WeightedSample(xi, lw))[0, 0] == pytest.approx(4.0 * factor, rel=0.15)


def test_plugin_xi_diag_matches_full_and_streams(monkeypatch):
    rng = np.random.default_rng(9)
    ws = WeightedSample(rng.normal(size=(5000, 4)), rng.uniform(-2, 0, size=5000))
    full = np.diag(plugin_xi(ws, 50))
    np.testing.assert_allclose(plugin_xi_diag(ws, 50), full, rtol=1e-10)
    monkeypatch.setattr(est, "CHUNK_ROWS", 64)
    np.testing.assert_allclose(plugin_xi_diag(ws, 50), full, rtol=1e-10)
    np.testing.assert_allclose(snis_estimate(ws), np.average(ws.values, axis=0, weights=np.exp(ws.log_weights)), rtol=1e-12)


def test_plugin_xi_replication_oracle():
    """n Var over replicate estimates agrees with the median plug-in value."""
    model = make_gaussian(np.eye(1))
    thetas, xis = [], []
    for r in range(200):
        tr = run_chain(SamplerConfig(kind="my_mala", step=1.0, n=5000, seed=3), model, 1.0, replicate=r)
        ws = WeightedSample(tr.states, tr.log_weights)
        thetas.append(snis_estimate(ws)[0])
        xis.append(plugin_xi(ws)[0, 0])
    assert 5000 * np.var(thetas, ddof=1) == pytest.approx(np.median(xis), rel=0.20)
    assert abs(np.mean(thetas)) < 3 * np.std(thetas, ddof=1) / math.sqrt(200)


# -- chain diagnostics -----------------------------------------------------------


def test_acf_examples():
    rng = np.random.default_rng(10)
    n = 50_000
    noise = acf(rng.normal(size=n), 10)
    assert noise[0] == 1.0
    assert np.all(np.abs(noise[1:]) < 3 / math.sqrt(n))
    a = acf(ar1(n, 0.5, rng), 8)
    np.testing.assert_allclose(a, 0.5 ** np.arange(9), atol=3 / math.sqrt(n))
    with pytest.raises(ValueError):
        acf(np.ones(20), 3)
    with pytest.raises(ValueError):
        acf(np.arange(5.0), 5)


def test_mcmc_ess_examples():
    rng = np.random.default_rng(11)
    n = 100_000
    assert mcmc_ess(rng.normal(size=n)) == pytest.approx(n, rel=0.15)
    assert mcmc_ess(ar1(n, 0.9, rng)) == pytest.approx(n * 0.1 / 1.9, rel=0.25)
    two = mcmc_ess(np.column_stack([rng.normal(size=n), ar1(n, 0.9, rng)]))
    assert two.shape == (2,) and two[0] > 5 * two[1]
    with pytest.raises(ValueError):
        mcmc_ess(np.ones(400))


def test_relative_efficiency_examples():
    t = np.array([0.5, 2.0, 3.0])
    assert relative_efficiency(t, t) == 1.0
    assert relative_efficiency(t, 4 * t) == pytest.approx(4.0)
    assert relative_efficiency([1.0, 1.0], [2.0, 8.0]) == pytest.approx(5.0)
    with pytest.raises(ValueError):
        relative_efficiency([1.0, 0.0], [1.0, 1.0])


# -- report ----------------------------------------------------------------------


def test_report_round_trip():
    rng = np.random.default_rng(12)
    ws = WeightedSample(rng.normal(size=(900, 2)), rng.uniform(-1, 0, size=900))
    rep = build_report(ws, quantile_requests=[(0, 0.5), (1, 0.9)], cdf_requests=[(0, 0.0)])
    assert rep.batch_size == 30 and rep.n == 900
    assert 0 < rep.kong_ess <= 900
    np.testing.assert_allclose(rep.mcse, np.sqrt(np.diag(rep.xi_hat) / 900))
    assert np.all(np.linalg.eigvalsh(rep.xi_hat) >= -1e-12)
    back = EstimateReport.from_dict(rep.to_dict())
    assert back.to_dict() == rep.to_dict()
    small = build_report(ws, full_xi_max_dim=1)
    assert small.xi_hat is None
    np.testing.assert_allclose(small.xi_diag, rep.xi_diag, rtol=1e-10)


# -- properties ------------------------------------------------------------------

log_w = arrays(float, st.integers(20, 60), elements=st.floats(-30, 0))


@given(lw=log_w, shift=st.floats(-500, 500), seed=st.integers(0, 2**31))
def test_snis_and_plugin_shift_invariant(lw, shift, seed):
    v = np.random.default_rng(seed).normal(size=(lw.size, 2))
    a, b = WeightedSample(v, lw), WeightedSample(v, lw + shift)
    np.testing.assert_allclose(snis_estimate(a), snis_estimate(b), rtol=1e-12, atol=1e-12)
    xa, xb = plugin_xi(a, 5), plugin_xi(b, 5)
    np.testing.assert_allclose(xa, xb, rtol=1e-9, atol=1e-9 * np.abs(xa).max())
    assert np.all(np.linalg.eigvalsh(xa) >= -1e-9 * (1 + np.abs(xa).max()))


@given(lw=log_w, seed=st.integers(0, 2**31))
def test_quantile_monotone_and_cdf_consistent(lw, seed):
    v = np.random.default_rng(seed).normal(size=lw.size)
    ws = WeightedSample(v, lw)
    alphas = np.linspace(0, 1, 21)
    q = [weighted_quantile(ws, 0, a) for a in alphas]
    assert all(b >= a for a, b in zip(q, q[1:]))
    for a, qa in zip(alphas, q):
        assert weighted_cdf(ws, 0, qa) >= a - 1e-9


@given(lw=log_w)
def test_kong_bounded_by_n(lw):
    ess = kong_ess(lw)
    assert 0 < ess <= lw.size * (1 + 1e-12)
    if np.ptp(lw) == 0:
        assert ess == pytest.approx(lw.size, rel=1e-12)
    elif np.ptp(lw) > 1e-6:
        assert ess < lw.size
