"""Self-normalised importance sampling estimates from envelope chains.

All weight arithmetic happens in log space with one max-subtraction per
aggregation.  Asymptotic covariances use non-overlapping batch means with
default batch size ``floor(sqrt(n))``; trailing samples that do not fill a
batch are dropped from the covariance only.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np

# rows processed per block when a pass over a (possibly memory-mapped) trace
# would otherwise materialise an n x p temporary
CHUNK_ROWS = 4096


class WeightError(ValueError):
    """No sample carries positive weight."""


@dataclass(frozen=True, eq=False)
class WeightedSample:
    """Values ``xi(X_t)`` with their importance log-weights.

    ``values`` is stored as an ``n x p`` array; a 1-D input becomes one
    column.  Log-weights may be ``-inf`` (zero weight) but not NaN or ``+inf``.
    """

    values: np.ndarray
    log_weights: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values)
        if v.ndim == 1:
            v = v[:, None]
        if v.ndim != 2:
            raise ValueError("values must be 1-D or 2-D")
        lw = np.asarray(self.log_weights, dtype=float).ravel()
        if lw.size != v.shape[0]:
            raise ValueError(f"{v.shape[0]} values but {lw.size} log-weights")
        if np.any(np.isnan(lw)) or np.any(lw == np.inf):
            raise ValueError("log-weights must be finite or -inf")
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "log_weights", lw)

    @property
    def n(self) -> int:
        return self.log_weights.size

    @property
    def p(self) -> int:
        return self.values.shape[1]

    def scaled_weights(self) -> np.ndarray:
        """Weights divided by their maximum, so the largest is exactly 1."""
        return _scaled(self.log_weights)

    def relative_weights(self) -> np.ndarray:
        w = self.scaled_weights()
        return w / w.sum()


def _scaled(log_weights) -> np.ndarray:
    lw = np.asarray(log_weights, dtype=float)
    if lw.size == 0 or not np.any(np.isfinite(lw)):
        raise WeightError("all importance weights are zero")
    return np.exp(lw - np.max(lw))


def _as_ws(obj) -> WeightedSample:
    if isinstance(obj, WeightedSample):
        return obj
    lw = np.asarray(obj, dtype=float).ravel()
    return WeightedSample(np.zeros((lw.size, 1)), lw)


def _column_sums(values, w=None) -> np.ndarray:
    """``sum_t w_t values[t]`` in row blocks."""
    n, p = values.shape
    out = np.zeros(p)
    for lo in range(0, n, CHUNK_ROWS):
        block = np.asarray(values[lo : lo + CHUNK_ROWS], dtype=float)
        out += block.sum(axis=0) if w is None else w[lo : lo + CHUNK_ROWS] @ block
    return out


# -- point estimates -------------------------------------------------------------


def snis_estimate(ws: WeightedSample) -> np.ndarray:
    """Self-normalised estimate ``sum_t w_t xi(X_t) / sum_t w_t``.

    Raises:
        WeightError: if every weight is zero.
    """
    w = ws.scaled_weights()
    return _column_sums(ws.values, w) / w.sum()


def weighted_cdf(ws: WeightedSample, component: int, s: float) -> float:
    """Weighted empirical distribution function of one component at ``s``."""
    w = ws.scaled_weights()
    col = np.asarray(ws.values[:, component], dtype=float)
    return float(min(1.0, w[col <= s].sum() / w.sum()))


def weighted_quantile(ws: WeightedSample, component: int, alpha: float) -> float:
    """First order statistic whose cumulative relative weight reaches ``alpha``.

    ``alpha = 0`` returns the smallest value.  When the cumulative weight
    equals ``alpha`` exactly at some order statistic, that statistic is
    returned.
    """
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must lie in [0, 1], got {alpha}")
    w = ws.scaled_weights()
    col = np.asarray(ws.values[:, component], dtype=float)
    order = np.argsort(col, kind="stable")
    if alpha == 0.0:
        return float(col[order[0]])
    cum = np.cumsum(w[order])
    cum /= cum[-1]
    cum[-1] = 1.0
    # cumulative sums that equal alpha up to round-off count as reaching it
    idx = int(np.searchsorted(cum, alpha - 1e-12, side="left"))
    return float(col[order[min(idx, col.size - 1)]])


def kong_ess(ws) -> float:
    """Kong effective sample size ``n * mean(w)^2 / mean(w^2)``.

    Accepts a :class:`WeightedSample` or a bare vector of log-weights.
    """
    w = _as_ws(ws).scaled_weights()
    return float(w.size * w.mean() ** 2 / np.mean(w * w))


# -- batch means -----------------------------------------------------------------


def default_batch_size(n: int) -> int:
    return max(1, int(np.floor(np.sqrt(n))))


def _batch_layout(n: int, batch_size: Optional[int]) -> tuple[int, int]:
    b = default_batch_size(n) if batch_size is None else int(batch_size)
    if b < 1:
        raise ValueError("batch size must be >= 1")
    a = n // b
    if a < 2:
        raise ValueError(f"need at least two batches, got n={n}, b={b}")
    return a, b


def batch_means_cov(series, batch_size: Optional[int] = None) -> np.ndarray:
    """Batch-means estimate ``b / (a - 1) sum_k (T_k - S)(T_k - S)'`` of the CLT covariance.

    ``series`` is ``n x q`` (a vector is one column).  ``S`` is the mean of the
    ``a * b`` samples kept.

    Raises:
        ValueError: if fewer than two full batches fit.
    """
    x = np.asarray(series, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    a, b = _batch_layout(x.shape[0], batch_size)
    means = x[: a * b].reshape(a, b, -1).mean(axis=1)
    c = means - means.mean(axis=0)
    cov = b * (c.T @ c) / (a - 1)
    return 0.5 * (cov + cov.T)


def _batch_means(values, a: int, b: int, w=None, shift=None) -> np.ndarray:
    """``a x p`` batch means of ``w_t * (values[t] - shift)``, streamed over batches."""
    p = values.shape[1]
    out = np.empty((a, p))
    per = max(1, CHUNK_ROWS // b)
    for k0 in range(0, a, per):
        k1 = min(a, k0 + per)
        block = np.asarray(values[k0 * b : k1 * b], dtype=float)
        if shift is not None:
            block = block - shift
        if w is not None:
            block = block * w[k0 * b : k1 * b, None]
        out[k0:k1] = block.reshape(k1 - k0, b, p).mean(axis=1)
    return out


def batch_means_var(series, batch_size: Optional[int] = None) -> np.ndarray:
    """Diagonal of :func:`batch_means_cov` without forming the ``q x q`` matrix."""
    x = series if np.ndim(series) == 2 else np.asarray(series, dtype=float)[:, None]
    a, b = _batch_layout(x.shape[0], batch_size)
    c = _batch_means(x, a, b)
    c -= c.mean(axis=0)
    return b * np.sum(c * c, axis=0) / (a - 1)


def plugin_xi(ws: WeightedSample, batch_size: Optional[int] = None) -> np.ndarray:
    """Plug-in ``(1 / wbar^2) [I, -theta] Sigma [I, -theta]'`` for the SNIS estimator.

    ``Sigma`` is the batch-means covariance of the stacked series
    ``(xi w, w)``.  Weights are rescaled by their maximum first; the result
    is invariant to that scaling.
    """
    w = ws.scaled_weights()
    vals = np.asarray(ws.values, dtype=float)
    theta = snis_estimate(ws)
    stacked = np.column_stack([vals * w[:, None], w])
    sigma = batch_means_cov(stacked, batch_size)
    a, b = _batch_layout(ws.n, batch_size)
    wbar = w[: a * b].mean()
    J = np.column_stack([np.eye(ws.p), -theta])
    xi = J @ sigma @ J.T / wbar**2
    return 0.5 * (xi + xi.T)


def plugin_xi_diag(ws: WeightedSample, batch_size: Optional[int] = None) -> np.ndarray:
    """Diagonal of :func:`plugin_xi`, streamed so ``p`` can be large.

    Entry ``i`` is the batch-means variance of ``w_t (xi_i(X_t) - theta_i)``
    divided by ``wbar^2``, which equals the ``i``-th diagonal of the full form.
    """
    w = ws.scaled_weights()
    theta = snis_estimate(ws)
    a, b = _batch_layout(ws.n, batch_size)
    means = _batch_means(ws.values, a, b, w=w, shift=theta)
    means -= means.mean(axis=0)
    wbar = w[: a * b].mean()
    return b * np.sum(means * means, axis=0) / (a - 1) / wbar**2


# -- chain diagnostics ------------------------------------------------------------


def acf(series, max_lag: int) -> np.ndarray:
    """Sample autocorrelations at lags ``0..max_lag`` with the biased ``1/n`` normalisation."""
    x = np.asarray(series, dtype=float).ravel()
    n = x.size
    if not 0 <= max_lag < n:
        raise ValueError(f"need 0 <= max_lag < n, got max_lag={max_lag}, n={n}")
    c = x - x.mean()
    c0 = float(c @ c)
    if c0 <= 0.0:
        raise ValueError("series has zero variance")
    return np.array([float(c[: n - k] @ c[k:]) / c0 for k in range(max_lag + 1)])


def mcmc_ess(series, batch_size: Optional[int] = None):
    """Batch-means effective sample size ``n s^2 / tau^2``.

    A vector gives a scalar; an ``n x p`` array gives one value per column.

    Raises:
        ValueError: if a column has zero sample or batch-means variance.
    """
    x = np.asarray(series, dtype=float)
    scalar = x.ndim == 1
    if scalar:
        x = x[:, None]
    n = x.shape[0]
    s2 = np.var(x, axis=0, ddof=1)
    tau2 = batch_means_var(x, batch_size)
    if np.any(s2 <= 0) or np.any(tau2 <= 0):
        raise ValueError("series has zero variance")
    ess = n * s2 / tau2
    return float(ess[0]) if scalar else ess


def relative_efficiency(tau2_method1, tau2_method2) -> float:
    """Mean over components of ``tau2_method2 / tau2_method1``."""
    r = efficiency_ratios(tau2_method1, tau2_method2)
    return float(np.mean(r))


def efficiency_ratios(tau2_method1, tau2_method2) -> np.ndarray:
    t1 = np.atleast_1d(np.asarray(tau2_method1, dtype=float))
    t2 = np.atleast_1d(np.asarray(tau2_method2, dtype=float))
    if t1.shape != t2.shape:
        raise ValueError("variance vectors differ in shape")
    if np.any(~(t1 > 0)) or np.any(~(t2 > 0)):
        raise ValueError("asymptotic variances must be strictly positive")
    return t2 / t1


# -- report ------------------------------------------------------------------------


@dataclass
class EstimateReport:
    """Summary of one weighted run.

    ``xi_hat`` is the full plug-in covariance when ``p`` is small enough and
    ``None`` otherwise; ``xi_diag`` is always present.
    """

    theta_hat: np.ndarray
    xi_diag: np.ndarray
    mcse: np.ndarray
    kong_ess: float
    n: int
    batch_size: int
    xi_hat: Optional[np.ndarray] = None
    mcmc_ess: Optional[np.ndarray] = None
    quantiles: dict = field(default_factory=dict)
    cdf: dict = field(default_factory=dict)

    @property
    def ne_ratio(self) -> float:
        return self.kong_ess / self.n

    def to_dict(self) -> dict:
        out = {
            "n": int(self.n),
            "batch_size": int(self.batch_size),
            "kong_ess": float(self.kong_ess),
            "ne_ratio": float(self.ne_ratio),
            "theta_hat": _floats(self.theta_hat),
            "xi_diag": _floats(self.xi_diag),
            "mcse": _floats(self.mcse),
            "xi_hat": None if self.xi_hat is None else [_floats(r) for r in self.xi_hat],
            "mcmc_ess": None if self.mcmc_ess is None else _floats(self.mcmc_ess),
            "quantiles": [
                {"component": int(i), "alpha": float(a), "value": float(v)}
                for (i, a), v in sorted(self.quantiles.items())
            ],
            "cdf": [
                {"component": int(i), "s": float(s), "value": float(v)}
                for (i, s), v in sorted(self.cdf.items())
            ],
        }
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "EstimateReport":
        return cls(
            theta_hat=np.asarray(d["theta_hat"], dtype=float),
            xi_diag=np.asarray(d["xi_diag"], dtype=float),
            mcse=np.asarray(d["mcse"], dtype=float),
            kong_ess=float(d["kong_ess"]),
            n=int(d["n"]),
            batch_size=int(d["batch_size"]),
            xi_hat=None if d.get("xi_hat") is None else np.asarray(d["xi_hat"], dtype=float),
            mcmc_ess=None if d.get("mcmc_ess") is None else np.asarray(d["mcmc_ess"], dtype=float),
            quantiles={(q["component"], q["alpha"]): q["value"] for q in d.get("quantiles", [])},
            cdf={(q["component"], q["s"]): q["value"] for q in d.get("cdf", [])},
        )


def _floats(a) -> list:
    return [float(v) for v in np.asarray(a, dtype=float).ravel()]


def build_report(
    ws: WeightedSample,
    *,
    batch_size: Optional[int] = None,
    quantile_requests: Iterable[Sequence] = (),
    cdf_requests: Iterable[Sequence] = (),
    chain_values=None,
    full_xi_max_dim: int = 200,
) -> EstimateReport:
    """Compute every summary of an :class:`EstimateReport` from one sample.

    Args:
        ws: Values and log-weights from the chain.
        batch_size: Batch size for the batch-means estimators, default
            ``floor(sqrt(n))``.
        quantile_requests: ``(component, alpha)`` pairs.
        cdf_requests: ``(component, s)`` pairs.
        chain_values: Optional unweighted ``n x p`` series for the MCMC ESS;
            defaults to ``ws.values``.
        full_xi_max_dim: Largest ``p`` for which the full ``p x p`` plug-in
            covariance is formed.
    """
    b = default_batch_size(ws.n) if batch_size is None else int(batch_size)
    theta = snis_estimate(ws)
    xi_full = plugin_xi(ws, b) if ws.p <= full_xi_max_dim else None
    xi_diag = np.diag(xi_full).copy() if xi_full is not None else plugin_xi_diag(ws, b)
    xi_diag = np.maximum(xi_diag, 0.0)
    chain = ws.values if chain_values is None else chain_values
    try:
        ess = mcmc_ess(chain if np.ndim(chain) == 2 else np.asarray(chain)[:, None], b)
    except ValueError:
        ess = None
    return EstimateReport(
        theta_hat=theta,
        xi_diag=xi_diag,
        mcse=np.sqrt(xi_diag / ws.n),
        kong_ess=kong_ess(ws),
        n=ws.n,
        batch_size=b,
        xi_hat=xi_full,
        mcmc_ess=ess,
        quantiles={(int(i), float(a)): weighted_quantile(ws, int(i), float(a)) for i, a in quantile_requests},
        cdf={(int(i), float(s)): weighted_cdf(ws, int(i), float(s)) for i, s in cdf_requests},
    )
