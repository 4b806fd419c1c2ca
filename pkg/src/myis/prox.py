"""Proximal operators for the model families used by the samplers.

Closed forms cover the scalar toys, the Gaussian, and singular value
thresholding.  The trendfilter prox is a generalized-lasso problem solved by
ADMM; the Poisson random-effects prox is solved by Newton-Raphson.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property, lru_cache
from typing import Sequence

import numpy as np

from . import _kernels


class ProxConvergenceError(RuntimeError):
    """An iterative prox failed to converge; carries the final residuals."""

    def __init__(self, message, **residuals):
        super().__init__(message)
        self.residuals = residuals


# -- scalar and separable operators ------------------------------------------


def prox_abs(x, t):
    """Soft thresholding, the prox of ``|x|`` with parameter ``t``."""
    x = np.asarray(x, dtype=float)
    out = np.sign(x) * np.maximum(np.abs(x) - t, 0.0)
    return out if out.ndim else float(out)


def prox_power4(x, lam):
    """Prox of ``y**4`` via the real root of ``4 lam y^3 + y - x = 0``.

    The cube-root closed form is evaluated on ``|x|`` (the objective is odd
    symmetric, and the direct formula cancels badly for negative ``x``) and
    then refined by one Newton step.
    """
    x = np.asarray(x, dtype=float)
    ax = np.abs(x)
    root = np.sqrt(3.0) * np.sqrt(lam**3 * (27.0 * lam * ax**2 + 1.0)) + 9.0 * lam**2 * ax
    cbrt = np.cbrt(root)
    y = (np.cbrt(3.0) * cbrt**2 - 3.0 ** (2.0 / 3.0) * lam) / (6.0 * lam * cbrt)
    y = y - (4.0 * y**3 + (y - ax) / lam) / (12.0 * y**2 + 1.0 / lam)
    out = np.sign(x) * y
    return out if out.ndim else float(out)


def prox_quad_l1(x, a, b, lam):
    """Prox of ``a x^2 + b |x|``: shrink by ``lam b`` then scale by ``1/(1 + 2 a lam)``."""
    x = np.asarray(x, dtype=float)
    out = np.sign(x) * np.maximum(np.abs(x) - lam * b, 0.0) / (1.0 + 2.0 * a * lam)
    return out if out.ndim else float(out)


def prox_gaussian(x, Omega, lam):
    """Prox of ``x' Omega^{-1} x / 2``, i.e. ``(lam Omega^{-1} + I)^{-1} x``."""
    Omega = np.atleast_2d(np.asarray(Omega, dtype=float))
    x = np.asarray(x, dtype=float)
    d = Omega.shape[0]
    return np.linalg.solve(Omega + lam * np.eye(d), Omega @ x)


# -- difference operators and trendfiltering ---------------------------------


def diff_matrix(m: int, order: int) -> np.ndarray:
    """Discrete difference matrix of the given order, shape ``(m - order, m)``.

    Built by the recursion ``D_m^(j+1) = D_{m-j}^(1) D_m^(j)`` starting from
    first differences with rows ``(-1, 1)``.
    """
    m, order = int(m), int(order)
    if order < 0 or m < order + 1:
        raise ValueError(f"need m >= order + 1 >= 1, got m={m}, order={order}")
    D = np.eye(m)
    for j in range(order):
        rows = m - j - 1
        first = np.zeros((rows, m - j))
        idx = np.arange(rows)
        first[idx, idx] = -1.0
        first[idx, idx + 1] = 1.0
        D = first @ D
    return D


def difference_coefficients(order: int) -> np.ndarray:
    """Row pattern of the order-``order`` difference matrix, e.g. ``(1, -2, 1)``."""
    return diff_matrix(order + 1, order)[0].copy()


def difference_band(m: int, order: int, rho: float = 1.0) -> tuple[np.ndarray, np.ndarray]:
    """Row pattern of ``D`` and the banded Cholesky factor of ``I + rho D'D``."""
    D = diff_matrix(m, order)
    L = np.linalg.cholesky(np.eye(m) + rho * D.T @ D)
    bw = order + 1
    Lb = np.zeros((m, bw))
    for j in range(bw):
        Lb[j:, j] = np.diagonal(L, -j)
    return difference_coefficients(order), Lb


@dataclass(frozen=True, eq=False)
class TrendfilterSpec:
    """Gaussian likelihood with an l1 penalty on ``(k+1)``-th differences.

    ``alpha = 0`` is accepted and removes the penalty.
    """

    y: np.ndarray
    k: int = 1
    alpha: float = 1.0
    sigma2: float = 9.0
    rho: float = 1.0
    tol: float = 1e-8
    max_iter: int = 5000

    def __post_init__(self):
        y = np.asarray(self.y, dtype=float).ravel()
        object.__setattr__(self, "y", y)
        if y.size < self.k + 2:
            raise ValueError(f"need m >= k + 2, got m={y.size}, k={self.k}")
        if self.alpha < 0 or self.sigma2 <= 0:
            raise ValueError("alpha must be >= 0 and sigma2 > 0")

    @property
    def m(self) -> int:
        return self.y.size

    @cached_property
    def D(self) -> np.ndarray:
        return diff_matrix(self.m, self.k + 1)

    @cached_property
    def band(self) -> tuple[np.ndarray, np.ndarray]:
        return difference_band(self.m, self.k + 1, self.rho)

    def potential(self, mu) -> float:
        mu = np.asarray(mu, dtype=float)
        r = self.y - mu
        return float(r @ r) / (2.0 * self.sigma2) + self.alpha * float(np.abs(self.D @ mu).sum())


def solve_genlasso(
    z, order, tau, *, band=None, rho=1.0, tol=1e-8, max_iter=5000, check_every=10, polish_rounds=25
):
    """Solve ``min_eta 0.5 ||eta - z||^2 + tau ||D eta||_1`` by ADMM.

    ``D`` is the difference matrix of the given ``order`` on ``len(z)`` points.

    Raises:
        ProxConvergenceError: if neither the ADMM residuals nor the polished
            KKT certificate are reached within ``max_iter`` iterations.
    """
    z = np.ascontiguousarray(z, dtype=float)
    if tau == 0:
        return z.copy()
    if band is None:
        band = difference_band(z.size, order, rho)
    coef, Lb = band
    D = _dense_difference(z.size, order)
    eta, status, iters, r, s, _ = _kernels.admm_genlasso(
        z, coef, Lb, D, float(tau), float(rho), float(tol), int(max_iter), int(check_every),
        int(polish_rounds),
    )
    if status != _kernels.ADMM_OK:
        raise ProxConvergenceError(
            f"ADMM did not converge in {iters} iterations (primal {r:.3e}, dual {s:.3e})",
            primal=r,
            dual=s,
            iterations=iters,
        )
    return eta


@lru_cache(maxsize=32)
def _dense_difference(m: int, order: int) -> np.ndarray:
    return diff_matrix(m, order)


def genlasso_objective(eta, z, D, tau) -> float:
    eta = np.asarray(eta, dtype=float)
    r = eta - z
    return 0.5 * float(r @ r) + tau * float(np.abs(D @ eta).sum())


def prox_trendfilter(spec: TrendfilterSpec, mu, lam: float) -> np.ndarray:
    """Trendfilter prox: a generalized lasso centred at a blend of ``mu`` and ``y``."""
    mu = np.asarray(mu, dtype=float)
    s2 = spec.sigma2
    z = (s2 * mu + lam * spec.y) / (s2 + lam)
    tau = spec.alpha * s2 * lam / (s2 + lam)
    return solve_genlasso(
        z, spec.k + 1, tau, band=spec.band, rho=spec.rho, tol=spec.tol, max_iter=spec.max_iter
    )


# -- nuclear norm --------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class NuclearSpec:
    """Gaussian matrix denoising with a nuclear-norm prior.

    ``Y`` is stored as a flat row-major vector; states are flat too.
    """

    Y: np.ndarray
    rows: int
    cols: int
    alpha: float
    sigma2: float

    def __post_init__(self):
        Y = np.asarray(self.Y, dtype=float).ravel()
        object.__setattr__(self, "Y", Y)
        if Y.size != self.rows * self.cols:
            raise ValueError("Y size does not match rows * cols")
        if self.alpha <= 0 or self.sigma2 <= 0:
            raise ValueError("alpha and sigma2 must be positive")

    @property
    def Ymat(self) -> np.ndarray:
        return self.Y.reshape(self.rows, self.cols)

    def potential(self, x) -> float:
        X = np.asarray(x, dtype=float).reshape(self.rows, self.cols)
        r = self.Ymat - X
        nuc = np.linalg.svd(X, compute_uv=False).sum()
        return float(np.sum(r * r)) / (2.0 * self.sigma2) + self.alpha * float(nuc)


def svt(Z, t) -> np.ndarray:
    """Singular value soft thresholding of the matrix ``Z`` at level ``t``."""
    try:
        U, s, Vt = np.linalg.svd(np.asarray(Z, dtype=float), full_matrices=False)
    except np.linalg.LinAlgError as exc:
        raise RuntimeError(f"SVD failed: {exc}") from exc
    return (U * np.maximum(s - t, 0.0)) @ Vt


def nuclear_blend(spec: NuclearSpec, X, lam: float) -> tuple[np.ndarray, float]:
    """Matrix and threshold whose SVT is the nuclear-model prox."""
    X = np.asarray(X, dtype=float).reshape(spec.rows, spec.cols)
    s2 = spec.sigma2
    B = (lam * spec.Ymat + s2 * X) / (lam + s2)
    return B, spec.alpha * lam * s2 / (lam + s2)


def prox_nuclear(spec: NuclearSpec, X, lam: float) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    B, t = nuclear_blend(spec, X, lam)
    return svt(B, t).reshape(X.shape)


# -- Poisson random effects ----------------------------------------------------


@dataclass(frozen=True, eq=False)
class PoissonSpec:
    """Poisson random-effects posterior over ``(eta_1..eta_I, mu)``."""

    counts: Sequence[np.ndarray]
    sigma_eta2: float = 9.0
    c2: float = 100.0
    newton_tol: float = 1e-10
    newton_max_iter: int = 100
    max_halvings: int = 30
    _n: np.ndarray = field(init=False, repr=False)
    _ysum: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        counts = tuple(np.asarray(c, dtype=np.int64).ravel() for c in self.counts)
        if not counts:
            raise ValueError("need at least one class")
        for c in counts:
            if np.any(c < 0):
                raise ValueError("counts must be nonnegative integers")
        if self.sigma_eta2 <= 0 or self.c2 <= 0:
            raise ValueError("sigma_eta2 and c2 must be positive")
        object.__setattr__(self, "counts", counts)
        object.__setattr__(self, "_n", np.array([c.size for c in counts], dtype=float))
        object.__setattr__(self, "_ysum", np.array([c.sum() for c in counts], dtype=float))

    @property
    def I(self) -> int:  # noqa: E743
        return len(self.counts)

    @property
    def n(self) -> np.ndarray:
        return self._n

    @property
    def ysum(self) -> np.ndarray:
        return self._ysum

    def potential(self, u) -> float:
        u = np.asarray(u, dtype=float)
        I, s2 = self.I, self.sigma_eta2
        eta, mu = u[:I], u[I]
        with np.errstate(over="ignore"):
            val = (
                eta @ eta / (2.0 * s2)
                - mu * eta.sum() / s2
                + self.n @ np.exp(eta)
                - eta @ self.ysum
                + 0.5 * mu * mu * (I / s2 + 1.0 / self.c2)
            )
        return float(val)

    def grad(self, u) -> np.ndarray:
        u = np.asarray(u, dtype=float)
        I, s2 = self.I, self.sigma_eta2
        eta, mu = u[:I], u[I]
        g = np.empty(I + 1)
        g[:I] = eta / s2 - mu / s2 + self.n * np.exp(eta) - self.ysum
        g[I] = mu * (I / s2 + 1.0 / self.c2) - eta.sum() / s2
        return g

    def prox_objective(self, v, u, lam) -> float:
        v = np.asarray(v, dtype=float)
        d = v - np.asarray(u, dtype=float)
        return self.potential(v) + float(d @ d) / (2.0 * lam)

    def prox_gradient(self, v, u, lam) -> np.ndarray:
        v = np.asarray(v, dtype=float)
        return self.grad(v) - (np.asarray(u, dtype=float) - v) / lam


def prox_poisson(spec: PoissonSpec, u, lam: float) -> np.ndarray:
    """Newton-Raphson prox for the Poisson random-effects potential.

    Raises:
        ProxConvergenceError: on iteration exhaustion or when the Hessian
            overflows (``n_i exp(eta_i)`` not finite).
    """
    u = np.ascontiguousarray(u, dtype=float)
    if u.size != spec.I + 1 or not np.all(np.isfinite(u)):
        raise ValueError(f"u must be a finite vector of length {spec.I + 1}")
    v, status, iters, gnorm = _kernels.newton_poisson(
        u,
        spec.n,
        spec.ysum,
        float(spec.sigma_eta2),
        float(spec.c2),
        float(lam),
        float(spec.newton_tol),
        int(spec.newton_max_iter),
        int(spec.max_halvings),
    )
    if status == _kernels.NEWTON_OVERFLOW:
        raise ProxConvergenceError(
            "Hessian entries overflowed (n_i exp(eta_i) is not finite); "
            "damp the sampler step size or start closer to the mode",
            grad_norm=gnorm,
            iterations=iters,
        )
    if status != _kernels.NEWTON_OK:
        raise ProxConvergenceError(
            f"Newton-Raphson did not converge in {iters} iterations (|grad| {gnorm:.3e})",
            grad_norm=gnorm,
            iterations=iters,
        )
    return v
