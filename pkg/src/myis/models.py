"""Target models for the experiments, with synthetic data generators."""

from __future__ import annotations

from dataclasses import dataclass
from functools import partial

import numpy as np

from .envelope import TargetModel
from .prox import (
    NuclearSpec,
    PoissonSpec,
    TrendfilterSpec,
    nuclear_blend,
    prox_abs,
    prox_nuclear,
    prox_poisson,
    prox_power4,
    prox_trendfilter,
)


# -- toy product densities -----------------------------------------------------


@dataclass(frozen=True)
class ToySpec:
    beta: int = 1
    d: int = 1

    def __post_init__(self):
        if self.beta not in (1, 4):
            raise ValueError(f"unsupported beta {self.beta}; use 1 or 4")
        if self.d < 1:
            raise ValueError("d must be >= 1")


def make_toy(spec: ToySpec) -> TargetModel:
    """``psi(x) = sum |x_i|^beta`` with a coordinatewise prox."""
    beta = spec.beta

    def potential(x):
        return float(np.sum(np.abs(x) ** beta))

    if beta == 1:

        def prox(x, lam):
            return prox_abs(np.asarray(x, dtype=float), lam)

        def kink_distance(x, lam):
            return float(np.min(np.abs(np.abs(x) - lam)))

        exact_grad = None
    else:

        def prox(x, lam):
            return prox_power4(np.asarray(x, dtype=float), lam)

        def kink_distance(x, lam):
            return np.inf

        def exact_grad(x):
            return 4.0 * np.asarray(x, dtype=float) ** 3

    return TargetModel(
        dim=spec.d,
        potential=potential,
        prox=prox,
        exact_grad=exact_grad,
        kink_distance=kink_distance,
        minimizer=np.zeros(spec.d),
        name=f"toy_beta{beta}_d{spec.d}",
        meta={"model": "toy", "beta": beta, "d": spec.d},
    )


# -- Gaussian ------------------------------------------------------------------


def make_gaussian(Omega) -> TargetModel:
    """``N(0, Omega)`` target; the prox is diagonal in the eigenbasis of ``Omega``.

    Raises:
        ValueError: if ``Omega`` is not symmetric positive definite.
    """
    Omega = np.atleast_2d(np.asarray(Omega, dtype=float))
    if Omega.shape[0] != Omega.shape[1] or not np.allclose(Omega, Omega.T):
        raise ValueError("Omega must be a symmetric square matrix")
    try:
        np.linalg.cholesky(Omega)
    except np.linalg.LinAlgError as exc:
        raise ValueError("Omega must be positive definite") from exc
    s, Q = np.linalg.eigh(Omega)
    precision = (Q / s) @ Q.T
    d = Omega.shape[0]

    def potential(x):
        x = np.asarray(x, dtype=float)
        return 0.5 * float(x @ precision @ x)

    def prox(x, lam):
        return Q @ ((s / (s + lam)) * (Q.T @ np.asarray(x, dtype=float)))

    def exact_grad(x):
        return precision @ np.asarray(x, dtype=float)

    return TargetModel(
        dim=d,
        potential=potential,
        prox=prox,
        exact_grad=exact_grad,
        kink_distance=lambda x, lam: np.inf,
        minimizer=np.zeros(d),
        name=f"gaussian_d{d}",
        meta={"model": "gaussian", "eigenvalues": s.tolist()},
    )


def gaussian_envelope_value(Omega, lam, x) -> float:
    """Closed form ``x' (Omega + lam I)^{-1} x / 2`` of the Gaussian envelope."""
    Omega = np.atleast_2d(np.asarray(Omega, dtype=float))
    x = np.atleast_1d(np.asarray(x, dtype=float))
    return 0.5 * float(x @ np.linalg.solve(Omega + lam * np.eye(Omega.shape[0]), x))


# -- trendfiltering ------------------------------------------------------------


@dataclass(frozen=True)
class TrendSignal:
    """Piecewise-linear test signal observed with Gaussian noise.

    ``alpha`` is the l1 penalty weight on ``(k+1)``-th differences.
    """

    m: int = 100
    sigma2: float = 9.0
    alpha: float = 5.0
    seed: int = 1


def trend_mean(t) -> np.ndarray:
    """Rises with slope 1 to 35 at ``t = 35``, falls to 0 at ``t = 70``, then rises with slope 1/2."""
    t = np.asarray(t, dtype=float)
    return np.where(t <= 35, t, np.where(t <= 70, 70.0 - t, 0.5 * t - 35.0))


def trend_grid(m: int) -> np.ndarray:
    return np.linspace(1.0, 100.0, m)


def generate_trend_data(signal: TrendSignal) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(t, y)`` with ``y = mu(t) + N(0, sigma2)`` noise."""
    rng = np.random.default_rng(signal.seed)
    t = trend_grid(signal.m)
    y = trend_mean(t) + np.sqrt(signal.sigma2) * rng.standard_normal(signal.m)
    return t, y


def trendfilter_model(spec: TrendfilterSpec, name="trendfilter", meta=None) -> TargetModel:
    return TargetModel(
        dim=spec.m,
        potential=spec.potential,
        prox=partial(prox_trendfilter, spec),
        name=name,
        meta=dict(meta or {}, model="trendfilter", k=spec.k, alpha=spec.alpha, sigma2=spec.sigma2),
    )


def make_trendfilter(signal: TrendSignal, k: int = 1, y=None) -> tuple[TargetModel, np.ndarray]:
    """Trendfilter posterior; generates ``y`` from ``signal`` unless given."""
    if y is None:
        _, y = generate_trend_data(signal)
    spec = TrendfilterSpec(y=y, k=k, alpha=signal.alpha, sigma2=signal.sigma2)
    meta = {"m": signal.m, "seed": signal.seed}
    return trendfilter_model(spec, name=f"trendfilter_m{signal.m}_k{k}", meta=meta), spec.y


# -- nuclear-norm matrix denoising -------------------------------------------


@dataclass(frozen=True)
class CheckerboardSpec:
    size: int = 64
    block: int = 8
    sigma2: float = 0.01
    alpha: float | None = None
    seed: int = 1

    @property
    def alpha_value(self) -> float:
        return 1.15 / self.sigma2 if self.alpha is None else float(self.alpha)


def checkerboard(size: int = 64, block: int = 8, gray: float = 0.7) -> np.ndarray:
    """Two-tone checkerboard: black/white on the left half, black/gray on the right.

    Blocks are ``block x block`` pixels with a black top-left block.
    """
    idx = np.arange(size) // block
    parity = (idx[:, None] + idx[None, :]) % 2
    img = parity.astype(float)
    img[:, size // 2 :] *= gray
    return img


def nuclear_model(spec: NuclearSpec, name="nuclear", meta=None) -> TargetModel:
    scale = lambda lam: (lam + spec.sigma2) / spec.sigma2  # noqa: E731

    def kink_distance(x, lam):
        B, t = nuclear_blend(spec, x, lam)
        s = np.linalg.svd(B, compute_uv=False)
        return float(np.min(np.abs(s - t))) * scale(lam)

    return TargetModel(
        dim=spec.rows * spec.cols,
        potential=spec.potential,
        prox=partial(prox_nuclear, spec),
        kink_distance=kink_distance,
        name=name,
        meta=dict(meta or {}, model="nuclear", alpha=spec.alpha, sigma2=spec.sigma2),
    )


def make_checkerboard(spec: CheckerboardSpec = CheckerboardSpec(), Y=None) -> tuple[TargetModel, np.ndarray]:
    """Nuclear-norm posterior for a noisy checkerboard; returns ``(model, Y)``."""
    if Y is None:
        rng = np.random.default_rng(spec.seed)
        X0 = checkerboard(spec.size, spec.block)
        Y = X0 + np.sqrt(spec.sigma2) * rng.standard_normal(X0.shape)
    Y = np.asarray(Y, dtype=float).reshape(spec.size, spec.size)
    nspec = NuclearSpec(Y=Y, rows=spec.size, cols=spec.size, alpha=spec.alpha_value, sigma2=spec.sigma2)
    meta = {"size": spec.size, "seed": spec.seed}
    return nuclear_model(nspec, name=f"nuclear_{spec.size}x{spec.size}", meta=meta), Y


# -- Poisson random effects ----------------------------------------------------


@dataclass(frozen=True)
class PoissonDataSpec:
    """Synthetic Poisson random-effects data.

    ``mu*`` defaults to the prior mean ``mu_true = 0``.  With ``mu_true=None``
    it is drawn from ``N(0, c^2)`` truncated to ``[-mu_bound, mu_bound]``.
    Then ``eta_i* ~ N(mu*, sigma_eta^2)`` and ``y_ij ~ Poisson(exp(eta_i*))``
    with ``n_per_class`` observations per class.
    """

    I: int = 50
    sigma_eta: float = 3.0
    c: float = 10.0
    n_per_class: int = 5
    mu_true: float | None = 0.0
    mu_bound: float = 5.0
    seed: int = 1

    def __post_init__(self):
        if self.I < 1:
            raise ValueError("I must be >= 1")


def generate_poisson_data(spec: PoissonDataSpec) -> tuple[list[np.ndarray], dict]:
    rng = np.random.default_rng(spec.seed)
    mu_true = spec.mu_true
    while mu_true is None:
        draw = rng.normal(0.0, spec.c)
        if abs(draw) <= spec.mu_bound:
            mu_true = draw
    eta_true = rng.normal(mu_true, spec.sigma_eta, size=spec.I)
    counts = [rng.poisson(np.exp(e), size=spec.n_per_class) for e in eta_true]
    return counts, {"mu": float(mu_true), "eta": eta_true.tolist()}


def poisson_model(spec: PoissonSpec, name="poisson", meta=None) -> TargetModel:
    return TargetModel(
        dim=spec.I + 1,
        potential=spec.potential,
        prox=partial(prox_poisson, spec),
        exact_grad=spec.grad,
        kink_distance=lambda x, lam: np.inf,
        name=name,
        meta=dict(meta or {}, model="poisson", sigma_eta2=spec.sigma_eta2, c2=spec.c2),
    )


def make_poisson(spec: PoissonDataSpec = PoissonDataSpec(), counts=None) -> tuple[TargetModel, list]:
    """Poisson random-effects posterior over ``(eta_1..eta_I, mu)``."""
    truth = None
    if counts is None:
        counts, truth = generate_poisson_data(spec)
    pspec = PoissonSpec(counts=counts, sigma_eta2=spec.sigma_eta**2, c2=spec.c**2)
    meta = {"I": pspec.I, "seed": spec.seed, "truth": truth}
    return poisson_model(pspec, name=f"poisson_I{pspec.I}", meta=meta), list(pspec.counts)
