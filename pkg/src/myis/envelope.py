"""Moreau-Yosida envelopes of convex potentials.

A :class:`TargetModel` bundles a potential ``psi`` (the negative log of an
unnormalised density) with its proximal mapping.  An :class:`EnvelopeView`
fixes the smoothing parameter ``lam`` and exposes the envelope value, its
gradient, and the importance log-weight ``psi^lam(x) - psi(x)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Callable, Optional

import numpy as np


class ProxError(RuntimeError):
    """Raised when a proximal mapping returns an unusable point."""


@dataclass(frozen=True)
class TargetModel:
    """A convex potential together with its proximal mapping.

    Attributes:
        dim: State dimension.
        potential: ``x -> psi(x)``; may return ``+inf`` outside the domain.
        prox: ``(x, lam) -> argmin_y psi(y) + ||y - x||^2 / (2 lam)``.
        exact_grad: ``x -> grad psi(x)`` for differentiable models only.
        kink_distance: Optional ``(x, lam) -> float`` giving a lower bound on
            the distance from ``x`` to the nearest point where the envelope
            gradient fails to be differentiable.  Used to pick safe points for
            finite-difference checks.
        minimizer: Known global minimiser of ``psi``, if available.
        name: Short label used in reports.
        meta: Free-form metadata (data seed, spec parameters).
    """

    dim: int
    potential: Callable[[np.ndarray], float]
    prox: Callable[[np.ndarray, float], np.ndarray]
    exact_grad: Optional[Callable[[np.ndarray], np.ndarray]] = None
    kink_distance: Optional[Callable[[np.ndarray, float], float]] = None
    minimizer: Optional[np.ndarray] = None
    name: str = "model"
    meta: dict[str, Any] = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if int(self.dim) < 1:
            raise ValueError(f"dim must be a positive integer, got {self.dim}")


@dataclass(frozen=True)
class EnvelopeView:
    """A target model viewed through its envelope at a fixed ``lam``."""

    model: TargetModel
    lam: float

    def __post_init__(self):
        if not (self.lam > 0 and np.isfinite(self.lam)):
            raise ValueError(f"lam must be a positive finite number, got {self.lam}")

    def prox_point(self, x: np.ndarray) -> np.ndarray:
        return np.asarray(self.model.prox(x, self.lam), dtype=float)

    def evaluate(self, x: np.ndarray) -> tuple[float, np.ndarray, np.ndarray]:
        """Return ``(psi^lam(x), grad psi^lam(x), prox(x))`` with a single prox call."""
        x = np.asarray(x, dtype=float)
        p = self.prox_point(x)
        psi_p = self.model.potential(p)
        if not np.isfinite(psi_p):
            raise ProxError(
                f"potential is not finite at the prox point (value {psi_p}); "
                "the prox implementation is broken"
            )
        diff = x - p
        value = psi_p + float(diff @ diff) / (2.0 * self.lam)
        return value, diff / self.lam, p

    def value(self, x: np.ndarray) -> float:
        return self.evaluate(x)[0]

    def grad(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return (x - self.prox_point(x)) / self.lam

    def log_weight(self, x: np.ndarray) -> float:
        x = np.asarray(x, dtype=float)
        psi_x = self.model.potential(x)
        if psi_x == np.inf:
            return -np.inf
        return self.value(x) - psi_x


def envelope_value(view: EnvelopeView, x) -> float:
    """Envelope ``psi(p) + ||p - x||^2 / (2 lam)`` at ``p = prox(x, lam)``.

    Raises:
        ProxError: if ``psi`` is not finite at the prox point.
    """
    return view.value(_as_point(x))


def envelope_grad(view: EnvelopeView, x) -> np.ndarray:
    """Gradient ``(x - prox(x, lam)) / lam`` of the envelope."""
    return view.grad(_as_point(x))


def log_weight(view: EnvelopeView, x) -> float:
    """Importance log-weight ``psi^lam(x) - psi(x)``, always ``<= 0``.

    Returns ``-inf`` where ``psi(x) = +inf``.  At points where the envelope
    touches ``psi`` the value may exceed zero by floating-point round-off.
    """
    return view.log_weight(_as_point(x))


def _as_point(x) -> np.ndarray:
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if not np.all(np.isfinite(x)):
        raise ValueError("x must be finite")
    return x
