"""Small instances of every model family and points to probe them at."""

from __future__ import annotations

import numpy as np

from myis.models import (
    CheckerboardSpec,
    PoissonDataSpec,
    ToySpec,
    TrendSignal,
    make_checkerboard,
    make_gaussian,
    make_poisson,
    make_toy,
    make_trendfilter,
)
from myis.samplers import warm_start_point


def small_models():
    """One modest instance of every model family, keyed by name."""
    return {
        "toy1": make_toy(ToySpec(beta=1, d=3)),
        "toy4": make_toy(ToySpec(beta=4, d=3)),
        "gaussian": make_gaussian(np.array([[2.0, 0.5], [0.5, 1.0]])),
        "trendfilter": make_trendfilter(TrendSignal(m=20, seed=3), k=1)[0],
        "poisson": make_poisson(PoissonDataSpec(I=5, seed=2))[0],
        "nuclear": make_checkerboard(CheckerboardSpec(size=8, block=2, seed=2))[0],
    }


# spread of probe points around each model's centre
SCALES = {"toy1": 2.0, "toy4": 1.0, "gaussian": 2.0, "trendfilter": 4.0, "poisson": 1.0, "nuclear": 0.3}


def centre(model) -> np.ndarray:
    if model.minimizer is not None:
        return np.asarray(model.minimizer, dtype=float)
    return warm_start_point(model)


def sample_points(name: str, model, n: int, rng) -> np.ndarray:
    """``n x d`` points scattered around the model's mode."""
    scale = SCALES.get(name, 1.0)
    return centre(model) + scale * rng.standard_normal((n, model.dim))
