"""Choosing ``lam`` and step sizes for envelope chains.

``lam`` is tuned so that the Kong ratio ``n_e / n`` of a pilot chain falls in
a target window; step sizes are adapted towards a target acceptance rate by
a Robbins-Monro recursion on ``log h``.  All adaptation happens before any
trace used for estimation is drawn.
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from .envelope import TargetModel
from .estimators import kong_ess, mcmc_ess
from .samplers import HMC_KINDS, MY_KINDS, Kernel, SamplerConfig, chain_rng, default_burn_in, initial_point, run_chain

log = logging.getLogger(__name__)

TARGET_ACC = {"mala": 0.574, "hmc": 0.65}
NE_WINDOW = (0.4, 0.8)


@dataclass
class TuneResult:
    """Outcome of a step or ``lam`` search.

    ``converged`` is False when the search ran out of budget; the fields then
    hold the best candidate found.
    """

    lam: float
    ne_ratio: float
    step: float
    acc_rate: float
    pilot_n: int
    kind: str = ""
    target_acc: float = float("nan")
    converged: bool = True
    probes: list = field(default_factory=list)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["probes"] = [dict(p) for p in self.probes]
        return d


def default_target(kind: str) -> float:
    return TARGET_ACC["hmc"] if kind in HMC_KINDS else TARGET_ACC["mala"]


def default_step(kind: str, lam: float) -> float:
    """Starting step: ``h = lam`` for Langevin/Barker kernels, ``eps = sqrt(lam)`` for HMC."""
    if kind in HMC_KINDS:
        return math.sqrt(lam)
    if kind == "p_mala":
        return 2.0 * lam
    return lam


# -- step size -----------------------------------------------------------------------


def tune_step(
    model: TargetModel,
    lam: float,
    kind: str,
    target_acc: Optional[float] = None,
    *,
    step0: Optional[float] = None,
    L: int = 10,
    seed: int = 0,
    x0=None,
    batch: int = 200,
    max_batches: int = 100,
    tol: float = 0.07,
    cap_factor: float = 2.0,
    confirm_batches: int = 3,
) -> TuneResult:
    """Adapt the step size so the acceptance rate approaches ``target_acc``.

    After each batch of ``batch`` transitions ``log h`` moves by
    ``t^-0.6 (acc - target)``.  Once the recent batches sit near the target
    the step is frozen and checked on ``confirm_batches`` further batches;
    a confirmed acceptance within ``tol`` ends the search.  For ``my_mala``
    the step never exceeds ``2 lam cap_factor``.

    Returns the frozen step.  If no candidate is confirmed within
    ``max_batches`` adaptation batches, the best confirmed or final
    candidate is returned with ``converged=False``.
    """
    target = default_target(kind) if target_acc is None else float(target_acc)
    if not 0.0 < target < 1.0:
        raise ValueError("target acceptance must lie in (0, 1)")
    cap = 2.0 * lam * cap_factor if kind == "my_mala" else np.inf
    h = min(default_step(kind, lam) if step0 is None else float(step0), cap)
    rng = chain_rng(seed, 10_000)
    start = initial_point(SamplerConfig(kind=kind), model) if x0 is None else np.asarray(x0, dtype=float)
    kernel = Kernel(kind, model, lam, h, L)
    state = kernel.init_state(start)

    def run_batch(step, st, length):
        kernel.step_size = step
        acc = 0
        for _ in range(length):
            st, a = kernel.step(st, rng)
            acc += a
        return st, acc / length

    history = []
    best = None
    for t in range(1, max_batches + 1):
        state, acc = run_batch(h, state, batch)
        history.append(acc)
        h = min(h * math.exp(t**-0.6 * (acc - target)), cap)
        recent = history[-3:]
        if len(history) >= 3 and abs(np.mean(recent) - target) <= tol / 2 or (
            h >= cap and min(recent) > target
        ):
            state, conf = run_batch(h, state, confirm_batches * batch)
            if best is None or abs(conf - target) < abs(best[1] - target):
                best = (h, conf)
            if abs(conf - target) <= tol or (h >= cap and conf > target):
                return TuneResult(lam, float("nan"), h, conf, t * batch, kind, target, True)
    if best is None:
        state, conf = run_batch(h, state, confirm_batches * batch)
        best = (h, conf)
    log.warning("step adaptation for %s did not settle; best step %.4g (acc %.3f)", kind, *best)
    return TuneResult(lam, float("nan"), best[0], best[1], max_batches * batch, kind, target, False)


# -- lambda --------------------------------------------------------------------------


def pilot_ne_ratio(
    model: TargetModel, lam: float, kind: str, step: float, n: int, *, L=10, seed=0, x0=None, burn_in=None
) -> tuple[float, float]:
    """Kong ratio and acceptance rate of a pilot envelope chain.

    ``burn_in`` defaults to :func:`default_burn_in` of ``n``.
    """
    burn = default_burn_in(n) if burn_in is None else int(burn_in)
    cfg = SamplerConfig(
        kind=kind, step=step, L=L, n=n, seed=seed, burn_in=burn, warm_start="map" if x0 is None else x0
    )
    trace = run_chain(cfg, model, lam, replicate=20_000)
    return kong_ess(trace.log_weights) / n, trace.acc_rate


def tune_lambda(
    model: TargetModel,
    kind: str = "my_mala",
    lam0: Optional[float] = None,
    pilot_n: int = 10_000,
    window: Sequence[float] = NE_WINDOW,
    *,
    max_probes: int = 20,
    tune_steps: bool = True,
    L: int = 10,
    seed: int = 0,
) -> TuneResult:
    """Search for ``lam`` whose pilot Kong ratio lies in ``window``.

    The search starts at ``lam0`` (default ``1 / d``), doubles or halves
    ``lam`` until the window is bracketed, then bisects on ``log lam``.
    Each probe adapts its own step size first unless ``tune_steps`` is off,
    in which case :func:`default_step` is used.

    Returns the first probe inside the window.  On exhaustion, the probe
    whose ratio is closest to the window midpoint, with ``converged=False``.
    """
    if kind not in MY_KINDS:
        raise ValueError(f"lam tuning needs an envelope kernel, got {kind!r}")
    lo, hi = float(window[0]), float(window[1])
    if not 0.0 < lo < hi < 1.0:
        raise ValueError("window must satisfy 0 < lo < hi < 1")
    lam = 1.0 / model.dim if lam0 is None else float(lam0)
    if not lam > 0:
        raise ValueError("lam0 must be positive")
    x0 = initial_point(SamplerConfig(kind=kind), model)
    mid = 0.5 * (lo + hi)
    probes = []
    small = large = None  # log lam with ratio above / below the window

    for i in range(max_probes):
        if tune_steps:
            st = tune_step(model, lam, kind, L=L, seed=seed + i, x0=x0, max_batches=30)
            step = st.step
        else:
            step = default_step(kind, lam)
        ratio, acc = pilot_ne_ratio(model, lam, kind, step, pilot_n, L=L, seed=seed + i, x0=x0)
        probes.append({"lam": lam, "ne_ratio": ratio, "step": step, "acc_rate": acc})
        log.info("probe %d: lam=%.4g ne/n=%.3f acc=%.3f", i, lam, ratio, acc)
        if lo <= ratio <= hi:
            return TuneResult(lam, ratio, step, acc, pilot_n, kind, float("nan"), True, probes)
        if ratio > hi:
            small = math.log(lam) if small is None else max(small, math.log(lam))
        else:
            large = math.log(lam) if large is None else min(large, math.log(lam))
        if small is not None and large is not None:
            if small > large:
                log.info("non-monotone probes at lam=%.4g", lam)
                small, large = large, small
            lam = math.exp(0.5 * (small + large))
        elif large is None:
            lam *= 2.0
        else:
            lam /= 2.0

    best = min(probes, key=lambda p: abs(p["ne_ratio"] - mid))
    log.warning("lam search exhausted %d probes; returning lam=%.4g", max_probes, best["lam"])
    return TuneResult(
        best["lam"], best["ne_ratio"], best["step"], best["acc_rate"], pilot_n, kind, float("nan"), False, probes
    )


def tune(model: TargetModel, kind: str = "my_mala", *, lam: Optional[float] = None, **kw) -> TuneResult:
    """``lam`` search (unless ``lam`` is given) followed by a final step adaptation."""
    L = kw.get("L", 10)
    seed = kw.get("seed", 0)
    if lam is None:
        res = tune_lambda(model, kind, **kw)
    else:
        res = TuneResult(float(lam), float("nan"), float("nan"), float("nan"), 0, kind)
    st = tune_step(model, res.lam, kind, L=L, seed=seed)
    return replace(res, step=st.step, acc_rate=st.acc_rate, target_acc=st.target_acc,
                   converged=res.converged and st.converged)


# -- Gaussian analytics --------------------------------------------------------------


def lambda_star_residual(eigenvalues, lam: float) -> float:
    s = np.asarray(eigenvalues, dtype=float)
    d = s.size
    return float(np.sum((lam * d - s) / ((s + lam) * (s + 2.0 * lam))))


def gaussian_lambda_star(eigenvalues) -> float:
    """Root of ``sum_i (lam d - s_i) / ((s_i + lam)(s_i + 2 lam)) = 0``.

    The root lies between ``min(s) / d`` and ``max(s) / d``, where the sum is
    nonpositive and nonnegative respectively; it is found by bisection run to
    machine precision.  Equal eigenvalues return ``s / d`` directly.
    """
    s = np.sort(np.asarray(eigenvalues, dtype=float).ravel())
    if s.size == 0 or np.any(~(s > 0)):
        raise ValueError("eigenvalues must be positive")
    d = s.size
    if s[0] == s[-1]:
        return float(s[0] / d)
    a, b = s[0] / d, s[-1] / d
    fa = lambda_star_residual(s, a)
    if fa == 0.0:
        return float(a)
    while True:
        m = 0.5 * (a + b)
        if m <= a or m >= b:
            break
        fm = lambda_star_residual(s, m)
        if fm == 0.0:
            return float(m)
        if (fm < 0) == (fa < 0):
            a, fa = m, fm
        else:
            b = m
    fb = lambda_star_residual(s, b)
    return float(a if abs(fa) <= abs(fb) else b)


def gaussian_ne_ratio(eigenvalues, lam: float) -> float:
    """Limit of ``n_e / n`` for iid draws from the envelope of ``N(0, Omega)``.

    Each eigenvalue ``s`` contributes ``sqrt(1 + 2r) / (1 + r)`` with
    ``r = lam / s``.
    """
    r = lam / np.asarray(eigenvalues, dtype=float)
    return float(np.exp(np.sum(0.5 * np.log1p(2.0 * r) - np.log1p(r))))


def kong_limit(d: int) -> float:
    """``(1 + 2/d)^(d/2) / (1 + 1/d)^d``, the ratio at ``lam = s / d`` with equal eigenvalues."""
    return (1.0 + 2.0 / d) ** (d / 2.0) / (1.0 + 1.0 / d) ** d


# -- sweeps ---------------------------------------------------------------------------


def lambda_sweep(
    model: TargetModel,
    lams: Sequence[float],
    kind: str = "my_mala",
    n: int = 10_000,
    *,
    tune_steps: bool = True,
    L: int = 10,
    seed: int = 0,
    burn_in: Optional[int] = None,
) -> list[dict]:
    """Kong ratio, acceptance and mean per-component MCMC ESS over a grid of ``lam``.

    ``burn_in`` defaults to :func:`default_burn_in` of ``n``.
    """
    burn_in = default_burn_in(n) if burn_in is None else int(burn_in)
    x0 = initial_point(SamplerConfig(kind=kind), model)
    rows = []
    for i, lam in enumerate(lams):
        step = (
            tune_step(model, lam, kind, L=L, seed=seed + i, x0=x0).step
            if tune_steps
            else default_step(kind, lam)
        )
        cfg = SamplerConfig(kind=kind, step=step, L=L, n=n, seed=seed, burn_in=burn_in, warm_start=x0)
        tr = run_chain(cfg, model, lam, replicate=i)
        ess = mcmc_ess(np.asarray(tr.states))
        rows.append(
            {
                "lam": float(lam),
                "step": float(step),
                "acc_rate": tr.acc_rate,
                "ne_ratio": kong_ess(tr.log_weights) / n,
                "mcmc_ess_ratio": float(np.mean(ess)) / n,
            }
        )
    return rows
