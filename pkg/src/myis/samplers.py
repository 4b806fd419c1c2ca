"""Metropolis-Hastings kernels driven by Moreau-Yosida envelope gradients.

Envelope-invariant kernels (``my_mala``, ``my_hmc``, ``my_barker``) target
``pi^lam`` and record importance log-weights.  Proximal kernels (``p_mala``,
``p_hmc``) use the same envelope gradients in their proposals but correct
against ``pi`` itself.  ``barker`` is the plain Barker kernel on ``pi`` for
differentiable models.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Optional

import numpy as np

from .envelope import EnvelopeView, TargetModel

log = logging.getLogger(__name__)

MY_KINDS = ("my_mala", "my_hmc", "my_barker")
PI_KINDS = ("p_mala", "p_hmc", "barker")
KINDS = MY_KINDS + PI_KINDS
HMC_KINDS = ("my_hmc", "p_hmc")

# states are streamed to a memory-mapped file above this many entries
STREAM_THRESHOLD = 100_000_000


class SamplerAbort(RuntimeError):
    """The chain rejected every proposal in its first 1000 iterations."""


@dataclass
class ChainState:
    """Current point with cached log-density and gradient of the kernel's target.

    ``grad`` is the gradient of ``log pi^lam`` for every kernel except
    ``barker``, where it is the gradient of ``log pi``.
    """

    x: np.ndarray
    log_target: float
    grad: np.ndarray
    log_weight: float = 0.0


@dataclass
class SamplerConfig:
    """Kernel choice and tuning knobs for one chain.

    ``step`` is ``h`` for the Langevin and Barker kernels and the leapfrog
    step ``eps`` for HMC.  ``step=None`` for ``p_mala`` means ``h = 2 lam``.
    ``warm_start`` is ``"map"``, ``"zeros"``, or an explicit point.
    """

    kind: str = "my_mala"
    step: Optional[float] = None
    L: int = 10
    L_policy: str = "fixed"
    seed: int = 0
    n: int = 10_000
    burn_in: int = 0
    warm_start: Any = "map"
    warm_lambda: float = 1.0
    warm_iters: int = 500

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown sampler kind {self.kind!r}; choose from {KINDS}")
        if self.step is not None and not self.step > 0:
            raise ValueError("step size must be positive")
        if self.L < 1:
            raise ValueError("L must be >= 1")
        if self.L_policy not in ("fixed", "uniform"):
            raise ValueError("L_policy must be 'fixed' or 'uniform'")
        if self.n < 0 or self.burn_in < 0:
            raise ValueError("n and burn_in must be nonnegative")

    def resolved_step(self, lam: float) -> float:
        if self.step is not None:
            return float(self.step)
        if self.kind == "p_mala":
            return 2.0 * lam
        if self.kind == "my_mala":
            return lam
        raise ValueError(f"kind {self.kind!r} needs an explicit step size")


@dataclass
class ChainTrace:
    states: np.ndarray
    log_weights: np.ndarray
    accepts: np.ndarray
    kind: str = ""
    lam: float = float("nan")
    step: float = float("nan")
    runtime: float = 0.0
    meta: dict = field(default_factory=dict)

    @property
    def n(self) -> int:
        return int(self.accepts.size)

    @property
    def acc_rate(self) -> float:
        return float(np.mean(self.accepts)) if self.accepts.size else float("nan")


# -- state construction --------------------------------------------------------


def my_state(view: EnvelopeView, x) -> ChainState:
    """State for an envelope-invariant kernel; computes the log-weight too."""
    x = np.asarray(x, dtype=float)
    value, g, _ = view.evaluate(x)
    return ChainState(x, -value, -g, value - view.model.potential(x))


def pi_state(view: EnvelopeView, x) -> ChainState:
    """State for a proximal (pi-invariant) kernel."""
    x = np.asarray(x, dtype=float)
    psi = view.model.potential(x)
    return ChainState(x, -psi, -view.grad(x), 0.0)


def barker_state(model: TargetModel, x) -> ChainState:
    if model.exact_grad is None:
        raise ValueError("the barker kernel needs a model with an exact gradient")
    x = np.asarray(x, dtype=float)
    return ChainState(x, -model.potential(x), -np.asarray(model.exact_grad(x), dtype=float), 0.0)


# -- kernels -------------------------------------------------------------------


def _accept(log_ratio: float, rng) -> bool:
    if not np.isfinite(log_ratio):
        return log_ratio == np.inf
    return log_ratio >= 0.0 or np.log(rng.uniform()) < log_ratio


def _mala_log_q(to, frm, grad_frm, h) -> float:
    r = to - frm - 0.5 * h * grad_frm
    return -float(r @ r) / (2.0 * h)


def my_mala_step(state: ChainState, view: EnvelopeView, h: float, rng):
    """One envelope-MALA transition; invariant for ``pi^lam``."""
    x = state.x
    y = x + 0.5 * h * state.grad + np.sqrt(h) * rng.standard_normal(x.shape)
    value_y, gpsi_y, _ = view.evaluate(y)
    grad_y = -gpsi_y
    log_ratio = (
        -value_y
        - state.log_target
        + _mala_log_q(x, y, grad_y, h)
        - _mala_log_q(y, x, state.grad, h)
    )
    if _accept(log_ratio, rng):
        return ChainState(y, -value_y, grad_y, value_y - view.model.potential(y)), True
    return state, False


def p_mala_step(state: ChainState, view: EnvelopeView, h: Optional[float], rng):
    """One P-MALA transition: envelope-gradient proposal, ``pi``-correction."""
    if h is None:
        h = 2.0 * view.lam
    x = state.x
    y = x + 0.5 * h * state.grad + np.sqrt(h) * rng.standard_normal(x.shape)
    psi_y = view.model.potential(y)
    if not np.isfinite(psi_y):
        return state, False
    grad_y = -view.grad(y)
    log_ratio = (
        -psi_y
        - state.log_target
        + _mala_log_q(x, y, grad_y, h)
        - _mala_log_q(y, x, state.grad, h)
    )
    if _accept(log_ratio, rng):
        return ChainState(y, -psi_y, grad_y, 0.0), True
    return state, False


def leapfrog(x, z, grad_psi, eps: float, L: int, grad_fn):
    """``L`` leapfrog steps for ``H = U(x) + |z|^2 / 2`` with ``grad U = grad_fn``.

    ``grad_psi`` is ``grad U`` at the starting point.  Returns the final
    position, momentum, and ``grad U`` there.
    """
    x = np.array(x, dtype=float)
    z = np.array(z, dtype=float)
    g = np.asarray(grad_psi, dtype=float)
    for _ in range(L):
        z = z - 0.5 * eps * g
        x = x + eps * z
        g = grad_fn(x)
        z = z - 0.5 * eps * g
    return x, z, g


def _draw_L(L: int, policy: str, rng) -> int:
    return int(rng.integers(1, L + 1)) if policy == "uniform" else L


def my_hmc_step(state: ChainState, view: EnvelopeView, eps: float, L: int, rng, L_policy="fixed"):
    """One envelope-HMC transition; energy ``psi^lam(x) + |z|^2 / 2``."""
    x0 = state.x
    z0 = rng.standard_normal(x0.shape)
    steps = _draw_L(L, L_policy, rng)
    with np.errstate(over="ignore", invalid="ignore"):
        try:
            x1, z1, g1 = leapfrog(x0, z0, -state.grad, eps, steps, view.grad)
        except (FloatingPointError, ValueError, RuntimeError):
            return state, False
        if not (np.all(np.isfinite(x1)) and np.all(np.isfinite(g1))):
            return state, False
        p1 = x1 - view.lam * g1
        value1 = view.model.potential(p1) + 0.5 * view.lam * float(g1 @ g1)
        h0 = -state.log_target + 0.5 * float(z0 @ z0)
        h1 = value1 + 0.5 * float(z1 @ z1)
    if not np.isfinite(h1):
        return state, False
    if _accept(h0 - h1, rng):
        return ChainState(x1, -value1, -g1, value1 - view.model.potential(x1)), True
    return state, False


def p_hmc_step(state: ChainState, view: EnvelopeView, eps: float, L: int, rng, L_policy="fixed"):
    """One P-HMC transition: envelope-gradient leapfrog, energy ``psi(x) + |z|^2 / 2``."""
    x0 = state.x
    z0 = rng.standard_normal(x0.shape)
    steps = _draw_L(L, L_policy, rng)
    with np.errstate(over="ignore", invalid="ignore"):
        try:
            x1, z1, g1 = leapfrog(x0, z0, -state.grad, eps, steps, view.grad)
        except (FloatingPointError, ValueError, RuntimeError):
            return state, False
        if not (np.all(np.isfinite(x1)) and np.all(np.isfinite(g1))):
            return state, False
        psi1 = view.model.potential(x1)
        h0 = -state.log_target + 0.5 * float(z0 @ z0)
        h1 = psi1 + 0.5 * float(z1 @ z1)
    if not np.isfinite(h1):
        return state, False
    if _accept(h0 - h1, rng):
        return ChainState(x1, -psi1, -g1, 0.0), True
    return state, False


def barker_flip_probability(z, grad_log) -> float:
    """Probability ``1 / (1 + exp(-z' grad_log))`` of keeping the sign of ``z``."""
    t = float(np.dot(z, grad_log))
    if t >= 0:
        return 1.0 / (1.0 + np.exp(-t))
    e = np.exp(t)
    return e / (1.0 + e)


def barker_log_q(x, y, grad_log_x, h) -> float:
    """Log density of the Barker proposal from ``x`` to ``y``."""
    d = y - x
    return (
        np.log(2.0)
        - float(d @ d) / (2.0 * h)
        - 0.5 * d.size * np.log(2.0 * np.pi * h)
        - np.logaddexp(0.0, -float(d @ grad_log_x))
    )


def _barker_move(state, h, rng):
    x = state.x
    z = np.sqrt(h) * rng.standard_normal(x.shape)
    b = 1.0 if rng.uniform() < barker_flip_probability(z, state.grad) else -1.0
    return x + b * z


def _barker_log_ratio(x, y, grad_x, grad_y, log_t_x, log_t_y) -> float:
    d = y - x
    return (
        log_t_y
        - log_t_x
        + np.logaddexp(0.0, -float(d @ grad_x))
        - np.logaddexp(0.0, float(d @ grad_y))
    )


def my_barker_step(state: ChainState, view: EnvelopeView, h: float, rng):
    """One envelope-Barker transition; invariant for ``pi^lam``."""
    y = _barker_move(state, h, rng)
    value_y, gpsi_y, _ = view.evaluate(y)
    grad_y = -gpsi_y
    log_ratio = _barker_log_ratio(state.x, y, state.grad, grad_y, state.log_target, -value_y)
    if _accept(log_ratio, rng):
        return ChainState(y, -value_y, grad_y, value_y - view.model.potential(y)), True
    return state, False


def barker_step(state: ChainState, model: TargetModel, h: float, rng):
    """Barker transition on ``pi`` using the exact gradient."""
    y = _barker_move(state, h, rng)
    psi_y = model.potential(y)
    if not np.isfinite(psi_y):
        return state, False
    grad_y = -np.asarray(model.exact_grad(y), dtype=float)
    log_ratio = _barker_log_ratio(state.x, y, state.grad, grad_y, state.log_target, -psi_y)
    if _accept(log_ratio, rng):
        return ChainState(y, -psi_y, grad_y, 0.0), True
    return state, False


# -- driver --------------------------------------------------------------------


class Kernel:
    """A configured transition kernel with its own state constructor."""

    def __init__(self, kind: str, model: TargetModel, lam: float, step: float, L=10, L_policy="fixed"):
        if kind not in KINDS:
            raise ValueError(f"unknown sampler kind {kind!r}")
        self.kind = kind
        self.model = model
        self.view = EnvelopeView(model, lam)
        self.step_size = float(step)
        self.L = int(L)
        self.L_policy = L_policy

    @property
    def records_weights(self) -> bool:
        return self.kind in MY_KINDS

    def init_state(self, x) -> ChainState:
        if self.kind in MY_KINDS:
            return my_state(self.view, x)
        if self.kind == "barker":
            return barker_state(self.model, x)
        return pi_state(self.view, x)

    def step(self, state: ChainState, rng):
        k, s = self.kind, self.step_size
        if k == "my_mala":
            return my_mala_step(state, self.view, s, rng)
        if k == "my_hmc":
            return my_hmc_step(state, self.view, s, self.L, rng, self.L_policy)
        if k == "my_barker":
            return my_barker_step(state, self.view, s, rng)
        if k == "p_mala":
            return p_mala_step(state, self.view, s, rng)
        if k == "p_hmc":
            return p_hmc_step(state, self.view, s, self.L, rng, self.L_policy)
        return barker_step(state, self.model, s, rng)


def default_burn_in(n: int) -> int:
    """Discarded transitions before recording: a tenth of the recorded length.

    Chains start at the mode, where every importance weight is maximal; the
    transient to the typical set would otherwise dominate the Kong ESS.
    """
    return int(n) // 10


def chain_rng(seed: int, replicate: int = 0) -> np.random.Generator:
    """Independent stream for ``(seed, replicate)``."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(replicate)]))


_WARM_CACHE: dict = {}


def warm_start_point(model: TargetModel, lam_warm: float = 1.0, iters: int = 500) -> np.ndarray:
    """Approximate mode by proximal-point iterations from the origin.

    ``x <- prox(x, lam_warm)`` is a gradient step of size ``lam_warm`` on the
    envelope at ``lam_warm``; its fixed points are the minimisers of ``psi``.
    Results are cached per model object, so replicate chains share the work.
    """
    key = (id(model), float(lam_warm), int(iters))
    hit = _WARM_CACHE.get(key)
    if hit is not None and hit[0] is model:
        return hit[1].copy()
    x = np.zeros(model.dim)
    for _ in range(iters):
        x_new = np.asarray(model.prox(x, lam_warm), dtype=float)
        done = np.max(np.abs(x_new - x)) <= 1e-10 * (1.0 + np.max(np.abs(x)))
        x = x_new
        if done:
            break
    if len(_WARM_CACHE) > 64:
        _WARM_CACHE.clear()
    _WARM_CACHE[key] = (model, x)
    return x.copy()


def initial_point(config: SamplerConfig, model: TargetModel) -> np.ndarray:
    ws = config.warm_start
    if isinstance(ws, str):
        if ws == "map":
            if model.minimizer is not None:
                return np.array(model.minimizer, dtype=float)
            return warm_start_point(model, config.warm_lambda, config.warm_iters)
        if ws == "zeros":
            return np.zeros(model.dim)
        raise ValueError(f"unknown warm_start policy {ws!r}")
    x0 = np.asarray(ws, dtype=float).ravel()
    if x0.size != model.dim:
        raise ValueError(f"warm start has length {x0.size}, model dimension is {model.dim}")
    return x0


def _allocate_states(n: int, d: int, store: Optional[Path]):
    if store is not None or n * d > STREAM_THRESHOLD:
        if store is None:
            import tempfile

            store = Path(tempfile.mkstemp(suffix=".npy", prefix="myis_trace_")[1])
        return np.lib.format.open_memmap(Path(store), mode="w+", dtype=float, shape=(n, d))
    return np.empty((n, d))


def run_chain(
    config: SamplerConfig,
    model: TargetModel,
    lam: float,
    *,
    replicate: int = 0,
    x0=None,
    store: Optional[Path] = None,
) -> ChainTrace:
    """Run ``config.burn_in + config.n`` transitions and record the last ``n``.

    Raises:
        SamplerAbort: if the first 1000 recorded iterations are all rejected.
    """
    t0 = time.perf_counter()
    step = config.resolved_step(lam)
    kernel = Kernel(config.kind, model, lam, step, config.L, config.L_policy)
    rng = chain_rng(config.seed, replicate)
    x_init = initial_point(config, model) if x0 is None else np.asarray(x0, dtype=float)
    state = kernel.init_state(x_init)
    for _ in range(config.burn_in):
        state, _ = kernel.step(state, rng)

    n, d = config.n, model.dim
    states = _allocate_states(n, d, store)
    log_w = np.zeros(n)
    accepts = np.zeros(n, dtype=bool)
    for t in range(n):
        state, acc = kernel.step(state, rng)
        states[t] = state.x
        log_w[t] = state.log_weight
        accepts[t] = acc
        if t == 999 and not accepts[:1000].any():
            raise SamplerAbort(
                f"{config.kind}: no proposal accepted in the first 1000 iterations "
                f"(step {step:g}, lam {lam:g}); the step size is mis-tuned"
            )
    if isinstance(states, np.memmap):
        states.flush()
    trace = ChainTrace(
        states=states,
        log_weights=log_w,
        accepts=accepts,
        kind=config.kind,
        lam=float(lam),
        step=step,
        runtime=time.perf_counter() - t0,
        meta={"seed": config.seed, "replicate": replicate, "L": config.L, "final_state": state},
    )
    log.debug("%s chain: n=%d acc=%.3f in %.2fs", config.kind, n, trace.acc_rate, trace.runtime)
    return trace


def with_step(config: SamplerConfig, step: float) -> SamplerConfig:
    return replace(config, step=float(step))
