"""Experiment descriptions and the runners behind the command line.

A run is described by a single JSON document (see :class:`RunConfig`).
Replicates are independent chains seeded from ``(seed, replicate)`` and may
fan out over worker processes; each worker rebuilds the model from the
config, so nothing unpicklable crosses process boundaries.
"""

from __future__ import annotations

import copy
import json
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

import numpy as np

from . import io
from .envelope import TargetModel
from .estimators import EstimateReport, WeightedSample, acf, build_report, efficiency_ratios
from .models import (
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
from .samplers import HMC_KINDS, KINDS, MY_KINDS, SamplerConfig, default_burn_in, initial_point, run_chain
from .tuning import TuneResult, default_step, tune_lambda, tune_step

log = logging.getLogger(__name__)

MODEL_TYPES = ("toy", "trendfilter", "nuclear", "poisson", "gaussian")


class ConfigError(ValueError):
    """Invalid or incomplete experiment description."""


# -- config ------------------------------------------------------------------------------


@dataclass
class RunConfig:
    """One experiment: model, kernel, ``lam``, chain length and replication.

    ``lam`` and ``sampler["step"]`` accept ``"auto"`` to trigger tuning.
    ``functional`` selects ``xi``: ``{"type": "identity"}``,
    ``{"type": "components", "components": [...]}``, or
    ``{"type": "indicator", "points": [[i, s], ...]}``.
    ``quantile_requests`` is a list of ``[component, alpha]`` pairs or
    ``{"components": "all" | [...], "alphas": [...]}``.
    """

    model: dict
    sampler: dict = field(default_factory=lambda: {"kind": "my_mala"})
    lam: Any = "auto"
    n: int = 10_000
    replicates: int = 1
    seed: int = 0
    output_dir: Optional[str] = None
    functional: dict = field(default_factory=lambda: {"type": "identity"})
    quantile_requests: Any = field(default_factory=list)
    cdf_requests: list = field(default_factory=list)
    tune: dict = field(default_factory=dict)
    save_traces: bool = True
    base_dir: str = "."

    @classmethod
    def from_dict(cls, d: dict, base_dir=".") -> "RunConfig":
        if not isinstance(d, dict):
            raise ConfigError("config must be a JSON object")
        known = {"model", "sampler", "lambda", "n", "replicates", "seed", "output_dir", "functional",
                 "quantile_requests", "cdf_requests", "tune", "save_traces"}
        extra = set(d) - known
        if extra:
            raise ConfigError(f"unknown config keys: {sorted(extra)}")
        if "model" not in d:
            raise ConfigError("config is missing required key 'model'")
        model = d["model"]
        if not isinstance(model, dict) or model.get("type") not in MODEL_TYPES:
            raise ConfigError(f"model.type must be one of {MODEL_TYPES}")
        sampler = dict(d.get("sampler", {"kind": "my_mala"}))
        if sampler.get("kind", "my_mala") not in KINDS:
            raise ConfigError(f"sampler.kind must be one of {KINDS}")
        cfg = cls(
            model=dict(model),
            sampler=sampler,
            lam=d.get("lambda", "auto"),
            n=int(d.get("n", 10_000)),
            replicates=int(d.get("replicates", 1)),
            seed=int(d.get("seed", 0)),
            output_dir=d.get("output_dir"),
            functional=dict(d.get("functional", {"type": "identity"})),
            quantile_requests=d.get("quantile_requests", []),
            cdf_requests=list(d.get("cdf_requests", [])),
            tune=dict(d.get("tune", {})),
            save_traces=bool(d.get("save_traces", True)),
            base_dir=str(base_dir),
        )
        if cfg.n < 1:
            raise ConfigError("n must be >= 1")
        if cfg.replicates < 1:
            raise ConfigError("replicates must be >= 1")
        if cfg.lam != "auto" and not (isinstance(cfg.lam, (int, float)) and cfg.lam > 0):
            raise ConfigError("lambda must be a positive number or 'auto'")
        if cfg.lam == "auto" and cfg.kind not in MY_KINDS:
            raise ConfigError(f"lambda='auto' needs an envelope kernel, got {cfg.kind!r}")
        return cfg

    def to_dict(self) -> dict:
        return {
            "model": self.model,
            "sampler": self.sampler,
            "lambda": self.lam,
            "n": self.n,
            "replicates": self.replicates,
            "seed": self.seed,
            "output_dir": self.output_dir,
            "functional": self.functional,
            "quantile_requests": self.quantile_requests,
            "cdf_requests": self.cdf_requests,
            "tune": self.tune,
            "save_traces": self.save_traces,
        }

    @property
    def kind(self) -> str:
        return self.sampler.get("kind", "my_mala")


def load_config(path, overrides=(), seed=None, output=None) -> RunConfig:
    """Read a config file and apply ``key.path=value`` overrides.

    Raises:
        FileNotFoundError: naming the missing path.
        ConfigError: on malformed content.
    """
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"config file not found: {path}")
    try:
        d = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    d = apply_overrides(d, overrides)
    if seed is not None:
        d["seed"] = int(seed)
    if output is not None:
        d["output_dir"] = str(output)
    return RunConfig.from_dict(d, base_dir=path.parent)


def apply_overrides(d: dict, overrides) -> dict:
    """Set dotted-path fields, e.g. ``sampler.step=0.01``; values parse as JSON when possible."""
    d = copy.deepcopy(d)
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} must look like key.path=value")
        key, raw = item.split("=", 1)
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        node = d
        parts = key.split(".")
        for p in parts[:-1]:
            node = node.setdefault(p, {})
            if not isinstance(node, dict):
                raise ConfigError(f"override {key!r} descends into a non-object")
        node[parts[-1]] = value
    return d


# -- models ----------------------------------------------------------------------------


def _resolve(base_dir, p) -> Path:
    path = Path(p)
    return path if path.is_absolute() else Path(base_dir) / path


def build_model(model_cfg: dict, base_dir=".") -> tuple[TargetModel, Any]:
    """Construct the target from its config entry; returns ``(model, data)``.

    Raises:
        FileNotFoundError: if a referenced data file does not exist.
        ConfigError: for unknown model types or bad parameters.
    """
    m = dict(model_cfg)
    kind = m.pop("type", None)
    data_path = m.pop("data", None)
    data = None
    if data_path is not None:
        path = _resolve(base_dir, data_path)
        if not path.is_file():
            raise FileNotFoundError(f"model data file not found: {path}")
        if kind == "trendfilter":
            data = io.read_vector_csv(path)
        elif kind == "poisson":
            data = io.read_counts_csv(path)
        elif kind == "nuclear":
            data = io.read_matrix(path)
        else:
            raise ConfigError(f"model type {kind!r} takes no data file")
    try:
        if kind == "toy":
            return make_toy(ToySpec(beta=int(m.get("beta", 1)), d=int(m.get("d", 1)))), None
        if kind == "gaussian":
            if "Omega" in m:
                Omega = np.asarray(m["Omega"], dtype=float)
            else:
                Omega = np.diag(np.asarray(m.get("eigenvalues", [1.0]), dtype=float))
            return make_gaussian(Omega), None
        if kind == "trendfilter":
            k = int(m.pop("k", 1))
            signal = TrendSignal(**m)
            if data is not None:
                signal = TrendSignal(**{**m, "m": data.size})
            return make_trendfilter(signal, k=k, y=data)
        if kind == "nuclear":
            spec = CheckerboardSpec(**m)
            return make_checkerboard(spec, Y=data)
        if kind == "poisson":
            return make_poisson(PoissonDataSpec(**m), counts=data)
    except TypeError as exc:
        raise ConfigError(f"bad parameters for model {kind!r}: {exc}") from exc
    raise ConfigError(f"unknown model type {kind!r}")


_MODEL_CACHE: dict = {}


def cached_model(cfg: RunConfig) -> tuple[TargetModel, Any]:
    key = (json.dumps(cfg.model, sort_keys=True), str(cfg.base_dir))
    if key not in _MODEL_CACHE:
        _MODEL_CACHE.clear()
        _MODEL_CACHE[key] = build_model(cfg.model, cfg.base_dir)
    return _MODEL_CACHE[key]


def export_data(model_type: str, data, path) -> Optional[Path]:
    if data is None:
        return None
    if model_type == "trendfilter":
        return io.write_vector_csv(path.with_suffix(".csv"), data)
    if model_type == "poisson":
        return io.write_counts_csv(path.with_suffix(".csv"), data)
    if model_type == "nuclear":
        return io.write_matrix_csv(path.with_suffix(".csv"), data)
    return None


# -- functionals ---------------------------------------------------------------------


def functional_values(states, spec: dict):
    kind = spec.get("type", "identity")
    if kind == "identity":
        return states
    if kind == "components":
        return np.asarray(states[:, list(spec["components"])], dtype=float)
    if kind == "indicator":
        pts = spec["points"]
        return np.column_stack([np.asarray(states[:, int(i)]) <= float(s) for i, s in pts]).astype(float)
    raise ConfigError(f"unknown functional type {kind!r}")


def expand_quantiles(requests, p: int) -> list[tuple[int, float]]:
    if isinstance(requests, dict):
        comps = requests.get("components", "all")
        comps = range(p) if comps == "all" else comps
        return [(int(i), float(a)) for i in comps for a in requests.get("alphas", [])]
    return [(int(i), float(a)) for i, a in requests]


# -- tuning ----------------------------------------------------------------------------


def resolve_tuning(cfg: RunConfig) -> tuple[float, float, Optional[TuneResult]]:
    """Concrete ``(lam, step)`` for a config, tuning whatever is ``"auto"``."""
    model, _ = cached_model(cfg)
    kind = cfg.kind
    L = int(cfg.sampler.get("L", 10))
    tune_kw = dict(cfg.tune)
    result = None
    if cfg.lam == "auto":
        result = tune_lambda(
            model,
            kind,
            lam0=tune_kw.get("lam0"),
            pilot_n=int(tune_kw.get("pilot_n", 10_000)),
            window=tune_kw.get("window", (0.4, 0.8)),
            max_probes=int(tune_kw.get("max_probes", 20)),
            L=L,
            seed=cfg.seed,
        )
        lam = result.lam
    else:
        lam = float(cfg.lam)
    step = cfg.sampler.get("step")
    if step == "auto" or (step is None and (kind in HMC_KINDS or kind in ("my_barker", "barker"))):
        st = tune_step(model, lam, kind, cfg.sampler.get("target_acc"), L=L, seed=cfg.seed)
        step = st.step
        if result is None:
            result = st
        else:
            result.step, result.acc_rate, result.target_acc = st.step, st.acc_rate, st.target_acc
            result.converged = result.converged and st.converged
    elif step is None:
        step = default_step(kind, lam)
    return lam, float(step), result


def sampler_config(cfg: RunConfig, step: float) -> SamplerConfig:
    s = cfg.sampler
    return SamplerConfig(
        kind=cfg.kind,
        step=step,
        L=int(s.get("L", 10)),
        L_policy=s.get("L_policy", "fixed"),
        seed=cfg.seed,
        n=cfg.n,
        burn_in=int(s.get("burn_in", default_burn_in(cfg.n))),
        warm_start=s.get("warm_start", "map"),
        warm_lambda=float(s.get("warm_lambda", 1.0)),
        warm_iters=int(s.get("warm_iters", 500)),
    )


# -- replicates --------------------------------------------------------------------------


@dataclass
class ReplicateResult:
    replicate: int
    report: EstimateReport
    acc_rate: float
    runtime: float
    acf: Optional[np.ndarray] = None
    trace_files: Optional[list] = None


def run_replicate(
    cfg: RunConfig, lam: float, step: float, replicate: int, *, max_lag: int = 0, outdir=None
) -> ReplicateResult:
    """One chain and its estimate report; optionally saves the trace."""
    model, _ = cached_model(cfg)
    scfg = sampler_config(cfg, step)
    store = None
    if outdir is not None and cfg.save_traces:
        store = Path(outdir) / f"trace_r{replicate}.npy"
        store.parent.mkdir(parents=True, exist_ok=True)
    trace = run_chain(scfg, model, lam, replicate=replicate, store=store)
    values = functional_values(trace.states, cfg.functional)
    ws = WeightedSample(values, trace.log_weights)
    report = build_report(
        ws,
        quantile_requests=expand_quantiles(cfg.quantile_requests, ws.p),
        cdf_requests=cfg.cdf_requests,
    )
    acf_mat = None
    if max_lag > 0:
        acf_mat = np.array([_safe_acf(np.asarray(values[:, i]), max_lag) for i in range(ws.p)])
    files = None
    if store is not None:
        states_path, aux = io.save_trace(trace, store.with_suffix(""))
        io.write_sidecar(
            states_path,
            config=cfg.to_dict(),
            seed=cfg.seed,
            runtime=trace.runtime,
            replicate=replicate,
            lam=lam,
            step=step,
            acc_rate=trace.acc_rate,
        )
        io.write_sidecar(aux, config=cfg.to_dict(), seed=cfg.seed, runtime=trace.runtime, replicate=replicate)
        files = [states_path.name, aux.name]
    return ReplicateResult(replicate, report, trace.acc_rate, trace.runtime, acf_mat, files)


def _safe_acf(x, max_lag):
    try:
        return acf(x, min(max_lag, x.size - 1))
    except ValueError:
        return np.full(min(max_lag, x.size - 1) + 1, np.nan)


def _worker(args):
    cfg_dict, base_dir, lam, step, r, max_lag, outdir = args
    cfg = RunConfig.from_dict(cfg_dict, base_dir=base_dir)
    return run_replicate(cfg, lam, step, r, max_lag=max_lag, outdir=outdir)


def run_replicates(cfg: RunConfig, lam: float, step: float, *, jobs: int = 1, max_lag: int = 0, outdir=None):
    """All replicates of ``cfg``; results are ordered by replicate id."""
    ids = range(cfg.replicates)
    if jobs <= 1 or cfg.replicates == 1:
        model, _ = cached_model(cfg)
        initial_point(sampler_config(cfg, step), model)  # populate the warm-start cache once
        return [run_replicate(cfg, lam, step, r, max_lag=max_lag, outdir=outdir) for r in ids]
    args = [(cfg.to_dict(), cfg.base_dir, lam, step, r, max_lag, outdir) for r in ids]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(_worker, args))


def aggregate(results: list[ReplicateResult]) -> dict:
    thetas = np.array([r.report.theta_hat for r in results])
    xis = np.array([r.report.xi_diag for r in results])
    out = {
        "replicates": len(results),
        "theta_mean": thetas.mean(axis=0),
        "xi_diag_mean": xis.mean(axis=0),
        "xi_diag_median": np.median(xis, axis=0),
        "ne_ratio_mean": float(np.mean([r.report.ne_ratio for r in results])),
        "acc_rate_mean": float(np.mean([r.acc_rate for r in results])),
    }
    if len(results) > 1:
        out["theta_replicate_var"] = thetas.var(axis=0, ddof=1)
    return out


def run_experiment(cfg: RunConfig, *, jobs: int = 1, outdir=None) -> dict:
    """Tune if needed, run every replicate, and assemble the report document."""
    t0 = time.perf_counter()
    lam, step, tune_res = resolve_tuning(cfg)
    results = run_replicates(cfg, lam, step, jobs=jobs, outdir=outdir)
    doc = {
        "model": cfg.model,
        "kind": cfg.kind,
        "lambda": lam,
        "step": step,
        "n": cfg.n,
        "seed": cfg.seed,
        "tuning": None if tune_res is None else tune_res.to_dict(),
        "replicates": [
            {"replicate": r.replicate, "acc_rate": r.acc_rate, "report": r.report.to_dict()} for r in results
        ],
        "aggregate": aggregate(results),
    }
    return {"document": io._plain(doc), "results": results, "runtime": time.perf_counter() - t0}


# -- comparisons -----------------------------------------------------------------------


def compare(cfg_a: RunConfig, cfg_b: RunConfig, *, jobs: int = 1, max_lag: int = 50) -> dict:
    """Relative efficiency of method A over method B.

    Per-component asymptotic variances are averaged over replicates and the
    ratio ``tau2_B / tau2_A`` is reported per component; values above one
    favour A.  The ACF difference is ``acf_B - acf_A`` on replicate 0, so
    positive values mean A's chain decorrelates faster.
    """
    t0 = time.perf_counter()
    out = {}
    for tag, cfg in (("a", cfg_a), ("b", cfg_b)):
        lam, step, _ = resolve_tuning(cfg)
        res = run_replicates(cfg, lam, step, jobs=jobs, max_lag=max_lag)
        out[tag] = {"lam": lam, "step": step, "results": res}
    tau_a = np.array([r.report.xi_diag for r in out["a"]["results"]])
    tau_b = np.array([r.report.xi_diag for r in out["b"]["results"]])
    ratios = efficiency_ratios(tau_a.mean(axis=0), tau_b.mean(axis=0))
    per_rep = np.array([np.mean(efficiency_ratios(a, b)) for a, b in zip(tau_a, tau_b)])
    acf_diff = out["b"]["results"][0].acf - out["a"]["results"][0].acf
    return {
        "eff_rel": float(np.mean(ratios)),
        "median_component_ratio": float(np.median(ratios)),
        "component_ratios": ratios,
        "replicate_eff_rel": per_rep,
        "acf_diff": acf_diff,
        "a": {k: v for k, v in out["a"].items() if k != "results"},
        "b": {k: v for k, v in out["b"].items() if k != "results"},
        "acc_rate_a": float(np.mean([r.acc_rate for r in out["a"]["results"]])),
        "acc_rate_b": float(np.mean([r.acc_rate for r in out["b"]["results"]])),
        "runtime": time.perf_counter() - t0,
    }


def compare_rows(result: dict) -> list[list]:
    """Long-format rows ``component, ratio, acf_lag, acf_diff``."""
    rows = []
    for i, ratio in enumerate(result["component_ratios"]):
        for lag, diff in enumerate(result["acf_diff"][i]):
            rows.append([i, float(ratio), lag, float(diff)])
    return rows
