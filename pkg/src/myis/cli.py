"""Command-line harness: ``myis {tune,run,compare,sweep,report}``.

Exit codes: 0 on success, 1 for usage or configuration errors, 2 for
runtime and numerical failures.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import io
from .envelope import ProxError
from .estimators import WeightError
from .experiments import (
    ConfigError,
    RunConfig,
    build_model,
    cached_model,
    compare,
    compare_rows,
    export_data,
    load_config,
    resolve_tuning,
    run_experiment,
)
from .prox import ProxConvergenceError
from .samplers import SamplerAbort
from .tuning import lambda_sweep

log = logging.getLogger("myis")

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2


class TuningFailure(RuntimeError):
    pass


def output_dir(args, cfg: RunConfig | None, command: str) -> Path:
    if args.output:
        return Path(args.output)
    if cfg is not None and cfg.output_dir:
        return Path(cfg.output_dir)
    root = Path(os.environ.get("MYIS_OUTPUT_DIR", "myis_output"))
    stem = Path(args.config).stem if getattr(args, "config", None) else command
    return root / stem


def _load(args) -> RunConfig:
    if not args.config:
        raise ConfigError("--config is required")
    return load_config(args.config, args.set or (), seed=args.seed)


# -- commands ------------------------------------------------------------------------------


def cmd_tune(args) -> int:
    cfg = _load(args)
    t0 = time.perf_counter()
    if cfg.lam != "auto" and cfg.sampler.get("step") not in (None, "auto"):
        raise ConfigError("nothing to tune: set lambda or sampler.step to 'auto'")
    if cfg.sampler.get("step") is None:
        cfg.sampler["step"] = "auto"
    lam, step, res = resolve_tuning(cfg)
    out = output_dir(args, cfg, "tune")
    doc = res.to_dict()
    doc.update({"lam": lam, "step": step})
    path = io.write_json(out / "tune.json", doc)
    io.write_sidecar(path, config=cfg.to_dict(), seed=cfg.seed, runtime=time.perf_counter() - t0)
    print(f"lam={lam:.6g} step={step:.6g} ne_ratio={doc['ne_ratio']:.4f} acc_rate={doc['acc_rate']:.4f}")
    print(f"wrote {path}")
    if not res.converged:
        raise TuningFailure(
            f"tuning did not converge; best lam={lam:.4g} with n_e/n={doc['ne_ratio']:.3f}, "
            f"acceptance {doc['acc_rate']:.3f}; probes: "
            + ", ".join(f"{p['lam']:.3g}->{p['ne_ratio']:.2f}" for p in doc.get("probes", []))
        )
    return EXIT_OK


def cmd_run(args) -> int:
    cfg = _load(args)
    out = output_dir(args, cfg, "run")
    out.mkdir(parents=True, exist_ok=True)
    res = run_experiment(cfg, jobs=args.jobs, outdir=out)
    doc = res["document"]
    path = io.write_json(out / "report.json", doc)
    io.write_sidecar(path, config=cfg.to_dict(), seed=cfg.seed, runtime=res["runtime"])
    _, data = cached_model(cfg)
    data_path = export_data(cfg.model["type"], data, out / "data")
    if data_path is not None:
        io.write_sidecar(data_path, config=cfg.model, seed=cfg.model.get("seed"), runtime=0.0)
    for p in write_run_tables(doc, out):
        io.write_sidecar(p, config=cfg.to_dict(), seed=cfg.seed, runtime=res["runtime"])
    agg = doc["aggregate"]
    print(
        f"{doc['kind']} lam={doc['lambda']:.6g} step={doc['step']:.6g} "
        f"acc={agg['acc_rate_mean']:.3f} ne/n={agg['ne_ratio_mean']:.3f} replicates={agg['replicates']}"
    )
    print(f"wrote {path}")
    return EXIT_OK


def cmd_compare(args) -> int:
    if not args.config_b:
        raise ConfigError("compare needs --config (method A) and --config-b (method B)")
    cfg_a = _load(args)
    cfg_b = load_config(args.config_b, args.set or (), seed=args.seed)
    out = output_dir(args, cfg_a, "compare")
    res = compare(cfg_a, cfg_b, jobs=args.jobs, max_lag=args.max_lag)
    doc = io._plain(res)
    path = io.write_json(out / "compare.json", doc)
    meta = {"a": cfg_a.to_dict(), "b": cfg_b.to_dict()}
    io.write_sidecar(path, config=meta, seed=cfg_a.seed, runtime=res["runtime"])
    for p in write_compare_tables(doc, out):
        io.write_sidecar(p, config=meta, seed=cfg_a.seed, runtime=res["runtime"])
    print(f"eff_rel={doc['eff_rel']:.4g} median_component_ratio={doc['median_component_ratio']:.4g}")
    print(f"wrote {path}")
    return EXIT_OK


def cmd_sweep(args) -> int:
    cfg = _load(args)
    if not args.lambdas:
        raise ConfigError("sweep needs --lambdas")
    t0 = time.perf_counter()
    model, _ = cached_model(cfg)
    rows = lambda_sweep(
        model, args.lambdas, cfg.kind, cfg.n, L=int(cfg.sampler.get("L", 10)), seed=cfg.seed,
        burn_in=cfg.sampler.get("burn_in"),
    )
    out = output_dir(args, cfg, "sweep")
    path = io.write_json(out / "sweep.json", {"rows": rows})
    io.write_sidecar(path, config=cfg.to_dict(), seed=cfg.seed, runtime=time.perf_counter() - t0)
    for p in write_sweep_tables({"rows": rows}, out):
        io.write_sidecar(p, config=cfg.to_dict(), seed=cfg.seed, runtime=time.perf_counter() - t0)
    for r in rows:
        print(f"lam={r['lam']:.4g} ne/n={r['ne_ratio']:.3f} ess/n={r['mcmc_ess_ratio']:.4f} acc={r['acc_rate']:.3f}")
    print(f"wrote {path}")
    return EXIT_OK


def cmd_report(args) -> int:
    """Render figures and CSV tables from the JSON documents in a directory."""
    from . import plotting

    src = Path(args.input) if args.input else output_dir(args, None, "run")
    if not src.is_dir():
        raise FileNotFoundError(f"report input directory not found: {src}")
    dest = Path(args.output) if args.output else src
    t0 = time.perf_counter()
    written = []
    if (src / "report.json").is_file():
        doc = io.read_json(src / "report.json")
        written += write_run_tables(doc, dest)
        data = io.read_vector_csv(src / "data.csv") if doc["model"].get("type") == "trendfilter" and (
            src / "data.csv"
        ).is_file() else None
        written.append(plotting.plot_estimates(doc, dest / "estimates.png", data=data))
        aux = src / "trace_r0_aux.npz"
        if aux.is_file():
            written.append(plotting.plot_weights(np.load(aux)["log_weights"], dest / "log_weights.png"))
    if (src / "compare.json").is_file():
        doc = io.read_json(src / "compare.json")
        written += write_compare_tables(doc, dest)
        written.append(plotting.plot_compare(doc, dest / "compare.png"))
    if (src / "sweep.json").is_file():
        doc = io.read_json(src / "sweep.json")
        written += write_sweep_tables(doc, dest)
        written.append(plotting.plot_sweep(doc["rows"], dest / "sweep.png"))
    if not written:
        raise ConfigError(f"no report.json, compare.json or sweep.json in {src}")
    runtime = time.perf_counter() - t0
    for p in written:
        io.write_sidecar(p, config={"input": str(src)}, seed=None, runtime=runtime)
        print(f"wrote {p}")
    return EXIT_OK


# -- tables --------------------------------------------------------------------------------


def write_run_tables(doc: dict, out: Path) -> list[Path]:
    rep = doc["replicates"][0]["report"]
    ess = rep.get("mcmc_ess") or [float("nan")] * len(rep["theta_hat"])
    rows = [
        [i, t, m, x, e]
        for i, (t, m, x, e) in enumerate(zip(rep["theta_hat"], rep["mcse"], rep["xi_diag"], ess))
    ]
    paths = [io.write_table_csv(out / "estimates.csv", ["component", "theta_hat", "mcse", "xi_diag", "mcmc_ess"], rows)]
    if rep.get("quantiles"):
        q = [[r["component"], r["alpha"], r["value"]] for r in rep["quantiles"]]
        paths.append(io.write_table_csv(out / "quantiles.csv", ["component", "alpha", "value"], q))
    if len(doc["replicates"]) > 1:
        rr = [
            [r["replicate"], r["acc_rate"], r["report"]["ne_ratio"]] + list(r["report"]["theta_hat"])
            for r in doc["replicates"]
        ]
        p = len(rep["theta_hat"])
        header = ["replicate", "acc_rate", "ne_ratio"] + [f"theta_{i}" for i in range(p)]
        paths.append(io.write_table_csv(out / "replicates.csv", header, rr))
    return paths


def write_compare_tables(doc: dict, out: Path) -> list[Path]:
    p1 = io.write_table_csv(out / "compare.csv", ["component", "ratio", "acf_lag", "acf_diff"], compare_rows(doc))
    rows = [[i, v] for i, v in enumerate(doc["replicate_eff_rel"])]
    p2 = io.write_table_csv(out / "compare_replicates.csv", ["replicate", "eff_rel"], rows)
    return [p1, p2]


def write_sweep_tables(doc: dict, out: Path) -> list[Path]:
    keys = ["lam", "step", "acc_rate", "ne_ratio", "mcmc_ess_ratio"]
    return [io.write_table_csv(out / "sweep.csv", keys, [[r[k] for k in keys] for r in doc["rows"]])]


# -- entry point -----------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="experiment config (JSON)")
    common.add_argument("--seed", type=int, help="override the config seed")
    common.add_argument("--jobs", type=int, default=1, help="worker processes for replicates")
    common.add_argument("--output", help="output directory (default: $MYIS_OUTPUT_DIR/<config name>)")
    common.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config field by dotted path")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="myis", description="Moreau-Yosida importance sampling experiments")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("tune", parents=[common], help="choose lam and step size").set_defaults(func=cmd_tune)
    sub.add_parser("run", parents=[common], help="run chains and estimate").set_defaults(func=cmd_run)
    c = sub.add_parser("compare", parents=[common], help="relative efficiency of two methods")
    c.add_argument("--config-b", help="config of method B")
    c.add_argument("--max-lag", type=int, default=50)
    c.set_defaults(func=cmd_compare)
    s = sub.add_parser("sweep", parents=[common], help="n_e/n and MCMC ESS over a lam grid")
    s.add_argument("--lambdas", type=float, nargs="+")
    s.set_defaults(func=cmd_sweep)
    r = sub.add_parser("report", parents=[common], help="render figures and tables from outputs")
    r.add_argument("--input", help="directory holding report.json / compare.json / sweep.json")
    r.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s"
    )
    try:
        return args.func(args)
    except (FileNotFoundError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (SamplerAbort, ProxConvergenceError, ProxError, WeightError, TuningFailure, FloatingPointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
