"""Figures for run, compare and sweep outputs.

Every figure is drawn from the same JSON documents the CSV tables come
from, so a plot never shows numbers that are not also in a delimited file.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

STYLE = {
    "figure.dpi": 110,
    "font.size": 9,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "savefig.bbox": "tight",
}


def _save(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path)
    plt.close(fig)
    return path


def plot_estimates(doc: dict, path, data=None) -> Path:
    """Point estimates with a quantile band when one was requested.

    With two requested levels per component the band spans them, which for
    ``(0.025, 0.975)`` is a 95% credible band.
    """
    rep = doc["replicates"][0]["report"]
    theta = np.asarray(rep["theta_hat"])
    mcse = np.asarray(rep["mcse"])
    idx = np.arange(theta.size)
    by_comp: dict[int, list] = {}
    for q in rep.get("quantiles", []):
        by_comp.setdefault(q["component"], []).append((q["alpha"], q["value"]))
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(6.4, 3.6))
        if data is not None and np.size(data) == theta.size:
            ax.plot(idx, np.ravel(data), ".", color="0.6", ms=3, label="data")
        if by_comp and all(len(v) >= 2 for v in by_comp.values()) and len(by_comp) == theta.size:
            lo = [min(v)[1] for _, v in sorted(by_comp.items())]
            hi = [max(v)[1] for _, v in sorted(by_comp.items())]
            ax.fill_between(idx, lo, hi, color="C0", alpha=0.25, lw=0, label="quantile band")
        ax.errorbar(idx, theta, yerr=2 * mcse, fmt="-", color="C0", lw=1, elinewidth=0.6, label="estimate")
        ax.set_xlabel("component")
        ax.set_ylabel("value")
        ax.set_title(f"{doc['kind']}  lam={doc['lambda']:.3g}  n_e/n={rep['ne_ratio']:.2f}")
        ax.legend(frameon=False)
    return _save(fig, path)


def plot_compare(doc: dict, path) -> Path:
    """Boxplot of per-replicate relative efficiency beside the ACF differences."""
    with plt.rc_context(STYLE):
        fig, (a0, a1) = plt.subplots(1, 2, figsize=(8, 3.4))
        a0.boxplot([doc["replicate_eff_rel"], doc["component_ratios"]], widths=0.5)
        a0.set_xticks([1, 2], ["replicates", "components"])
        a0.axhline(1.0, color="0.3", lw=0.8, ls="--")
        a0.set_yscale("log")
        a0.set_ylabel("relative efficiency")
        diff = np.asarray(doc["acf_diff"], dtype=float)
        lags = np.arange(diff.shape[1])
        for row in diff:
            a1.plot(lags, row, color="C0", lw=0.6, alpha=0.6)
        a1.axhline(0.0, color="0.3", lw=0.8)
        a1.set_xlabel("lag")
        a1.set_ylabel("ACF difference (B - A)")
    return _save(fig, path)


def plot_sweep(rows: list[dict], path, window=(0.4, 0.8)) -> Path:
    lam = np.array([r["lam"] for r in rows])
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(1, 3, figsize=(9, 2.9))
        for ax, key, label in zip(
            axes, ("ne_ratio", "mcmc_ess_ratio", "acc_rate"), ("n_e / n", "MCMC ESS / n", "acceptance")
        ):
            ax.plot(lam, [r[key] for r in rows], "o-", ms=3)
            ax.set_xscale("log")
            ax.set_xlabel("lam")
            ax.set_ylabel(label)
        for level in window:
            axes[0].axhline(level, color="0.4", lw=0.8, ls="--")
    return _save(fig, path)


def plot_weights(log_weights, path) -> Path:
    lw = np.asarray(log_weights, dtype=float)
    lw = lw[np.isfinite(lw)]
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(4.2, 3))
        ax.hist(lw - lw.max(), bins=60, color="C1", alpha=0.8)
        ax.set_xlabel("log weight (max subtracted)")
        ax.set_ylabel("count")
    return _save(fig, path)
