"""File formats: datasets, traces, reports and their JSON sidecars.

JSON is written deterministically (sorted keys, two-space indent, trailing
newline) so a parsed file re-serialises to identical bytes.  Every artifact
``name.ext`` gets a sidecar ``name.ext.meta.json`` carrying the config, seed,
package version and wall-clock runtime.
"""

from __future__ import annotations

import csv
import json
import subprocess
from pathlib import Path
from typing import Any, Optional

import numpy as np

from . import __version__


def dumps(obj: Any) -> str:
    return json.dumps(_plain(obj), sort_keys=True, indent=2, allow_nan=True) + "\n"


def write_json(path, obj) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dumps(obj))
    return path


def read_json(path) -> Any:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"no such file: {path}")
    return json.loads(path.read_text())


def _plain(obj):
    """Convert numpy scalars/arrays and tuples to JSON-native values."""
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, Path):
        return str(obj)
    return obj


# -- provenance ----------------------------------------------------------------------


_VERSION_CACHE: Optional[str] = None


def version_string() -> str:
    """``git describe``-style version of the source tree, or the package version."""
    global _VERSION_CACHE
    if _VERSION_CACHE is None:
        here = Path(__file__).resolve().parent
        try:
            out = subprocess.run(
                ["git", "describe", "--always", "--dirty", "--tags"],
                cwd=here,
                capture_output=True,
                text=True,
                timeout=5,
            )
            tag = out.stdout.strip()
            _VERSION_CACHE = f"{__version__}+g{tag}" if out.returncode == 0 and tag else __version__
        except (OSError, subprocess.SubprocessError):
            _VERSION_CACHE = __version__
    return _VERSION_CACHE


def sidecar_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".meta.json")


def write_sidecar(path, *, config, seed, runtime: float, **extra) -> Path:
    meta = {"file": Path(path).name, "config": config, "seed": seed, "version": version_string(), "runtime": runtime}
    meta.update(extra)
    return write_json(sidecar_path(path), meta)


# -- datasets --------------------------------------------------------------------------


def write_vector_csv(path, y, header="y") -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([header])
        for v in np.asarray(y, dtype=float).ravel():
            w.writerow([repr(float(v))])
    return path


def read_vector_csv(path) -> np.ndarray:
    """One numeric column, with or without a header row."""
    rows = _read_rows(path)
    if rows and not _is_number(rows[0][0]):
        rows = rows[1:]
    return np.array([float(r[0]) for r in rows if r])


def write_counts_csv(path, counts) -> Path:
    """Ragged counts as ``class_id,count`` rows."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["class_id", "count"])
        for i, ys in enumerate(counts):
            for y in np.asarray(ys).ravel():
                w.writerow([i, int(y)])
    return path


def read_counts_csv(path) -> list[np.ndarray]:
    rows = _read_rows(path)
    if rows and not _is_number(rows[0][0]):
        rows = rows[1:]
    groups: dict[int, list[int]] = {}
    for r in rows:
        if not r:
            continue
        cid, y = int(r[0]), float(r[1])
        if y < 0 or y != int(y):
            raise ValueError(f"counts must be nonnegative integers, got {r[1]!r} in {path}")
        groups.setdefault(cid, []).append(int(y))
    ids = sorted(groups)
    if ids != list(range(len(ids))):
        raise ValueError(f"class ids in {path} must be 0..I-1")
    return [np.array(groups[i], dtype=np.int64) for i in ids]


def write_matrix_csv(path, M) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    np.savetxt(path, np.atleast_2d(M), delimiter=",", fmt="%.17g")
    return path


def read_matrix(path) -> np.ndarray:
    """A matrix from ``.npy`` or comma-separated text."""
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"no such file: {path}")
    if path.suffix == ".npy":
        return np.load(path)
    return np.loadtxt(path, delimiter=",", ndmin=2)


def _read_rows(path) -> list[list[str]]:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"no such file: {path}")
    with path.open(newline="") as fh:
        return [r for r in csv.reader(fh)]


def _is_number(s: str) -> bool:
    try:
        float(s)
        return True
    except ValueError:
        return False


# -- traces and tables -------------------------------------------------------------


def save_trace(trace, stem) -> tuple[Path, Path]:
    """Write ``stem.npy`` (states, unless already streamed there) and ``stem_aux.npz``."""
    stem = Path(stem)
    stem.parent.mkdir(parents=True, exist_ok=True)
    states_path = stem.with_suffix(".npy")
    states = trace.states
    if not (isinstance(states, np.memmap) and Path(states.filename).resolve() == states_path.resolve()):
        np.save(states_path, np.asarray(states))
    aux = stem.with_name(stem.name + "_aux.npz")
    np.savez(aux, log_weights=trace.log_weights, accepts=trace.accepts)
    return states_path, aux


def load_trace(stem) -> dict:
    stem = Path(stem)
    aux = np.load(stem.with_name(stem.name + "_aux.npz"))
    return {
        "states": np.load(stem.with_suffix(".npy"), mmap_mode="r"),
        "log_weights": aux["log_weights"],
        "accepts": aux["accepts"],
    }


def write_table_csv(path, header, rows) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for r in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in r])
    return path


def read_table_csv(path) -> tuple[list[str], list[list[str]]]:
    rows = _read_rows(path)
    return rows[0], rows[1:]
