"""Plain-text storage: matrices as headerless CSV, datasets as a directory with a JSON descriptor."""
from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from .model import DatasetBundle, ExperimentSystem

DESCRIPTOR = "system.json"


def write_matrix(path, M) -> None:
    M = np.atleast_2d(np.asarray(M, dtype=float))
    np.savetxt(path, M, fmt="%.17g", delimiter=",")


def read_matrix(path) -> np.ndarray:
    try:
        M = np.loadtxt(path, delimiter=",", dtype=float, ndmin=2)
    except ValueError as exc:
        raise ValueError(f"{path}: unreadable matrix values ({exc})") from exc
    return M


def system_to_dict(system: ExperimentSystem) -> dict:
    return {"p": system.p, "E": system.E, "intervened": system.intervened_sets()}


def system_from_dict(d: dict) -> ExperimentSystem:
    p = int(d["p"])
    sets = d["intervened"]
    if "E" in d and int(d["E"]) != len(sets):
        raise ValueError("descriptor E does not match the number of intervention sets")
    return ExperimentSystem.from_sets(p, sets)


def write_system(path, system: ExperimentSystem) -> None:
    Path(path).write_text(json.dumps(system_to_dict(system), indent=2) + "\n")


def read_system(path) -> ExperimentSystem:
    path = Path(path)
    if path.is_dir():
        path = path / DESCRIPTOR
    return system_from_dict(json.loads(path.read_text()))


def write_dataset(directory, bundle: DatasetBundle, mode: str = "samples") -> Path:
    """Write ``bundle`` as ``system.json`` plus one CSV per experiment.

    ``mode="samples"`` stores the raw blocks (``block_###.csv``), while
    ``mode="covariances"`` stores only the empirical covariances (``cov_###.csv``).
    """
    if mode not in ("samples", "covariances"):
        raise ValueError("mode must be 'samples' or 'covariances'")
    if mode == "samples" and bundle.samples is None:
        raise ValueError("bundle carries no samples")
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    desc = system_to_dict(bundle.system)
    desc.update({"n_per_experiment": [int(n) for n in bundle.n_per_experiment], "seed": bundle.seed, "mode": mode})
    files = []
    for k in range(bundle.system.E):
        name = f"{'block' if mode == 'samples' else 'cov'}_{k:03d}.csv"
        write_matrix(out / name, bundle.samples[k] if mode == "samples" else bundle.covariances[k])
        files.append(name)
    desc["files"] = files
    (out / DESCRIPTOR).write_text(json.dumps(desc, indent=2) + "\n")
    return out


def read_dataset(directory) -> DatasetBundle:
    d = Path(directory)
    desc = json.loads((d / DESCRIPTOR).read_text())
    system = system_from_dict(desc)
    mode = desc.get("mode", "samples")
    files = desc.get("files") or [f"{'block' if mode == 'samples' else 'cov'}_{k:03d}.csv" for k in range(system.E)]
    mats = [read_matrix(d / f) for f in files]
    for M in mats:
        if M.shape[1] != system.p:
            raise ValueError(f"{d}: block has {M.shape[1]} columns, expected {system.p}")
    n_e = desc.get("n_per_experiment")
    if mode == "samples":
        return DatasetBundle(system, n_e or [M.shape[0] for M in mats], samples=mats, seed=desc.get("seed"))
    return DatasetBundle(system, n_e or [0] * system.E, covariances=mats, seed=desc.get("seed"))


def write_trace(path, trace: list[dict], columns) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(columns)
        for row in trace:
            w.writerow([_fmt(row.get(c, "")) for c in columns])


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return v
