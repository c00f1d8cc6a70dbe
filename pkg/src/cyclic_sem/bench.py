"""Synthetic ground truths, oracle-tuned estimator sweeps and CSV result tables."""
from __future__ import annotations

import configparser
import csv
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .admm import AdmmOptions, admm_path, random_triangular_start
from .alm import AlmOptions, alm_refine, oracle_radius
from .design import DesignKind, design_single_node
from .io import read_matrix
from .llc import lambda_max, lambda_path
from .model import MatrixClassSpec, operator_norm, sample_dataset

log = logging.getLogger(__name__)

ESTIMATORS = ("llc", "init", "loc", "unconstr")
SWEEP_AXES = ("n", "p", "d", "k", "drop")
RESULT_COLUMNS = ("sweep_value", "repetition", "estimator", "sq_frob_error", "lambda", "wall_time_ms", "flags")


# ---------------------------------------------------------------- generators

def _normalise(Bt, eta):
    norm = operator_norm(Bt)
    if norm == 0.0:
        return Bt
    return (1.0 - eta) / norm * Bt


def gen_random_regular(p: int, d: int, eta: float, seed) -> np.ndarray:
    """Each row gets ``d`` parents drawn without replacement, N(0, 1) weights, then a norm rescale to ``1 - eta``."""
    if not 1 <= d <= p - 1:
        raise ValueError(f"d must lie in [1, p-1], got d={d}, p={p}")
    MatrixClassSpec(p, d, eta)
    rng = np.random.default_rng(seed)
    Bt = np.zeros((p, p))
    for i in range(p):
        others = np.delete(np.arange(p), i)
        Bt[i, rng.choice(others, size=d, replace=False)] = 1.0
    Bt[Bt != 0] = rng.standard_normal(int(np.count_nonzero(Bt)))
    return _normalise(Bt, eta)


def clique_adjacency(p: int, d: int) -> np.ndarray:
    A = np.zeros((p, p))
    for s in range(0, p, d):
        blk = slice(s, min(s + d, p))
        A[blk, blk] = 1.0
    np.fill_diagonal(A, 0.0)
    return A


def gen_disconnected_cliques(p: int, d: int, eta: float, seed) -> np.ndarray:
    """Block-diagonal cliques of size ``d`` (the last one holds the remainder), Gaussian weights, norm rescale."""
    if not 1 <= d <= p:
        raise ValueError(f"d must lie in [1, p], got d={d}, p={p}")
    rng = np.random.default_rng(seed)
    Bt = clique_adjacency(p, d)
    Bt[Bt != 0] = rng.standard_normal(int(np.count_nonzero(Bt)))
    return _normalise(Bt, eta)


def load_adjacency_csv(path, eta: float, seed) -> np.ndarray:
    """Structure matrix from a square CSV: 0/1 entries get Gaussian weights, weighted entries are kept; then rescaled."""
    A = read_matrix(path)
    if A.shape[0] != A.shape[1]:
        raise ValueError(f"{path}: adjacency must be square, got {A.shape}")
    if not np.all(np.isfinite(A)):
        raise ValueError(f"{path}: non-finite entries")
    if np.any(np.diag(A) != 0):
        raise ValueError(f"{path}: adjacency must have a zero diagonal")
    if np.all(np.isin(A, (0.0, 1.0))):
        rng = np.random.default_rng(seed)
        B = np.zeros_like(A)
        mask = A != 0
        B[mask] = rng.standard_normal(int(mask.sum()))
    else:
        B = A.copy()
    return _normalise(B, eta)


@dataclass
class Packing:
    matrices: list[np.ndarray]
    target: int
    complete: bool


def hamming(A, B) -> int:
    return int(np.count_nonzero(np.asarray(A) != np.asarray(B)))


def vg_packing(m: int, d: int, seed, max_retries: int = 100) -> Packing:
    """Random 0/1 ``m x m`` matrices with ``d``-sparse rows and pairwise Hamming distance at least ``m d / 2``.

    The target count is ``ceil(exp(m d / 16 * log(1 + m / (2 d))))``. Each slot
    is redrawn until it is far enough from the matrices already accepted; after
    ``max_retries`` failed draws for one slot the accepted subset is returned
    with ``complete=False``.
    """
    if m < 1 or not 1 <= d <= m / 2:
        raise ValueError(f"need m >= 1 and 1 <= d <= m/2, got m={m}, d={d}")
    target = math.ceil(math.exp(m * d / 16.0 * math.log1p(m / (2.0 * d))))
    rng = np.random.default_rng(seed)
    min_dist = m * d / 2.0

    def draw():
        H = np.zeros((m, m), dtype=np.int8)
        for i in range(m):
            H[i, rng.choice(m, size=d, replace=False)] = 1
        return H

    accepted: list[np.ndarray] = []
    while len(accepted) < target:
        for _ in range(max_retries):
            H = draw()
            if all(hamming(H, G) >= min_dist for G in accepted):
                accepted.append(H)
                break
        else:
            log.warning("packing stopped at %d of %d matrices", len(accepted), target)
            return Packing(accepted, target, False)
    return Packing(accepted, target, True)


def packing_hypotheses(H_list, beta: float) -> list[np.ndarray]:
    """Zero matrix plus the skew block matrices ``[[0, beta H], [-beta H', 0]]``, one per packing element."""
    m = H_list[0].shape[0]
    out = [np.zeros((2 * m, 2 * m))]
    for H in H_list:
        B = np.zeros((2 * m, 2 * m))
        B[:m, m:] = beta * H
        B[m:, :m] = -beta * H.T
        out.append(B)
    return out


# ---------------------------------------------------------------- metrics

def frobenius_error(B_hat, B_true) -> float:
    """Squared Frobenius distance."""
    B_hat = np.asarray(B_hat, dtype=float)
    B_true = np.asarray(B_true, dtype=float)
    if B_hat.shape != B_true.shape:
        raise ValueError(f"shape mismatch: {B_hat.shape} vs {B_true.shape}")
    return float(np.sum((B_hat - B_true) ** 2))


def oracle_select(estimates, B_true):
    """Candidate ``(lam, B_hat)`` closest to the truth; ties go to the smaller lambda."""
    estimates = list(estimates)
    if not estimates:
        raise ValueError("no candidates")
    best = None
    for lam, B in estimates:
        err = frobenius_error(B, B_true)
        if best is None or err < best[0] or (err == best[0] and lam < best[1]):
            best = (err, lam, B)
    return best[1], best[2]


# ---------------------------------------------------------------- configuration

@dataclass
class BenchConfig:
    graph: str = "random_regular"
    adjacency: str | None = None
    p: int = 10
    d: int = 2
    eta: float = 0.5
    design: str = "binary"
    k: int = 2
    n: int = 8000
    sweep: str = "n"
    values: list = field(default_factory=lambda: [2000, 8000, 32000])
    repetitions: int = 32
    seed: int = 0
    estimators: tuple = ("llc", "init", "loc")
    # grids as (low, high, count); llc is relative to the KKT bound of the data
    llc_grid: tuple = (1e-4, 1e1, 20)
    init_grid: tuple = (1e-4, 1e1, 20)
    loc_grid: tuple = (1e-4, 1e1, 20)
    admm_primal_tol: float = 1e-4
    admm_dual_tol: float = 1e-4
    admm_max_iter: int = 200
    record_wall_time: bool = True
    workers: int = 1

    def __post_init__(self):
        if self.sweep not in SWEEP_AXES:
            raise ValueError(f"sweep axis must be one of {SWEEP_AXES}, got {self.sweep!r}")
        if self.repetitions < 1:
            raise ValueError("repetitions must be >= 1")
        if not self.values:
            raise ValueError("sweep needs at least one value")
        if self.graph not in ("random_regular", "disconnected_cliques", "adjacency_file"):
            raise ValueError(f"unknown graph kind {self.graph!r}")
        if self.graph == "adjacency_file" and not self.adjacency:
            raise ValueError("adjacency_file needs an adjacency path")
        bad = set(self.estimators) - set(ESTIMATORS)
        if bad:
            raise ValueError(f"unknown estimators {sorted(bad)}")
        if "loc" in self.estimators and "init" not in self.estimators:
            raise ValueError("loc needs init")

    def admm_options(self) -> AdmmOptions:
        return AdmmOptions(primal_tol=self.admm_primal_tol, dual_tol=self.admm_dual_tol, max_iter=self.admm_max_iter)


def _grid(spec) -> np.ndarray:
    lo, hi, cnt = spec
    return np.logspace(math.log10(hi), math.log10(lo), int(cnt))


_INT_KEYS = {"p", "d", "k", "n", "repetitions", "seed", "admm_max_iter", "workers"}
_FLOAT_KEYS = {"eta", "admm_primal_tol", "admm_dual_tol"}


def _parse_grid(text):
    parts = [x.strip() for x in text.replace(";", ",").split(",") if x.strip()]
    if len(parts) != 3:
        raise ValueError(f"grid must be 'low, high, count', got {text!r}")
    return float(parts[0]), float(parts[1]), int(parts[2])


def parse_config_text(text: str) -> BenchConfig:
    """``key = value`` lines, optionally under a ``[bench]`` section; ``#`` starts a comment."""
    if not any(line.strip().startswith("[") for line in text.splitlines()):
        text = "[bench]\n" + text
    cp = configparser.ConfigParser(inline_comment_prefixes=("#",))
    cp.read_string(text)
    if "bench" not in cp:
        raise ValueError("config needs a [bench] section")
    kw = {}
    for key, raw in cp["bench"].items():
        if key in _INT_KEYS:
            kw[key] = int(raw)
        elif key in _FLOAT_KEYS:
            kw[key] = float(raw)
        elif key in ("llc_grid", "init_grid", "loc_grid"):
            kw[key] = _parse_grid(raw)
        elif key == "values":
            kw[key] = [float(v) for v in raw.replace(";", ",").split(",") if v.strip()]
        elif key == "estimators":
            kw[key] = tuple(v.strip() for v in raw.split(",") if v.strip())
        elif key == "record_wall_time":
            kw[key] = cp["bench"].getboolean(key)
        elif key in ("graph", "adjacency", "design", "sweep"):
            kw[key] = raw.strip()
        else:
            raise ValueError(f"unknown config key {key!r}")
    if "values" in kw:
        kw["values"] = [int(v) if float(v).is_integer() else v for v in kw["values"]]
    return BenchConfig(**kw)


def load_config(path) -> BenchConfig:
    return parse_config_text(Path(path).read_text())


# ---------------------------------------------------------------- running

@dataclass
class RunRecord:
    sweep_value: float
    repetition: int
    estimator: str
    sq_frob_error: float
    lam: float
    wall_time_ms: float
    flags: str = ""
    sweep_index: int = 0


def _setting(cfg: BenchConfig, value):
    """Config with the swept parameter set to ``value``."""
    if cfg.sweep == "drop":
        return cfg
    return replace(cfg, **{cfg.sweep: int(value)})


def _truth(cfg, seed):
    if cfg.graph == "random_regular":
        return gen_random_regular(cfg.p, cfg.d, cfg.eta, seed)
    if cfg.graph == "disconnected_cliques":
        return gen_disconnected_cliques(cfg.p, cfg.d, cfg.eta, seed)
    return load_adjacency_csv(cfg.adjacency, cfg.eta, seed)


def _system(cfg, value, rng):
    if cfg.sweep == "drop":
        # missing-experiment mode: single-node design minus r random experiments
        full = design_single_node(cfg.p)
        r = int(value)
        drop = rng.choice(cfg.p, size=r, replace=False) if r else []
        return full.without(drop)
    kind = DesignKind(cfg.design, cfg.k if cfg.design == "bounded" else None)
    return kind.build(cfg.p)


def _timer(cfg, t0):
    return 1e3 * (time.perf_counter() - t0) if cfg.record_wall_time else 0.0


def run_repetition(cfg: BenchConfig, sweep_index: int, value, rep: int) -> list[RunRecord]:
    """One draw of truth, design and data, then every configured estimator with oracle tuning."""
    cfg_v = _setting(cfg, value)
    ss = np.random.SeedSequence([cfg.seed, sweep_index, rep])
    s_graph, s_data, s_misc = ss.spawn(3)
    misc = np.random.default_rng(s_misc)
    B_true = _truth(cfg_v, s_graph)
    system = _system(cfg_v, value, misc)
    data_seed = int(s_data.generate_state(1, dtype=np.uint64)[0])
    bundle = sample_dataset(B_true, system, cfg_v.n, data_seed)
    covs = bundle.covariances
    out = []

    def record(est, B, lam, t0, flags):
        out.append(RunRecord(value, rep, est, frobenius_error(B, B_true), float(lam), _timer(cfg, t0),
                             ";".join(flags), sweep_index))

    if "llc" in cfg.estimators:
        t0 = time.perf_counter()
        lmax = lambda_max(bundle)
        grid = _grid(cfg.llc_grid) * (lmax if lmax > 0 else 1.0)
        path = lambda_path(bundle, grid)
        lam, B = oracle_select([(l, Bh) for l, Bh, _ in path], B_true)
        record("llc", B, lam, t0, [])

    B_init = None
    if "init" in cfg.estimators:
        t0 = time.perf_counter()
        reps = admm_path(covs, system, _grid(cfg.init_grid), cfg.admm_options())
        lam, B_init = oracle_select([(l, r.estimate) for l, r in reps], B_true)
        chosen = next(r for l, r in reps if l == lam)
        record("init", B_init, lam, t0, chosen.flags)

    if "loc" in cfg.estimators:
        t0 = time.perf_counter()
        R = oracle_radius(B_init, B_true)
        cands, flags = _alm_sweep(covs, system, B_init, R, _grid(cfg.loc_grid), B_init)
        lam, B = oracle_select(cands, B_true)
        record("loc", B, lam, t0, flags[lam])

    if "unconstr" in cfg.estimators:
        t0 = time.perf_counter()
        start = random_triangular_start(cfg_v.p, misc)
        cands, flags = _alm_sweep(covs, system, np.zeros_like(B_true), np.inf, _grid(cfg.loc_grid), start)
        lam, B = oracle_select(cands, B_true)
        record("unconstr", B, lam, t0, flags[lam])
    return out


def _alm_sweep(covs, system, center, radius, grid, start):
    cands, flags = [], {}
    B_prev = start
    for lam in grid:
        rep = alm_refine(covs, system, center, radius, float(lam), AlmOptions(), B_start=B_prev)
        cands.append((float(lam), rep.estimate))
        flags[float(lam)] = rep.flags
        B_prev = rep.estimate
    return cands, flags


def _safe_repetition(args):
    cfg, idx, value, rep = args
    try:
        return run_repetition(cfg, idx, value, rep)
    except Exception as exc:  # one bad draw must not sink the sweep
        log.warning("repetition %d at %s=%s failed: %s", rep, cfg.sweep, value, exc)
        return [RunRecord(value, rep, "failed", float("nan"), float("nan"), 0.0,
                          f"error:{type(exc).__name__}", idx)]


def run_benchmark(cfg: BenchConfig, out_dir=None) -> list[RunRecord]:
    """Every (sweep value, repetition) pair; records come back sorted and, with ``out_dir``, land in CSV files."""
    jobs = [(cfg, idx, v, rep) for idx, v in enumerate(cfg.values) for rep in range(cfg.repetitions)]
    if cfg.workers > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            chunks = list(pool.map(_safe_repetition, jobs))
    else:
        chunks = [_safe_repetition(j) for j in jobs]
    order = {e: k for k, e in enumerate(ESTIMATORS + ("failed",))}
    records = sorted((r for c in chunks for r in c), key=lambda r: (r.sweep_index, r.repetition, order[r.estimator]))
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        write_results(out / "results.csv", records)
        write_summary(out / "summary.csv", summarize(records))
    return records


def _num(x) -> str:
    return repr(float(x))


def write_results(path, records) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(RESULT_COLUMNS)
        for r in records:
            w.writerow([r.sweep_value, r.repetition, r.estimator, _num(r.sq_frob_error), _num(r.lam),
                        _num(r.wall_time_ms), r.flags])


def summarize(records) -> list[dict]:
    """Median and mean error per (sweep value, estimator), plus failure counts."""
    cells: dict = {}
    failures: dict = {}
    for r in records:
        key = (r.sweep_index, r.sweep_value)
        if r.estimator == "failed":
            failures[key] = failures.get(key, 0) + 1
            continue
        cells.setdefault((key, r.estimator), []).append(r.sq_frob_error)
    rows = []
    order = {e: k for k, e in enumerate(ESTIMATORS)}
    for (key, est), errs in sorted(cells.items(), key=lambda kv: (kv[0][0][0], order[kv[0][1]])):
        errs = np.array(errs)
        rows.append({"sweep_value": key[1], "estimator": est, "count": len(errs), "failures": failures.get(key, 0),
                     "median": float(np.median(errs)), "mean": float(np.mean(errs))})
    return rows


def write_summary(path, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("sweep_value", "estimator", "count", "failures", "median_sq_frob_error", "mean_sq_frob_error"))
        for r in rows:
            w.writerow([r["sweep_value"], r["estimator"], r["count"], r["failures"], _num(r["median"]), _num(r["mean"])])


def medians(records, estimator: str) -> dict:
    """Median error per sweep value for one estimator."""
    return {r["sweep_value"]: r["median"] for r in summarize(records) if r["estimator"] == estimator}


def loglog_slope(xs, ys) -> float:
    return float(np.polyfit(np.log(np.asarray(xs, dtype=float)), np.log(np.asarray(ys, dtype=float)), 1)[0])
