"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py -v`` (the lines are repeated in the
terminal summary) or directly as ``python tests/test_acceptance.py``.
"""
import functools
import itertools
import math
import sys
import time
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from cyclic_sem import kernels
from cyclic_sem._accel import USE_NUMBA
from cyclic_sem.admm import b_subproblem_objective
from cyclic_sem.bench import BenchConfig, hamming, loglog_slope, medians, run_benchmark, vg_packing
from cyclic_sem.design import design_binary, design_single_node, is_completely_separating, redundancy
from cyclic_sem.diagnostics import identifiability_rank, kl_gaussian
from cyclic_sem.likelihood import LikelihoodWorkspace, neg_log_likelihood, nll_gradient
from cyclic_sem.llc import estimate_llc
from cyclic_sem.model import ExperimentSystem, bundle_from_covariances, population_covariances, sample_dataset

from conftest import central_diff, random_structure, random_system

RESULTS: dict[int, str] = {}
SEED = 2024


def report(k, ok, detail):
    line = f"CRITERION {k:2d}: {'PASS' if ok else 'FAIL'} | {detail}"
    RESULTS[k] = line
    print(line, flush=True)
    return ok


# shared benchmark runs -------------------------------------------------------

def rate_config(seed=SEED):
    return BenchConfig(p=10, d=2, eta=0.5, design="binary", sweep="n", values=[2000, 8000, 32000], repetitions=16,
                       seed=seed, estimators=("llc", "init", "loc"), llc_grid=(1e-4, 1, 17),
                       init_grid=(1e-3, 1, 13), loc_grid=(1e-3, 1, 13), record_wall_time=False)


@functools.lru_cache(maxsize=None)
def rate_run(out_dir):
    t0 = time.perf_counter()
    recs = run_benchmark(rate_config(), out_dir)
    return recs, time.perf_counter() - t0


@pytest.fixture(scope="module")
def bench_dir(tmp_path_factory):
    return tmp_path_factory.mktemp("acceptance")


# criteria ---------------------------------------------------------------------

def test_c01_population_recovery():
    t0 = time.perf_counter()
    worst = 0.0
    for seed in range(16):
        B = random_structure(8, 2, 0.5, seed)
        sys_ = design_binary(8)
        bundle = bundle_from_covariances(sys_, population_covariances(B, sys_))
        worst = max(worst, float(np.linalg.norm(estimate_llc(bundle, 1e-10).estimate - B)))
    dt = time.perf_counter() - t0
    ok = worst <= 1e-6 and dt < 10
    assert report(1, ok, f"max |B_hat - B*|_F = {worst:.2e} (<= 1e-6), {dt:.2f} s (< 10 s)")


def test_c02_rate(bench_dir):
    recs, dt = rate_run(str(bench_dir / "run1"))
    slopes = {}
    for est in ("llc", "init", "loc"):
        m = medians(recs, est)
        slopes[est] = loglog_slope(list(m), list(m.values()))
    ok = all(-1.3 <= s <= -0.7 for s in slopes.values()) and dt < 600
    detail = ", ".join(f"{k} {v:.3f}" for k, v in slopes.items())
    assert report(2, ok, f"log-log slopes {detail} (in [-1.3, -0.7]), {dt:.0f} s (< 600 s)")


def test_c03_ordering(bench_dir):
    recs, _ = rate_run(str(bench_dir / "run1"))
    m = {est: medians(recs, est)[8000] for est in ("llc", "init", "loc")}
    ok = m["loc"] <= 1.05 * m["init"] and m["init"] <= 1.05 * m["llc"]
    assert report(3, ok, f"n=8000 medians loc {m['loc']:.4g} <= init {m['init']:.4g} <= llc {m['llc']:.4g} (5% slack)")


def test_c04_cliques():
    cfg = BenchConfig(graph="disconnected_cliques", p=12, d=3, eta=0.5, design="binary", sweep="n", values=[8000],
                      repetitions=16, seed=SEED, estimators=("llc", "init", "loc"), llc_grid=(1e-4, 1, 17),
                      init_grid=(1e-3, 1, 13), loc_grid=(1e-3, 1, 13), record_wall_time=False)
    recs = run_benchmark(cfg)
    m = {est: medians(recs, est)[8000] for est in ("init", "loc")}
    best = min(m.values())
    ok = m["init"] <= 2 * best and m["loc"] <= 2 * best
    assert report(4, ok, f"cliques medians init {m['init']:.4g}, loc {m['loc']:.4g} (both within 2x of {best:.4g})")


def _best_time(fn, repeat=7, number=20):
    best = np.inf
    for _ in range(repeat):
        t0 = time.perf_counter()
        for _ in range(number):
            fn()
        best = min(best, (time.perf_counter() - t0) / number)
    return best


def test_c05_low_rank_path():
    rng = np.random.default_rng(SEED)
    worst = 0.0
    for trial in range(100):
        p = 20
        B = random_structure(p, 3, 0.3, trial)
        J = rng.choice(p, size=int(rng.integers(0, 4)), replace=False)
        sys_ = ExperimentSystem.from_sets(p, [sorted(J.tolist())])
        covs = sample_dataset(random_structure(p, 3, 0.3, trial + 1000), sys_, 100, seed=trial).covariances
        a = neg_log_likelihood(B, covs, sys_, fast=False)
        b = neg_log_likelihood(B, covs, sys_, fast=True)
        worst = max(worst, abs(a - b) / abs(a))
    p, E = 50, 25
    sys_ = ExperimentSystem.from_sets(p, [sorted(rng.choice(p, 2, replace=False).tolist()) for _ in range(E)])
    B = random_structure(p, 3, 0.5, 7)
    covs = sample_dataset(B, sys_, 200 * E, seed=1).covariances
    ws = LikelihoodWorkspace(covs, sys_)
    Bs = [B, 0.9 * B]
    # the base factor is cached per B, so alternate two matrices to time full evaluations
    it = itertools.cycle(Bs)
    ws.value(B, fast=True)
    t_fast = _best_time(lambda: ws.value(next(it), fast=True))
    t_naive = _best_time(lambda: ws.value(next(it), fast=False))
    ratio = t_fast / t_naive
    ok = worst <= 1e-9 and ratio <= 0.5
    note = "" if USE_NUMBA else " [numba disabled]"
    assert report(5, ok, f"max rel diff {worst:.1e} (<= 1e-9); fast/naive time {ratio:.2f} (<= 0.5) at p=50, E=25"
                         f"{note}")


def test_c06_gradients():
    rng = np.random.default_rng(SEED)
    worst = 0.0
    for p in (4, 6):
        off = ~np.eye(p, dtype=bool)
        for k in range(20):
            sys_ = random_system(p, rng)
            B = random_structure(p, 2, 0.4, 100 * p + k)
            covs = sample_dataset(random_structure(p, 2, 0.4, k + 7), sys_, 30 * sys_.E, seed=k).covariances
            C = rng.standard_normal((sys_.E, p, p))
            C = C + C.transpose(0, 2, 1)

            def nll(x):
                M = np.zeros((p, p))
                M[off] = x
                return neg_log_likelihood(M, covs, sys_)

            def bobj(x):
                M = np.zeros((p, p))
                M[off] = x
                return b_subproblem_objective(M, C, sys_)[0]

            for f, g in ((nll, nll_gradient(B, covs, sys_)), (bobj, b_subproblem_objective(B, C, sys_)[1])):
                fd = central_diff(f, B[off], 1e-5)
                worst = max(worst, np.linalg.norm(g[off] - fd) / max(1.0, np.linalg.norm(fd)))
    assert report(6, worst <= 1e-5, f"max relative gradient error {worst:.1e} (<= 1e-5), 40 points each objective")


def test_c07_kl():
    rng = np.random.default_rng(SEED)
    X = rng.standard_normal((5, 5))
    T = X @ X.T + np.eye(5)
    same = kl_gaussian(T, T)
    scalar = abs(kl_gaussian([[1.0]], [[2.0]]) - 0.5 * (1 - math.log(2)))
    neg = 0
    for _ in range(100):
        A = rng.standard_normal((5, 5))
        Bm = rng.standard_normal((5, 5))
        if kl_gaussian(A @ A.T + 0.1 * np.eye(5), Bm @ Bm.T + 0.1 * np.eye(5)) < 0:
            neg += 1
    ok = same == 0.0 and scalar <= 1e-12 and neg == 0
    assert report(7, ok, f"KL(T,T) = {same}, scalar error {scalar:.1e} (<= 1e-12), {neg}/100 negative")


def test_c08_identifiability():
    B = random_structure(4, 2, 0.5, SEED)
    obs = identifiability_rank(B, ExperimentSystem.from_sets(4, [[]]))
    single = identifiability_rank(B, design_single_node(4))
    ok = (obs.verdict == "non_identifiable" and obs.m_bound == 10 and obs.ambient_dim == 12
          and single.numeric_rank == 12 and single.verdict == "identifiable_locally")
    assert report(8, ok, f"no interventions: m = {obs.m_bound}, {obs.verdict}; single-node: rank "
                         f"{single.numeric_rank}/12, {single.verdict}")


def test_c09_designs():
    bad = []
    for p in range(2, 65):
        b, s = design_binary(p), design_single_node(p)
        if not (is_completely_separating(b)[0] and is_completely_separating(s)[0]):
            bad.append(p)
        if b.E != 2 * math.ceil(math.log2(p)) or redundancy(s) != 1:
            bad.append(p)
    assert report(9, not bad, f"p = 2..64 binary/single-node separating, E = 2 ceil(log2 p), kappa = 1; "
                              f"failures: {sorted(set(bad)) or 'none'}")


def test_c10_packing():
    pk = vg_packing(8, 2, seed=SEED)
    dmin = min(hamming(a, b) for a, b in itertools.combinations(pk.matrices, 2))
    sparse = all(np.all(H.sum(axis=1) == 2) for H in pk.matrices)
    ok = pk.complete and dmin >= 8 and sparse
    assert report(10, ok, f"{len(pk.matrices)}/{pk.target} matrices, min Hamming distance {dmin} (>= 8), "
                          f"rows 2-sparse: {sparse}")


def test_c11_robustness():
    cfg = BenchConfig(p=10, d=2, eta=0.5, design="single_node", sweep="drop", values=[0, 1, 2], n=8000,
                      repetitions=16, seed=SEED, estimators=("llc", "init", "loc"), llc_grid=(1e-4, 1, 17),
                      init_grid=(1e-3, 1, 13), loc_grid=(1e-3, 1, 13), record_wall_time=False)
    recs = run_benchmark(cfg)
    m = {est: medians(recs, est) for est in ("llc", "init", "loc")}
    factor = {est: m[est][2] / m[est][0] for est in m}
    stalled = sum(1 for r in recs if r.estimator == "init" and "max_iter" in r.flags)
    n_init = sum(1 for r in recs if r.estimator == "init")
    ok = factor["loc"] < factor["llc"]
    detail = (f"r=2 vs r=0 median error factor: llc {factor['llc']:.2f}, init {factor['init']:.2f}, "
              f"loc {factor['loc']:.2f}; ADMM hit the iteration cap on {stalled}/{n_init} chosen fits")
    if stalled > 0.1 * n_init:
        report(11, ok, detail + " (report-only)")
        return
    assert report(11, ok, detail)


def test_c12_determinism(bench_dir):
    rate_run(str(bench_dir / "run1"))
    run_benchmark(rate_config(), bench_dir / "run2")
    a = (bench_dir / "run1" / "results.csv").read_bytes()
    b = (bench_dir / "run2" / "results.csv").read_bytes()
    assert report(12, a == b, f"two runs of the rate benchmark: results.csv byte-identical = {a == b} "
                              f"({len(a)} bytes)")


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q", *sys.argv[1:]]))
