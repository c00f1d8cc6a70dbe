"""Time the compiled kernels against their numpy twins.

    python benchmarks/bench_kernels.py [--repeat 5] [--csv out.csv]

Both implementations are imported from the same module regardless of the
``CYCLIC_SEM_DISABLE_NUMBA`` flag, so one run compares both paths.
"""
import argparse
import csv
import sys
import timeit

import numpy as np

from cyclic_sem import kernels
from cyclic_sem.bench import gen_random_regular
from cyclic_sem.design import design_binary
from cyclic_sem.model import ExperimentSystem, sample_dataset


def cases(rng):
    # lasso on one LLC-sized row system
    T = rng.standard_normal((60, 39))
    t = T @ (rng.standard_normal(39) * (rng.random(39) < 0.1)) + 0.1 * rng.standard_normal(60)
    G, c = T.T @ T, T.T @ t
    b0 = np.zeros(39)
    yield "lasso_cd p=40", (lambda: kernels.lasso_cd_loops(G, c, 0.5, b0, 1e-8, 100000)), \
        (lambda: kernels.lasso_cd_numpy(G, c, 0.5, b0, 1e-8, 100000))

    # low-rank log-determinants for 25 experiments on 50 nodes
    p, E = 50, 25
    sys_ = ExperimentSystem.from_sets(p, [sorted(rng.choice(p, 2, replace=False).tolist()) for _ in range(E)])
    B = gen_random_regular(p, 3, 0.5, 1)
    A = np.eye(p) - B
    L0 = np.linalg.cholesky(A.T @ A)
    ptr, idx = sys_.csr()
    yield "theta_logdets p=50 E=25", (lambda: kernels.theta_logdets_loops(L0, B, ptr, idx)), \
        (lambda: kernels.theta_logdets_numpy(L0, B, ptr, idx))

    S = np.array(sample_dataset(B, sys_, 100 * E, seed=0).covariances)
    yield "trace_corrections p=50 E=25", (lambda: kernels.trace_corrections_loops(S, A, ptr, idx)), \
        (lambda: kernels.trace_corrections_numpy(S, A, ptr, idx))

    # one proximal Theta step of the ADMM, p=10
    q = 10
    Bq = gen_random_regular(q, 2, 0.5, 2)
    Sq = sample_dataset(Bq, design_binary(q), 4000, seed=1).covariances[0]
    M = np.eye(q)
    yield "theta_prox p=10", (lambda: kernels.theta_prox_loops(Sq, M, 0.05, 1.0, M, 1e-6, 100, 20)), \
        (lambda: kernels.theta_prox_numpy(Sq, M, 0.05, 1.0, M, 1e-6, 100, 20))


def best_of(fn, repeat):
    fn()  # compile / warm caches
    number = max(1, int(0.2 / max(timeit.timeit(fn, number=1), 1e-7)))
    return min(timeit.repeat(fn, number=number, repeat=repeat)) / number


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--csv")
    args = ap.parse_args(argv)
    rows = []
    print(f"{'kernel':<30}{'numba [us]':>12}{'numpy [us]':>12}{'speedup':>9}")
    for name, fast, slow in cases(np.random.default_rng(args.seed)):
        tf, ts = best_of(fast, args.repeat), best_of(slow, args.repeat)
        rows.append((name, tf * 1e6, ts * 1e6, ts / tf))
        print(f"{name:<30}{tf * 1e6:>12.1f}{ts * 1e6:>12.1f}{ts / tf:>8.1f}x")
    if args.csv:
        with open(args.csv, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(("kernel", "numba_us", "numpy_us", "speedup"))
            w.writerows(rows)
    return 0


if __name__ == "__main__":
    sys.exit(main())
