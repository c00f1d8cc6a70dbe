"""The compiled kernels and their numpy twins must agree."""
import numpy as np
import pytest

from cyclic_sem import kernels
from cyclic_sem.design import design_binary

from conftest import random_structure


def test_lasso_twins(rng):
    T = rng.standard_normal((25, 9))
    t = rng.standard_normal(25)
    G, c = T.T @ T, T.T @ t
    for lam in (0.0, 0.3, 3.0):
        a = kernels.lasso_cd_loops(G, c, lam, np.zeros(9), 1e-10, 10**5)
        b = kernels.lasso_cd_numpy(G, c, lam, np.zeros(9), 1e-10, 10**5)
        assert np.allclose(a[0], b[0], atol=1e-9)
        assert a[2] <= 1e-10 and b[2] <= 1e-10


@pytest.mark.parametrize("sign", [1.0, -1.0])
def test_rank_one_twins(sign, rng):
    X = rng.standard_normal((8, 8))
    A = X @ X.T + 8 * np.eye(8)
    x = 0.5 * rng.standard_normal(8)
    L = np.linalg.cholesky(A)
    La, Lb = L.copy(), L.copy()
    assert kernels.chol_rank1_loops(La, x.copy(), sign)
    assert kernels.chol_rank1_numpy(Lb, x.copy(), sign)
    expect = np.linalg.cholesky(A + sign * np.outer(x, x))
    assert np.allclose(La, expect, atol=1e-12) and np.allclose(Lb, expect, atol=1e-12)


def test_downdate_failure_reported():
    L = np.eye(3)
    assert not kernels.chol_rank1_loops(L.copy(), np.array([2.0, 0, 0]), -1.0)
    assert not kernels.chol_rank1_numpy(L.copy(), np.array([2.0, 0, 0]), -1.0)


def test_logdet_and_trace_twins(rng):
    p = 15
    B = random_structure(p, 3, 0.4, 1)
    sys = design_binary(p)
    ptr, idx = sys.csr()
    A = np.eye(p) - B
    L0 = np.linalg.cholesky(A.T @ A)
    S = np.array([np.cov(rng.standard_normal((p, 40))) for _ in range(sys.E)])
    la, oka = kernels.theta_logdets_loops(L0, B, ptr, idx)
    lb, okb = kernels.theta_logdets_numpy(L0, B, ptr, idx)
    assert oka.all() and okb.all() and np.allclose(la, lb, rtol=1e-12)
    ta = kernels.trace_corrections_loops(S, A, ptr, idx)
    tb = kernels.trace_corrections_numpy(S, A, ptr, idx)
    assert np.allclose(ta, tb, rtol=1e-12)


def test_prox_twins(rng):
    X = rng.standard_normal((60, 6))
    S = X.T @ X / 60
    M = np.eye(6) + 0.05 * np.ones((6, 6))
    T0 = np.eye(6)
    a = kernels.theta_prox_loops(S, M, 0.1, 2.0, T0, 1e-9, 100, 20)
    b = kernels.theta_prox_numpy(S, M, 0.1, 2.0, T0, 1e-9, 100, 20)
    assert a[3] == kernels.PROX_CONVERGED and b[3] == kernels.PROX_CONVERGED
    assert np.allclose(a[0], b[0], atol=1e-8)


def test_flag_selects_implementation():
    from cyclic_sem._accel import USE_NUMBA
    expect = kernels.lasso_cd_loops if USE_NUMBA else kernels.lasso_cd_numpy
    assert kernels.lasso_cd_kernel is expect


def test_numpy_fallback_flag():
    # a fresh interpreter with the flag set must run the numpy twins and agree
    import os
    import subprocess
    import sys
    code = (
        "import numpy as np, cyclic_sem\n"
        "from cyclic_sem.bench import gen_random_regular\n"
        "from cyclic_sem.design import design_binary\n"
        "from cyclic_sem.likelihood import LikelihoodWorkspace\n"
        "from cyclic_sem.model import sample_dataset\n"
        "B = gen_random_regular(8, 2, 0.5, 3)\n"
        "ds = sample_dataset(B, design_binary(8), 2000, seed=4)\n"
        "ws = LikelihoodWorkspace(ds.covariances, ds.system)\n"
        "print(cyclic_sem.USE_NUMBA, repr(ws.value(B, fast=True)))\n"
    )
    outs = {}
    for flag in ("0", "1"):
        env = dict(os.environ, CYCLIC_SEM_DISABLE_NUMBA=flag)
        res = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
        used, val = res.stdout.split()
        outs[flag] = (used, float(val))
    assert outs["1"][0] == "False"
    assert np.isclose(outs["0"][1], outs["1"][1], rtol=1e-10)
