import numpy as np
import pytest

from cyclic_sem.design import design_binary
from cyclic_sem.likelihood import LikelihoodWorkspace, fast_chol_theta, neg_log_likelihood, nll_gradient
from cyclic_sem.model import Experiment, ExperimentSystem, population_covariances, sample_dataset, theta_of

from conftest import central_diff, random_structure, random_system


def test_identity_covariances():
    sys = ExperimentSystem.from_sets(4, [[0], [1, 2], []])
    covs = [np.eye(4)] * 3
    assert neg_log_likelihood(np.zeros((4, 4)), covs, sys) == pytest.approx(12.0, abs=1e-12)


def test_value_at_population_covariances():
    B = random_structure(6, 2, 0.5, 0)
    sys = design_binary(6)
    covs = population_covariances(B, sys)
    expect = sum(6 + np.linalg.slogdet(S)[1] for S in covs)
    assert neg_log_likelihood(B, covs, sys) == pytest.approx(expect, rel=1e-12)


def test_fast_matches_naive(rng):
    for trial in range(100):
        p = 12
        B = random_structure(p, 2, 0.3, trial)
        sys = random_system(p, rng, max_size=3)
        covs = sample_dataset(B, sys, 50 * sys.E, seed=trial).covariances
        a = neg_log_likelihood(B, covs, sys, fast=False)
        b = neg_log_likelihood(B, covs, sys, fast=True)
        assert abs(a - b) <= 1e-9 * abs(a)


def test_singular_gives_inf():
    B = np.array([[0, 1.0], [1.0, 0]])
    sys = ExperimentSystem.from_sets(2, [[]])
    for fast in (False, True):
        assert neg_log_likelihood(B, [np.eye(2)], sys, fast=fast) == np.inf
    with pytest.raises(ValueError):
        nll_gradient(B, [np.eye(2)], sys)


def test_gradient_zero_at_population_optimum():
    B = random_structure(7, 2, 0.5, 1)
    sys = design_binary(7)
    G = nll_gradient(B, population_covariances(B, sys), sys)
    assert np.abs(G).max() <= 1e-9
    assert np.all(np.diag(G) == 0)


@pytest.mark.parametrize("p", [4, 6])
def test_gradient_finite_differences(p, rng):
    for seed in range(10):
        B = random_structure(p, 2, 0.4, seed)
        sys = random_system(p, rng)
        covs = sample_dataset(random_structure(p, 2, 0.4, seed + 100), sys, 40 * sys.E, seed=seed).covariances
        off = ~np.eye(p, dtype=bool)

        def f(x):
            M = np.zeros((p, p))
            M[off] = x
            return neg_log_likelihood(M, covs, sys)

        fd = central_diff(f, B[off], 1e-5)
        g = nll_gradient(B, covs, sys)[off]
        assert np.linalg.norm(g - fd) <= 1e-5 * max(1.0, np.linalg.norm(fd))


def test_fast_factor_cases(rng):
    p = 20
    B = random_structure(p, 3, 0.5, 3)
    A = np.eye(p) - B
    L0 = np.linalg.cholesky(A.T @ A)
    L, fb = fast_chol_theta(B, Experiment.from_intervened(p, []), L0)
    assert np.array_equal(L, L0) and not fb
    L, fb = fast_chol_theta(B, Experiment.from_intervened(p, range(p)), L0)
    assert np.allclose(L, np.eye(p), atol=1e-9)
    for _ in range(10):
        e = Experiment.from_intervened(p, rng.choice(p, 3, replace=False))
        L, fb = fast_chol_theta(B, e, L0)
        direct = np.linalg.cholesky(theta_of(B, e))
        assert abs(2 * np.log(np.diag(L)).sum() - 2 * np.log(np.diag(direct)).sum()) <= 1e-9
        assert np.allclose(L, direct, rtol=1e-9, atol=1e-12)


def test_global_optimum_on_slice():
    # population covariances: no point on a 2-parameter slice beats the truth
    p = 4
    B = random_structure(p, 2, 0.5, 6)
    sys = design_binary(p)
    covs = population_covariances(B, sys)
    best = neg_log_likelihood(B, covs, sys)
    (i1, j1), (i2, j2) = [(0, 1), (2, 3)]
    for a in np.linspace(-0.4, 0.4, 21):
        for b in np.linspace(-0.4, 0.4, 21):
            M = B.copy()
            M[i1, j1] += a
            M[i2, j2] += b
            assert neg_log_likelihood(M, covs, sys) >= best - 1e-12


def test_workspace_caches_base_factor():
    B = random_structure(5, 2, 0.5, 0)
    sys = design_binary(5)
    ws = LikelihoodWorkspace(population_covariances(B, sys), sys)
    L1 = ws.base_factor(B)
    assert ws.base_factor(B.copy()) is L1
    assert ws.base_factor(0.5 * B) is not L1
