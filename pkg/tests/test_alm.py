import numpy as np
import pytest

from cyclic_sem.admm import admm_init, random_triangular_start
from cyclic_sem.alm import alm_refine, oracle_radius
from cyclic_sem.design import design_binary
from cyclic_sem.model import population_covariances, sample_dataset

from conftest import random_structure


@pytest.fixture
def problem():
    B = random_structure(6, 2, 0.5, 8)
    sys = design_binary(6)
    bundle = sample_dataset(B, sys, 6000, seed=1)
    B_init = admm_init(bundle.covariances, sys, 0.01).estimate
    return B, sys, bundle.covariances, B_init


def test_zero_radius_returns_center(problem):
    _, sys, covs, B_init = problem
    rep = alm_refine(covs, sys, B_init, 0.0, 0.1)
    assert np.array_equal(rep.estimate, B_init)


def test_ball_constraint_holds(problem):
    B, sys, covs, B_init = problem
    for R in (1e-3, 0.05, 0.3):
        for lam in (0.0, 0.01, 1.0):
            rep = alm_refine(covs, sys, B_init, R, lam)
            assert np.linalg.norm(rep.estimate - B_init) <= R + 1e-6
            assert np.all(np.diag(rep.estimate) == 0)


def test_huge_lambda_shrinks_to_zero(problem):
    _, sys, covs, B_init = problem
    R = 2 * np.linalg.norm(B_init)
    rep = alm_refine(covs, sys, B_init, R, 1e6)
    assert np.abs(rep.estimate).max() <= 1e-6


def test_refine_does_not_increase_objective(problem):
    from cyclic_sem.alm import loc_objective
    from cyclic_sem.likelihood import LikelihoodWorkspace
    B, sys, covs, B_init = problem
    ws = LikelihoodWorkspace(covs, sys)
    R = oracle_radius(B_init, B)
    rep = alm_refine(covs, sys, B_init, R, 0.01)
    assert loc_objective(rep.estimate, ws, 0.01) <= loc_objective(B_init, ws, 0.01) + 1e-9
    assert rep.trace and set(rep.trace[0]) == {"iter", "objective", "primal_residual", "dual_residual", "rho",
                                               "wall_time_ms"}


def test_unconstrained_mode_reaches_population_optimum():
    B = random_structure(5, 2, 0.5, 2)
    sys = design_binary(5)
    start = random_triangular_start(5, np.random.default_rng(0))
    rep = alm_refine(population_covariances(B, sys), sys, np.zeros((5, 5)), np.inf, 0.0, B_start=start)
    # a stationary point; from a strictly triangular start the likelihood is finite throughout
    assert np.isfinite(rep.trace[-1]["objective"])


def test_invalid_arguments(problem):
    _, sys, covs, B_init = problem
    with pytest.raises(ValueError):
        alm_refine(covs, sys, B_init, -1.0, 0.1)
    with pytest.raises(ValueError):
        alm_refine(covs, sys, B_init, 1.0, -0.1)
