"""Sparse linear cyclic structural equation models estimated from interventional Gaussian data."""
from ._accel import USE_NUMBA
from .admm import AdmmOptions, admm_init, admm_path, b_subproblem, theta_prox_subproblem
from .alm import AlmOptions, alm_refine
from .bench import (BenchConfig, frobenius_error, gen_disconnected_cliques, gen_random_regular,
                    load_adjacency_csv, oracle_select, run_benchmark, vg_packing)
from .design import (DesignKind, design_binary, design_bounded, design_single_node, is_completely_separating,
                     redundancy)
from .diagnostics import IdentifiabilityReport, identifiability_rank, kl_gaussian, theta_jacobian
from .likelihood import LikelihoodWorkspace, fast_chol_theta, neg_log_likelihood, nll_gradient
from .llc import RowSystem, assemble_row_system, estimate_llc, lambda_path, lasso_cd
from .model import (DatasetBundle, Experiment, ExperimentSystem, MatrixClassSpec, ModelError, SolverReport,
                    empirical_covariances, sample_dataset, sigma_of, theta_of, validate_membership)

__version__ = "0.1.0"
