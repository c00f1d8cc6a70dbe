"""Initial estimate: l1 penalty on the concentration matrices, solved by non-convex ADMM.

Splitting ``Theta_e = Theta_e(B)`` gives the scaled-form iteration

    Theta_e <- prox step on tr(S_e Theta) - logdet Theta + lam |Theta|_1
               + rho/2 |Theta - Theta_e(B) + Lambda_e|_F^2
    B       <- argmin_B sum_e |Theta_e - Theta_e(B) + Lambda_e|_F^2
    Lambda_e <- Lambda_e + Theta_e - Theta_e(B)

with the step size ``rho`` adjusted by residual balancing.
"""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize

from . import kernels
from .likelihood import LikelihoodWorkspace
from .model import ExperimentSystem, SolverReport

log = logging.getLogger(__name__)


@dataclass
class ProxOptions:
    tol: float = 1e-6
    max_newton: int = 100
    max_sweeps: int = 20


@dataclass
class BStepOptions:
    tol: float = 1e-6
    max_iter: int = 200
    memory: int = 10


@dataclass
class AdmmOptions:
    primal_tol: float = 1e-5
    dual_tol: float = 1e-5
    max_iter: int = 500
    rho0: float = 1.0
    rho_min: float = 1e-4
    rho_max: float = 1e6
    balance_ratio: float = 10.0
    balance_factor: float = 2.0
    divergence: float = 1e6
    prox: ProxOptions = field(default_factory=ProxOptions)
    bstep: BStepOptions = field(default_factory=BStepOptions)


@dataclass
class AdmmState:
    B: np.ndarray
    Theta: np.ndarray
    Lam: np.ndarray
    rho: float
    history: list[dict] = field(default_factory=list)


def theta_prox_subproblem(S, M, lam: float, rho: float, opts: ProxOptions | None = None, start=None):
    """Minimise ``tr(S T) - logdet T + lam |T|_1 + rho/2 |T - M|_F^2`` over symmetric PD ``T``.

    Proximal Newton: each Newton direction comes from coordinate descent on the
    l1-penalised quadratic model, followed by an Armijo backtracking search
    that also halves the step until the iterate is PD. ``rho = 0`` is allowed.

    Returns ``(Theta, info)`` with ``info`` holding the Newton iteration count,
    the minimum-norm subgradient and a status string.
    """
    opts = opts or ProxOptions()
    S = np.ascontiguousarray(S, dtype=float)
    M = np.ascontiguousarray(M, dtype=float)
    if rho < 0 or lam < 0:
        raise ValueError("rho and lam must be non-negative")
    if start is None:
        start = _pd_start(S, M, rho)
    T, it, sub, status = kernels.theta_prox_kernel(
        S, M, float(lam), float(rho), np.ascontiguousarray(start, dtype=float),
        float(opts.tol), int(opts.max_newton), int(opts.max_sweeps))
    T = 0.5 * (T + T.T)
    names = {kernels.PROX_CONVERGED: "converged", kernels.PROX_MAX_ITER: "max_iter",
             kernels.PROX_LINESEARCH_FAILED: "linesearch_failed"}
    return T, {"iterations": int(it), "subgradient": float(sub), "status": names[int(status)]}


def _pd_start(S, M, rho):
    p = S.shape[0]
    if rho > 0:
        Ms = 0.5 * (M + M.T)
        w = np.linalg.eigvalsh(Ms)
        if w[0] > 1e-8:
            return Ms
    d = np.diag(S).copy()
    d[d <= 1e-12] = 1.0
    return np.diag(1.0 / d) if p else np.eye(0)


def _b_objective(x, C, masks, p, offdiag):
    B = np.zeros((p, p))
    B[offdiag] = x
    A = np.eye(p)[None] - masks[:, :, None] * B[None]
    R = C - np.einsum("eki,ekj->eij", A, A)
    val = float(np.sum(R * R))
    # d/dB sum_e |C_e - A_e'A_e|^2 = 4 sum_e U_e A_e R_e
    G = 4.0 * np.einsum("ei,eij->ij", masks, A @ R)
    return val, G[offdiag]


def b_subproblem_objective(B, targets, system: ExperimentSystem):
    """``sum_e |C_e - Theta_e(B)|_F^2`` and its gradient, with ``C_e = Theta_e + Lambda_e``."""
    p = system.p
    offdiag = ~np.eye(p, dtype=bool)
    val, g = _b_objective(np.asarray(B, dtype=float)[offdiag], np.asarray(targets, dtype=float),
                          system.untouched_masks(), p, offdiag)
    G = np.zeros((p, p))
    G[offdiag] = g
    return val, G


def b_subproblem(thetas, lams, system: ExperimentSystem, B_start, opts: BStepOptions | None = None):
    """Local minimiser of ``sum_e |Theta_e - Theta_e(B) + Lambda_e|_F^2`` by L-BFGS from ``B_start``.

    Returns ``(B, info)``. The returned point never has a larger objective than
    ``B_start``.
    """
    opts = opts or BStepOptions()
    p = system.p
    offdiag = ~np.eye(p, dtype=bool)
    C = np.asarray(thetas, dtype=float) + np.asarray(lams, dtype=float)
    masks = system.untouched_masks()
    x0 = np.asarray(B_start, dtype=float)[offdiag]
    f0, g0 = _b_objective(x0, C, masks, p, offdiag)
    if np.linalg.norm(g0) <= opts.tol:
        return np.array(B_start, dtype=float), {"iterations": 0, "objective": f0, "grad_norm": float(np.linalg.norm(g0)),
                                              "status": "converged"}
    res = optimize.minimize(_b_objective, x0, args=(C, masks, p, offdiag), jac=True, method="L-BFGS-B",
                            options={"maxcor": opts.memory, "maxiter": opts.max_iter, "gtol": opts.tol,
                                     "ftol": 1e-15})
    x = res.x
    status = "converged" if res.success else "linesearch_failed" if "ABNORMAL" in str(res.message) else "max_iter"
    if res.fun > f0:
        x, fval, gn = x0, f0, float(np.linalg.norm(g0))
        status = "no_descent"
    else:
        fval, gn = float(res.fun), float(np.linalg.norm(res.jac))
    B = np.zeros((p, p))
    B[offdiag] = x
    return B, {"iterations": int(res.nit), "objective": fval, "grad_norm": gn, "status": status}


def thetas_of(B, system: ExperimentSystem) -> np.ndarray:
    A = np.eye(system.p)[None] - system.untouched_masks()[:, :, None] * np.asarray(B)[None]
    return np.einsum("eki,ekj->eij", A, A)


def init_objective(B, covariances, system: ExperimentSystem, lam: float, ws: LikelihoodWorkspace | None = None) -> float:
    """Penalised likelihood ``L(B) + lam * sum_e |Theta_e(B)|_1``."""
    ws = ws or LikelihoodWorkspace(covariances, system)
    val = ws.value(np.asarray(B, dtype=float))
    if not np.isfinite(val):
        return np.inf
    return val + lam * float(np.abs(thetas_of(B, system)).sum())


def random_triangular_start(p: int, rng: np.random.Generator, variance: float = 10.0) -> np.ndarray:
    """Strictly upper-triangular matrix with independent N(0, variance) entries."""
    B = np.triu(rng.normal(0.0, np.sqrt(variance), size=(p, p)), k=1)
    return B


def admm_init(covariances, system: ExperimentSystem, lam: float, opts: AdmmOptions | None = None,
              B_start=None, Theta_start=None, Lam_start=None, rho_start: float | None = None) -> SolverReport:
    """Initial estimate by non-convex ADMM.

    ``B_start`` defaults to zero, ``Theta_start`` to ``(S_e + 1e-6 I)^{-1}`` and
    the duals to zero. The returned report carries the final ADMM state in
    ``params["state"]`` so that a following lambda can be warm-started.
    """
    opts = opts or AdmmOptions()
    if lam < 0:
        raise ValueError("lambda must be non-negative")
    t_start = time.perf_counter()
    p, E = system.p, system.E
    S = np.asarray(covariances, dtype=float)
    ws = LikelihoodWorkspace(S, system)
    B = np.zeros((p, p)) if B_start is None else np.array(B_start, dtype=float)
    np.fill_diagonal(B, 0.0)
    if Theta_start is None:
        Theta = np.array([_sym(np.linalg.inv(S[k] + 1e-6 * np.eye(p))) for k in range(E)])
    else:
        Theta = np.array(Theta_start, dtype=float)
    Lam = np.zeros((E, p, p)) if Lam_start is None else np.array(Lam_start, dtype=float)
    rho = float(opts.rho0 if rho_start is None else rho_start)
    rho = min(max(rho, opts.rho_min), opts.rho_max)

    TB = thetas_of(B, system)
    history = []
    best_B, best_obj = B.copy(), init_objective(B, S, system, lam, ws)
    flags = []
    converged = False
    it = 0
    for it in range(1, opts.max_iter + 1):
        prox_status = []
        for k in range(E):
            Theta[k], info = theta_prox_subproblem(S[k], TB[k] - Lam[k], lam, rho, opts.prox, start=Theta[k])
            prox_status.append(info["status"])
        B_prev, TB_prev = B, TB
        B, binfo = b_subproblem(Theta, Lam, system, B_prev, opts.bstep)
        TB = thetas_of(B, system)
        diff = Theta - TB
        Lam = Lam + diff
        primal = float(np.sqrt(np.sum(diff ** 2)))
        dual = rho * float(np.sqrt(np.sum((TB - TB_prev) ** 2)))
        primal_max = float(np.max(np.sqrt(np.sum(diff ** 2, axis=(1, 2)))))
        step = float(np.linalg.norm(B - B_prev))
        obj = init_objective(B, S, system, lam, ws)
        history.append({"iter": it, "objective": obj, "primal_residual": primal_max, "dual_residual": step,
                        "rho": rho, "wall_time_ms": 1e3 * (time.perf_counter() - t_start)})
        if np.isfinite(obj) and obj < best_obj:
            best_B, best_obj = B.copy(), obj
        if any(s != "converged" for s in prox_status) and "prox_inexact" not in flags:
            flags.append("prox_inexact")
        if not np.isfinite(primal) or primal > opts.divergence:
            flags.append("diverged")
            log.warning("ADMM diverged at iteration %d (residual %.3g)", it, primal)
            break
        if primal_max <= opts.primal_tol and step <= opts.dual_tol:
            converged = True
            break
        # residual balancing; the scaled dual is rescaled with rho
        new_rho = rho
        if primal > opts.balance_ratio * dual:
            new_rho = min(rho * opts.balance_factor, opts.rho_max)
        elif dual > opts.balance_ratio * primal:
            new_rho = max(rho / opts.balance_factor, opts.rho_min)
        if new_rho != rho:
            Lam *= rho / new_rho
            rho = new_rho
    if not converged and "diverged" not in flags:
        flags.append("max_iter")
    final_obj = init_objective(B, S, system, lam, ws)
    # the last iterate is returned when it is as good as the best seen
    if converged or not np.isfinite(best_obj) or (np.isfinite(final_obj) and final_obj <= best_obj):
        out = B
    else:
        out = best_B
    state = AdmmState(B=B.copy(), Theta=Theta.copy(), Lam=Lam.copy(), rho=rho, history=history)
    return SolverReport(
        estimate=out.copy(),
        converged=converged,
        iterations=it,
        trace=history,
        params={"lambda_init": lam, "rho_final": rho, "primal_tol": opts.primal_tol, "dual_tol": opts.dual_tol,
                "max_iter": opts.max_iter, "state": state},
        flags=flags,
        wall_time_ms=1e3 * (time.perf_counter() - t_start),
    )


def _sym(A):
    return 0.5 * (A + A.T)


def admm_path(covariances, system: ExperimentSystem, grid, opts: AdmmOptions | None = None, B_start=None):
    """ADMM along a decreasing lambda grid, each run warm-started from the previous state."""
    grid = [float(x) for x in grid]
    if not grid:
        raise ValueError("empty lambda grid")
    out = []
    state = None
    for lam in grid:
        if state is None:
            rep = admm_init(covariances, system, lam, opts, B_start=B_start)
        else:
            rep = admm_init(covariances, system, lam, opts, B_start=state.B, Theta_start=state.Theta,
                            Lam_start=state.Lam, rho_start=state.rho)
        state = rep.params["state"]
        out.append((lam, rep))
    return out
