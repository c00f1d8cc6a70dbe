"""Local refinement: l1-penalised likelihood inside a Frobenius ball around the initial estimate.

The ball constraint ``|B - B0|_F^2 <= R^2`` becomes ``u - |B - B0|_F^2 = 0``
with a slack ``u`` in ``[0, R^2]``. The augmented Lagrangian in ``(B+, B-, u)``

    L(B) + lam * sum(B+ + B-) + y c + rho/2 c^2,   c = u - |B - B0|_F^2,
    B = B+ - B-,  B+, B- >= 0,

is minimised by L-BFGS-B, then ``y <- y + rho c``.
"""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass

import numpy as np
from scipy import optimize

from .likelihood import LikelihoodWorkspace
from .model import ExperimentSystem, SolverReport

log = logging.getLogger(__name__)

# objective value used where some I - U_e B is singular
_BLOWUP = 1e20


@dataclass
class AlmOptions:
    max_outer: int = 30
    constraint_tol: float = 1e-10
    rho0: float = 10.0
    rho_growth: float = 10.0
    rho_max: float = 1e10
    inner_tol: float = 1e-7
    inner_max_iter: int = 2000
    memory: int = 10
    fast_likelihood: bool = False


def loc_objective(B, ws: LikelihoodWorkspace, lam: float, fast: bool = False) -> float:
    val = ws.value(np.asarray(B, dtype=float), fast=fast)
    return val + lam * float(np.abs(B).sum())


class _Problem:
    def __init__(self, ws, lam, B0, offdiag):
        self.ws = ws
        self.lam = lam
        self.B0 = B0
        self.off = offdiag
        self.p = B0.shape[0]
        self.m = int(offdiag.sum())

    def unpack(self, x):
        B = np.zeros((self.p, self.p))
        B[self.off] = x[:self.m] - x[self.m:2 * self.m]
        return B

    def pack(self, B, u):
        b = B[self.off]
        return np.concatenate([np.maximum(b, 0.0), np.maximum(-b, 0.0), [u]])

    def fun(self, x, y, rho, ball):
        B = self.unpack(x)
        val, G = self.ws.value_and_grad(B)
        if G is None:
            return _BLOWUP, np.zeros_like(x)
        g = G[self.off]
        f = val + self.lam * float(x[:2 * self.m].sum())
        grad = np.empty_like(x)
        gu = 0.0
        if ball:
            D = B - self.B0
            c = x[-1] - float(np.sum(D * D))
            mult = y + rho * c
            f += y * c + 0.5 * rho * c * c
            g = g - 2.0 * mult * D[self.off]
            gu = mult
        grad[:self.m] = g + self.lam
        grad[self.m:2 * self.m] = -g + self.lam
        grad[-1] = gu
        return f, grad


def _project_ball(B, B0, R):
    D = B - B0
    nrm = float(np.linalg.norm(D))
    if nrm <= R:
        return B, False
    return B0 + D * (R / nrm), True


def alm_refine(covariances, system: ExperimentSystem, B_init, R_loc: float, lam: float,
               opts: AlmOptions | None = None, B_start=None) -> SolverReport:
    """Penalised likelihood minimised over ``|B - B_init|_F <= R_loc``.

    ``R_loc = inf`` drops the constraint (one bound-constrained solve from
    ``B_start``). ``B_start`` defaults to ``B_init``.
    """
    opts = opts or AlmOptions()
    if not R_loc >= 0:
        raise ValueError("radius must be non-negative")
    if lam < 0:
        raise ValueError("lambda must be non-negative")
    t_start = time.perf_counter()
    p = system.p
    B0 = np.array(B_init, dtype=float)
    np.fill_diagonal(B0, 0.0)
    ws = LikelihoodWorkspace(covariances, system)
    params = {"lambda_loc": lam, "radius": R_loc}
    if R_loc == 0.0:
        obj = loc_objective(B0, ws, lam, opts.fast_likelihood)
        return SolverReport(B0.copy(), True, 0,
                            [{"iter": 0, "objective": obj, "primal_residual": 0.0, "dual_residual": 0.0,
                              "rho": 0.0, "wall_time_ms": 0.0}], params, [], 0.0)
    ball = np.isfinite(R_loc)
    off = ~np.eye(p, dtype=bool)
    prob = _Problem(ws, lam, B0, off)
    start = B0 if B_start is None else np.array(B_start, dtype=float)
    if ball:
        start, _ = _project_ball(start, B0, R_loc)
    R2 = R_loc ** 2 if ball else 0.0
    u0 = min(float(np.sum((start - B0) ** 2)), R2)
    x = prob.pack(start, u0)
    bounds = [(0.0, None)] * (2 * prob.m) + [(0.0, R2)]
    y, rho = 0.0, opts.rho0
    history, flags = [], []
    converged = False
    prev_violation = np.inf
    outer = 0
    for outer in range(1, (opts.max_outer if ball else 1) + 1):
        res = optimize.minimize(prob.fun, x, args=(y, rho, ball), jac=True, method="L-BFGS-B", bounds=bounds,
                                options={"maxcor": opts.memory, "maxiter": opts.inner_max_iter,
                                         "gtol": opts.inner_tol, "ftol": 1e-15})
        if res.fun <= prob.fun(x, y, rho, ball)[0] + 1e-12 * max(1.0, abs(res.fun)):
            x = res.x
        elif "inner_failed" not in flags:
            flags.append("inner_failed")
        B = prob.unpack(x)
        pg = _projected_grad_norm(x, res.jac, bounds)
        violation = abs(x[-1] - float(np.sum((B - B0) ** 2))) if ball else 0.0
        history.append({"iter": outer, "objective": loc_objective(B, ws, lam, opts.fast_likelihood),
                        "primal_residual": violation, "dual_residual": pg, "rho": rho,
                        "wall_time_ms": 1e3 * (time.perf_counter() - t_start)})
        # L-BFGS-B reports an abnormal line search once it hits round-off; only
        # flag it while the projected gradient is still large
        if not res.success and pg > 1e-4 and "inner_linesearch" not in flags:
            flags.append("inner_linesearch")
        if not ball:
            converged = bool(res.success) or pg <= 10 * opts.inner_tol
            break
        if violation <= opts.constraint_tol:
            converged = True
            break
        y += rho * (x[-1] - float(np.sum((B - B0) ** 2)))
        if violation > 0.25 * prev_violation:
            rho = min(rho * opts.rho_growth, opts.rho_max)
        prev_violation = violation
    B = prob.unpack(x)
    if ball:
        B, projected = _project_ball(B, B0, R_loc)
        if projected and np.linalg.norm(B - prob.unpack(x)) > 1e-8:
            flags.append("projected")
    if not converged:
        flags.append("max_outer")
    return SolverReport(
        estimate=B,
        converged=converged,
        iterations=outer,
        trace=history,
        params={**params, "rho_final": rho, "multiplier": y},
        flags=flags,
        wall_time_ms=1e3 * (time.perf_counter() - t_start),
    )


def _projected_grad_norm(x, g, bounds):
    g = np.asarray(g, dtype=float)
    lo = np.array([b[0] if b[0] is not None else -np.inf for b in bounds])
    hi = np.array([b[1] if b[1] is not None else np.inf for b in bounds])
    step = np.clip(x - g, lo, hi) - x
    return float(np.linalg.norm(step))


def oracle_radius(B_init, B_true) -> float:
    """Radius set to twice the distance of the initial estimate from the truth."""
    return 2.0 * float(np.linalg.norm(np.asarray(B_init) - np.asarray(B_true)))
