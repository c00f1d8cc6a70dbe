"""LLC moment estimator: per-node linear systems solved by l1-penalised least squares."""
from __future__ import annotations

import logging
import time
import warnings
from dataclasses import dataclass

import numpy as np

from . import kernels
from .design import is_completely_separating
from .model import DatasetBundle, ExperimentSystem, SolverReport

log = logging.getLogger(__name__)


class NoRowsError(ValueError):
    """The node is intervened on in every experiment, so its row has no equations."""


@dataclass
class RowSystem:
    node: int
    rows: np.ndarray
    rhs: np.ndarray
    row_tags: list[tuple[int, int]]

    @property
    def m(self) -> int:
        return self.rows.shape[0]


@dataclass
class LassoOptions:
    tol: float = 1e-8
    max_iter: int = 100_000


@dataclass
class LassoResult:
    coef: np.ndarray
    iterations: int
    kkt_residual: float
    converged: bool


def assemble_row_system(covariances, system: ExperimentSystem, i: int, exact_interventions: bool = True) -> RowSystem:
    """Build ``(T_i, t_i)``: one row per experiment ``e`` with ``i`` untouched and each ``j`` intervened.

    Row ``(e, j)`` is ``e_j'(J_e + Sigma^e U_e)`` with column ``i`` removed,
    and its right-hand side is ``Sigma^e[j, i]``. With ``exact_interventions``
    the entries on intervened columns are the known constants (1 at ``j``, 0
    elsewhere); otherwise they are read from ``Sigma^e``.
    """
    p = system.p
    if not 0 <= i < p:
        raise IndexError(f"node {i} out of range for p={p}")
    cols = np.array([c for c in range(p) if c != i])
    rows, rhs, tags = [], [], []
    for k, e in enumerate(system):
        if i in e.intervened:
            continue
        S = np.asarray(covariances[k], dtype=float)
        u = e.untouched_mask()
        for j in e.intervened:
            if exact_interventions:
                full = S[j] * u
                full[j] = 1.0
            else:
                full = S[j].copy()
            rows.append(full[cols])
            rhs.append(S[j, i])
            tags.append((k, j))
    if not rows:
        raise NoRowsError(f"node {i} is never untouched; no equations for its row")
    return RowSystem(i, np.array(rows), np.array(rhs), tags)


def lasso_objective(T, t, lam, b) -> float:
    r = T @ b - t
    return float(r @ r + lam * np.abs(b).sum())


def lasso_cd(T, t, lam: float, opts: LassoOptions | None = None, start=None) -> LassoResult:
    """Cyclic coordinate descent for ``|T b - t|^2 + lam |b|_1``.

    Coordinates are visited in ascending order. Columns with norm below
    ``1e-14`` keep a zero coefficient.
    """
    opts = opts or LassoOptions()
    if lam < 0:
        raise ValueError("lambda must be non-negative")
    T = np.asarray(T, dtype=float)
    t = np.asarray(t, dtype=float)
    if not (np.all(np.isfinite(T)) and np.all(np.isfinite(t))):
        raise ValueError("non-finite design or response")
    G = T.T @ T
    c = T.T @ t
    b0 = np.zeros(T.shape[1]) if start is None else np.array(start, dtype=float)
    b, it, kkt = kernels.lasso_cd_kernel(G, c, float(lam), b0, float(opts.tol), int(opts.max_iter))
    return LassoResult(np.asarray(b), int(it), float(kkt), bool(kkt <= opts.tol))


def lambda_max(bundle_or_covs, system: ExperimentSystem | None = None) -> float:
    """Smallest shared lambda at which every row estimate is zero."""
    if isinstance(bundle_or_covs, DatasetBundle):
        covs, system = bundle_or_covs.covariances, bundle_or_covs.system
    else:
        covs = bundle_or_covs
    best = 0.0
    for i in range(system.p):
        try:
            rs = assemble_row_system(covs, system, i)
        except NoRowsError:
            continue
        best = max(best, 2.0 * float(np.abs(rs.rows.T @ rs.rhs).max(initial=0.0)))
    return best


def _scatter(B, i, b):
    p = B.shape[0]
    B[i, np.arange(p) != i] = b


def _solve_rows(covs, system, lam, opts, exact, starts=None):
    p = system.p
    B = np.zeros((p, p))
    per_row = []
    for i in range(p):
        try:
            rs = assemble_row_system(covs, system, i, exact_interventions=exact)
        except NoRowsError as exc:
            per_row.append({"row": i, "iterations": 0, "kkt_residual": float("nan"),
                            "converged": False, "n_rows": 0, "error": str(exc)})
            continue
        start = None if starts is None else starts[i, np.arange(p) != i]
        try:
            res = lasso_cd(rs.rows, rs.rhs, lam, opts, start=start)
        except Exception as exc:  # keep the other rows going
            log.warning("row %d failed: %s", i, exc)
            per_row.append({"row": i, "iterations": 0, "kkt_residual": float("nan"),
                            "converged": False, "n_rows": rs.m, "error": str(exc)})
            continue
        _scatter(B, i, res.coef)
        per_row.append({"row": i, "iterations": res.iterations, "kkt_residual": res.kkt_residual,
                        "converged": res.converged, "n_rows": rs.m, "error": ""})
    return B, per_row


def estimate_llc(bundle: DatasetBundle, lam: float, opts: LassoOptions | None = None,
                 exact_interventions: bool = True, warn: bool = True) -> SolverReport:
    """LLC estimate with one ``lam`` shared across all rows."""
    opts = opts or LassoOptions()
    if warn:
        ok, pair = is_completely_separating(bundle.system)
        if not ok:
            warnings.warn(f"experiment system is not completely separating (pair {pair})", stacklevel=2)
    t0 = time.perf_counter()
    B, per_row = _solve_rows(bundle.covariances, bundle.system, lam, opts, exact_interventions)
    flags = [f"row{r['row']}:{'norows' if r['n_rows'] == 0 else 'failed' if r['error'] else 'maxiter'}"
             for r in per_row if not r["converged"]]
    return SolverReport(
        estimate=B,
        converged=not flags,
        iterations=int(sum(r["iterations"] for r in per_row)),
        trace=per_row,
        params={"lambda": lam, "tol": opts.tol, "max_iter": opts.max_iter},
        flags=flags,
        wall_time_ms=1e3 * (time.perf_counter() - t0),
    )


def llc_objective(bundle: DatasetBundle, B, lam: float) -> float:
    """Sum over rows of the penalised least-squares objectives at ``B``."""
    p = bundle.p
    total = 0.0
    for i in range(p):
        try:
            rs = assemble_row_system(bundle.covariances, bundle.system, i)
        except NoRowsError:
            continue
        total += lasso_objective(rs.rows, rs.rhs, lam, np.asarray(B)[i, np.arange(p) != i])
    return total


def lambda_path(bundle: DatasetBundle, grid, opts: LassoOptions | None = None, metric=None):
    """Solve along a strictly decreasing ``grid``, warm-starting each row from the previous lambda.

    Returns ``(lam, B_hat, metric(B_hat))`` triples; the metric slot is None
    when no ``metric`` callable is given.
    """
    grid = [float(x) for x in grid]
    if not grid:
        raise ValueError("empty lambda grid")
    if any(b >= a for a, b in zip(grid, grid[1:])):
        raise ValueError("lambda grid must be strictly decreasing")
    opts = opts or LassoOptions()
    out = []
    prev = None
    for lam in grid:
        B, _ = _solve_rows(bundle.covariances, bundle.system, lam, opts, True, starts=prev)
        out.append((lam, B, metric(B) if metric is not None else None))
        prev = B
    return out
