"""KL divergence between Gaussian laws and a local identifiability rank test."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .design import separation_counts
from .model import ExperimentSystem, check_structure

VERDICTS = ("identifiable_locally", "non_identifiable", "inconclusive")


def _chol(T, name):
    T = np.asarray(T, dtype=float)
    if T.ndim != 2 or T.shape[0] != T.shape[1]:
        raise ValueError(f"{name} must be square")
    if not np.allclose(T, T.T, rtol=1e-10, atol=1e-12):
        raise ValueError(f"{name} is not symmetric")
    try:
        return T, np.linalg.cholesky(T)
    except np.linalg.LinAlgError as exc:
        raise ValueError(f"{name} is not positive definite") from exc


def kl_gaussian(theta1, theta2) -> float:
    """KL divergence from N(0, theta1^{-1}) to N(0, theta2^{-1}), both given by concentration matrices."""
    T1, L1 = _chol(theta1, "theta1")
    T2, L2 = _chol(theta2, "theta2")
    if T1.shape != T2.shape:
        raise ValueError("shape mismatch")
    if np.array_equal(T1, T2):
        return 0.0
    # tr(T1^{-1} (T2 - T1)) through the factor of T1
    X = np.linalg.solve(L1, T2 - T1)
    tr = float(np.trace(np.linalg.solve(L1.T, X)))
    logdet1 = 2.0 * np.log(np.diag(L1)).sum()
    logdet2 = 2.0 * np.log(np.diag(L2)).sum()
    return max(0.0, 0.5 * (tr - logdet2 + logdet1))


def offdiag_pairs(p: int) -> list[tuple[int, int]]:
    return [(r, s) for r in range(p) for s in range(p) if r != s]


def theta_jacobian(B, system: ExperimentSystem) -> np.ndarray:
    """Derivative of ``B -> (Theta_e(B))_e`` as an ``(E p^2) x (p^2 - p)`` matrix.

    Rows are experiment-major, each block the row-major vectorisation of a
    ``p x p`` matrix; columns follow the off-diagonal pairs ``(r, s)`` in
    lexicographic order.
    """
    B = check_structure(B)
    p = system.p
    if B.shape[0] != p:
        raise ValueError("B and system disagree on p")
    pairs = offdiag_pairs(p)
    J = np.zeros((system.E, p, p, len(pairs)))
    for k, e in enumerate(system):
        u = e.untouched_mask()
        A = np.eye(p) - u[:, None] * B
        for c, (r, s) in enumerate(pairs):
            if u[r] == 0.0:
                continue
            # -A' U E_rs - (U E_rs)' A = -(a_r e_s' + e_s a_r'), a_r = row r of A
            J[k, :, s, c] -= A[r]
            J[k, s, :, c] -= A[r]
    return J.reshape(system.E * p * p, len(pairs))


def doubly_unseparated_pairs(system: ExperimentSystem) -> list[tuple[int, int]]:
    """Pairs ``i < j`` that no experiment separates in either direction."""
    C = separation_counts(system)
    p = system.p
    return [(i, j) for i in range(p) for j in range(i + 1, p) if C[i, j] == 0 and C[j, i] == 0]


def m_bound(system: ExperimentSystem) -> int:
    """Dimension count bounding the rank of the Jacobian."""
    p = system.p
    sep = np.zeros((p, p), dtype=bool)
    both = np.zeros((p, p), dtype=bool)
    for e in system:
        u = e.untouched_mask().astype(bool)
        sep |= np.outer(u, ~u)
        both |= np.outer(u, u)
    np.fill_diagonal(sep, False)
    return int(sep.sum()) + int(np.triu(both, k=1).sum()) + p


@dataclass
class IdentifiabilityReport:
    p: int
    E: int
    system_sizes: list[int]
    m_bound: int
    numeric_rank: int
    ambient_dim: int
    verdict: str
    tol: float
    singular_values: np.ndarray = field(repr=False, default_factory=lambda: np.zeros(0))
    seed: int | None = None
    unseparated_pairs: list[tuple[int, int]] = field(default_factory=list)

    def as_text(self) -> str:
        lines = [
            f"p = {self.p}",
            f"E = {self.E}",
            f"intervention_sizes = {','.join(map(str, self.system_sizes))}",
            f"m_bound = {self.m_bound}",
            f"numeric_rank = {self.numeric_rank}",
            f"ambient_dim = {self.ambient_dim}",
            f"tol = {self.tol:g}",
            f"verdict = {self.verdict}",
        ]
        if self.unseparated_pairs:
            lines.append("unseparated_pairs = " + " ".join(f"{i}-{j}" for i, j in self.unseparated_pairs))
        if self.seed is not None:
            lines.append(f"seed = {self.seed}")
        return "\n".join(lines) + "\n"


def identifiability_rank(B, system: ExperimentSystem, tol: float = 1e-8, band: float = 100.0,
                         seed: int | None = None) -> IdentifiabilityReport:
    """Numeric rank of :func:`theta_jacobian` and the resulting local identifiability verdict.

    Singular values above ``tol * s_max`` count towards the rank. If any of them
    falls within a factor ``band`` of that threshold (on either side) the gap
    is not clear and, unless the dimension count already rules identifiability
    out, the verdict is ``inconclusive``. A full rank is also reported as
    ``inconclusive`` when some pair of nodes is separated in neither
    direction: the rank then proves only that no nearby matrix gives the same
    laws, while such systems are not covered by the separation guarantee.
    """
    p = system.p
    ambient = p * p - p
    m = m_bound(system)
    D = theta_jacobian(B, system)
    sv = np.linalg.svd(D, compute_uv=False) if D.size else np.zeros(0)
    smax = float(sv[0]) if sv.size else 0.0
    thresh = tol * smax
    rank = int(np.sum(sv > thresh)) if smax > 0 else 0
    ambiguous = smax > 0 and bool(np.any((sv > thresh / band) & (sv < thresh * band)))
    unseparated = doubly_unseparated_pairs(system)
    if m < ambient:
        verdict = "non_identifiable"
    elif ambiguous:
        verdict = "inconclusive"
    elif rank < ambient:
        verdict = "non_identifiable"
    elif unseparated:
        verdict = "inconclusive"
    else:
        verdict = "identifiable_locally"
    return IdentifiabilityReport(p, system.E, [len(e.intervened) for e in system], m, rank, ambient, verdict,
                                 tol, sv, seed, unseparated)
