"""Gaussian negative log-likelihood of a structure matrix over all experiments.

``L(B) = sum_e tr(S_e Theta_e(B)) - logdet Theta_e(B)`` with
``Theta_e(B) = (I - U_e B)'(I - U_e B)``.

The fast path factors ``(I - B)'(I - B)`` once and reaches each
``Theta_e(B)`` through a rank-|J_e| update and a rank-|J_e| downdate, using

    Theta_e(B) = (I - B)'(I - B) - (J_e - J_e B)'(J_e - J_e B) + J_e'J_e.
"""
from __future__ import annotations

import logging

import numpy as np

from . import kernels
from .model import Experiment, ExperimentSystem, check_structure

log = logging.getLogger(__name__)


def _stack(covariances, p):
    S = np.asarray(covariances, dtype=float)
    if S.ndim != 3 or S.shape[1:] != (p, p):
        raise ValueError(f"covariances must have shape (E, {p}, {p}), got {S.shape}")
    return S


def fast_chol_theta(B, experiment: Experiment, base_factor) -> tuple[np.ndarray, bool]:
    """Cholesky factor of ``Theta_e(B)`` obtained from the factor of ``(I - B)'(I - B)``.

    Returns ``(L, fell_back)``; ``fell_back`` is True when a downdate lost
    positive definiteness and the factor was recomputed directly.
    """
    B = check_structure(B)
    J = np.array(experiment.intervened, dtype=np.int64)
    if J.size == 0:
        return np.array(base_factor, dtype=float, copy=True), False
    L, ok = kernels.theta_factor(np.ascontiguousarray(base_factor, dtype=float), B, J)
    if ok:
        return L, False
    A = np.eye(B.shape[0]) - experiment.untouched_mask()[:, None] * B
    return np.linalg.cholesky(A.T @ A), True


# squared Cholesky pivots below this fraction of the largest diagonal entry count as singular
PIVOT_FLOOR = 1e-13


def _pivots_ok(L, Theta_diag_max):
    return float(np.min(np.diag(L))) ** 2 > PIVOT_FLOOR * max(Theta_diag_max, 1.0)


class LikelihoodWorkspace:
    """Covariances, experiment layout and a cached base factor for repeated evaluations."""

    def __init__(self, covariances, system: ExperimentSystem):
        self.system = system
        self.p = system.p
        self.S = _stack(covariances, self.p)
        if self.S.shape[0] != system.E:
            raise ValueError("one covariance per experiment required")
        self.masks = system.untouched_masks()
        self.ptr, self.idx = system.csr()
        self._key = None
        self._base = None
        self.fallbacks = 0

    def base_factor(self, B):
        """Factor of ``(I - B)'(I - B)``, recomputed only when ``B`` changes; None if singular."""
        key = B.tobytes()
        if key != self._key:
            A = np.eye(self.p) - B
            M = A.T @ A
            try:
                self._base = np.linalg.cholesky(M)
            except np.linalg.LinAlgError:
                self._base = None
            if self._base is not None and not _pivots_ok(self._base, np.diag(M).max()):
                self._base = None
            self._key = key
        return self._base

    def naive_terms(self, B):
        """Per-experiment likelihood terms by direct factorisation (``inf`` when not PD)."""
        out = np.empty(self.system.E)
        eye = np.eye(self.p)
        for k in range(self.system.E):
            A = eye - self.masks[k][:, None] * B
            Theta = A.T @ A
            try:
                L = np.linalg.cholesky(Theta)
            except np.linalg.LinAlgError:
                out[k] = np.inf
                continue
            if not _pivots_ok(L, np.diag(Theta).max()):
                out[k] = np.inf
                continue
            out[k] = np.sum(self.S[k] * Theta) - 2.0 * np.log(np.diag(L)).sum()
        return out

    def fast_terms(self, B):
        L0 = self.base_factor(B)
        if L0 is None:
            self.fallbacks += self.system.E
            return self.naive_terms(B)
        A = np.eye(self.p) - B
        M = A.T @ A
        logdets, ok = kernels.theta_logdets(L0, B, self.ptr, self.idx)
        tr = np.einsum("eij,ij->e", self.S, M) + kernels.trace_corrections(self.S, A, self.ptr, self.idx)
        out = tr - logdets
        if not np.all(ok):
            bad = np.flatnonzero(~ok)
            self.fallbacks += bad.size
            direct = self.naive_terms(B)
            out[bad] = direct[bad]
        return out

    def value(self, B, fast: bool = False) -> float:
        B = np.ascontiguousarray(B, dtype=float)
        terms = self.fast_terms(B) if fast else self.naive_terms(B)
        total = float(terms.sum())
        if not np.isfinite(total):
            log.debug("likelihood undefined: some Theta_e(B) is not positive definite")
            return np.inf
        return total

    def operators(self, B):
        """Stack of ``I - U_e B``, shape ``(E, p, p)``."""
        return np.eye(self.p)[None] - self.masks[:, :, None] * B[None]

    def value_and_grad(self, B):
        """Likelihood (via ``log|det(I - U_e B)|``) and its off-diagonal gradient.

        Returns ``(inf, None)`` if some ``I - U_e B`` is singular.
        """
        B = np.asarray(B, dtype=float)
        A = self.operators(B)
        sign, logabs = np.linalg.slogdet(A)
        if np.any(sign == 0) or not np.all(np.isfinite(logabs)):
            return np.inf, None
        try:
            Ainv = np.linalg.inv(A)
        except np.linalg.LinAlgError:
            return np.inf, None
        AS = A @ self.S
        val = float(np.einsum("eij,eij->", AS, A) - 2.0 * logabs.sum())
        # d/dB of tr(S A'A) - 2 log|det A| is -2 U (A S - A^{-T})
        G = -2.0 * np.einsum("ei,eij->ij", self.masks, AS - Ainv.transpose(0, 2, 1))
        np.fill_diagonal(G, 0.0)
        return val, G


def neg_log_likelihood(B, covariances, system: ExperimentSystem, fast: bool = False) -> float:
    """``sum_e tr(S_e Theta_e(B)) - logdet Theta_e(B)``; ``inf`` when some ``Theta_e(B)`` is not PD."""
    B = check_structure(B)
    return LikelihoodWorkspace(covariances, system).value(B, fast=fast)


def nll_gradient(B, covariances, system: ExperimentSystem) -> np.ndarray:
    """Gradient of :func:`neg_log_likelihood` over the off-diagonal entries (diagonal is 0)."""
    B = check_structure(B)
    _, G = LikelihoodWorkspace(covariances, system).value_and_grad(B)
    if G is None:
        raise ValueError("gradient undefined: I - U_e B is singular for some experiment")
    return G
