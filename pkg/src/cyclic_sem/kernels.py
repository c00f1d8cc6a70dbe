"""Hot inner loops.

Every kernel exists twice: a scalar-loop version compiled with numba
(``*_loops``) and a numpy version (``*_numpy``) that vectorises what it can and
runs without a compiler. The public names at the bottom of the module point to
one or the other depending on :data:`cyclic_sem._accel.USE_NUMBA`. Both
versions are importable directly so they can be compared.
"""
import math

import numpy as np

from ._accel import USE_NUMBA, njit

# Column norms below this are treated as an all-zero column.
ZERO_COLUMN_NORM = 1e-14

# Return codes of the theta-prox solver.
PROX_CONVERGED = 0
PROX_MAX_ITER = 1
PROX_LINESEARCH_FAILED = 2


# ---------------------------------------------------------------------------
# small helpers usable from both paths
# ---------------------------------------------------------------------------

@njit
def _soft(x, t):
    if x > t:
        return x - t
    if x < -t:
        return x + t
    return 0.0


@njit
def _cholesky_into(A, L):
    """Lower Cholesky factor of ``A`` written into ``L``; False if not PD."""
    n = A.shape[0]
    for j in range(n):
        s = A[j, j]
        for k in range(j):
            s -= L[j, k] * L[j, k]
        if not s > 0.0:
            return False
        d = math.sqrt(s)
        L[j, j] = d
        for i in range(j + 1, n):
            t = A[i, j]
            for k in range(j):
                t -= L[i, k] * L[j, k]
            L[i, j] = t / d
        for i in range(j):
            L[i, j] = 0.0
    return True


@njit
def _inverse_from_cholesky(L):
    n = L.shape[0]
    Linv = np.zeros((n, n))
    for j in range(n):
        Linv[j, j] = 1.0 / L[j, j]
        for i in range(j + 1, n):
            s = 0.0
            for k in range(j, i):
                s -= L[i, k] * Linv[k, j]
            Linv[i, j] = s / L[i, i]
    # inv(A) = Linv^T Linv
    out = np.zeros((n, n))
    for i in range(n):
        for j in range(i, n):
            s = 0.0
            for k in range(j, n):
                s += Linv[k, i] * Linv[k, j]
            out[i, j] = s
            out[j, i] = s
    return out


# ---------------------------------------------------------------------------
# lasso coordinate descent, covariance form
# ---------------------------------------------------------------------------

@njit
def _lasso_kkt_loops(h, b, lam, active):
    worst = 0.0
    for j in range(b.shape[0]):
        if not active[j]:
            continue
        g = 2.0 * h[j]
        if b[j] == 0.0:
            v = abs(g) - lam
        elif b[j] > 0.0:
            v = abs(g + lam)
        else:
            v = abs(g - lam)
        if v > worst:
            worst = v
    return worst


@njit
def lasso_cd_loops(G, c, lam, b0, tol, max_iter):
    """Minimise ``b'Gb - 2c'b + lam*|b|_1`` by cyclic coordinate descent.

    ``G = T'T`` and ``c = T't``, so the objective equals
    ``|Tb - t|^2 + lam*|b|_1`` up to a constant. Returns
    ``(b, sweeps, kkt_residual)``.
    """
    p = G.shape[0]
    b = b0.copy()
    active = np.empty(p, dtype=np.bool_)
    for j in range(p):
        active[j] = G[j, j] >= ZERO_COLUMN_NORM * ZERO_COLUMN_NORM
        if not active[j]:
            b[j] = 0.0
    h = G @ b - c
    kkt = _lasso_kkt_loops(h, b, lam, active)
    if kkt <= tol:
        return b, 0, kkt
    for it in range(max_iter):
        for j in range(p):
            if not active[j]:
                continue
            gjj = G[j, j]
            old = b[j]
            new = _soft(old - h[j] / gjj, 0.5 * lam / gjj)
            if new != old:
                delta = new - old
                b[j] = new
                for k in range(p):
                    h[k] += delta * G[k, j]
        kkt = _lasso_kkt_loops(h, b, lam, active)
        if kkt <= tol:
            return b, it + 1, kkt
    return b, max_iter, kkt


def lasso_cd_numpy(G, c, lam, b0, tol, max_iter):
    G = np.asarray(G, dtype=float)
    b = np.array(b0, dtype=float)
    active = np.diag(G) >= ZERO_COLUMN_NORM ** 2
    b[~active] = 0.0
    h = G @ b - c

    def kkt_of(h, b):
        g = 2.0 * h
        viol = np.where(b == 0.0, np.abs(g) - lam, np.abs(g + lam * np.sign(b)))
        viol = viol[active]
        return float(max(viol.max(initial=0.0), 0.0))

    kkt = kkt_of(h, b)
    if kkt <= tol:
        return b, 0, kkt
    idx = np.flatnonzero(active)
    diag = np.diag(G)
    for it in range(max_iter):
        for j in idx:
            old = b[j]
            z = old - h[j] / diag[j]
            t = 0.5 * lam / diag[j]
            new = math.copysign(max(abs(z) - t, 0.0), z) if abs(z) > t else 0.0
            if new != old:
                h += (new - old) * G[:, j]
                b[j] = new
        kkt = kkt_of(h, b)
        if kkt <= tol:
            return b, it + 1, kkt
    return b, max_iter, kkt


# ---------------------------------------------------------------------------
# Cholesky rank-one update / downdate
# ---------------------------------------------------------------------------

@njit
def chol_rank1_loops(L, x, sign):
    """In-place ``L L' <- L L' + sign * x x'`` for lower-triangular ``L``.

    Returns False (leaving ``L`` partially modified) when a downdate would
    destroy positive definiteness.
    """
    n = L.shape[0]
    w = x.copy()
    for k in range(n):
        lkk = L[k, k]
        r2 = lkk * lkk + sign * w[k] * w[k]
        if not r2 > 0.0:
            return False
        r = math.sqrt(r2)
        c = r / lkk
        s = w[k] / lkk
        L[k, k] = r
        for i in range(k + 1, n):
            L[i, k] = (L[i, k] + sign * s * w[i]) / c
            w[i] = c * w[i] - s * L[i, k]
    return True


def chol_rank1_numpy(L, x, sign):
    n = L.shape[0]
    w = np.array(x, dtype=float)
    for k in range(n):
        lkk = L[k, k]
        r2 = lkk * lkk + sign * w[k] * w[k]
        if not r2 > 0.0:
            return False
        r = math.sqrt(r2)
        c = r / lkk
        s = w[k] / lkk
        L[k, k] = r
        if k + 1 < n:
            L[k + 1:, k] = (L[k + 1:, k] + sign * s * w[k + 1:]) / c
            w[k + 1:] = c * w[k + 1:] - s * L[k + 1:, k]
    return True


@njit
def _rank1_upper(R, w, sign, start):
    """``R' R <- R' R + sign * w w'`` for upper-triangular ``R``; ``w[:start]`` must be zero.

    Rows of ``R`` are contiguous, so this is the cache-friendly twin of
    :func:`chol_rank1_loops`. ``w`` is overwritten.
    """
    n = R.shape[0]
    for k in range(start, n):
        wk = w[k]
        if wk == 0.0:
            continue
        rkk = R[k, k]
        r2 = rkk * rkk + sign * wk * wk
        if not r2 > 0.0:
            return False
        r = math.sqrt(r2)
        c = r / rkk
        s = wk / rkk
        R[k, k] = r
        for i in range(k + 1, n):
            v = (R[k, i] + sign * s * w[i]) / c
            R[k, i] = v
            w[i] = c * w[i] - s * v
    return True


@njit
def _theta_factor_upper(R, B, J, x):
    p = R.shape[0]
    for j in J:
        x[:] = 0.0
        x[j] = 1.0
        if not _rank1_upper(R, x, 1.0, j):
            return False
    for j in J:
        first = p
        for k in range(p):
            x[k] = -B[j, k]
            if x[k] != 0.0 and k < first:
                first = k
        x[j] += 1.0
        if j < first:
            first = j
        if not _rank1_upper(R, x, -1.0, first):
            return False
    return True


@njit
def theta_factor_loops(L0, B, J):
    """Factor of ``(I - U B)'(I - U B)`` from the factor ``L0`` of ``(I - B)'(I - B)``.

    Rank-|J| update with the unit vectors of ``J`` followed by a rank-|J|
    downdate with the rows of ``I - B`` indexed by ``J``.
    """
    R = L0.T.copy()
    ok = _theta_factor_upper(R, B, J, np.zeros(L0.shape[0]))
    return R.T.copy(), ok


def theta_factor_numpy(L0, B, J):
    p = L0.shape[0]
    L = L0.copy()
    eye = np.eye(p)
    for j in J:
        if not chol_rank1_numpy(L, eye[j], 1.0):
            return L, False
    for j in J:
        if not chol_rank1_numpy(L, eye[j] - B[j], -1.0):
            return L, False
    return L, True


@njit
def theta_logdets_loops(L0, B, ptr, idx):
    """Log-determinants of every ``Theta^e(B)`` via low-rank factor updates.

    Experiment ``e`` intervenes on ``idx[ptr[e]:ptr[e + 1]]``. Returns the
    log-determinants and a per-experiment success flag.
    """
    E = ptr.shape[0] - 1
    p = L0.shape[0]
    out = np.zeros(E)
    ok = np.ones(E, dtype=np.bool_)
    R0 = L0.T.copy()
    R = np.empty_like(R0)
    x = np.zeros(p)
    for e in range(E):
        R[:, :] = R0
        if not _theta_factor_upper(R, B, idx[ptr[e]:ptr[e + 1]], x):
            ok[e] = False
            continue
        s = 0.0
        for k in range(p):
            s += math.log(R[k, k])
        out[e] = 2.0 * s
    return out, ok


def theta_logdets_numpy(L0, B, ptr, idx):
    E = len(ptr) - 1
    out = np.zeros(E)
    ok = np.ones(E, dtype=bool)
    for e in range(E):
        L, good = theta_factor_numpy(L0, B, idx[ptr[e]:ptr[e + 1]])
        if good:
            out[e] = 2.0 * np.log(np.diag(L)).sum()
        else:
            ok[e] = False
    return out, ok


@njit
def trace_corrections_loops(S, A, ptr, idx):
    """``sum_j S_e[j, j] - A[j] S_e A[j]'`` over the intervened ``j`` of each experiment."""
    E = ptr.shape[0] - 1
    p = A.shape[0]
    out = np.zeros(E)
    for e in range(E):
        acc = 0.0
        for q in range(ptr[e], ptr[e + 1]):
            j = idx[q]
            acc += S[e, j, j]
            quad = 0.0
            for a in range(p):
                if A[j, a] == 0.0:
                    continue
                t = 0.0
                for b in range(p):
                    t += S[e, a, b] * A[j, b]
                quad += A[j, a] * t
            acc -= quad
        out[e] = acc
    return out


def trace_corrections_numpy(S, A, ptr, idx):
    E = len(ptr) - 1
    out = np.zeros(E)
    for e in range(E):
        J = idx[ptr[e]:ptr[e + 1]]
        if J.size:
            R = A[J]
            out[e] = S[e, J, J].sum() - np.sum((R @ S[e]) * R)
    return out


# ---------------------------------------------------------------------------
# Proximal graphical-lasso subproblem (QUIC-style proximal Newton)
# ---------------------------------------------------------------------------
#
#   min_Theta  tr(S Theta) - logdet Theta + lam*|Theta|_1 + rho/2 |Theta - M|_F^2
#
# The l1 norm covers the diagonal too.

@njit
def _prox_smooth_loops(S, M, rho, Theta, L):
    """Smooth part of the prox objective; ``inf`` if ``Theta`` is not PD."""
    if not _cholesky_into(Theta, L):
        return np.inf
    p = Theta.shape[0]
    logdet = 0.0
    for k in range(p):
        logdet += math.log(L[k, k])
    tr = 0.0
    quad = 0.0
    for i in range(p):
        for j in range(p):
            tr += S[i, j] * Theta[i, j]
            d = Theta[i, j] - M[i, j]
            quad += d * d
    return tr - 2.0 * logdet + 0.5 * rho * quad


@njit
def _l1_loops(A):
    s = 0.0
    for i in range(A.shape[0]):
        for j in range(A.shape[1]):
            s += abs(A[i, j])
    return s


@njit
def _min_subgrad_norm_loops(G, Theta, lam):
    s = 0.0
    p = G.shape[0]
    for i in range(p):
        for j in range(p):
            t = Theta[i, j]
            if t > 0.0:
                v = G[i, j] + lam
            elif t < 0.0:
                v = G[i, j] - lam
            else:
                v = _soft(G[i, j], lam)
            s += v * v
    return math.sqrt(s)


@njit
def theta_prox_loops(S, M, lam, rho, Theta0, tol, max_newton, max_sweeps):
    """Returns ``(Theta, newton_iterations, subgradient_norm, status)``."""
    p = S.shape[0]
    Theta = Theta0.copy()
    L = np.zeros((p, p))
    f = _prox_smooth_loops(S, M, rho, Theta, L) + lam * _l1_loops(Theta)
    if not np.isfinite(f):
        return Theta, 0, np.inf, PROX_LINESEARCH_FAILED
    W = _inverse_from_cholesky(L)
    G = np.empty((p, p))
    D = np.zeros((p, p))
    U = np.zeros((p, p))
    Trial = np.empty((p, p))
    sub = np.inf
    for it in range(max_newton):
        for i in range(p):
            for j in range(p):
                G[i, j] = S[i, j] - W[i, j] + rho * (Theta[i, j] - M[i, j])
        sub = _min_subgrad_norm_loops(G, Theta, lam)
        if sub <= tol:
            return Theta, it, sub, PROX_CONVERGED
        D[:, :] = 0.0
        U[:, :] = 0.0
        for sweep in range(max_sweeps):
            biggest = 0.0
            for i in range(p):
                for j in range(i, p):
                    if Theta[i, j] == 0.0 and abs(G[i, j]) <= lam and D[i, j] == 0.0:
                        continue
                    if i == j:
                        a = W[i, i] * W[i, i] + rho
                    else:
                        a = W[i, j] * W[i, j] + W[i, i] * W[j, j] + rho
                    wdw = 0.0
                    for k in range(p):
                        wdw += W[i, k] * U[k, j]
                    bb = G[i, j] + wdw + rho * D[i, j]
                    c = Theta[i, j] + D[i, j]
                    mu = -c + _soft(c - bb / a, lam / a)
                    if mu != 0.0:
                        D[i, j] += mu
                        if i != j:
                            D[j, i] += mu
                        for k in range(p):
                            U[i, k] += mu * W[j, k]
                        if i != j:
                            for k in range(p):
                                U[j, k] += mu * W[i, k]
                        if abs(mu) > biggest:
                            biggest = abs(mu)
            if biggest <= 1e-3 * tol:
                break
        delta = 0.0
        l1_new = 0.0
        for i in range(p):
            for j in range(p):
                delta += G[i, j] * D[i, j]
                l1_new += abs(Theta[i, j] + D[i, j])
        delta += lam * (l1_new - _l1_loops(Theta))
        alpha = 1.0
        accepted = False
        while alpha > 1e-12:
            for i in range(p):
                for j in range(p):
                    Trial[i, j] = Theta[i, j] + alpha * D[i, j]
            ft = _prox_smooth_loops(S, M, rho, Trial, L)
            if np.isfinite(ft):
                ft += lam * _l1_loops(Trial)
                if ft <= f + 1e-4 * alpha * delta + 1e-13 * abs(f):
                    accepted = True
                    break
            alpha *= 0.5
        if not accepted:
            return Theta, it, sub, PROX_LINESEARCH_FAILED
        Theta[:, :] = Trial
        f = ft
        W = _inverse_from_cholesky(L)
    for i in range(p):
        for j in range(p):
            G[i, j] = S[i, j] - W[i, j] + rho * (Theta[i, j] - M[i, j])
    sub = _min_subgrad_norm_loops(G, Theta, lam)
    status = PROX_CONVERGED if sub <= tol else PROX_MAX_ITER
    return Theta, max_newton, sub, status


def _prox_objective_numpy(S, M, lam, rho, Theta):
    try:
        L = np.linalg.cholesky(Theta)
    except np.linalg.LinAlgError:
        return np.inf, None
    val = (np.sum(S * Theta) - 2.0 * np.log(np.diag(L)).sum()
           + 0.5 * rho * np.sum((Theta - M) ** 2) + lam * np.abs(Theta).sum())
    return val, L


def _min_subgrad_norm_numpy(G, Theta, lam):
    soft = np.sign(G) * np.maximum(np.abs(G) - lam, 0.0)
    v = np.where(Theta != 0.0, G + lam * np.sign(Theta), soft)
    return float(np.sqrt(np.sum(v * v)))


def theta_prox_numpy(S, M, lam, rho, Theta0, tol, max_newton, max_sweeps):
    p = S.shape[0]
    Theta = np.array(Theta0, dtype=float)
    f, L = _prox_objective_numpy(S, M, lam, rho, Theta)
    if not np.isfinite(f):
        return Theta, 0, np.inf, PROX_LINESEARCH_FAILED
    W = np.linalg.inv(Theta)
    sub = np.inf
    pairs = [(i, j) for i in range(p) for j in range(i, p)]
    for it in range(max_newton):
        G = S - W + rho * (Theta - M)
        sub = _min_subgrad_norm_numpy(G, Theta, lam)
        if sub <= tol:
            return Theta, it, sub, PROX_CONVERGED
        free = (Theta != 0.0) | (np.abs(G) > lam)
        D = np.zeros((p, p))
        U = np.zeros((p, p))
        for sweep in range(max_sweeps):
            biggest = 0.0
            for i, j in pairs:
                if not free[i, j] and D[i, j] == 0.0:
                    continue
                if i == j:
                    a = W[i, i] ** 2 + rho
                else:
                    a = W[i, j] ** 2 + W[i, i] * W[j, j] + rho
                bb = G[i, j] + W[i] @ U[:, j] + rho * D[i, j]
                c = Theta[i, j] + D[i, j]
                z = c - bb / a
                mu = -c + math.copysign(max(abs(z) - lam / a, 0.0), z)
                if mu != 0.0:
                    D[i, j] += mu
                    U[i] += mu * W[j]
                    if i != j:
                        D[j, i] += mu
                        U[j] += mu * W[i]
                    biggest = max(biggest, abs(mu))
            if biggest <= 1e-3 * tol:
                break
        delta = np.sum(G * D) + lam * (np.abs(Theta + D).sum() - np.abs(Theta).sum())
        alpha = 1.0
        accepted = False
        while alpha > 1e-12:
            trial = Theta + alpha * D
            ft, L = _prox_objective_numpy(S, M, lam, rho, trial)
            if np.isfinite(ft) and ft <= f + 1e-4 * alpha * delta + 1e-13 * abs(f):
                accepted = True
                break
            alpha *= 0.5
        if not accepted:
            return Theta, it, sub, PROX_LINESEARCH_FAILED
        Theta, f = trial, ft
        W = np.linalg.inv(Theta)
        W = 0.5 * (W + W.T)
    G = S - W + rho * (Theta - M)
    sub = _min_subgrad_norm_numpy(G, Theta, lam)
    status = PROX_CONVERGED if sub <= tol else PROX_MAX_ITER
    return Theta, max_newton, sub, status


if USE_NUMBA:
    lasso_cd_kernel = lasso_cd_loops
    chol_rank1 = chol_rank1_loops
    theta_factor = theta_factor_loops
    theta_logdets = theta_logdets_loops
    trace_corrections = trace_corrections_loops
    theta_prox_kernel = theta_prox_loops
else:
    lasso_cd_kernel = lasso_cd_numpy
    chol_rank1 = chol_rank1_numpy
    theta_factor = theta_factor_numpy
    theta_logdets = theta_logdets_numpy
    trace_corrections = trace_corrections_numpy
    theta_prox_kernel = theta_prox_numpy
