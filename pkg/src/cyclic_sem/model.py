"""Linear cyclic SEM under interventions: covariance maps and sampling.

A structure matrix ``B`` is a dense ``p x p`` array with zero diagonal; entry
``B[i, j]`` is the effect of node ``j`` on node ``i``. An experiment intervenes
on the nodes in ``intervened`` (their equations are replaced by independent
standard normals) and leaves ``untouched`` alone. Node indices are 0-based.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import linalg


@dataclass
class SolverReport:
    """Estimate plus what the solver did to get there."""

    estimate: np.ndarray
    converged: bool
    iterations: int = 0
    trace: list[dict] = field(default_factory=list)
    params: dict = field(default_factory=dict)
    flags: list[str] = field(default_factory=list)
    wall_time_ms: float = 0.0


class ModelError(ValueError):
    """Raised when ``I - U_e B`` is singular or shapes do not agree."""


@dataclass(frozen=True)
class Experiment:
    intervened: tuple[int, ...]
    untouched: tuple[int, ...]

    @classmethod
    def from_intervened(cls, p: int, intervened) -> "Experiment":
        J = tuple(sorted({int(j) for j in intervened}))
        if any(j < 0 or j >= p for j in J):
            raise ValueError(f"intervention index out of range for p={p}: {J}")
        Jset = set(J)
        return cls(J, tuple(i for i in range(p) if i not in Jset))

    @property
    def p(self) -> int:
        return len(self.intervened) + len(self.untouched)

    def untouched_mask(self) -> np.ndarray:
        """Diagonal of the projection ``U_e`` as a float vector."""
        u = np.ones(self.p)
        u[list(self.intervened)] = 0.0
        return u


@dataclass(frozen=True)
class ExperimentSystem:
    p: int
    experiments: tuple[Experiment, ...]

    def __post_init__(self):
        for e in self.experiments:
            if e.p != self.p:
                raise ValueError("experiment does not partition range(p)")

    @classmethod
    def from_sets(cls, p: int, sets: Sequence) -> "ExperimentSystem":
        return cls(p, tuple(Experiment.from_intervened(p, J) for J in sets))

    @property
    def E(self) -> int:
        return len(self.experiments)

    def __len__(self):
        return len(self.experiments)

    def __iter__(self):
        return iter(self.experiments)

    def __getitem__(self, k):
        return self.experiments[k]

    def intervened_sets(self) -> list[list[int]]:
        return [list(e.intervened) for e in self.experiments]

    def untouched_masks(self) -> np.ndarray:
        """``(E, p)`` array whose rows are the diagonals of ``U_e``."""
        return np.array([e.untouched_mask() for e in self.experiments]).reshape(self.E, self.p)

    def csr(self) -> tuple[np.ndarray, np.ndarray]:
        """Intervened sets packed as ``(ptr, idx)`` for the compiled kernels."""
        sizes = [len(e.intervened) for e in self.experiments]
        ptr = np.zeros(self.E + 1, dtype=np.int64)
        ptr[1:] = np.cumsum(sizes)
        idx = np.array([j for e in self.experiments for j in e.intervened], dtype=np.int64)
        return ptr, idx

    def without(self, drop) -> "ExperimentSystem":
        drop = set(drop)
        return ExperimentSystem(self.p, tuple(e for k, e in enumerate(self.experiments) if k not in drop))

    def __add__(self, other: "ExperimentSystem") -> "ExperimentSystem":
        if other.p != self.p:
            raise ValueError("cannot join systems on different node counts")
        return ExperimentSystem(self.p, self.experiments + other.experiments)


@dataclass(frozen=True)
class MatrixClassSpec:
    p: int
    d: int
    eta: float

    def __post_init__(self):
        if self.p < 1:
            raise ValueError("p must be positive")
        if not 1 <= self.d <= max(self.p - 1, 1):
            raise ValueError("d must lie in [1, p-1]")
        if not 0.0 < self.eta <= 0.5:
            raise ValueError("eta must lie in (0, 1/2]")


@dataclass
class DatasetBundle:
    """Interventional data, as sample blocks and/or empirical covariances."""

    system: ExperimentSystem
    n_per_experiment: list[int]
    samples: list[np.ndarray] | None = None
    covariances: list[np.ndarray] | None = None
    seed: int | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.samples is None and self.covariances is None:
            raise ValueError("bundle needs samples or covariances")
        if len(self.n_per_experiment) != self.system.E:
            raise ValueError("one sample count per experiment required")
        if self.covariances is None:
            self.covariances = empirical_covariances(self)

    @property
    def p(self) -> int:
        return self.system.p

    @property
    def n(self) -> int:
        return int(sum(self.n_per_experiment))


def check_structure(B) -> np.ndarray:
    """Return ``B`` as a float array after checking it is square, finite, zero-diagonal."""
    B = np.asarray(B, dtype=float)
    if B.ndim != 2 or B.shape[0] != B.shape[1]:
        raise ModelError(f"structure matrix must be square, got shape {B.shape}")
    if not np.all(np.isfinite(B)):
        raise ModelError("structure matrix has non-finite entries")
    if np.any(np.diag(B) != 0.0):
        raise ModelError("structure matrix must have a zero diagonal")
    return B


def _check_pair(B, e: Experiment):
    B = check_structure(B)
    if B.shape[0] != e.p:
        raise ModelError(f"B is {B.shape[0]}x{B.shape[0]} but experiment has p={e.p}")
    return B


def intervened_operator(B, e: Experiment) -> np.ndarray:
    """``I - U_e B``."""
    B = _check_pair(B, e)
    return np.eye(B.shape[0]) - e.untouched_mask()[:, None] * B


def theta_of(B, e: Experiment) -> np.ndarray:
    """Concentration matrix ``(I - U_e B)'(I - U_e B)`` of experiment ``e``."""
    A = intervened_operator(B, e)
    return A.T @ A


def sigma_of(B, e: Experiment) -> np.ndarray:
    """Covariance ``(I - U_e B)^{-1} (I - U_e B)^{-T}`` of experiment ``e``."""
    A = intervened_operator(B, e)
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", linalg.LinAlgWarning)
            lu = linalg.lu_factor(A, check_finite=False)
    except (linalg.LinAlgError, ValueError) as exc:
        raise ModelError("I - U_e B is singular") from exc
    if np.min(np.abs(np.diag(lu[0]))) <= 1e-14 * max(1.0, np.abs(A).max()):
        raise ModelError("I - U_e B is singular")
    Ainv = linalg.lu_solve(lu, np.eye(A.shape[0]))
    S = Ainv @ Ainv.T
    return 0.5 * (S + S.T)


def population_covariances(B, system: ExperimentSystem) -> list[np.ndarray]:
    return [sigma_of(B, e) for e in system]


def operator_norm(B, tol: float = 1e-10, max_iter: int = 10_000) -> float:
    """Largest singular value; SVD up to p=64, power iteration on ``B'B`` above."""
    B = np.asarray(B, dtype=float)
    if B.shape[0] <= 64:
        return float(np.linalg.norm(B, 2)) if B.size else 0.0
    rng = np.random.default_rng(0)
    v = rng.standard_normal(B.shape[1])
    v /= np.linalg.norm(v)
    sigma = 0.0
    for _ in range(max_iter):
        w = B.T @ (B @ v)
        nw = np.linalg.norm(w)
        if nw == 0.0:
            return 0.0
        v = w / nw
        new = float(np.sqrt(nw))
        if abs(new - sigma) <= tol * new:
            return new
        sigma = new
    return sigma


def in_degree(B) -> int:
    B = np.asarray(B)
    if B.size == 0:
        return 0
    return int(np.max(np.count_nonzero(B, axis=1)))


def validate_membership(B, spec: MatrixClassSpec) -> tuple[bool, list[str]]:
    """Check ``B`` against the class of zero-diagonal, ``d``-sparse rows, norm <= 1 - eta."""
    B = np.asarray(B, dtype=float)
    violations = []
    if B.shape != (spec.p, spec.p):
        return False, [f"shape: expected {(spec.p, spec.p)}, got {B.shape}"]
    if not np.all(np.isfinite(B)):
        return False, ["finite: non-finite entries"]
    if np.any(np.diag(B) != 0.0):
        violations.append("diagonal: non-zero diagonal entries")
    norm = operator_norm(B)
    if norm > 1.0 - spec.eta + 1e-9:
        violations.append(f"operator norm: {norm:.6g} > {1.0 - spec.eta:.6g}")
    deg = in_degree(B)
    if deg > spec.d:
        violations.append(f"in-degree: {deg} > {spec.d}")
    return not violations, violations


def split_samples(n: int, E: int) -> list[int]:
    """Split ``n`` samples over ``E`` experiments; the remainder goes round-robin to the first ones."""
    if n < E:
        raise ValueError(f"need at least one sample per experiment (n={n}, E={E})")
    base, rem = divmod(n, E)
    return [base + (1 if k < rem else 0) for k in range(E)]


def sample_dataset(B, system: ExperimentSystem, n: int, seed: int) -> DatasetBundle:
    """Draw ``X = (I - U_e B)^{-1} Z`` with ``Z ~ N(0, I)`` for every experiment.

    Each experiment gets its own stream spawned from ``seed``, so a block does
    not depend on how many samples the other blocks received.
    """
    B = check_structure(B)
    if B.shape[0] != system.p:
        raise ModelError("B and system disagree on p")
    counts = split_samples(n, system.E)
    streams = np.random.SeedSequence(seed).spawn(system.E)
    blocks = []
    for e, n_e, ss in zip(system, counts, streams):
        rng = np.random.Generator(np.random.PCG64(ss))
        Z = rng.standard_normal((n_e, system.p))
        A = intervened_operator(B, e)
        # rows x_k = A^{-1} z_k, i.e. X = Z A^{-T}
        blocks.append(linalg.solve(A, Z.T, check_finite=False).T)
    return DatasetBundle(system, counts, samples=blocks, seed=seed)


def empirical_covariances(bundle: DatasetBundle) -> list[np.ndarray]:
    """Uncentred second moments ``X'X / n_e`` of each sample block."""
    if bundle.samples is None:
        raise ValueError("bundle carries no samples")
    out = []
    for X in bundle.samples:
        X = np.asarray(X, dtype=float)
        if X.shape[0] == 0:
            raise ValueError("empty sample block")
        S = X.T @ X / X.shape[0]
        out.append(0.5 * (S + S.T))
    return out


def bundle_from_covariances(system: ExperimentSystem, covariances, n_per_experiment=None, seed=None) -> DatasetBundle:
    covs = [np.asarray(S, dtype=float) for S in covariances]
    if n_per_experiment is None:
        n_per_experiment = [0] * system.E
    return DatasetBundle(system, list(n_per_experiment), covariances=covs, seed=seed)
