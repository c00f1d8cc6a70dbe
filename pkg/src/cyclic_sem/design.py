"""Intervention designs and the pair condition."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .model import ExperimentSystem


@dataclass(frozen=True)
class DesignKind:
    tag: str
    k: int | None = None

    def __post_init__(self):
        if self.tag not in ("single_node", "binary", "bounded"):
            raise ValueError(f"unknown design kind {self.tag!r}")
        if self.tag == "bounded" and (self.k is None or self.k < 1):
            raise ValueError("bounded design needs k >= 1")

    def build(self, p: int) -> ExperimentSystem:
        if self.tag == "single_node":
            return design_single_node(p)
        if self.tag == "binary":
            return design_binary(p)
        return design_bounded(p, self.k)


def _need_two(p):
    if p < 2:
        raise ValueError(f"need at least two nodes, got p={p}")


def design_single_node(p: int) -> ExperimentSystem:
    _need_two(p)
    return ExperimentSystem.from_sets(p, [[i] for i in range(p)])


def _bit_experiments(labels: dict[int, int], nbits: int) -> list[list[int]]:
    sets = []
    for b in range(nbits):
        on = [i for i, lab in labels.items() if (lab >> b) & 1]
        off = [i for i, lab in labels.items() if not (lab >> b) & 1]
        sets.append(on)
        sets.append(off)
    return sets


def design_binary(p: int) -> ExperimentSystem:
    """Two experiments per bit of the node labels: the nodes with that bit set, and the rest.

    Gives ``2 * ceil(log2 p)`` experiments.
    """
    _need_two(p)
    nbits = math.ceil(math.log2(p))
    return ExperimentSystem.from_sets(p, _bit_experiments({i: i for i in range(p)}, nbits))


def design_bounded(p: int, k: int) -> ExperimentSystem:
    """Completely separating system whose experiments intervene on at most ``k`` nodes.

    Nodes are cut into consecutive blocks of size ``k``. Each block is one
    experiment, which separates every pair that crosses blocks. Pairs inside a
    block are separated by the binary design on the block's local labels,
    restricted to that block. ``k = 1`` reduces to single-node experiments.
    """
    _need_two(p)
    if not 1 <= k <= p:
        raise ValueError(f"k must lie in [1, p], got k={k}")
    blocks = [list(range(s, min(s + k, p))) for s in range(0, p, k)]
    sets = [blk for blk in blocks] if len(blocks) > 1 else []
    for blk in blocks:
        if len(blk) < 2:
            continue
        nbits = math.ceil(math.log2(len(blk)))
        sets.extend(_bit_experiments({node: r for r, node in enumerate(blk)}, nbits))
    return ExperimentSystem.from_sets(p, sets)


def separation_counts(system: ExperimentSystem) -> np.ndarray:
    """``C[i, j] = #{e : i in J_e, j in U_e}``."""
    p = system.p
    C = np.zeros((p, p), dtype=np.int64)
    for e in system:
        J = np.zeros(p, dtype=bool)
        J[list(e.intervened)] = True
        C += np.outer(J, ~J)
    return C


def is_completely_separating(system: ExperimentSystem) -> tuple[bool, tuple[int, int] | None]:
    """Brute-force pair condition; returns the first failing ordered pair ``(i, j)``.

    The pair ``(i, j)`` passes when some experiment intervenes on ``i`` and
    leaves ``j`` untouched.
    """
    p = system.p
    for i in range(p):
        for j in range(p):
            if i == j:
                continue
            if not any(i in e.intervened and j not in e.intervened for e in system):
                return False, (i, j)
    return True, None


def redundancy(system: ExperimentSystem) -> int:
    """Largest number of experiments separating an ordered pair; 0 if a pair is unseparated."""
    C = separation_counts(system)
    off = ~np.eye(system.p, dtype=bool)
    if system.p < 2:
        return 0
    if np.any(C[off] == 0):
        return 0
    return int(C[off].max())
