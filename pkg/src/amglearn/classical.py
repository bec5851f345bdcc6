"""Classical Ruge-Stuben coarsening: strength graph, C/F splitting,
prolongation sparsity pattern and direct interpolation.

The splitting and pattern produced here are shared verbatim between the
classical baseline prolongation and the learned one, so comparisons between
the two are always on equal footing.
"""

from __future__ import annotations

import heapq
import json
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .errors import DegenerateRowError, PatternError
from .sparse import SparseMatrix, from_csr_arrays

__all__ = [
    "StrengthGraph",
    "Splitting",
    "SparsityPattern",
    "strength_of_connection",
    "ruge_stuben_split",
    "build_pattern",
    "direct_interpolation",
    "row_sums",
    "split_and_pattern",
]

DEFAULT_THETA = 0.25


@dataclass(frozen=True, eq=False)
class StrengthGraph:
    """Per-node sets of strongly connected neighbors (CSR layout, no self edges)."""

    n: int
    indptr: np.ndarray
    neighbors: np.ndarray

    def row(self, i) -> np.ndarray:
        return self.neighbors[self.indptr[i] : self.indptr[i + 1]]

    @cached_property
    def transpose(self) -> "StrengthGraph":
        """Influence graph: row i lists the nodes that i is strong for."""
        counts = np.bincount(self.neighbors, minlength=self.n)
        indptr = np.concatenate(([0], np.cumsum(counts)))
        order = np.argsort(self.neighbors, kind="stable")
        sources = np.repeat(np.arange(self.n), np.diff(self.indptr))
        return StrengthGraph(self.n, indptr, sources[order])


@dataclass(frozen=True, eq=False)
class Splitting:
    """C/F partition; coarse_index maps node id -> column of P (-1 for F-nodes)."""

    is_coarse: np.ndarray
    coarse_index: np.ndarray

    @staticmethod
    def from_mask(is_coarse) -> "Splitting":
        is_coarse = np.asarray(is_coarse, dtype=bool)
        coarse_index = np.full(len(is_coarse), -1, dtype=np.int64)
        coarse_index[is_coarse] = np.arange(int(is_coarse.sum()))
        return Splitting(is_coarse, coarse_index)

    def __post_init__(self):
        n = len(self.is_coarse)
        if n >= 1 and not self.is_coarse.any():
            raise ValueError("splitting must contain at least one C-node")
        idx = self.coarse_index[self.is_coarse]
        if not np.array_equal(idx, np.arange(len(idx))):
            raise ValueError("coarse_index must enumerate C-nodes in node-id order")

    @property
    def n(self):
        return len(self.is_coarse)

    @property
    def n_coarse(self):
        return int(self.is_coarse.sum())

    @cached_property
    def coarse_nodes(self) -> np.ndarray:
        return np.flatnonzero(self.is_coarse)

    def to_debug_json(self) -> str:
        return json.dumps(
            {
                "c_nodes": self.coarse_nodes.tolist(),
                "f_nodes": np.flatnonzero(~self.is_coarse).tolist(),
            }
        )


@dataclass(frozen=True, eq=False)
class SparsityPattern:
    """Per-node ordered list of C-node ids allowed in that row of P (CSR layout)."""

    n: int
    indptr: np.ndarray
    cols: np.ndarray

    def row(self, i) -> np.ndarray:
        return self.cols[self.indptr[i] : self.indptr[i + 1]]

    def to_debug_json(self) -> str:
        return json.dumps({"rows": [self.row(i).tolist() for i in range(self.n)]})


def strength_of_connection(A: SparseMatrix, theta: float = DEFAULT_THETA) -> StrengthGraph:
    """Strong neighbors of each node: j is strong for i iff -a_ij >= theta * max_k(-a_ik).

    Rows whose off-diagonal entries are all >= 0 get empty strong sets.
    """
    if not 0.0 <= theta <= 1.0:
        raise ValueError("theta must lie in [0, 1]")
    n = A.n_rows
    rows = np.repeat(np.arange(n), np.diff(A.row_offsets))
    off = A.col_indices != rows
    neg = -A.values
    row_max = np.zeros(n)
    np.maximum.at(row_max, rows[off], neg[off])
    strong = off & (row_max[rows] > 0.0) & (neg >= theta * row_max[rows])
    srows = rows[strong]
    scols = A.col_indices[strong]
    indptr = np.concatenate(([0], np.cumsum(np.bincount(srows, minlength=n))))
    return StrengthGraph(n, indptr.astype(np.int64), scols.astype(np.int64))


def ruge_stuben_split(strength: StrengthGraph, seed: int = 0) -> Splitting:
    """Classical two-pass Ruge-Stuben C/F splitting.

    First pass: greedy selection by descending influence count with ties broken
    by node id; picking a C-node turns every undecided node it influences into
    F and credits their remaining strong neighbors. Second pass: every strong
    F-F pair must share a common strong C-neighbor, promoting F-nodes where
    needed. Fully deterministic; `seed` is accepted for interface uniformity
    but never consulted.
    """
    n = strength.n
    if n == 0:
        return Splitting.from_mask(np.zeros(0, dtype=bool))
    UNDECIDED, COARSE, FINE = 0, 1, 2
    state = np.full(n, UNDECIDED, dtype=np.int8)
    influences = strength.transpose  # row i: nodes that i is strong for
    lam = np.array([len(influences.row(i)) for i in range(n)], dtype=np.int64)

    heap = [(-lam[i], i) for i in range(n)]
    heapq.heapify(heap)
    while heap:
        neg_l, i = heapq.heappop(heap)
        if state[i] != UNDECIDED or -neg_l != lam[i]:
            continue  # stale entry
        state[i] = COARSE
        for j in influences.row(i):
            if state[j] != UNDECIDED:
                continue
            state[j] = FINE
            for m in strength.row(j):
                if state[m] == UNDECIDED:
                    lam[m] += 1
                    heapq.heappush(heap, (-lam[m], m))
    # Second pass: strong F-F pairs need a common strong C-neighbor. A first
    # violating pair tentatively promotes the neighbor; a second one promotes
    # the scanned node itself instead (textbook rule), keeping C small.
    is_coarse = state == COARSE
    strong_sets = [set(strength.row(i).tolist()) for i in range(n)]
    for i in range(n):
        if is_coarse[i]:
            continue
        ci = {m for m in strong_sets[i] if is_coarse[m]}
        tentative = -1
        for j in sorted(strong_sets[i]):
            if is_coarse[j] or j == tentative:
                continue
            cj = {m for m in strong_sets[j] if is_coarse[m]}
            if tentative >= 0 and tentative in strong_sets[j]:
                cj.add(tentative)
            if ci & cj:
                continue
            if tentative >= 0:
                is_coarse[i] = True
                tentative = -1
                break
            tentative = j
            ci.add(j)
        if tentative >= 0:
            is_coarse[tentative] = True
    return Splitting.from_mask(is_coarse)


def build_pattern(A: SparseMatrix, strength: StrengthGraph, splitting: Splitting) -> SparsityPattern:
    """Sparsity pattern of P: F-rows list their strong C-neighbors, C-rows themselves."""
    n = A.n_rows
    srows = np.repeat(np.arange(n, dtype=np.int64), np.diff(strength.indptr))
    keep = ~splitting.is_coarse[srows] & splitting.is_coarse[strength.neighbors]
    rows = np.concatenate([srows[keep], np.flatnonzero(splitting.is_coarse)])
    cols = np.concatenate([strength.neighbors[keep], np.flatnonzero(splitting.is_coarse)])
    counts = np.bincount(rows, minlength=n)
    isolated = np.flatnonzero(counts == 0)
    if len(isolated):
        raise PatternError(
            f"{len(isolated)} F-node(s) have no strong C-neighbor", nodes=isolated.tolist()
        )
    order = np.lexsort((cols, rows))
    indptr = np.concatenate(([0], np.cumsum(counts))).astype(np.int64)
    return SparsityPattern(n, indptr, cols[order].astype(np.int64))


def split_and_pattern(A: SparseMatrix, theta: float = DEFAULT_THETA, seed: int = 0):
    """Splitting plus pattern, promoting any isolated F-nodes to C until stable."""
    strength = strength_of_connection(A, theta)
    splitting = ruge_stuben_split(strength, seed)
    while True:
        try:
            pattern = build_pattern(A, strength, splitting)
            return strength, splitting, pattern
        except PatternError as err:
            mask = splitting.is_coarse.copy()
            mask[list(err.nodes)] = True
            splitting = Splitting.from_mask(mask)


def direct_interpolation(
    A: SparseMatrix, splitting: Splitting, pattern: SparsityPattern
) -> SparseMatrix:
    """Classical direct interpolation on the given pattern.

    C-rows are unit rows. F-row weights are
    w_ij = -(a_ij / a_ii) * (sum_{k != i} a_ik / sum_{m in C_i} a_im),
    which makes every F-row of P sum to one whenever A has zero row sums.
    """
    n = A.n_rows
    diag = A.diagonal
    indptr = pattern.indptr
    arow = np.repeat(np.arange(n, dtype=np.int64), np.diff(A.row_offsets))
    offdiag = np.where(arow != A.col_indices, A.values, 0.0)
    total_off = np.zeros(n)
    np.add.at(total_off, arow, offdiag)

    prow = np.repeat(np.arange(n, dtype=np.int64), np.diff(indptr))
    # look up A values at the pattern slots via global (row, col) keys
    a_keys = arow * A.n_cols + A.col_indices
    p_keys = prow * A.n_cols + pattern.cols
    pos = np.searchsorted(a_keys, p_keys)
    if np.any(pos >= len(a_keys)) or np.any(a_keys[np.minimum(pos, len(a_keys) - 1)] != p_keys):
        raise ValueError("pattern references entries absent from A")
    pat_vals = A.values[pos]

    denom = np.zeros(n)
    np.add.at(denom, prow, pat_vals)
    f_rows = ~splitting.is_coarse
    if np.any(denom[f_rows] == 0.0):
        bad = int(np.flatnonzero(f_rows & (denom == 0.0))[0])
        raise DegenerateRowError(f"row {bad}: pattern entries of A sum to zero")
    denom[~f_rows] = 1.0  # unused for C-rows
    scale = total_off / (diag * denom)
    values = np.where(f_rows[prow], -pat_vals * scale[prow], 1.0)
    col_index = splitting.coarse_index[pattern.cols]
    return from_csr_arrays(n, splitting.n_coarse, indptr, col_index, values)


def row_sums(P: SparseMatrix) -> np.ndarray:
    """Per-row sums of stored values."""
    out = np.zeros(P.n_rows)
    rows = np.repeat(np.arange(P.n_rows), np.diff(P.row_offsets))
    np.add.at(out, rows, P.values)
    return out
