"""Fourier machinery for doubly block-periodic operators: block
diagonalization, prolongation tiling, relaxation symbols and the per-mode
two-level loss with singular-block exclusion."""

from __future__ import annotations

import csv
from collections import Counter
from dataclasses import dataclass

import numpy as np

from .classical import Splitting
from .errors import LossError, StructureError, SymbolError, TilingError
from .problems import BlockCirculantProblem, couplings_to_sparse
from .sparse import ComplexDense, MatrixKind, SparseMatrix

__all__ = [
    "FourierSymbolSet",
    "TiledProlongation",
    "extract_couplings",
    "block_diagonalize",
    "block_signatures",
    "tile_prolongation",
    "relaxation_couplings",
    "relaxation_symbol",
    "fourier_loss",
    "mode_norms",
    "tiled_sparse",
    "dense_loss_tiled",
    "write_mode_csv",
]


@dataclass(frozen=True, eq=False)
class FourierSymbolSet:
    """The b^2 complex blocks of a block-circulant operator, one per lattice
    mode theta = 2*pi*(k1, k2)/b, ordered with k = k1*b + k2."""

    b: int
    ks: np.ndarray  # (b^2, 2) integer mode indices
    modes: np.ndarray  # (b^2, 2) angles
    blocks: list  # ComplexDense per mode

    def block(self, m) -> np.ndarray:
        return self.blocks[m].to_complex()

    @property
    def n_modes(self):
        return self.b * self.b


@dataclass(frozen=True, eq=False)
class TiledProlongation:
    """Square-form couplings of a prolongation tiled from its most common
    block; columns outside `coarse_positions` are identically zero."""

    b: int
    c: int
    couplings: dict  # (s1, s2) -> (c, c) float array
    masks: dict  # (s1, s2) -> (c, c) bool array of stored slots
    coarse_positions: np.ndarray
    block: int
    modal_fraction: float

    @property
    def n_coarse(self):
        return len(self.coarse_positions)

    def restricted_couplings(self) -> dict:
        """Couplings narrowed to the coarse columns (c x n_coarse)."""
        cp = self.coarse_positions
        return {
            s: (m[:, cp], self.masks[s][:, cp]) for s, m in self.couplings.items()
        }


def _wrap_offset(delta, b):
    d = int(delta) % b
    return d - b if d > b // 2 else d


def extract_couplings(A: SparseMatrix, b: int, c_row: int, c_col: int) -> dict:
    """Coupling matrices of a doubly block-circulant operator.

    Reads the base block's rows and verifies that every stored entry of A
    matches its replica bitwise; offsets outside {-1,0,1}^2 or any mismatch
    raise StructureError.
    """
    n_rows = b * b * c_row
    if A.n_rows != n_rows or A.n_cols != b * b * c_col:
        raise StructureError("operator shape does not match the block grid")
    rows = np.repeat(np.arange(A.n_rows), np.diff(A.row_offsets))
    brow, i_loc = rows // c_row, rows % c_row
    bcol, j_loc = A.col_indices // c_col, A.col_indices % c_col
    dx = (bcol // b - brow // b) % b
    dy = (bcol % b - brow % b) % b
    dx = np.where(dx > b // 2, dx - b, dx)
    dy = np.where(dy > b // 2, dy - b, dy)
    if np.any(np.abs(dx) > 1) or np.any(np.abs(dy) > 1):
        raise StructureError("coupling at lattice offset outside {-1,0,1}^2")
    couplings = {}
    base = rows < c_row  # rows of block (0, 0)
    for s1 in (-1, 0, 1):
        for s2 in (-1, 0, 1):
            sel = base & (dx == s1) & (dy == s2)
            if not np.any(sel):
                continue
            mat = np.zeros((c_row, c_col))
            mask = np.zeros((c_row, c_col), dtype=bool)
            mat[i_loc[sel], j_loc[sel]] = A.values[sel]
            mask[i_loc[sel], j_loc[sel]] = True
            couplings[(s1, s2)] = (mat, mask)
    # verify every entry (all blocks) against the base couplings, bitwise
    expected_nnz = 0
    for (s1, s2), (mat, mask) in couplings.items():
        sel = (dx == s1) & (dy == s2)
        if int(sel.sum()) != int(mask.sum()) * b * b:
            raise StructureError("blocks do not share a common sparsity structure")
        expected_nnz += int(sel.sum())
        if not np.all(mask[i_loc[sel], j_loc[sel]]):
            raise StructureError("entry outside the base block's structure")
        if not np.array_equal(A.values[sel], mat[i_loc[sel], j_loc[sel]]):
            raise StructureError("entry value differs between blocks")
    if expected_nnz != A.nnz:
        raise StructureError("blocks do not share a common sparsity structure")
    return {s: m for s, (m, _) in couplings.items()}


def symbol_from_couplings(couplings: dict, b: int) -> FourierSymbolSet:
    """Symbol set M(theta) = sum_s M_s exp(i theta . s)."""
    ks = np.array([(k1, k2) for k1 in range(b) for k2 in range(b)], dtype=np.int64)
    thetas = 2.0 * np.pi * ks / b
    blocks = []
    for theta in thetas:
        acc = None
        for (s1, s2), mat in sorted(couplings.items()):
            phase = np.exp(1j * (theta[0] * s1 + theta[1] * s2))
            term = phase * mat
            acc = term if acc is None else acc + term
        blocks.append(ComplexDense.from_complex(acc))
    return FourierSymbolSet(b, ks, thetas, blocks)


def block_diagonalize(operand) -> FourierSymbolSet:
    """Fourier blocks of a BlockCirculantProblem (c x c) or of a
    TiledProlongation restricted to its coarse columns (c x n_coarse)."""
    if isinstance(operand, BlockCirculantProblem):
        couplings = extract_couplings(operand.A, operand.b, operand.c, operand.c)
        return symbol_from_couplings(couplings, operand.b)
    if isinstance(operand, TiledProlongation):
        restricted = {s: m for s, (m, _) in operand.restricted_couplings().items()}
        return symbol_from_couplings(restricted, operand.b)
    raise TypeError(f"cannot block-diagonalize {type(operand).__name__}")


def block_signatures(P: SparseMatrix, splitting: Splitting, b: int, c: int) -> list:
    """Per-block coupling signature: (local C-set, sorted slot tuples), where
    a slot is (lattice offset, local row, local target position)."""
    n_blocks = b * b
    if P.n_rows != n_blocks * c:
        raise ValueError("P does not match the block grid")
    coarse_nodes = splitting.coarse_nodes
    if P.n_cols != len(coarse_nodes):
        raise ValueError("P columns do not match the splitting")
    sigs = []
    for blk in range(n_blocks):
        bx, by = divmod(blk, b)
        cset = tuple(i for i in range(c) if splitting.is_coarse[blk * c + i])
        slots = []
        for i in range(c):
            cols, _ = P.row(blk * c + i)
            for col in cols:
                cid = int(coarse_nodes[col])
                tblk, j = divmod(cid, c)
                tx, ty = divmod(tblk, b)
                s = (_wrap_offset(tx - bx, b), _wrap_offset(ty - by, b))
                if abs(s[0]) > 1 or abs(s[1]) > 1:
                    raise StructureError("prolongation couples non-adjacent blocks")
                slots.append((s, i, j))
        sigs.append((cset, tuple(sorted(slots))))
    return sigs


def tile_prolongation(P: SparseMatrix, splitting: Splitting, b: int, c: int) -> TiledProlongation:
    """Make P exactly block-circulant by replicating its most common block.

    Per-block signatures hash the local C-set together with the coupling
    sparsity; the most frequent signature wins, ties broken by lowest block
    index. The square form must keep zero columns at F-positions, so a block
    whose couplings reference a neighbor's C-position that is fine in its own
    cell cannot be replicated as-is: preference goes to fully consistent
    blocks, and failing that the offending slots are dropped, provided every
    F-row keeps at least one slot.
    """
    n_blocks = b * b
    coarse_nodes = splitting.coarse_nodes
    sigs = block_signatures(P, splitting, b, c)
    freq = Counter(sigs)
    order = sorted(range(n_blocks), key=lambda blk: (-freq[sigs[blk]], blk))
    chosen, kept_slots = -1, None
    for blk in order:
        cset, slots = sigs[blk]
        if cset and all(j in cset for (_, _, j) in slots):
            chosen, kept_slots = blk, slots
            break
    if chosen < 0:
        for blk in order:
            cset, slots = sigs[blk]
            if not cset:
                continue
            kept = tuple(s for s in slots if s[2] in cset)
            f_rows = set(range(c)) - set(cset)
            if f_rows <= {i for (_, i, _) in kept}:
                chosen, kept_slots = blk, kept
                break
    if chosen < 0:
        if any(sigs[blk][0] for blk in range(n_blocks)):
            raise TilingError("no usable block: F-rows lose all their C-references")
        raise TilingError("selected block has an empty C-set")
    cset, _ = sigs[chosen]
    couplings, masks = {}, {}
    row_entries = [dict(zip(*P.row(chosen * c + i))) for i in range(c)]
    bx, by = divmod(chosen, b)
    for (s, i, j) in kept_slots:
        tblk = ((bx + s[0]) % b) * b + (by + s[1]) % b
        col = int(splitting.coarse_index[tblk * c + j])
        couplings.setdefault(s, np.zeros((c, c)))
        masks.setdefault(s, np.zeros((c, c), dtype=bool))
        couplings[s][i, j] = row_entries[i][col]
        masks[s][i, j] = True
    return TiledProlongation(
        b,
        c,
        couplings,
        masks,
        np.array(cset, dtype=np.int64),
        chosen,
        freq[sigs[chosen]] / n_blocks,
    )


def relaxation_couplings(p: BlockCirculantProblem) -> dict:
    """Couplings of the block-circulant lower-triangular factor L.

    An entry belongs to L iff its target global index is <= the source index
    when both sit at a wrap-free interior reference block, i.e. offsets with
    s1 < 0 or (s1 == 0 and s2 < 0) entirely, plus the lower triangle of the
    in-block coupling.
    """
    couplings = extract_couplings(p.A, p.b, p.c, p.c)
    if (0, 0) not in couplings or np.any(np.diag(couplings[(0, 0)]) == 0.0):
        raise SymbolError("zero diagonal entry in the in-block coupling")
    lower = {}
    for (s1, s2), mat in couplings.items():
        if s1 < 0 or (s1 == 0 and s2 < 0):
            lower[(s1, s2)] = mat
        elif (s1, s2) == (0, 0):
            lower[(0, 0)] = np.tril(mat)
    return lower


def relaxation_symbol(p: BlockCirculantProblem) -> FourierSymbolSet:
    """Per-mode Gauss-Seidel propagator S(theta) = I - L(theta)^{-1} A(theta)."""
    a_syms = block_diagonalize(p)
    l_syms = symbol_from_couplings(relaxation_couplings(p), p.b)
    eye = np.eye(p.c)
    blocks = []
    for m in range(a_syms.n_modes):
        try:
            s_block = eye - np.linalg.solve(l_syms.block(m), a_syms.block(m))
        except np.linalg.LinAlgError as err:
            raise SymbolError(f"singular relaxation factor at mode {tuple(a_syms.ks[m])}") from err
        blocks.append(ComplexDense.from_complex(s_block))
    return FourierSymbolSet(p.b, a_syms.ks, a_syms.modes, blocks)


def _mode_norm_sq(a_blk, s_blk, p_blk, s1, s2, use_pinv=False):
    coarse = p_blk.conj().T @ a_blk @ p_blk
    rhs = p_blk.conj().T @ a_blk
    if use_pinv:
        sol = np.linalg.pinv(coarse) @ rhs
    else:
        sol = np.linalg.solve(coarse, rhs)
    M = np.eye(a_blk.shape[0], dtype=complex) - p_blk @ sol
    for _ in range(s1):
        M = M @ s_blk
    for _ in range(s2):
        M = s_blk @ M
    return float(np.sum(M.real**2 + M.imag**2))


def fourier_loss(
    a_syms: FourierSymbolSet,
    s_syms: FourierSymbolSet,
    tiled: TiledProlongation,
    s1: int,
    s2: int,
    kind: MatrixKind,
) -> float:
    """Sum over modes of ||M(theta)||_F^2; the singular (0, 0) mode of an
    SPSD Laplacian is skipped outright rather than detected numerically."""
    if tiled.n_coarse == 0:
        raise TilingError("tiled prolongation has no coarse positions")
    p_syms = block_diagonalize(tiled)
    total = 0.0
    for m in range(a_syms.n_modes):
        k = tuple(a_syms.ks[m])
        if kind is MatrixKind.SPSD_LAPLACIAN and k == (0, 0):
            continue
        try:
            total += _mode_norm_sq(
                a_syms.block(m), s_syms.block(m), p_syms.block(m), s1, s2
            )
        except np.linalg.LinAlgError as err:
            raise LossError(f"singular coarse block at mode {k}", mode=k) from err
    return total


def mode_norms(
    a_syms: FourierSymbolSet,
    s_syms: FourierSymbolSet,
    tiled: TiledProlongation,
    s1: int,
    s2: int,
    kind: MatrixKind,
) -> np.ndarray:
    """Per-mode ||M(theta)||_F^2; the SPSD zero mode is evaluated with a
    pseudoinverse coarse solve (its pseudo-regularized value)."""
    p_syms = block_diagonalize(tiled)
    out = np.zeros(a_syms.n_modes)
    for m in range(a_syms.n_modes):
        k = tuple(a_syms.ks[m])
        pinv = kind is MatrixKind.SPSD_LAPLACIAN and k == (0, 0)
        try:
            out[m] = _mode_norm_sq(
                a_syms.block(m), s_syms.block(m), p_syms.block(m), s1, s2, use_pinv=pinv
            )
        except np.linalg.LinAlgError as err:
            raise LossError(f"singular coarse block at mode {k}", mode=k) from err
    return out


def tiled_sparse(tiled: TiledProlongation) -> SparseMatrix:
    """The tiled prolongation as an (n x n_c') sparse matrix, coarse columns
    ordered block-major then by local coarse position."""
    return couplings_to_sparse(
        tiled.restricted_couplings(), tiled.b, tiled.c, tiled.n_coarse
    )


def dense_loss_tiled(
    p: BlockCirculantProblem, tiled: TiledProlongation, s1: int, s2: int, kind: MatrixKind
) -> float:
    """||M||_F^2 composed densely from the tiled operators.

    The relaxation factor is the tiled (block-circulant) one, so this equals
    the Fourier loss exactly up to rounding. For SPSD Laplacians the coarse
    solve uses the pseudoinverse and the pseudo-regularized zero-mode
    contribution is subtracted, mirroring the skipped singular block.
    """
    A = p.A.to_dense()
    P = tiled_sparse(tiled).to_dense()
    L = couplings_to_sparse(relaxation_couplings(p), p.b, p.c, p.c).to_dense()
    S = np.eye(p.n) - np.linalg.solve(L, A)
    coarse = P.T @ A @ P
    if kind is MatrixKind.SPSD_LAPLACIAN:
        sol = np.linalg.pinv(coarse) @ (P.T @ A)
    else:
        sol = np.linalg.solve(coarse, P.T @ A)
    M = np.eye(p.n) - P @ sol
    for _ in range(s1):
        M = M @ S
    for _ in range(s2):
        M = S @ M
    total = float(np.sum(M**2))
    if kind is MatrixKind.SPSD_LAPLACIAN:
        a_syms = block_diagonalize(p)
        s_syms = relaxation_symbol(p)
        p_syms = block_diagonalize(tiled)
        total -= _mode_norm_sq(
            a_syms.block(0), s_syms.block(0), p_syms.block(0), s1, s2, use_pinv=True
        )
    return total


def write_mode_csv(path, a_syms: FourierSymbolSet, values):
    """Per-mode diagnostic dump: columns k1, k2, value."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["k1", "k2", "value"])
        for (k1, k2), v in zip(a_syms.ks, values):
            writer.writerow([int(k1), int(k2), f"{v:.17g}"])
