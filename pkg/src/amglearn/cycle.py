"""Multilevel cycle engine: hierarchy construction, V/W cycles, error
propagation matrices and convergence-factor measurement."""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
import scipy.linalg

from .classical import Splitting, SparsityPattern, split_and_pattern
from .errors import DivergenceError, HierarchyError, SingularCoarseError
from .sparse import MatrixKind, SparseMatrix, gauss_seidel_sweep, triple_product

__all__ = [
    "CycleConfig",
    "Level",
    "Hierarchy",
    "build_hierarchy",
    "cycle",
    "solve",
    "coarse_correction_matrix",
    "error_propagation_matrix",
    "spectral_radius",
    "asymptotic_convergence_factor",
    "preconditioner_apply",
    "write_residual_history",
]

# (A_level, splitting, pattern) -> P
ProlongationProvider = Callable[[SparseMatrix, Splitting, SparsityPattern], SparseMatrix]


@dataclass(frozen=True)
class CycleConfig:
    s1: int = 1
    s2: int = 1
    cycle: str = "W"
    max_levels: int = 12
    max_coarse_size: int = 64
    delta: float = 1e-8
    max_iterations: int = 500
    divergence_factor: float = 1e6
    theta: float = 0.25
    seed: int = 0
    coarsest: str = "dense-solve"  # or "relax-only"

    def __post_init__(self):
        if self.s1 < 0 or self.s2 < 0:
            raise ValueError("sweep counts must be nonnegative")
        if self.max_coarse_size < 1:
            raise ValueError("max_coarse_size must be >= 1")
        if self.cycle not in ("V", "W"):
            raise ValueError("cycle must be 'V' or 'W'")
        if self.coarsest not in ("dense-solve", "relax-only"):
            raise ValueError("coarsest must be 'dense-solve' or 'relax-only'")


@dataclass(frozen=True, eq=False)
class Level:
    A: SparseMatrix
    P: Optional[SparseMatrix] = None
    splitting: Optional[Splitting] = None
    pattern: Optional[SparsityPattern] = None


@dataclass(frozen=True, eq=False)
class Hierarchy:
    levels: list
    kind: MatrixKind
    coarsest: str = "dense-solve"
    _coarse_solver: object = field(default=None, repr=False)

    @property
    def n(self):
        return self.levels[0].A.n_rows


def _make_coarse_solver(A: SparseMatrix, kind: MatrixKind):
    """Dense factorization of the coarsest operator.

    SPD uses Cholesky (and reports rank-deficiency as a hierarchy error).
    SPSD Laplacians are solved in the mean-zero subspace via pseudoinverse;
    a null space larger than the constants also signals rank deficiency.
    """
    dense = A.to_dense()
    n = A.n_rows
    if kind is MatrixKind.SPSD_LAPLACIAN:
        eigs = np.linalg.eigvalsh(dense)
        scale = max(abs(eigs[0]), abs(eigs[-1]), 1e-300)
        null_dim = int(np.sum(eigs < 1e-10 * scale))
        if null_dim > 1:
            raise HierarchyError(
                f"coarsest operator has a {null_dim}-dimensional null space; "
                "prolongation is likely rank-deficient"
            )
        pinv = np.linalg.pinv(dense, hermitian=True)

        def solve_spsd(b):
            b0 = b - b.mean()
            x = pinv @ b0
            return x - x.mean()

        return solve_spsd
    try:
        cho = scipy.linalg.cho_factor(dense)
    except (np.linalg.LinAlgError, scipy.linalg.LinAlgError) as err:
        raise HierarchyError(f"singular coarsest operator: {err}") from err
    pivots = np.abs(np.diag(cho[0]))
    # exact singularity can round to a tiny positive pivot; treat it as rank
    # deficiency rather than solving garbage
    if pivots.min() <= 1e-7 * pivots.max():
        raise HierarchyError("coarsest operator is numerically singular")

    def solve_spd(b):
        return scipy.linalg.cho_solve(cho, b)

    return solve_spd


def build_hierarchy(
    A: SparseMatrix,
    config: CycleConfig,
    prolongation_provider: ProlongationProvider,
    kind: MatrixKind = MatrixKind.SPD,
) -> Hierarchy:
    """Galerkin hierarchy: repeatedly split, ask the provider for P, coarsen.

    Stops once the level is small enough, the level cap is reached, or the
    splitting stops shrinking the problem.
    """
    levels = []
    current = A
    while current.n_rows > config.max_coarse_size and len(levels) + 1 < config.max_levels:
        _, splitting, pattern = split_and_pattern(current, config.theta, config.seed)
        if splitting.n_coarse >= current.n_rows:
            break  # cannot shrink further (e.g. edgeless operator)
        P = prolongation_provider(current, splitting, pattern)
        if P.n_rows != current.n_rows or P.n_cols != splitting.n_coarse:
            raise HierarchyError("provider returned a misshaped prolongation")
        levels.append(Level(current, P, splitting, pattern))
        current = triple_product(P, current)
    levels.append(Level(current))
    solver = _make_coarse_solver(current, kind) if config.coarsest == "dense-solve" else None
    return Hierarchy(levels, kind, config.coarsest, solver)


def cycle(h: Hierarchy, level: int, b, x, config: CycleConfig) -> np.ndarray:
    """One multilevel cycle at `level`: pre-sweeps, coarse correction via one
    (V) or two (W) recursive calls, post-sweeps."""
    lvl = h.levels[level]
    A = lvl.A
    x = np.asarray(x, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if x.shape != (A.n_rows,) or b.shape != (A.n_rows,):
        raise ValueError("dimension mismatch in cycle")
    if level == len(h.levels) - 1:
        if h.coarsest == "dense-solve":
            if h._coarse_solver is None:
                raise SingularCoarseError("hierarchy has no coarsest solver")
            return h._coarse_solver(b)
        for _ in range(config.s1 + config.s2):
            x = gauss_seidel_sweep(A, b, x)
        return x
    for _ in range(config.s1):
        x = gauss_seidel_sweep(A, b, x)
    r = b - A.to_scipy() @ x
    rc = lvl.P.to_scipy().T @ r
    ec = np.zeros(lvl.P.n_cols)
    # W-cycles recurse twice, except into a dense-solved coarsest level where
    # the second (exact) call could not change anything.
    next_is_exact = level + 1 == len(h.levels) - 1 and h.coarsest == "dense-solve"
    recursions = 2 if config.cycle == "W" and not next_is_exact else 1
    for _ in range(recursions):
        ec = cycle(h, level + 1, rc, ec, config)
    x = x + lvl.P.to_scipy() @ ec
    for _ in range(config.s2):
        x = gauss_seidel_sweep(A, b, x)
    return x


def solve(h: Hierarchy, b, x0, config: CycleConfig):
    """Iterate cycles until the residual 2-norm drops below config.delta.

    Returns (x, residual_history); history[0] is the initial residual norm.
    """
    A = h.levels[0].A.to_scipy()
    b = np.asarray(b, dtype=np.float64)
    x = np.asarray(x0, dtype=np.float64).copy()
    if h.kind is MatrixKind.SPSD_LAPLACIAN:
        scale = max(np.abs(b).max(), 1e-300) if b.size else 1.0
        if abs(b.mean()) > 1e-8 * scale:
            raise ValueError("right-hand side must have zero mean for SPSD systems")
    r0 = float(np.linalg.norm(b - A @ x))
    history = [r0]
    if r0 < config.delta:
        return x, history
    for _ in range(config.max_iterations):
        x = cycle(h, 0, b, x, config)
        r = float(np.linalg.norm(b - A @ x))
        history.append(r)
        if r < config.delta:
            break
        if r > config.divergence_factor * max(r0, 1e-300):
            raise DivergenceError(f"residual grew from {r0:.3e} to {r:.3e}")
    return x, history


def coarse_correction_matrix(A_dense: np.ndarray, P_dense: np.ndarray) -> np.ndarray:
    """C = I - P [P^T A P]^{-1} P^T A, the coarse-correction error propagation."""
    coarse = P_dense.T @ A_dense @ P_dense
    try:
        sol = np.linalg.solve(coarse, P_dense.T @ A_dense)
    except np.linalg.LinAlgError as err:
        raise SingularCoarseError(str(err)) from err
    return np.eye(A_dense.shape[0]) - P_dense @ sol


def error_propagation_matrix(
    A_dense: np.ndarray, P_dense: np.ndarray, s1: int, s2: int
) -> np.ndarray:
    """Two-level matrix M = S^{s2} C S^{s1} with S the Gauss-Seidel propagator."""
    L = np.tril(A_dense)
    S = np.eye(A_dense.shape[0]) - scipy.linalg.solve_triangular(L, A_dense, lower=True)
    M = coarse_correction_matrix(A_dense, P_dense)
    for _ in range(s1):
        M = M @ S
    for _ in range(s2):
        M = S @ M
    return M


class PowerIterationWarning(UserWarning):
    pass


def spectral_radius(M: np.ndarray, tol: float = 1e-8, max_iterations: int = 10000, seed: int = 0) -> float:
    """Dominant eigenvalue magnitude by two-vector power iteration.

    A pair of iterated vectors handles complex conjugate dominant pairs; the
    projected 2x2 eigenvalues are available in closed form, so no dense
    eigensolver is involved. Stagnating subspaces trigger a restart from a
    fresh random pair rather than deflation. Non-convergence returns the best
    estimate and emits a PowerIterationWarning.
    """
    M = np.asarray(M, dtype=np.float64)
    n = M.shape[0]
    if M.shape != (n, n):
        raise ValueError("M must be square")
    if n == 0:
        return 0.0
    if n == 1:
        return abs(float(M[0, 0]))
    rng = np.random.default_rng(seed)
    V, _ = np.linalg.qr(rng.standard_normal((n, 2)))
    rho = 0.0
    for it in range(max_iterations):
        W = M @ V
        B = V.T @ W  # 2x2 projection in the orthonormal basis V
        a, bb, c, d = B[0, 0], B[0, 1], B[1, 0], B[1, 1]
        disc = complex((a - d) ** 2 + 4 * bb * c) ** 0.5
        rho_new = max(abs((a + d + disc) / 2), abs((a + d - disc) / 2))
        if it > 0 and abs(rho_new - rho) <= tol * max(1.0, rho_new):
            return float(rho_new)
        rho = rho_new
        norms = np.linalg.norm(W, axis=0)
        if norms.max() < 1e-290:
            return 0.0  # iterates vanished: spectral radius is (numerically) zero
        V, R = np.linalg.qr(W)
        if abs(R[1, 1]) < 1e-14 * max(abs(R[0, 0]), 1e-300):
            # rank collapse: restart second direction at random
            V = np.column_stack([V[:, 0], rng.standard_normal(n)])
            V, _ = np.linalg.qr(V)
    warnings.warn("power iteration did not converge", PowerIterationWarning)
    return float(rho)


def asymptotic_convergence_factor(
    h: Hierarchy, config: CycleConfig, seed: int = 0, n_cycles: int = 80
) -> float:
    """Residual-ratio convergence factor after `n_cycles` cycles on A x = 0.

    Starts from a unit-normal random iterate; SPSD runs subtract the iterate
    mean each cycle so the exact solution stays at zero. If the residual
    underflows below 1e-280 the last well-defined ratio is returned.
    """
    A = h.levels[0].A.to_scipy()
    n = h.n
    rng = np.random.default_rng(seed)
    x = rng.standard_normal(n)
    b = np.zeros(n)
    prev = float(np.linalg.norm(A @ x))
    ratio = 0.0
    for _ in range(n_cycles):
        x = cycle(h, 0, b, x, config)
        if h.kind is MatrixKind.SPSD_LAPLACIAN:
            x = x - x.mean()
        r = float(np.linalg.norm(A @ x))
        if r < 1e-280 or prev < 1e-280:
            return ratio
        ratio = r / prev
        prev = r
    return ratio


def preconditioner_apply(h: Hierarchy, r, config: CycleConfig) -> np.ndarray:
    """One cycle applied to A x = r from a zero initial guess (a fixed linear map)."""
    r = np.asarray(r, dtype=np.float64)
    if r.shape != (h.n,):
        raise ValueError("dimension mismatch in preconditioner_apply")
    return cycle(h, 0, r, np.zeros(h.n), config)


def write_residual_history(path, history):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["iteration", "residual_2norm"])
        for i, r in enumerate(history):
            writer.writerow([i, f"{r:.17g}"])
