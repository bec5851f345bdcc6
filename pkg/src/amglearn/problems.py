"""Problem generators: block-periodic Delaunay Laplacians, plain Delaunay
Laplacians, linear-FEM diffusion systems and kNN affinity Laplacians.

All generators are pure functions of their parameters and seed; identical
inputs give bitwise-identical matrices.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.sparse as sp
from scipy.spatial import Delaunay, QhullError, cKDTree

from .errors import ConstructionError, StructureError
from .sparse import MatrixKind, SparseMatrix, from_scipy

__all__ = [
    "WeightDistribution",
    "BlockCirculantProblem",
    "MeshProblem",
    "generate_periodic_delaunay",
    "validate_block_circulant",
    "generate_delaunay_laplacian",
    "generate_fem_diffusion",
    "generate_knn_affinity_laplacian",
    "sample_point_cloud",
]

_GEN_RETRIES = 10


@dataclass(frozen=True)
class WeightDistribution:
    """Positive edge-weight sampler: lognormal(mu, sigma) or uniform(lo, hi)."""

    tag: str
    p1: float = 0.0
    p2: float = 1.0

    def __post_init__(self):
        if self.tag == "lognormal":
            if self.p2 <= 0:
                raise ValueError("sigma must be positive")
        elif self.tag == "uniform":
            if not self.p1 < self.p2:
                raise ValueError("uniform bounds must satisfy lo < hi")
            if self.p1 < 0:
                raise ValueError("uniform weights must be nonnegative")
        else:
            raise ValueError(f"unknown distribution tag {self.tag!r}")

    @classmethod
    def standard_lognormal(cls) -> "WeightDistribution":
        return cls("lognormal", 0.0, 1.0)

    @classmethod
    def lognormal(cls, mu=0.0, sigma=1.0) -> "WeightDistribution":
        return cls("lognormal", mu, sigma)

    @classmethod
    def uniform(cls, lo=0.0, hi=1.0) -> "WeightDistribution":
        return cls("uniform", lo, hi)

    def sample(self, rng: np.random.Generator, size) -> np.ndarray:
        if self.tag == "lognormal":
            w = np.exp(rng.normal(self.p1, self.p2, size=size))
        else:
            w = rng.uniform(self.p1, self.p2, size=size)
        while np.any(w <= 0.0):  # essentially never; keeps weights strictly positive
            bad = w <= 0.0
            w[bad] = self.sample(rng, int(bad.sum()))
        return w


@dataclass(frozen=True, eq=False)
class BlockCirculantProblem:
    """Doubly block-periodic graph Laplacian on a b x b torus of c-point cells.

    Blocks are numbered column-first (block (x, y) has index x*b + y) and the
    c nodes of each block are contiguous and identically ordered, so the
    matrix satisfies A[l, j] = A[(l - k) mod n, (j - k) mod n] with k = b*c.
    `edges`/`block_offsets`/`edge_weights` describe the base cell's unique
    torus edges; offsets live in {-1, 0, 1}^2.
    """

    A: SparseMatrix
    b: int
    c: int
    base_points: np.ndarray
    edges: Optional[np.ndarray] = None  # (m, 2) local endpoint ids
    block_offsets: Optional[np.ndarray] = None  # (m, 2) lattice offsets
    edge_weights: Optional[np.ndarray] = None

    @property
    def n(self):
        return self.b * self.b * self.c

    @property
    def kind(self):
        return MatrixKind.SPSD_LAPLACIAN


@dataclass(frozen=True, eq=False)
class MeshProblem:
    """Linear-FEM diffusion system on a Delaunay mesh of the unit square.

    `A` is the SPD system after Dirichlet elimination of the boundary (convex
    hull) nodes; `stiffness_full` keeps the pre-elimination operator whose
    null space contains the constants.
    """

    points: np.ndarray
    triangles: np.ndarray
    A: SparseMatrix
    boundary_nodes: np.ndarray
    interior_nodes: np.ndarray
    stiffness_full: SparseMatrix
    coefficients: np.ndarray

    @property
    def kind(self):
        return MatrixKind.SPD


def _child_rng(seed, attempt):
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(attempt)]))


def _delaunay_edges(points) -> np.ndarray:
    """Unique undirected edges (i < j) of the Delaunay triangulation."""
    tri = Delaunay(points)
    simplices = tri.simplices
    pairs = np.concatenate(
        [simplices[:, [0, 1]], simplices[:, [1, 2]], simplices[:, [0, 2]]], axis=0
    )
    pairs = np.sort(pairs, axis=1)
    return np.unique(pairs, axis=0)


def _laplacian_from_edges(n, edges_i, edges_j, weights) -> SparseMatrix:
    rows = np.concatenate([edges_i, edges_j, edges_i, edges_j])
    cols = np.concatenate([edges_j, edges_i, edges_i, edges_j])
    vals = np.concatenate([-weights, -weights, weights, weights])
    m = sp.coo_matrix((vals, (rows, cols)), shape=(n, n)).tocsr()
    m.sum_duplicates()
    m.sort_indices()
    return from_scipy(m)


_CELL_OFFSETS = [(0, 0)] + [
    (dx, dy) for dx in (-1, 0, 1) for dy in (-1, 0, 1) if (dx, dy) != (0, 0)
]


def couplings_to_sparse(couplings: dict, b: int, c_row: int, c_col: int) -> SparseMatrix:
    """Assemble the full operator of a doubly block-periodic coupling map.

    `couplings[(s1, s2)]` is the (c_row, c_col) coupling from any block to the
    block at wrapped lattice offset (s1, s2); values are replicated bitwise,
    so the result is exactly block-circulant. Stored zeros inside a coupling
    are dropped unless an explicit boolean `mask` accompanies it as
    ``(matrix, mask)``.
    """
    rows_parts, cols_parts, vals_parts = [], [], []
    bx, by = np.meshgrid(np.arange(b), np.arange(b), indexing="ij")
    bx, by = bx.ravel(), by.ravel()
    block_row = bx * b + by
    for (s1, s2), entry in sorted(couplings.items()):
        if isinstance(entry, tuple):
            mat, mask = entry
        else:
            mat, mask = entry, entry != 0.0
        ii, jj = np.nonzero(mask)
        if len(ii) == 0:
            continue
        vals = np.asarray(mat, dtype=np.float64)[ii, jj]
        block_col = ((bx + s1) % b) * b + (by + s2) % b
        rows = (block_row[:, None] * c_row + ii[None, :]).ravel()
        cols = (block_col[:, None] * c_col + jj[None, :]).ravel()
        rows_parts.append(rows)
        cols_parts.append(cols)
        vals_parts.append(np.broadcast_to(vals[None, :], (b * b, len(ii))).ravel())
    n_rows, n_cols = b * b * c_row, b * b * c_col
    if not rows_parts:
        return from_scipy(sp.csr_matrix((n_rows, n_cols)))
    rows = np.concatenate(rows_parts)
    cols = np.concatenate(cols_parts)
    vals = np.concatenate(vals_parts)
    order = np.lexsort((cols, rows))
    rows, cols, vals = rows[order], cols[order], vals[order]
    # offsets are distinct mod b (|s| <= 2 < b is not guaranteed, but collisions
    # would show up as duplicates here), so entries are unique
    if np.any((np.diff(rows) == 0) & (np.diff(cols) == 0)):
        raise StructureError("coupling offsets collide modulo the block grid")
    indptr = np.concatenate(([0], np.cumsum(np.bincount(rows, minlength=n_rows))))
    return SparseMatrix(n_rows, n_cols, indptr.astype(np.int64), cols, vals)


def generate_periodic_delaunay(
    b: int, c: int, dist: WeightDistribution, seed: int
) -> BlockCirculantProblem:
    """Block-circulant Laplacian: c points per unit cell, tiled b x b with
    periodic wrap-around.

    The torus triangulation comes from replicating the cell over a 3x3 ghost
    neighborhood, triangulating, and keeping edges incident to the central
    copy; one weight is sampled per unique base edge and replicated to every
    block, so the defining shift identity holds exactly (the base-cell
    couplings are accumulated once and copied bitwise to all blocks).
    """
    if b < 3:
        raise ValueError("b must be >= 3 so lattice offsets fit in {-1,0,1}^2")
    if c < 2:
        raise ValueError("c must be >= 2")
    for attempt in range(_GEN_RETRIES):
        rng = _child_rng(seed, attempt)
        base = rng.random((c, 2))
        ghost = np.concatenate([base + np.array(off) for off in _CELL_OFFSETS], axis=0)
        try:
            pairs = _delaunay_edges(ghost)
        except QhullError:
            continue
        edge_set = set()
        for p, q in pairs:
            cp, cq = p // c, q // c
            if cp != 0 and cq != 0:
                continue
            if cp != 0:
                p, q, cp, cq = q, p, cq, cp
            i, j = int(p % c), int(q % c)
            s = _CELL_OFFSETS[cq]
            key = min((i, j, s), (j, i, (-s[0], -s[1])))
            edge_set.add(key)
        edges = sorted(edge_set)
        touched = {e[0] for e in edges} | {e[1] for e in edges}
        if len(touched) < c:
            continue  # degenerate: some base point has no incident edge
        weights = dist.sample(rng, len(edges))
        couplings = {}
        for (i, j, s), w in zip(edges, weights):
            for (a, bb, off) in ((i, j, s), (j, i, (-s[0], -s[1]))):
                couplings.setdefault(off, np.zeros((c, c)))[a, bb] += -w
            couplings.setdefault((0, 0), np.zeros((c, c)))
            couplings[(0, 0)][i, i] += w
            couplings[(0, 0)][j, j] += w
        A = couplings_to_sparse(couplings, b, c, c)
        ei = np.array([e[0] for e in edges], dtype=np.int64)
        ej = np.array([e[1] for e in edges], dtype=np.int64)
        offs = np.array([e[2] for e in edges], dtype=np.int64).reshape(-1, 2)
        problem = BlockCirculantProblem(A, b, c, base, np.column_stack([ei, ej]), offs, weights)
        if not validate_block_circulant(problem):
            raise StructureError("generator produced a non-circulant operator")
        return problem
    raise ConstructionError(f"degenerate point set persisted over {_GEN_RETRIES} retries")


def validate_block_circulant(p: BlockCirculantProblem) -> bool:
    """Exhaustively check A[l, j] == A[(l-k) mod n, (j-k) mod n], k = b*c."""
    A, n, k = p.A, p.n, p.b * p.c
    if A.n_rows != n or A.n_cols != n:
        return False
    rows = np.repeat(np.arange(n), np.diff(A.row_offsets))
    keys = rows * n + A.col_indices
    shifted = ((rows - k) % n) * n + ((A.col_indices - k) % n)
    order = np.argsort(keys, kind="stable")
    order_s = np.argsort(shifted, kind="stable")
    if not np.array_equal(keys[order], shifted[order_s]):
        return False
    return np.array_equal(A.values[order], A.values[order_s])


def generate_delaunay_laplacian(n: int, dist: WeightDistribution, seed: int):
    """Graph Laplacian of a Delaunay triangulation of n uniform points on the
    unit square, one positive weight per edge. Returns (matrix, points)."""
    if n < 3:
        raise ValueError("n must be >= 3")
    for attempt in range(_GEN_RETRIES):
        rng = _child_rng(seed, attempt)
        points = rng.random((n, 2))
        try:
            pairs = _delaunay_edges(points)
        except QhullError:
            continue
        weights = dist.sample(rng, len(pairs))
        A = _laplacian_from_edges(n, pairs[:, 0], pairs[:, 1], weights)
        return A, points
    raise ConstructionError(f"degenerate point set persisted over {_GEN_RETRIES} retries")


def _triangle_stiffness(points, triangles, coefficients):
    """Element-wise linear (P1) stiffness assembly, vectorized over triangles."""
    p0 = points[triangles[:, 0]]
    p1 = points[triangles[:, 1]]
    p2 = points[triangles[:, 2]]
    # signed double areas; gradients of the barycentric basis functions
    d = (p1[:, 0] - p0[:, 0]) * (p2[:, 1] - p0[:, 1]) - (p2[:, 0] - p0[:, 0]) * (
        p1[:, 1] - p0[:, 1]
    )
    area = 0.5 * np.abs(d)
    grads = np.empty((len(triangles), 3, 2))
    grads[:, 0, 0] = p1[:, 1] - p2[:, 1]
    grads[:, 0, 1] = p2[:, 0] - p1[:, 0]
    grads[:, 1, 0] = p2[:, 1] - p0[:, 1]
    grads[:, 1, 1] = p0[:, 0] - p2[:, 0]
    grads[:, 2, 0] = p0[:, 1] - p1[:, 1]
    grads[:, 2, 1] = p1[:, 0] - p0[:, 0]
    grads /= d[:, None, None]
    local = np.einsum("tid,tjd->tij", grads, grads) * (coefficients * area)[:, None, None]
    return area, local


def generate_fem_diffusion(
    n: int, g_dist: Optional[WeightDistribution] = None, seed: int = 0
) -> MeshProblem:
    """Linear-FEM discretization of -div(g grad u) = f on a random Delaunay
    mesh of the unit square, g constant per triangle, Dirichlet rows/columns
    eliminated on the convex hull."""
    if n < 8:
        raise ValueError("n must be >= 8")
    if g_dist is None:
        g_dist = WeightDistribution.lognormal(0.0, 0.5)
    for attempt in range(_GEN_RETRIES):
        rng = _child_rng(seed, attempt)
        points = rng.random((n, 2))
        try:
            tri = Delaunay(points)
        except QhullError:
            continue
        triangles = tri.simplices.astype(np.int64)
        g = g_dist.sample(rng, len(triangles))
        area, local = _triangle_stiffness(points, triangles, g)
        if np.any(area < 1e-12):
            continue  # zero-area triangle: regenerate the mesh
        rows = np.repeat(triangles, 3, axis=1).ravel()
        cols = np.tile(triangles, (1, 3)).ravel()
        stiff = sp.coo_matrix((local.ravel(), (rows, cols)), shape=(n, n)).tocsr()
        stiff.sum_duplicates()
        stiff.sort_indices()
        full = from_scipy(stiff)
        boundary = np.unique(tri.convex_hull.ravel()).astype(np.int64)
        interior = np.setdiff1d(np.arange(n, dtype=np.int64), boundary)
        if len(interior) == 0:
            continue
        A = from_scipy(stiff[interior][:, interior])
        return MeshProblem(points, triangles, A, boundary, interior, full, g)
    raise ConstructionError(f"degenerate mesh persisted over {_GEN_RETRIES} retries")


def sample_point_cloud(points_spec: str, n: int, seed: int) -> np.ndarray:
    """Documented point-cloud families for the kNN Laplacian generator.

    two-gaussians: halves from isotropic Gaussians with std 1.0 and 2.5,
        centers uniform in [-10, 10]^2.
    five-gaussians: fifths from isotropic Gaussians with std 1.0, centers
        uniform in [-10, 10]^2.
    moons: two interleaving half circles of radius 1, Gaussian noise std 0.05.
    circles: concentric circles of radius 1.0 and 0.5, Gaussian noise std 0.05.
    """
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0x9E37]))
    if points_spec == "two-gaussians":
        centers = rng.uniform(-10.0, 10.0, size=(2, 2))
        stds = (1.0, 2.5)
        sizes = (n // 2, n - n // 2)
        parts = [rng.normal(c, s, size=(m, 2)) for c, s, m in zip(centers, stds, sizes)]
        return np.concatenate(parts, axis=0)
    if points_spec == "five-gaussians":
        centers = rng.uniform(-10.0, 10.0, size=(5, 2))
        sizes = [n // 5] * 4 + [n - 4 * (n // 5)]
        parts = [rng.normal(c, 1.0, size=(m, 2)) for c, m in zip(centers, sizes)]
        return np.concatenate(parts, axis=0)
    if points_spec == "moons":
        n1, n2 = n // 2, n - n // 2
        t1 = rng.uniform(0.0, np.pi, size=n1)
        t2 = rng.uniform(0.0, np.pi, size=n2)
        outer = np.column_stack([np.cos(t1), np.sin(t1)])
        inner = np.column_stack([1.0 - np.cos(t2), 0.5 - np.sin(t2)])
        pts = np.concatenate([outer, inner], axis=0)
        return pts + rng.normal(0.0, 0.05, size=pts.shape)
    if points_spec == "circles":
        n1, n2 = n // 2, n - n // 2
        t1 = rng.uniform(0.0, 2 * np.pi, size=n1)
        t2 = rng.uniform(0.0, 2 * np.pi, size=n2)
        pts = np.concatenate(
            [
                np.column_stack([np.cos(t1), np.sin(t1)]),
                0.5 * np.column_stack([np.cos(t2), np.sin(t2)]),
            ],
            axis=0,
        )
        return pts + rng.normal(0.0, 0.05, size=pts.shape)
    raise ValueError(f"unknown points_spec {points_spec!r}")


def generate_knn_affinity_laplacian(
    points_spec: str, k: int = 10, seed: int = 0, n: int = 1024, jitter: bool = False
) -> SparseMatrix:
    """Symmetric normalized Laplacian A = I - D^{-1/2} S D^{-1/2} of the
    union-symmetrized kNN graph with affinities S_ij = exp(-d_ij^2).

    With `jitter`, U(0, 0.2) is added to the diagonal, making A SPD; without
    it A is singular with null vector D^{1/2} 1.
    """
    points = sample_point_cloud(points_spec, n, seed)
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0xAF1]))
    tree = cKDTree(points)
    dist, idx = tree.query(points, k=k + 1)
    if np.any(dist[:, 1] == 0.0):  # duplicate points: nudge and rebuild
        dup = dist[:, 1] == 0.0
        points = points.copy()
        points[dup] += 1e-9 * rng.standard_normal((int(dup.sum()), 2))
        tree = cKDTree(points)
        dist, idx = tree.query(points, k=k + 1)
    rows = np.repeat(np.arange(n), k)
    cols = idx[:, 1:].ravel()
    affinity = np.exp(-(dist[:, 1:].ravel() ** 2))
    S = sp.coo_matrix((affinity, (rows, cols)), shape=(n, n)).tocsr()
    S = S.maximum(S.T)  # union symmetrization: keep an edge if either side picked it
    d = np.asarray(S.sum(axis=1)).ravel()
    dinv = 1.0 / np.sqrt(d)
    Snorm = sp.diags(dinv) @ S @ sp.diags(dinv)
    diag = np.ones(n)
    if jitter:
        diag = diag + rng.uniform(0.0, 0.2, size=n)
    A = sp.diags(diag) - Snorm
    return from_scipy(A.tocsr())
