import numpy as np
import pytest
import scipy.sparse as sp

from amglearn.problems import WeightDistribution, generate_delaunay_laplacian
from amglearn.sparse import from_coordinates, from_scipy


def random_sparse(rng, n, m=None, density=0.3):
    """Random sparse matrix with at least one entry per row."""
    m = n if m is None else m
    mask = rng.random((n, m)) < density
    mask[np.arange(n), rng.integers(0, m, n)] = True
    dense = np.where(mask, rng.standard_normal((n, m)), 0.0)
    return from_scipy(sp.csr_matrix(dense)), dense


def random_spd(rng, n, jitter=0.5):
    """Dense-backed random SPD sparse matrix."""
    B = rng.standard_normal((n, n)) * (rng.random((n, n)) < 0.4)
    dense = B @ B.T + jitter * np.eye(n) * n
    return from_scipy(sp.csr_matrix(dense)), dense


def laplacian(n, seed, dist=None):
    dist = dist or WeightDistribution.standard_lognormal()
    A, pts = generate_delaunay_laplacian(n, dist, seed)
    return A


def jittered_laplacian(n, seed, lo=0.05, hi=0.2):
    """SPD matrix: Delaunay Laplacian plus a positive diagonal."""
    A = laplacian(n, seed)
    rng = np.random.default_rng(seed + 1000)
    return from_scipy(A.to_scipy() + sp.diags(rng.uniform(lo, hi, n)))


def path_laplacian(n, weight=1.0):
    triples = []
    for i in range(n - 1):
        triples += [(i, i + 1, -weight), (i + 1, i, -weight)]
        triples += [(i, i, weight), (i + 1, i + 1, weight)]
    return from_coordinates(triples, n, n)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
