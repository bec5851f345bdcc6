"""Matrix Market I/O plus the sidecar text manifest used when saving problem
corpora. Indices are 1-based on disk, 0-based in memory."""

from __future__ import annotations

import numpy as np
import scipy.io
import scipy.sparse as sp

from .sparse import SparseMatrix, from_scipy

__all__ = [
    "write_matrix_market",
    "read_matrix_market",
    "write_manifest",
    "read_manifest",
    "write_points_csv",
    "read_points_csv",
]


def write_matrix_market(path, A: SparseMatrix, symmetric: bool = False):
    sym = "symmetric" if symmetric else "general"
    scipy.io.mmwrite(str(path), A.to_scipy().tocoo(), field="real", symmetry=sym)


def read_matrix_market(path) -> SparseMatrix:
    m = scipy.io.mmread(str(path))
    return from_scipy(sp.csr_matrix(m))


def write_manifest(path, entries: dict):
    """Plain `key = value` lines, one per entry."""
    with open(path, "w") as fh:
        for key, value in entries.items():
            fh.write(f"{key} = {value}\n")


def read_manifest(path) -> dict:
    out = {}
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            key, _, value = line.partition("=")
            out[key.strip()] = value.strip()
    return out


def write_points_csv(path, points: np.ndarray):
    points = np.asarray(points)
    header = ",".join(("x", "y", "z")[: points.shape[1]])
    np.savetxt(path, points, delimiter=",", header=header, comments="", fmt="%.17g")


def read_points_csv(path) -> np.ndarray:
    return np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
