"""Two-level theory versus practice.

The error propagation matrix M = S^{s2} C S^{s1} predicts the asymptotic
behaviour of the two-level cycle: the measured residual-ratio factor should
land on the spectral radius of M, and the error after one cycle should equal
M times the initial error.
"""

import numpy as np
import scipy.sparse as sp

from amglearn.classical import direct_interpolation
from amglearn.cycle import (
    CycleConfig,
    asymptotic_convergence_factor,
    build_hierarchy,
    coarse_correction_matrix,
    cycle,
    error_propagation_matrix,
    spectral_radius,
)
from amglearn.problems import WeightDistribution, generate_delaunay_laplacian
from amglearn.sparse import MatrixKind, build_relaxation_dense, from_scipy

rng = np.random.default_rng(7)
A0, _ = generate_delaunay_laplacian(400, WeightDistribution.standard_lognormal(), seed=7)
A = from_scipy(A0.to_scipy() + sp.diags(rng.uniform(0.05, 0.2, 400)))  # make it SPD

config = CycleConfig(cycle="W", max_levels=2, max_coarse_size=1)
h = build_hierarchy(A, config, lambda a, s, p: direct_interpolation(a, s, p), MatrixKind.SPD)
P = h.levels[0].P
print(f"two-level hierarchy: {A.n_rows} -> {P.n_cols}")

Ad = A.to_dense()
Pd = P.to_dense()
S = build_relaxation_dense(A)
C = coarse_correction_matrix(Ad, Pd)
M = error_propagation_matrix(Ad, Pd, 1, 1)

print(f"relaxation alone:   rho(S) = {np.abs(np.linalg.eigvals(S)).max():.4f}")
print(f"coarse correction:  ||C P||_F / ||P||_F = "
      f"{np.linalg.norm(C @ Pd) / np.linalg.norm(Pd):.2e}  (exactly annihilates range(P))")
print(f"two-level together: rho(M) = {np.abs(np.linalg.eigvals(M)).max():.4f}")
print(f"power iteration:    rho(M) ~ {spectral_radius(M):.4f}")

# one cycle on the homogeneous problem propagates the error by M
e0 = rng.standard_normal(A.n_rows)
e1 = cycle(h, 0, np.zeros(A.n_rows), e0, config)
print(f"matrix vs procedure: ||e1 - M e0|| / ||M e0|| = "
      f"{np.linalg.norm(e1 - M @ e0) / np.linalg.norm(M @ e0):.2e}")

factor = asymptotic_convergence_factor(h, config, seed=0)
print(f"measured asymptotic factor over 80 cycles: {factor:.4f}")
