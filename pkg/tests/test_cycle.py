import numpy as np
import pytest

from amglearn.classical import direct_interpolation
from amglearn.cycle import (
    CycleConfig,
    Hierarchy,
    Level,
    asymptotic_convergence_factor,
    build_hierarchy,
    coarse_correction_matrix,
    cycle,
    error_propagation_matrix,
    preconditioner_apply,
    solve,
    spectral_radius,
    write_residual_history,
)
from amglearn.errors import DivergenceError, HierarchyError
from amglearn.problems import WeightDistribution, generate_delaunay_laplacian, generate_fem_diffusion
from amglearn.sparse import MatrixKind, build_relaxation_dense, from_coordinates, from_scipy

from conftest import jittered_laplacian, path_laplacian, random_spd


def baseline(A, splitting, pattern):
    return direct_interpolation(A, splitting, pattern)


def spd_hierarchy(n, seed, **kw):
    A = jittered_laplacian(n, seed)
    cfg = CycleConfig(**kw)
    return A, cfg, build_hierarchy(A, cfg, baseline, MatrixKind.SPD)


class TestBuildHierarchy:
    def test_small_problem_single_level(self):
        A = jittered_laplacian(30, seed=0)
        cfg = CycleConfig(max_coarse_size=64)
        h = build_hierarchy(A, cfg, baseline, MatrixKind.SPD)
        assert len(h.levels) == 1

    def test_sizes_strictly_decreasing(self):
        dist = WeightDistribution.standard_lognormal()
        A, _ = generate_delaunay_laplacian(1024, dist, seed=3)
        cfg = CycleConfig(max_coarse_size=64)
        h = build_hierarchy(A, cfg, baseline, MatrixKind.SPSD_LAPLACIAN)
        sizes = [l.A.n_rows for l in h.levels]
        assert len(sizes) >= 2
        assert all(a > b for a, b in zip(sizes, sizes[1:]))
        assert sizes[-1] <= 64

    def test_galerkin_recomputation(self):
        from amglearn.sparse import triple_product

        A, cfg, h = spd_hierarchy(300, seed=1, max_coarse_size=32)
        for lvl, nxt in zip(h.levels, h.levels[1:]):
            ref = triple_product(lvl.P, lvl.A).to_dense()
            got = nxt.A.to_dense()
            assert np.abs(got - ref).max() <= 1e-12 * max(np.abs(ref).max(), 1.0)

    def test_galerkin_symmetry(self):
        A, cfg, h = spd_hierarchy(300, seed=2, max_coarse_size=32)
        for lvl in h.levels[1:]:
            D = lvl.A.to_dense()
            assert np.abs(D - D.T).max() <= 1e-12 * np.abs(D).max()

    def test_rank_deficient_provider_rejected(self):
        A = jittered_laplacian(80, seed=3)

        def bad_provider(Al, splitting, pattern):
            P = baseline(Al, splitting, pattern).to_dense()
            P[:, -1] = P[:, 0]  # duplicate column: rank deficient
            import scipy.sparse as sp

            return from_scipy(sp.csr_matrix(P))

        # the rank-deficient Galerkin product becomes the coarsest level,
        # where the dense factorization detects it
        cfg = CycleConfig(max_coarse_size=16, max_levels=2)
        with pytest.raises(HierarchyError):
            build_hierarchy(A, cfg, bad_provider, MatrixKind.SPD)


class TestCycle:
    def test_exact_solution_unchanged(self, rng):
        A, cfg, h = spd_hierarchy(200, seed=4, max_coarse_size=32)
        x = rng.standard_normal(200)
        b = A.to_scipy() @ x
        out = cycle(h, 0, b, x, cfg)
        assert np.linalg.norm(out - x) <= 1e-12 * np.linalg.norm(x)

    def test_square_invertible_p_one_cycle_exact(self, rng):
        # two levels, zero sweeps, exact coarse solve, P = I
        A, dense = random_spd(rng, 24)
        P = from_coordinates([(i, i, 1.0) for i in range(24)], 24, 24)
        levels = [Level(A, P, None, None), Level(A)]
        from amglearn.cycle import _make_coarse_solver

        h = Hierarchy(levels, MatrixKind.SPD, "dense-solve", _make_coarse_solver(A, MatrixKind.SPD))
        cfg = CycleConfig(s1=0, s2=0, cycle="V")
        x = rng.standard_normal(24)
        b = dense @ x
        out = cycle(h, 0, b, np.zeros(24), cfg)
        assert np.linalg.norm(out - x) <= 1e-10 * np.linalg.norm(x)

    def test_two_level_cycle_equals_error_matrix(self, rng):
        for n, seed in ((64, 5), (150, 6), (256, 7)):
            A = jittered_laplacian(n, seed)
            cfg = CycleConfig(max_coarse_size=1, max_levels=2, cycle="V")
            h = build_hierarchy(A, cfg, baseline, MatrixKind.SPD)
            assert len(h.levels) == 2
            M = error_propagation_matrix(A.to_dense(), h.levels[0].P.to_dense(), cfg.s1, cfg.s2)
            e0 = rng.standard_normal(n)
            e1 = cycle(h, 0, np.zeros(n), e0, cfg)
            ref = M @ e0
            assert np.linalg.norm(e1 - ref) <= 1e-10 * max(np.linalg.norm(ref), 1.0)


class TestSolve:
    def test_zero_rhs_returns_immediately(self):
        A, cfg, h = spd_hierarchy(100, seed=8, max_coarse_size=32)
        x, history = solve(h, np.zeros(100), np.zeros(100), cfg)
        assert len(history) == 1
        assert np.array_equal(x, np.zeros(100))

    def test_fem_spd_converges(self):
        mesh = generate_fem_diffusion(1024, None, seed=11)
        cfg = CycleConfig(delta=1e-8, max_coarse_size=64)
        h = build_hierarchy(mesh.A, cfg, baseline, MatrixKind.SPD)
        n = mesh.A.n_rows
        b = np.ones(n)
        x, history = solve(h, b, np.zeros(n), cfg)
        assert history[-1] < 1e-8
        assert np.linalg.norm(b - mesh.A.to_scipy() @ x) < 1e-8

    def test_spsd_laplacian_converges(self):
        dist = WeightDistribution.standard_lognormal()
        A, _ = generate_delaunay_laplacian(512, dist, seed=12)
        cfg = CycleConfig(delta=1e-8, max_coarse_size=64)
        h = build_hierarchy(A, cfg, baseline, MatrixKind.SPSD_LAPLACIAN)
        rng = np.random.default_rng(0)
        b = rng.standard_normal(512)
        b -= b.mean()
        x, history = solve(h, b, np.zeros(512), cfg)
        assert np.linalg.norm(b - A.to_scipy() @ x) < 1e-8

    def test_spsd_requires_zero_mean_rhs(self):
        dist = WeightDistribution.standard_lognormal()
        A, _ = generate_delaunay_laplacian(64, dist, seed=13)
        cfg = CycleConfig(max_coarse_size=16)
        h = build_hierarchy(A, cfg, baseline, MatrixKind.SPSD_LAPLACIAN)
        with pytest.raises(ValueError):
            solve(h, np.ones(64), np.zeros(64), cfg)

    def test_divergence_guard(self):
        # Gauss-Seidel diverges on this indefinite matrix: rho(S) = 4
        A = from_coordinates([(0, 0, 1.0), (0, 1, -2.0), (1, 0, -2.0), (1, 1, 1.0)], 2, 2)
        h = Hierarchy([Level(A)], MatrixKind.SPD, "relax-only", None)
        cfg = CycleConfig(s1=1, s2=0, coarsest="relax-only", max_iterations=100)
        with pytest.raises(DivergenceError):
            solve(h, np.array([1.0, -1.0]), np.zeros(2), cfg)

    def test_monotone_residuals_on_spd(self):
        for seed in (14, 15):
            A, cfg, h = spd_hierarchy(400, seed, max_coarse_size=32)
            rng = np.random.default_rng(seed)
            b = rng.standard_normal(400)
            _, history = solve(h, b, np.zeros(400), cfg)
            tail = history[3:]
            assert all(a >= b_ for a, b_ in zip(tail, tail[1:]))

    def test_history_csv(self, tmp_path):
        A, cfg, h = spd_hierarchy(64, seed=16, max_coarse_size=16)
        _, history = solve(h, np.ones(64), np.zeros(64), cfg)
        path = tmp_path / "hist.csv"
        write_residual_history(path, history)
        lines = path.read_text().strip().splitlines()
        assert lines[0] == "iteration,residual_2norm"
        assert len(lines) == len(history) + 1


class TestCoarseCorrection:
    def test_identity_prolongation_zero(self, rng):
        _, dense = random_spd(rng, 12)
        C = coarse_correction_matrix(dense, np.eye(12))
        assert np.abs(C).max() <= 1e-10

    def test_idempotent(self, rng):
        _, dense = random_spd(rng, 20)
        P = rng.standard_normal((20, 8))
        C = coarse_correction_matrix(dense, P)
        assert np.abs(C @ C - C).max() <= 1e-10 * max(np.abs(C).max(), 1.0)

    def test_cp_zero(self, rng):
        for _ in range(5):
            _, dense = random_spd(rng, 24)
            P = rng.standard_normal((24, 9))
            C = coarse_correction_matrix(dense, P)
            assert np.linalg.norm(C @ P) <= 1e-10 * np.linalg.norm(P)


def second_implementation_error_matrix(Ad, Pd, s1, s2):
    """Independent composition used as an oracle (solves instead of inverting,
    explicit Neumann-style loop for the powers)."""
    n = Ad.shape[0]
    L = np.tril(Ad)
    S = np.eye(n) - np.linalg.solve(L, Ad)
    G = np.linalg.inv(Pd.T @ Ad @ Pd)
    C = np.eye(n) - Pd @ G @ Pd.T @ Ad
    M = np.linalg.matrix_power(S, s2) @ C @ np.linalg.matrix_power(S, s1)
    return M


class TestErrorPropagation:
    def test_zero_sweeps_identity_p(self, rng):
        _, dense = random_spd(rng, 10)
        M = error_propagation_matrix(dense, np.eye(10), 0, 0)
        assert np.abs(M).max() <= 1e-10

    def test_diagonal_matrix_zero(self):
        dense = np.diag(np.arange(1.0, 6.0))
        M = error_propagation_matrix(dense, np.eye(5)[:, :2], 1, 1)
        assert np.abs(M).max() <= 1e-14

    def test_path_against_second_implementation(self):
        A = path_laplacian(4)
        dense = A.to_dense() + 0.1 * np.eye(4)
        P = np.array([[1.0, 0.0], [0.5, 0.5], [0.0, 1.0], [0.0, 1.0]])
        M = error_propagation_matrix(dense, P, 1, 1)
        ref = second_implementation_error_matrix(dense, P, 1, 1)
        assert abs(np.linalg.norm(M) - np.linalg.norm(ref)) <= 1e-12
        assert np.abs(M - ref).max() <= 1e-12


class TestSpectralRadius:
    def test_identity(self):
        assert abs(spectral_radius(np.eye(7)) - 1.0) <= 1e-8

    def test_diagonal(self):
        assert abs(spectral_radius(np.diag([0.1, 0.5, 0.9])) - 0.9) <= 1e-8

    def test_random_against_eig_oracle(self):
        rng = np.random.default_rng(21)
        M = rng.standard_normal((20, 20))
        ref = np.abs(np.linalg.eigvals(M)).max()
        assert abs(spectral_radius(M, seed=1) - ref) <= 1e-6

    def test_complex_pair(self):
        # rotation-scaled block: dominant eigenvalues 0.8 * exp(+-i pi/4)
        r = 0.8
        th = np.pi / 4
        M = np.zeros((3, 3))
        M[:2, :2] = r * np.array([[np.cos(th), -np.sin(th)], [np.sin(th), np.cos(th)]])
        M[2, 2] = 0.3
        assert abs(spectral_radius(M) - r) <= 1e-8

    def test_zero_matrix(self):
        assert spectral_radius(np.zeros((4, 4))) == 0.0


class TestAsymptoticFactor:
    def test_exact_solver_factor_near_zero(self, rng):
        A, dense = random_spd(rng, 32)
        from amglearn.cycle import _make_coarse_solver

        h = Hierarchy([Level(A)], MatrixKind.SPD, "dense-solve", _make_coarse_solver(A, MatrixKind.SPD))
        cfg = CycleConfig()
        assert asymptotic_convergence_factor(h, cfg, seed=0) <= 1e-8

    def test_gauss_seidel_only_matches_rho_s(self):
        A = jittered_laplacian(60, seed=17)
        h = Hierarchy([Level(A)], MatrixKind.SPD, "relax-only", None)
        cfg = CycleConfig(s1=1, s2=0, coarsest="relax-only")
        factor = asymptotic_convergence_factor(h, cfg, seed=0)
        rho = np.abs(np.linalg.eigvals(build_relaxation_dense(A))).max()
        assert abs(factor - rho) <= 0.02

    def test_two_level_w_matches_rho_m(self):
        for seed in (18, 19):
            A = jittered_laplacian(220, seed)
            cfg = CycleConfig(cycle="W", max_levels=2, max_coarse_size=1)
            h = build_hierarchy(A, cfg, baseline, MatrixKind.SPD)
            assert len(h.levels) == 2
            factor = asymptotic_convergence_factor(h, cfg, seed=seed)
            M = error_propagation_matrix(A.to_dense(), h.levels[0].P.to_dense(), 1, 1)
            rho = np.abs(np.linalg.eigvals(M)).max()
            assert abs(factor - rho) <= 0.05


class TestPreconditioner:
    def test_zero_maps_to_zero(self):
        A, cfg, h = spd_hierarchy(100, seed=20, max_coarse_size=32)
        out = preconditioner_apply(h, np.zeros(100), cfg)
        assert np.abs(out).max() == 0.0

    def test_linearity(self, rng):
        A, cfg, h = spd_hierarchy(100, seed=21, max_coarse_size=32)
        r1 = rng.standard_normal(100)
        r2 = rng.standard_normal(100)
        lhs = preconditioner_apply(h, r1 + r2, cfg)
        rhs = preconditioner_apply(h, r1, cfg) + preconditioner_apply(h, r2, cfg)
        scale = max(np.abs(rhs).max(), 1.0)
        assert np.abs(lhs - rhs).max() <= 1e-10 * scale
        out2 = preconditioner_apply(h, 2.0 * r1, cfg)
        ref2 = 2.0 * preconditioner_apply(h, r1, cfg)
        assert np.abs(out2 - ref2).max() <= 1e-10 * max(np.abs(ref2).max(), 1.0)

    def test_residual_reduction(self, rng):
        A, cfg, h = spd_hierarchy(128, seed=22, max_coarse_size=32)
        r = rng.standard_normal(128)
        x = preconditioner_apply(h, r, cfg)
        assert np.linalg.norm(r - A.to_scipy() @ x) < np.linalg.norm(r)
