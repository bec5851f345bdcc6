import numpy as np
import pytest

from amglearn import tape as T


def fd_check(build, shapes, seed=0, h=1e-6, tol=1e-5):
    """Finite-difference check of a scalar-valued tape program."""
    rng = np.random.default_rng(seed)
    values = [rng.standard_normal(s) for s in shapes]
    tape = T.Tape()
    leaves = [tape.leaf(v.copy()) for v in values]
    loss = build(*leaves)
    tape.backward(loss)
    for leaf, val in zip(leaves, values):
        g = leaf.grad if leaf.grad is not None else np.zeros_like(val)
        d = rng.standard_normal(val.shape)
        lo = build(*[T.Tensor(v - (h * d if v is val else 0.0)) for v in values]).value
        hi = build(*[T.Tensor(v + (h * d if v is val else 0.0)) for v in values]).value
        numeric = (hi - lo) / (2 * h)
        analytic = float(np.sum(g * d))
        assert abs(analytic - numeric) <= tol * max(abs(analytic), abs(numeric), 1.0)


class TestElementwiseOps:
    def test_add_mul_div(self):
        fd_check(lambda a, b: T.frobenius_sq(T.add(T.mul(a, b), T.div(a, T.add(b, np.full((3, 3), 4.0))))), [(3, 3), (3, 3)])

    def test_broadcasting_bias(self):
        fd_check(lambda x, b: T.frobenius_sq(T.add(x, b)), [(5, 4), (4,)])

    def test_relu(self):
        fd_check(lambda x: T.frobenius_sq(T.relu(x)), [(4, 4)], seed=3)

    def test_neg_sub(self):
        fd_check(lambda a, b: T.sum_all(T.sub(T.neg(a), b)), [(3, 2), (3, 2)])


class TestLinalgOps:
    def test_matmul_transpose(self):
        fd_check(lambda a, b: T.frobenius_sq(T.matmul(a, T.transpose(b))), [(3, 4), (5, 4)])

    def test_inverse_fd(self):
        def build(x):
            shifted = T.add(x, np.eye(4) * 5.0)
            return T.frobenius_sq(T.inverse(shifted))

        fd_check(build, [(4, 4)])

    def test_inverse_hand_formula(self):
        # d||X^{-1}||_F^2 / dX = -2 X^{-T} X^{-T} X^{-T}; at X = 2I: -(1/4) I
        tape = T.Tape()
        X = tape.leaf(2.0 * np.eye(5))
        tape.backward(T.frobenius_sq(T.inverse(X)))
        assert np.allclose(X.grad, -0.25 * np.eye(5) / 1.0, atol=1e-14)
        # off-diagonal pattern zero
        assert np.abs(X.grad[~np.eye(5, dtype=bool)]).max() == 0.0

    def test_sum_of_parameters_gradient_ones(self):
        tape = T.Tape()
        w = tape.leaf(np.arange(12.0).reshape(3, 4))
        tape.backward(T.sum_all(w))
        assert np.array_equal(w.grad, np.ones((3, 4)))


class TestIndexingOps:
    def test_gather_segment_scatter(self):
        idx = np.array([0, 2, 2, 1])
        seg = np.array([1, 0, 1, 1])

        def build(x):
            g = T.gather_rows(x, idx)
            s = T.segment_sum(g, seg, 3)
            return T.frobenius_sq(s)

        fd_check(build, [(3, 4)])

    def test_scatter2d(self):
        rows = np.array([0, 1, 1])
        cols = np.array([2, 0, 2])

        def build(v):
            flat = T.reshape(v, (3,))
            return T.frobenius_sq(T.scatter2d((2, 3), rows, cols, flat, base=np.ones((2, 3))))

        fd_check(build, [(3, 1)])

    def test_concat_block(self):
        def build(a, b):
            cat = T.concat([a, b], axis=1)
            return T.frobenius_sq(T.block(cat, 0, 2, 1, 4))

        fd_check(build, [(2, 2), (2, 3)])

    def test_reused_node_accumulates(self):
        tape = T.Tape()
        x = tape.leaf(np.array([[3.0]]))
        y = T.add(T.mul(x, x), x)  # x^2 + x -> grad 2x + 1 = 7
        tape.backward(T.sum_all(y))
        assert np.allclose(x.grad, [[7.0]])


class TestComplexOps:
    def test_cmatmul_matches_numpy(self, rng):
        Xr, Xi = rng.standard_normal((3, 4)), rng.standard_normal((3, 4))
        Yr, Yi = rng.standard_normal((4, 2)), rng.standard_normal((4, 2))
        re, im = T.cmatmul((T.Tensor(Xr), T.Tensor(Xi)), (T.Tensor(Yr), T.Tensor(Yi)))
        ref = (Xr + 1j * Xi) @ (Yr + 1j * Yi)
        assert np.allclose(re.value + 1j * im.value, ref, atol=1e-14)

    def test_cinverse_matches_numpy(self, rng):
        Zr = rng.standard_normal((4, 4)) + 4 * np.eye(4)
        Zi = rng.standard_normal((4, 4))
        re, im = T.cinverse((T.Tensor(Zr), T.Tensor(Zi)))
        ref = np.linalg.inv(Zr + 1j * Zi)
        assert np.allclose(re.value + 1j * im.value, ref, atol=1e-12)

    def test_cinverse_fd(self):
        def build(zr, zi):
            re, im = T.cinverse((T.add(zr, 4 * np.eye(3)), zi))
            return T.cfrobenius_sq((re, im))

        fd_check(build, [(3, 3), (3, 3)])

    def test_conj_transpose(self, rng):
        Xr, Xi = rng.standard_normal((2, 3)), rng.standard_normal((2, 3))
        re, im = T.cconj_transpose((T.Tensor(Xr), T.Tensor(Xi)))
        ref = (Xr + 1j * Xi).conj().T
        assert np.allclose(re.value + 1j * im.value, ref, atol=1e-15)


class TestTapeMechanics:
    def test_backward_requires_scalar(self):
        tape = T.Tape()
        x = tape.leaf(np.ones((2, 2)))
        with pytest.raises(ValueError):
            tape.backward(T.add(x, x))

    def test_mixed_tapes_rejected(self):
        t1, t2 = T.Tape(), T.Tape()
        a = t1.leaf(np.ones(2))
        b = t2.leaf(np.ones(2))
        with pytest.raises(ValueError):
            T.add(a, b)

    def test_untaped_matches_taped_bitwise(self, rng):
        x = rng.standard_normal((4, 4))
        tape = T.Tape()
        taped = T.frobenius_sq(T.relu(T.matmul(tape.leaf(x.copy()), T.Tensor(x.copy()))))
        plain = T.frobenius_sq(T.relu(T.matmul(T.Tensor(x.copy()), T.Tensor(x.copy()))))
        assert taped.value == plain.value

    def test_clamp_away_from_zero(self):
        tape = T.Tape()
        x = tape.leaf(np.array([[1e-12], [-1e-12], [0.5], [0.0]]))
        out = T.clamp_away_from_zero(x, 1e-8)
        assert np.array_equal(out.value[:, 0], [1e-8, -1e-8, 0.5, 1e-8])
        tape.backward(T.sum_all(out))
        assert np.array_equal(x.grad, np.ones((4, 1)))

    def test_constants_not_recorded(self):
        tape = T.Tape()
        x = tape.leaf(np.ones(3))
        before = len(tape.nodes)
        T.add(T.Tensor(np.ones(3)), T.Tensor(np.ones(3)))
        assert len(tape.nodes) == before
        T.add(x, np.ones(3))
        assert len(tape.nodes) == before + 1
