import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from laficmil.errors import DegenerateInputError, ShapeError
from laficmil.linalg import (
    frobenius_rel_error,
    layer_norm,
    layer_norm_backward,
    matmul,
    pinv_iterative,
    pinv_iterative_backward,
    softmax_rows,
)


def naive_matmul(a, b):
    out = [[0.0] * len(b[0]) for _ in a]
    for i in range(len(a)):
        for j in range(len(b[0])):
            for k in range(len(b)):
                out[i][j] += a[i][k] * b[k][j]
    return np.array(out)


def random_stochastic(seed, m=8, scale=1.0):
    logits = np.random.default_rng(seed).normal(size=(m, m)) * scale
    e = np.exp(logits)
    return e / e.sum(axis=1, keepdims=True)


finite_matrices = arrays(
    np.float64,
    st.tuples(st.integers(1, 6), st.integers(1, 6)),
    elements=st.floats(-1e3, 1e3, allow_nan=False, allow_infinity=False),
)


class TestMatmul:
    def test_identity(self):
        m = np.arange(9.0).reshape(3, 3)
        assert np.array_equal(matmul(np.eye(3), m), m)

    def test_hand_example(self):
        assert np.array_equal(matmul([[1, 2], [3, 4]], [[0], [1]]), [[2], [4]])

    def test_against_triple_loop(self):
        rng = np.random.default_rng(0)
        a, b = rng.normal(size=(5, 7)), rng.normal(size=(7, 3))
        np.testing.assert_allclose(matmul(a, b), naive_matmul(a.tolist(), b.tolist()),
                                   rtol=0, atol=1e-12)

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            matmul(np.ones((2, 3)), np.ones((2, 3)))


class TestSoftmax:
    def test_uniform(self):
        np.testing.assert_allclose(softmax_rows([[0.0, 0.0, 0.0]]), [[1 / 3] * 3])

    def test_ln2(self):
        np.testing.assert_allclose(softmax_rows([[math.log(2), 0.0]]), [[2 / 3, 1 / 3]])

    def test_no_overflow(self):
        np.testing.assert_array_equal(softmax_rows([[1000.0, 1000.0]]), [[0.5, 0.5]])

    @given(finite_matrices)
    def test_rows_sum_to_one(self, x):
        s = softmax_rows(x)
        assert np.all(np.isfinite(s))
        np.testing.assert_allclose(s.sum(axis=1), 1.0, atol=1e-9)
        assert np.all(s <= 1.0) and np.all(s >= 0.0)

    @given(finite_matrices, st.floats(-100, 100))
    def test_shift_invariant(self, x, c):
        np.testing.assert_allclose(softmax_rows(x + c), softmax_rows(x), atol=1e-12)


class TestLayerNorm:
    def test_constant_row(self):
        np.testing.assert_array_equal(layer_norm([[5.0] * 4], np.ones(4), np.zeros(4)), [[0.0] * 4])

    def test_pair(self):
        out = layer_norm([[1.0, -1.0]], np.ones(2), np.zeros(2), eps=1e-5)
        np.testing.assert_allclose(out, [[1 / math.sqrt(1 + 1e-5), -1 / math.sqrt(1 + 1e-5)]])
        np.testing.assert_allclose(out, [[0.99999, -0.99999]], atol=1e-5)

    def test_two_pass_oracle(self):
        rng = np.random.default_rng(3)
        x = rng.normal(size=(4, 8))
        gamma, beta = rng.normal(size=8), rng.normal(size=8)
        expected = np.empty_like(x)
        for i, row in enumerate(x.tolist()):
            mu = sum(row) / len(row)
            var = sum((v - mu) ** 2 for v in row) / len(row)
            expected[i] = [(v - mu) / math.sqrt(var + 1e-5) * g + b
                           for v, g, b in zip(row, gamma, beta)]
        np.testing.assert_allclose(layer_norm(x, gamma, beta), expected, rtol=0, atol=1e-10)

    @given(finite_matrices)
    def test_zero_mean(self, x):
        out = layer_norm(x, np.ones(x.shape[1]), np.zeros(x.shape[1]))
        assert np.all(np.abs(out.mean(axis=1)) <= 1e-9)

    def test_backward_matches_finite_differences(self):
        rng = np.random.default_rng(4)
        x, gamma, beta, up = (rng.normal(size=s) for s in [(3, 5), 5, 5, (3, 5)])
        out, cache = layer_norm(x, gamma, beta, return_cache=True)
        gx, gg, gb = layer_norm_backward(cache, up)
        h = 1e-6
        fd = np.zeros_like(x)
        for idx in np.ndindex(x.shape):
            xp, xm = x.copy(), x.copy()
            xp[idx] += h
            xm[idx] -= h
            fd[idx] = np.sum(up * (layer_norm(xp, gamma, beta) - layer_norm(xm, gamma, beta))) / (2 * h)
        np.testing.assert_allclose(gx, fd, rtol=1e-6, atol=1e-8)
        np.testing.assert_allclose(gb, up.sum(axis=0))
        np.testing.assert_allclose(gg, np.sum(up * (out - beta) / gamma, axis=0), rtol=1e-9)

    def test_bad_shapes(self):
        with pytest.raises(ShapeError):
            layer_norm(np.ones((2, 3)), np.ones(2), np.zeros(3))


class TestPinv:
    def test_identity(self):
        z, rep = pinv_iterative(np.eye(4), 6)
        np.testing.assert_allclose(z, np.eye(4), atol=1e-10)
        assert rep.iterations_run == 6 == len(rep.residual_history)

    def test_diagonal(self):
        z, _ = pinv_iterative(np.diag([2.0, 4.0]), 6)
        np.testing.assert_allclose(z, np.diag([0.5, 0.25]), atol=1e-8)

    def test_zero_matrix_rejected(self):
        with pytest.raises(DegenerateInputError):
            pinv_iterative(np.zeros((3, 3)), 6)

    def test_non_square_rejected(self):
        with pytest.raises(ShapeError):
            pinv_iterative(np.ones((2, 3)), 6)

    @pytest.mark.xfail(strict=True, reason=(
        "six iterations from A^T/(|A|_1|A|_inf) do not reach 1e-6 on generic 8x8 "
        "softmax matrices; see the pinv acceptance criterion"))
    def test_softmax_matrix_six_iterations(self):
        a = random_stochastic(0)
        z, _ = pinv_iterative(a, 6)
        assert frobenius_rel_error(z, np.linalg.pinv(a)) <= 1e-6

    @pytest.mark.parametrize("seed", range(10))
    def test_softmax_matrix_converges_with_more_iterations(self, seed):
        a = random_stochastic(seed)
        z, rep = pinv_iterative(a, 25)
        assert frobenius_rel_error(z, np.linalg.pinv(a)) <= 1e-6
        assert rep.residual_history[-1] < 1e-8

    def test_moore_penrose_identity(self):
        for seed in range(20):
            a = random_stochastic(seed)
            z, _ = pinv_iterative(a, 25)
            assert frobenius_rel_error(a @ z @ a, a) <= 1e-6

    def test_rank_deficient_converges_to_pinv(self):
        # rounding noise in the null space grows ~3.25x per step, so keep the count modest
        u = np.linalg.qr(np.random.default_rng(1).normal(size=(5, 2)))[0]
        a = u @ np.diag([1.0, 0.5]) @ u.T
        z, _ = pinv_iterative(a, 8)
        assert frobenius_rel_error(z, np.linalg.pinv(a)) <= 1e-8

    def test_spectral_condition_holds_for_initial_guess(self):
        # |A A+ - A Z_0|_2 < 1 is what makes the iteration converge
        for seed in range(50):
            a = random_stochastic(seed)
            z0 = a.T / (np.abs(a).sum(axis=0).max() * np.abs(a).sum(axis=1).max())
            gap = a @ np.linalg.pinv(a) - a @ z0
            assert np.linalg.norm(gap, 2) < 1.0

    def test_spectral_residual_monotone(self):
        # the reported max-row-sum residual can rise early on; the spectral one cannot
        a = random_stochastic(2)
        _, rep = pinv_iterative(a, 12)
        spectral = [np.linalg.norm(np.eye(8) - a @ z, 2) for z in rep.trajectory]
        assert all(b <= a_ + 1e-12 for a_, b in zip(spectral, spectral[1:]))
        assert rep.residual_history[-1] < 1e-8

    def test_stack_matches_individual(self):
        mats = np.stack([random_stochastic(s, 5) for s in range(3)])
        zs, _ = pinv_iterative(mats, 6)
        for a, z in zip(mats, zs):
            np.testing.assert_array_equal(z, pinv_iterative(a, 6)[0])

    def test_backward_matches_finite_differences(self):
        # unconstrained positive matrix: unique max row and column, so the norms are smooth
        rng = np.random.default_rng(7)
        a = rng.uniform(0.5, 1.5, size=(4, 4)) + 2 * np.eye(4)
        up = rng.normal(size=(4, 4))
        z, rep = pinv_iterative(a, 6)
        ga = pinv_iterative_backward(a, rep, up)
        h = 1e-6
        for idx in np.ndindex(a.shape):
            ap, am = a.copy(), a.copy()
            ap[idx] += h
            am[idx] -= h
            fd = np.sum(up * (pinv_iterative(ap, 6)[0] - pinv_iterative(am, 6)[0])) / (2 * h)
            assert abs(fd - ga[idx]) <= 1e-5 * max(abs(fd), 1.0)

    def test_deterministic(self):
        a = random_stochastic(5)
        assert pinv_iterative(a, 6)[0].tobytes() == pinv_iterative(a.copy(), 6)[0].tobytes()


class TestFrobenius:
    def test_self(self):
        m = np.arange(6.0).reshape(2, 3) + 1
        assert frobenius_rel_error(m, m) == 0.0

    def test_scalar(self):
        assert frobenius_rel_error([[2.0]], [[1.0]]) == 1.0

    def test_hand(self):
        assert frobenius_rel_error([[1, 0], [0, 0]], [[1, 0], [0, 1]]) == pytest.approx(1 / math.sqrt(2))

    def test_errors(self):
        with pytest.raises(ShapeError):
            frobenius_rel_error(np.ones((2, 2)), np.ones((2, 3)))
        with pytest.raises(DegenerateInputError):
            frobenius_rel_error(np.ones((2, 2)), np.zeros((2, 2)))
