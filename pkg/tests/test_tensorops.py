import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from rtar.errors import ContractViolationError
from rtar.nn import tensorops as T


def conv2d_naive(x, w, stride, padding):
    """Six-nested-loop oracle; inner accumulation order is (ky, kx, ci)."""
    kh, kw, cin, cout = w.shape
    h, w_in = x.shape[:2]
    ho = (h + 2 * padding - kh) // stride + 1
    wo = (w_in + 2 * padding - kw) // stride + 1
    xp = np.pad(x, ((padding, padding), (padding, padding), (0, 0)))
    out = np.zeros((ho, wo, cout), dtype=x.dtype)
    for i in range(ho):
        for j in range(wo):
            for co in range(cout):
                acc = x.dtype.type(0)
                for ky in range(kh):
                    for kx in range(kw):
                        for ci in range(cin):
                            acc = acc + xp[i * stride + ky, j * stride + kx, ci] * w[ky, kx, ci, co]
                out[i, j, co] = acc
    return out


class TestConv2d:
    def test_scalar_product(self):
        x = np.array([[[5.0]]], dtype=np.float32)
        w = np.array([[[[2.0]]]], dtype=np.float32)
        assert T.conv2d(x, w, 1, 0).tolist() == [[[10.0]]]

    def test_delta_kernel_identity(self, rng):
        x = rng.random((6, 7, 2), dtype=np.float32)
        w = np.zeros((3, 3, 2, 2), dtype=np.float32)
        w[1, 1, 0, 0] = 1.0
        w[1, 1, 1, 1] = 1.0
        assert np.array_equal(T.conv2d(x, w, 1, 1), x)

    def test_matches_naive_oracle_exactly(self, rng):
        x = rng.random((5, 5, 2), dtype=np.float32)
        w = rng.random((3, 3, 2, 4), dtype=np.float32)
        got = T.conv2d(x, w, 1, 0)
        want = conv2d_naive(x, w, 1, 0)
        assert np.array_equal(got, want), "must match the naive loop bit-for-bit"

    @given(
        h=st.integers(1, 8), w=st.integers(1, 8),
        cin=st.integers(1, 4), cout=st.integers(1, 3),
        k=st.sampled_from([1, 3]), stride=st.integers(1, 2),
        padding=st.integers(0, 1), seed=st.integers(0, 2**32 - 1),
    )
    def test_oracle_equality_property(self, h, w, cin, cout, k, stride, padding, seed):
        ho = (h + 2 * padding - k) // stride + 1
        wo = (w + 2 * padding - k) // stride + 1
        if ho < 1 or wo < 1:
            return
        gen = np.random.default_rng(seed)
        x = gen.standard_normal((h, w, cin)).astype(np.float32)
        wt = gen.standard_normal((k, k, cin, cout)).astype(np.float32)
        assert np.array_equal(T.conv2d(x, wt, stride, padding),
                              conv2d_naive(x, wt, stride, padding))

    def test_channel_mismatch(self, rng):
        x = rng.random((4, 4, 3), dtype=np.float32)
        w = rng.random((3, 3, 2, 1), dtype=np.float32)
        with pytest.raises(ContractViolationError):
            T.conv2d(x, w, 1, 1)

    def test_rejects_unsupported_kernel(self, rng):
        x = rng.random((6, 6, 1), dtype=np.float32)
        w = rng.random((5, 5, 1, 1), dtype=np.float32)
        with pytest.raises(ContractViolationError):
            T.conv2d(x, w, 1, 2)

    def test_output_shape_formula(self, rng):
        x = rng.random((9, 7, 2), dtype=np.float32)
        w = rng.random((3, 3, 2, 5), dtype=np.float32)
        y = T.conv2d(x, w, stride=2, padding=1)
        assert y.shape == ((9 + 2 - 3) // 2 + 1, (7 + 2 - 3) // 2 + 1, 5)


class TestBatchNorm:
    def test_constant_channel_is_zero(self):
        x = np.full((4, 4, 2), 7.0, dtype=np.float32)
        y, _, _, _ = T.batch_norm_train(x, np.ones(2, np.float32), np.zeros(2, np.float32), 1e-5)
        assert np.allclose(y, 0.0)

    def test_gamma_zero_gives_beta(self, rng):
        x = rng.random((3, 5, 2), dtype=np.float32)
        beta = np.array([1.5, -2.0], dtype=np.float32)
        y, _, _, _ = T.batch_norm_train(x, np.zeros(2, np.float32), beta, 1e-5)
        assert np.allclose(y, np.broadcast_to(beta, y.shape))

    def test_two_point_channel(self):
        # values {1, 3}: mean 2, population variance 1 -> normalized {-1, +1}
        x = np.array([[[1.0], [3.0]]], dtype=np.float64)
        y, _, _, _ = T.batch_norm_train(x, np.ones(1), np.zeros(1), 1e-12)
        assert np.allclose(y.ravel(), [-1.0, 1.0], atol=1e-5)

    def test_eval_deterministic_bitwise(self, rng):
        x = rng.random((4, 4, 3), dtype=np.float32)
        args = (x, np.ones(3, np.float32), np.zeros(3, np.float32),
                rng.random(3).astype(np.float32), rng.random(3).astype(np.float32) + 0.5, 1e-5)
        a = T.batch_norm_eval(*args)
        b = T.batch_norm_eval(*args)
        assert np.array_equal(a, b)


class TestFullyConnected:
    def test_identity_weights(self):
        x = np.arange(4, dtype=np.float32)
        assert np.array_equal(T.fully_connected(x, np.eye(4, dtype=np.float32), np.zeros(4, np.float32)), x)

    def test_zero_input_gives_bias(self, rng):
        b = rng.random(3).astype(np.float32)
        y = T.fully_connected(np.zeros(5, np.float32), rng.random((5, 3)).astype(np.float32), b)
        assert np.array_equal(y, b)

    def test_matches_dot_oracle(self, rng):
        x = rng.random(8).astype(np.float64)
        w = rng.random((8, 3)).astype(np.float64)
        b = rng.random(3).astype(np.float64)
        want = np.array([sum(x[i] * w[i, k] for i in range(8)) + b[k] for k in range(3)])
        assert np.allclose(T.fully_connected(x, w, b), want, rtol=1e-12)

    def test_dimension_mismatch(self):
        with pytest.raises(ContractViolationError):
            T.fully_connected(np.zeros(4, np.float32), np.zeros((5, 2), np.float32), np.zeros(2, np.float32))


class TestSoftmax:
    def test_uniform_over_12(self):
        p = T.softmax(np.zeros(12))
        assert np.allclose(p, 1 / 12)

    def test_single_class(self):
        assert T.softmax(np.array([3.7])).tolist() == [1.0]

    def test_closed_form(self):
        p = T.softmax(np.array([np.log(2.0), 0.0, 0.0]))
        assert np.allclose(p, [0.5, 0.25, 0.25], atol=1e-12)

    def test_rejects_nonfinite(self):
        with pytest.raises(ContractViolationError):
            T.softmax(np.array([1.0, np.inf]))

    @given(st.lists(st.floats(-50, 50), min_size=1, max_size=16), st.floats(-30, 30))
    def test_sums_to_one_and_shift_invariant(self, logits, shift):
        v = np.array(logits)
        p = T.softmax(v)
        assert abs(p.sum() - 1.0) <= 1e-6
        assert np.all(p > 0)
        assert np.allclose(p, T.softmax(v + shift), atol=1e-6)


class TestPooling:
    def test_avg_pool(self):
        x = np.arange(16, dtype=np.float32).reshape(4, 4, 1)
        y = T.avg_pool2x2(x)
        assert y.shape == (2, 2, 1)
        assert y[0, 0, 0] == pytest.approx((0 + 1 + 4 + 5) / 4)

    def test_avg_pool_odd_rejected(self):
        with pytest.raises(ContractViolationError):
            T.avg_pool2x2(np.zeros((3, 4, 1), dtype=np.float32))

    def test_global_pool(self, rng):
        x = rng.random((5, 7, 3)).astype(np.float64)
        assert np.allclose(T.global_avg_pool(x), x.mean(axis=(0, 1)))
