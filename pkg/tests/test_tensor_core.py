"""Core kernel properties: softmax rows, shared-kernel convolution, layer norm, RNG."""

import math

import numpy as np
import pytest

from promptmoe.errors import DomainError, ShapeError
from promptmoe.tensor_core import (
    Rng,
    channelwise_conv2d,
    layer_norm,
    layer_norm_rows,
    softmax_rows,
)


class TestSoftmaxRows:
    def test_two_equal_scores_split_evenly(self):
        np.testing.assert_allclose(softmax_rows([[0.0, 0.0]]), [[0.5, 0.5]], atol=1e-15)

    def test_constant_rows_are_uniform(self):
        """Shifting a row by any constant leaves the output unchanged."""
        for c in (-7.0, 0.0, 3.5, 40.0):
            out = softmax_rows([[c, c, c]])
            np.testing.assert_allclose(out, [[1 / 3, 1 / 3, 1 / 3]], atol=1e-15)

    def test_matches_scalar_evaluation(self):
        # Independent oracle: direct exp(x_i) / sum exp(x_j) in scalar math.
        exps = [math.exp(1.0), math.exp(2.0), math.exp(3.0)]
        expected = [e / sum(exps) for e in exps]
        np.testing.assert_allclose(softmax_rows([[1.0, 2.0, 3.0]])[0], expected, rtol=1e-15)
        np.testing.assert_allclose(
            softmax_rows([[1.0, 2.0, 3.0]])[0],
            [0.09003057317038046, 0.24472847105479767, 0.6652409557748219],
            rtol=1e-14,
        )

    def test_rows_sum_to_one(self):
        rng = Rng(1)
        m = rng.uniform(-50.0, 50.0, (40, 7))
        sums = softmax_rows(m).sum(axis=1)
        np.testing.assert_allclose(sums, 1.0, atol=1e-12)

    def test_shift_invariance(self):
        rng = Rng(2)
        m = rng.uniform(-50.0, 50.0, (10, 5))
        shifted = m + rng.uniform(-30.0, 30.0, (10, 1))
        np.testing.assert_allclose(softmax_rows(m), softmax_rows(shifted), atol=1e-12)

    def test_rejects_non_finite(self):
        with pytest.raises(DomainError):
            softmax_rows([[np.nan, 1.0]])
        with pytest.raises(DomainError):
            softmax_rows([[np.inf, 1.0]])

    def test_rejects_wrong_rank(self):
        with pytest.raises(ShapeError):
            softmax_rows([1.0, 2.0])


class TestChannelwiseConv2d:
    def test_direct_summation_single_channel(self):
        x = np.array([[1.0, 2.0], [3.0, 4.0]])[:, :, None]
        out = channelwise_conv2d(x, [[1.0, 1.0], [1.0, 1.0]])
        np.testing.assert_allclose(out, [[[10.0]]])

    def test_identity_kernel(self):
        rng = Rng(3)
        x = rng.uniform(-1.0, 1.0, (4, 5, 3))
        np.testing.assert_array_equal(channelwise_conv2d(x, [[1.0]]), x)

    def test_zero_input_gives_zero(self):
        out = channelwise_conv2d(np.zeros((3, 3, 2)), np.ones((2, 2)))
        np.testing.assert_array_equal(out, np.zeros((2, 2, 2)))

    def test_kernel_shared_across_channels(self):
        """Every channel is convolved with the same weights."""
        rng = Rng(4)
        plane = rng.uniform(-1.0, 1.0, (5, 5))
        x = np.stack([plane, 2.0 * plane], axis=-1)
        kernel = rng.uniform(-1.0, 1.0, (3, 3))
        out = channelwise_conv2d(x, kernel)
        np.testing.assert_allclose(out[:, :, 1], 2.0 * out[:, :, 0], rtol=1e-12)

    def test_linearity(self):
        rng = Rng(5)
        x = rng.uniform(-1.0, 1.0, (4, 4, 3))
        y = rng.uniform(-1.0, 1.0, (4, 4, 3))
        kernel = rng.uniform(-1.0, 1.0, (2, 2))
        lhs = channelwise_conv2d(2.5 * x - 0.75 * y, kernel)
        rhs = 2.5 * channelwise_conv2d(x, kernel) - 0.75 * channelwise_conv2d(y, kernel)
        np.testing.assert_allclose(lhs, rhs, atol=1e-12)

    def test_oversized_kernel_rejected(self):
        with pytest.raises(ShapeError):
            channelwise_conv2d(np.zeros((2, 2, 1)), np.ones((3, 3)))


class TestLayerNorm:
    def test_constant_vector_collapses_to_bias(self):
        out = layer_norm([4.0, 4.0, 4.0], np.ones(3), np.zeros(3))
        np.testing.assert_allclose(out, np.zeros(3), atol=1e-12)

    def test_already_normalized_is_fixed_point(self):
        out = layer_norm([-1.0, 1.0], np.ones(2), np.zeros(2), eps=1e-14)
        np.testing.assert_allclose(out, [-1.0, 1.0], atol=1e-6)

    def test_matches_scalar_recomputation(self):
        v = [1.0, 2.0, 3.0]
        mean = 2.0
        var = ((1 - 2) ** 2 + 0.0 + (3 - 2) ** 2) / 3.0
        expected = [(x - mean) / math.sqrt(var + 1e-5) for x in v]
        np.testing.assert_allclose(layer_norm(v, np.ones(3), np.zeros(3)), expected, rtol=1e-14)

    def test_translation_invariance(self):
        rng = Rng(6)
        v = rng.uniform(-3.0, 3.0, 9)
        a = layer_norm(v, np.ones(9), np.zeros(9))
        b = layer_norm(v + 17.25, np.ones(9), np.zeros(9))
        np.testing.assert_allclose(a, b, atol=1e-10)

    def test_standardizes_random_rows(self):
        rng = Rng(7)
        x = rng.uniform(-5.0, 5.0, (6, 32))
        out = layer_norm_rows(x, np.ones(32), np.zeros(32))
        np.testing.assert_allclose(out.mean(axis=1), 0.0, atol=1e-12)
        np.testing.assert_allclose(out.var(axis=1), 1.0, atol=1e-4)

    def test_affine_terms_applied(self):
        rng = Rng(8)
        v = rng.uniform(-1.0, 1.0, 5)
        gain = rng.uniform(0.5, 2.0, 5)
        bias = rng.uniform(-1.0, 1.0, 5)
        base = layer_norm(v, np.ones(5), np.zeros(5))
        np.testing.assert_allclose(layer_norm(v, gain, bias), gain * base + bias, rtol=1e-12)

    def test_rejects_nonpositive_eps(self):
        with pytest.raises(DomainError):
            layer_norm([1.0, 2.0], np.ones(2), np.zeros(2), eps=0.0)


class TestRng:
    def test_same_seed_is_bit_identical(self):
        a = Rng(123).uniform(size=100)
        b = Rng(123).uniform(size=100)
        np.testing.assert_array_equal(a, b)

    def test_children_are_reproducible(self):
        a = Rng(9).child(3, 1).normal(size=50)
        b = Rng(9).child(3, 1).normal(size=50)
        np.testing.assert_array_equal(a, b)

    def test_children_streams_differ(self):
        a = Rng(9).child(0).uniform(size=20)
        b = Rng(9).child(1).uniform(size=20)
        assert not np.array_equal(a, b)

    def test_child_differs_from_parent(self):
        a = Rng(9).uniform(size=20)
        b = Rng(9).child(0).uniform(size=20)
        assert not np.array_equal(a, b)
