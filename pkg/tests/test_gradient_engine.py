"""Reverse-mode engine against the central-difference oracle."""

import numpy as np
import pytest

from promptmoe import ops
from promptmoe.errors import DomainError
from promptmoe.gradient_engine import (
    ParamVector,
    finite_diff_grad,
    grad,
    grad_check,
    mixture_regression_loss,
    vapt_loss,
    vapt_param_vector,
    vpt_param_vector,
    vpt_prompt_loss,
)
from promptmoe.prompt_attention import prompted_msa_forward, random_attention_weights
from promptmoe.tensor_core import Rng, channelwise_conv2d, layer_norm_rows
from promptmoe.vapt_prompts import PromptShapeConfig, init_vapt_params, vapt_forward


def half_norm_squared(params):
    p = params["p"]
    return ops.asum(p * p) * 0.5


class TestParamVector:
    def test_flatten_unflatten_is_bitwise_identity(self):
        rng = Rng(0)
        arrays = [("a", rng.uniform(-1, 1, (3, 4))), ("b", rng.normal(size=7))]
        vec = ParamVector.from_arrays(arrays)
        out = vec.to_arrays()
        for name, arr in arrays:
            np.testing.assert_array_equal(out[name], arr)
        rebuilt = ParamVector.from_arrays(list(out.items()))
        np.testing.assert_array_equal(rebuilt.values, vec.values)

    def test_size_mismatch_rejected(self):
        with pytest.raises(Exception):
            ParamVector(values=np.zeros(3), names=("a",), shapes=((2, 2),))


class TestGrad:
    def test_half_norm_squared_gradient_is_identity(self):
        vec = ParamVector.from_arrays([("p", np.array([1.0, -2.0, 3.0]))])
        np.testing.assert_allclose(grad(half_norm_squared, vec).values, vec.values)

    def test_constant_loss_has_zero_gradient(self):
        vec = ParamVector.from_arrays([("p", np.array([1.0, 2.0]))])
        out = grad(lambda params: 4.25, vec)
        np.testing.assert_array_equal(out.values, np.zeros(2))

    def test_linearity_in_the_loss(self):
        rng = Rng(1)
        m = rng.uniform(-1, 1, (3, 3))

        def loss_a(params):
            p = params["p"]
            return ops.asum((p @ m) * p)

        def loss_b(params):
            p = params["p"]
            return ops.asum(ops.tanh(p) * p)

        def combined(params):
            return 2.0 * loss_a(params) + (-0.5) * loss_b(params)

        vec = ParamVector.from_arrays([("p", rng.uniform(-1, 1, (2, 3)))])
        lhs = grad(combined, vec).values
        rhs = 2.0 * grad(loss_a, vec).values - 0.5 * grad(loss_b, vec).values
        np.testing.assert_allclose(lhs, rhs, atol=1e-10)

    def test_non_finite_loss_rejected(self):
        vec = ParamVector.from_arrays([("p", np.array([1.0]))])
        with pytest.raises(DomainError):
            grad(lambda params: params["p"].sum() / 0.0, vec)


class TestFiniteDiff:
    def test_quadratic_is_exact_to_roundoff(self):
        vec = ParamVector.from_arrays([("p", np.array([3.0]))])
        fd = finite_diff_grad(lambda params: float(np.sum(params["p"] ** 2)), vec, 1e-5)
        np.testing.assert_allclose(fd.values, [6.0], atol=1e-9)

    def test_cubic_has_quadratic_truncation(self):
        vec = ParamVector.from_arrays([("p", np.array([1.0]))])
        for h in (1e-2, 1e-3):
            fd = finite_diff_grad(lambda params: float(np.sum(params["p"] ** 3)), vec, h)
            # central differences of x^3 at 1 give exactly 3 + h^2
            np.testing.assert_allclose(fd.values[0], 3.0 + h * h, atol=1e-8)

    def test_grad_check_scalar_examples(self):
        vec = ParamVector.from_arrays([("p", np.array([0.7, -1.3]))])

        def loss(params):
            p = params["p"]
            return ops.asum(p * p) * 0.5

        assert grad_check(loss, vec) < 1e-9


def _tiny_problem(seed: int, activation: str):
    r = Rng(seed).child(77)
    d, heads = 6, 2
    w = random_attention_weights(d, heads, r.child(0))
    shape = PromptShapeConfig(
        blocks=1, prompts=2, height=3, width=3, kernel_size=2, rank=2, dim=d
    )
    X = r.child(1).uniform(-1.0, 1.0, (9, d))
    params = init_vapt_params(shape, r.child(2), activation=activation)
    y = vapt_forward(X, params, w, 0) + r.child(3).normal(0.0, 5e-4, (9, d))
    return X, y, w, params


class TestPipelineGradients:
    def test_vpt_prompt_gradients(self):
        r = Rng(5)
        w = random_attention_weights(4, 2, r.child(0))
        X = r.child(1).uniform(-1, 1, (5, 4))
        prompts = r.child(2).uniform(-1, 1, (2, 4))
        y = prompted_msa_forward(X, prompts, w) + r.child(3).normal(0, 5e-4, (5, 4))
        assert grad_check(vpt_prompt_loss(X, y, w), vpt_param_vector(prompts)) < 1e-5

    @pytest.mark.parametrize("activation", ["tanh", "identity"])
    def test_vapt_full_parameter_gradients(self, activation):
        for seed in range(5):
            X, y, w, params = _tiny_problem(seed, activation)
            loss = vapt_loss(X, y, w, params)
            assert grad_check(loss, vapt_param_vector(params)) < 1e-5

    def test_relu_gradients_away_from_kinks(self):
        """Subgradient at 0 never enters: only points clear of the kink are used."""
        checked = 0
        for seed in range(40):
            X, y, w, params = _tiny_problem(seed, "relu")
            normalized = layer_norm_rows(X, params.ln_gain[0], params.ln_bias[0])
            conv = channelwise_conv2d(normalized.reshape(3, 3, 6), params.conv_kernels[0])
            aggregated = params.alphas[0] @ conv.reshape(4, 6)
            pre_activation = aggregated @ params.w1.T
            if np.min(np.abs(pre_activation)) < 1e-3:
                continue
            checked += 1
            assert grad_check(vapt_loss(X, y, w, params), vapt_param_vector(params)) < 1e-5
            if checked >= 5:
                break
        assert checked >= 3

    def test_frozen_attention_weights_have_no_parameter_slots(self):
        X, y, w, params = _tiny_problem(0, "tanh")
        vec = vapt_param_vector(params)
        assert set(vec.names) == {"conv_kernel", "alphas", "w1", "w2", "ln_gain", "ln_bias"}


class TestMixtureRegressionLoss:
    def test_matches_finite_differences(self):
        r = Rng(9)
        n, d, dp, rank, ell, npre = 12, 2, 2, 1, 2, 1
        X = r.child(0).uniform(-1, 1, (n, d))
        pre_scores = np.zeros((n, npre))
        pre_experts = r.child(1).uniform(-1, 1, (n, npre, dp))
        w1 = r.child(2).uniform(-1, 1, (ell, rank, d))
        w2 = r.child(3).uniform(-1, 1, (d, rank))
        b = r.child(4).uniform(-0.5, 0.5, ell)
        loss = mixture_regression_loss(
            X,
            r.child(5).normal(0, 0.02, (n, dp)),
            pre_scores,
            pre_experts,
            np.eye(d),
            np.eye(dp, d),
            "tanh",
        )
        items = [("log_weights", b)] + [(f"w1_{i}", w1[i]) for i in range(ell)] + [("w2", w2)]
        assert grad_check(loss, ParamVector.from_arrays(items)) < 1e-5
