"""Gradients of scalar losses with respect to trainable parameter bundles.

Trainable parameters travel as a :class:`ParamVector`: a flat float64 vector
plus a layout mapping back to named arrays. Loss callables receive a mapping
``name -> array`` and must be written against :mod:`promptmoe.ops`
(or plain operators); the engine then evaluates them either on raw ndarrays
(finite differences) or on autodiff nodes (reverse mode). Frozen weights such
as attention projections never enter a ParamVector, so they can never receive
gradient entries.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Mapping

import numpy as np

from . import autodiff as ad
from . import ops
from .errors import DomainError, ShapeError
from .prompt_attention import AttentionWeights, prompted_msa_forward
from .vapt_prompts import VaptParams, adaptive_prompts_from_arrays

__all__ = [
    "ParamVector",
    "LossFn",
    "grad",
    "finite_diff_grad",
    "grad_check",
    "vpt_prompt_loss",
    "vpt_param_vector",
    "vapt_loss",
    "vapt_param_vector",
    "mixture_regression_loss",
]

LossFn = Callable[[Mapping[str, object]], object]


@dataclass(frozen=True)
class ParamVector:
    """Flat view of named parameter arrays; flatten/unflatten is bit-exact."""

    values: np.ndarray
    names: tuple[str, ...]
    shapes: tuple[tuple[int, ...], ...]

    def __post_init__(self):
        object.__setattr__(self, "values", np.asarray(self.values, dtype=np.float64))
        expected = sum(int(np.prod(s)) for s in self.shapes)
        if self.values.ndim != 1 or self.values.size != expected:
            raise ShapeError(
                f"flat size {self.values.size} does not match layout size {expected}"
            )

    @classmethod
    def from_arrays(cls, items: list[tuple[str, np.ndarray]]) -> "ParamVector":
        names = tuple(name for name, _ in items)
        arrays = [np.asarray(a, dtype=np.float64) for _, a in items]
        shapes = tuple(a.shape for a in arrays)
        flat = (
            np.concatenate([a.ravel() for a in arrays])
            if arrays
            else np.zeros(0)
        )
        return cls(values=flat, names=names, shapes=shapes)

    def to_arrays(self) -> dict[str, np.ndarray]:
        out = {}
        offset = 0
        for name, shape in zip(self.names, self.shapes):
            size = int(np.prod(shape))
            out[name] = self.values[offset : offset + size].reshape(shape)
            offset += size
        return out

    def replace_values(self, values: np.ndarray) -> "ParamVector":
        return ParamVector(values=values, names=self.names, shapes=self.shapes)

    def __len__(self) -> int:
        return self.values.size


def grad(loss_fn: LossFn, p: ParamVector) -> ParamVector:
    """Exact gradient by reverse-mode accumulation through the loss graph."""
    leaves = {name: ad.Var(arr) for name, arr in p.to_arrays().items()}
    out = loss_fn(leaves)
    if not isinstance(out, ad.Var):
        # Loss did not touch any parameter: gradient is identically zero.
        value = float(out)
        if not np.isfinite(value):
            raise DomainError("loss is non-finite")
        return p.replace_values(np.zeros_like(p.values))
    if not np.all(np.isfinite(out.value)):
        raise DomainError("loss is non-finite")
    out.backward()
    parts = []
    for name, shape in zip(p.names, p.shapes):
        g = leaves[name].grad
        parts.append(np.zeros(shape).ravel() if g is None else g.ravel())
    flat = np.concatenate(parts) if parts else np.zeros(0)
    return p.replace_values(flat)


def _eval_plain(loss_fn: LossFn, p: ParamVector) -> float:
    out = loss_fn(p.to_arrays())
    return float(out.value) if isinstance(out, ad.Var) else float(out)


def finite_diff_grad(loss_fn: LossFn, p: ParamVector, h: float = 1e-5) -> ParamVector:
    """Central-difference gradient, one coordinate at a time."""
    if h <= 0:
        raise DomainError("finite-difference step must be positive")
    base = p.values
    out = np.zeros_like(base)
    for i in range(base.size):
        bumped = base.copy()
        bumped[i] = base[i] + h
        f_plus = _eval_plain(loss_fn, p.replace_values(bumped))
        bumped[i] = base[i] - h
        f_minus = _eval_plain(loss_fn, p.replace_values(bumped))
        out[i] = (f_plus - f_minus) / (2.0 * h)
    return p.replace_values(out)


def grad_check(loss_fn: LossFn, p: ParamVector, h: float = 1e-5) -> float:
    """Max elementwise relative error between reverse mode and central differences."""
    a = grad(loss_fn, p).values
    b = finite_diff_grad(loss_fn, p, h).values
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), 1e-8)
    if a.size == 0:
        return 0.0
    return float(np.max(np.abs(a - b) / denom))


# -- loss builders -------------------------------------------------------------


def vpt_param_vector(prompts: np.ndarray) -> ParamVector:
    return ParamVector.from_arrays([("prompts", prompts)])


def vpt_prompt_loss(X: np.ndarray, Y: np.ndarray, w: AttentionWeights) -> LossFn:
    """Squared error of prompted attention against a fixed target, in the prompts."""

    def loss(params):
        out = prompted_msa_forward(X, params["prompts"], w)
        r = out - Y
        return ops.asum(r * r)

    return loss


def vapt_param_vector(params: VaptParams, block: int = 0) -> ParamVector:
    return ParamVector.from_arrays(
        [
            ("conv_kernel", params.conv_kernels[block]),
            ("alphas", params.alphas[block]),
            ("w1", params.w1),
            ("w2", params.w2),
            ("ln_gain", params.ln_gain[block]),
            ("ln_bias", params.ln_bias[block]),
        ]
    )


def vapt_loss(
    X: np.ndarray,
    Y: np.ndarray,
    w: AttentionWeights,
    template: VaptParams,
    block: int = 0,
) -> LossFn:
    """Squared error of the adaptive-prompt forward pass, in one block's params.

    The parameter mapping must carry the arrays named by
    :func:`vapt_param_vector`; activation and the layer-norm switch come from
    the template.
    """
    cfg = template.shape

    def loss(params):
        prompts = adaptive_prompts_from_arrays(
            X,
            params["conv_kernel"],
            params["alphas"],
            params["w1"],
            params["w2"],
            params["ln_gain"],
            params["ln_bias"],
            template.activation,
            template.use_layer_norm,
            cfg.height,
            cfg.width,
        )
        out = prompted_msa_forward(X, prompts, w)
        r = out - Y
        return ops.asum(r * r)

    return loss


def mixture_regression_loss(
    X: np.ndarray,
    Y: np.ndarray,
    pre_scores: np.ndarray,
    pre_experts: np.ndarray,
    score_proj: np.ndarray,
    output_proj: np.ndarray,
    activation: str,
) -> LossFn:
    """Sum of squared residuals of the gated mixture regression.

    Parameters are ``log_weights`` (ell,), ``w1_i`` (rank, d) per atom, and the
    shared ``w2`` (d, rank). Pretrained scores/experts are fixed arrays of
    shape (n, N) and (n, N, d'). Written against :mod:`promptmoe.ops`, so it
    serves both the reverse-mode engine and finite differences; the fitting
    kernels are verified against it.
    """
    if activation == "tanh":
        act = ops.tanh
    elif activation == "identity":
        act = lambda v: v
    elif activation == "relu":
        act = ops.relu
    else:
        raise DomainError(f"unknown activation {activation!r}")
    n = X.shape[0]
    xb = X @ score_proj  # row s holds (score_proj^T x_s)^T

    def loss(params):
        ell = params["log_weights"].shape[0]
        total = pre_scores.shape[1] + ell
        log_w_row = ops.reshape(params["log_weights"], (1, ell))
        score_cols = [pre_scores]
        expert_mats = []
        for i in range(ell):
            t = act(X @ ops.transpose(params[f"w1_{i}"])) @ ops.transpose(params["w2"])
            pick = np.zeros((ell, 1))
            pick[i, 0] = 1.0
            bias = log_w_row @ pick  # (1, 1)
            score_cols.append(ops.asum(t * xb, axis=1, keepdims=True) + bias)
            expert_mats.append(t @ ops.transpose(output_proj))
        gates = ops.softmax_rows(ops.concat(score_cols, axis=1))
        f = np.zeros((n, Y.shape[1]))
        for j in range(pre_scores.shape[1]):
            col = np.zeros((total, 1))
            col[j, 0] = 1.0
            f = f + (gates @ col) * pre_experts[:, j, :]
        for i in range(ell):
            col = np.zeros((total, 1))
            col[pre_scores.shape[1] + i, 0] = 1.0
            f = f + (gates @ col) * expert_mats[i]
        r = f - Y
        return ops.asum(r * r)

    return loss
