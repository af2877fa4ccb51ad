"""Multi-head self-attention with prompt tokens, and its per-row MoE reading.

Every output row of an attention head is a softmax mixture: value-projected
input tokens act as fixed "pre-trained experts", value-projected prompt tokens
act as added "prompt experts", and the scaled query-key scores are the expert
scores. :func:`moe_decompose` extracts that mixture for one (head, row) pair
and :func:`moe_eval` re-evaluates it, which must reproduce the attention
output exactly.

Forward passes accept ndarrays or autodiff ``Var`` nodes for ``X`` and ``P``
(projection weights stay frozen ndarrays), so losses built on them are
differentiable with respect to prompts.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import ops
from .errors import ShapeError
from .tensor_core import Rng, as_tensor, check_finite

__all__ = [
    "AttentionWeights",
    "MoEDecomposition",
    "random_attention_weights",
    "msa_forward",
    "prompted_msa_forward",
    "prompted_head_outputs",
    "moe_decompose",
    "moe_eval",
]


@dataclass(frozen=True)
class AttentionWeights:
    """Frozen projection matrices of one multi-head self-attention layer.

    Per head m: query/key maps of shape (d, d_k) and a value map of shape
    (d, d_v), stacked along the leading axis; the output map ``wo`` has shape
    (M*d_v, d). Head width is d_k = d_v = d / M.
    """

    wq: np.ndarray
    wk: np.ndarray
    wv: np.ndarray
    wo: np.ndarray

    def __post_init__(self):
        for name in ("wq", "wk", "wv", "wo"):
            arr = as_tensor(getattr(self, name))
            check_finite(name, arr)
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)
        m, d, dk = self.wq.shape
        if d % m != 0 or dk != d // m:
            raise ShapeError(f"head width must be d/M, got wq shape {self.wq.shape}")
        if self.wk.shape != (m, d, dk) or self.wv.shape != (m, d, dk):
            raise ShapeError("wq, wk, wv must share the shape (M, d, d/M)")
        if self.wo.shape != (m * dk, d):
            raise ShapeError(
                f"wo must have shape ({m * dk}, {d}), got {self.wo.shape}"
            )

    @property
    def num_heads(self) -> int:
        return self.wq.shape[0]

    @property
    def embed_dim(self) -> int:
        return self.wq.shape[1]

    @property
    def head_dim(self) -> int:
        return self.wq.shape[2]


def random_attention_weights(embed_dim: int, num_heads: int, rng: Rng) -> AttentionWeights:
    """Sample a frozen attention layer with uniform(-1/sqrt(d), 1/sqrt(d)) entries."""
    if embed_dim % num_heads != 0:
        raise ShapeError(f"embed_dim {embed_dim} not divisible by {num_heads} heads")
    dk = embed_dim // num_heads
    scale = 1.0 / math.sqrt(embed_dim)
    shape = (num_heads, embed_dim, dk)
    return AttentionWeights(
        wq=rng.uniform(-scale, scale, shape),
        wk=rng.uniform(-scale, scale, shape),
        wv=rng.uniform(-scale, scale, shape),
        wo=rng.uniform(-scale, scale, (num_heads * dk, embed_dim)),
    )


def _check_tokens(x, w: AttentionWeights, name: str, allow_empty: bool = False):
    if getattr(x, "ndim", None) != 2:
        raise ShapeError(f"{name} must be a 2-D token matrix")
    n, d = x.shape
    if d != w.embed_dim:
        raise ShapeError(f"{name} feature size {d} != layer width {w.embed_dim}")
    if n == 0 and not allow_empty:
        raise ShapeError(f"{name} must contain at least one token")
    if isinstance(x, np.ndarray):
        check_finite(name, x)


def _head_output(x, p, w: AttentionWeights, head: int):
    """Pre-output-projection rows of one head; prompt-position rows are never built."""
    scale = 1.0 / math.sqrt(w.head_dim)
    stacked = x if p is None or p.shape[0] == 0 else ops.concat([x, p], axis=0)
    q = x @ w.wq[head]
    k = stacked @ w.wk[head]
    v = stacked @ w.wv[head]
    scores = (q @ ops.transpose(k)) * scale
    return ops.softmax_rows(scores) @ v


def msa_forward(X, w: AttentionWeights):
    """Plain multi-head self-attention over the N input tokens."""
    _check_tokens(X, w, "X")
    heads = [_head_output(X, None, w, m) for m in range(w.num_heads)]
    return ops.concat(heads, axis=1) @ w.wo


def prompted_msa_forward(X, P, w: AttentionWeights):
    """Self-attention where keys/values also cover N_p prompt tokens.

    Only the N rows belonging to the input tokens are computed and returned;
    the prompt positions' outputs are discarded downstream anyway.
    """
    _check_tokens(X, w, "X")
    _check_tokens(P, w, "P", allow_empty=True)
    heads = [_head_output(X, P, w, m) for m in range(w.num_heads)]
    return ops.concat(heads, axis=1) @ w.wo


def prompted_head_outputs(X, P, w: AttentionWeights) -> np.ndarray:
    """Per-head outputs before the output projection, shape (M, N, d_v)."""
    _check_tokens(X, w, "X")
    _check_tokens(P, w, "P", allow_empty=True)
    return np.stack([_head_output(X, P, w, m) for m in range(w.num_heads)])


@dataclass(frozen=True)
class MoEDecomposition:
    """One attention-output row written as experts plus scores.

    ``expert_values[j]`` is the value projection of token j (inputs first,
    prompts after); ``score_values[j]`` is the scaled query-key score between
    output row ``row`` and token j. Prompt-expert values carry no dependence
    on ``row``.
    """

    expert_values: np.ndarray
    score_values: np.ndarray
    row: int
    head: int
    num_tokens: int
    num_prompts: int

    def gating_weights(self) -> np.ndarray:
        from .tensor_core import softmax_rows

        return softmax_rows(self.score_values[None, :])[0]


def moe_decompose(X, P, w: AttentionWeights, head: int, row: int) -> MoEDecomposition:
    """Extract the expert/score mixture behind one (head, row) output."""
    X = as_tensor(X)
    P = as_tensor(P) if P is not None else np.zeros((0, w.embed_dim))
    _check_tokens(X, w, "X")
    _check_tokens(P, w, "P", allow_empty=True)
    n = X.shape[0]
    if not 0 <= head < w.num_heads:
        raise IndexError(f"head {head} out of range [0, {w.num_heads})")
    if not 0 <= row < n:
        raise IndexError(f"row {row} out of range [0, {n})")
    expert_values = np.concatenate([X @ w.wv[head], P @ w.wv[head]], axis=0)
    keys = np.concatenate([X @ w.wk[head], P @ w.wk[head]], axis=0)
    query = X[row] @ w.wq[head]
    score_values = keys @ query / math.sqrt(w.head_dim)
    return MoEDecomposition(
        expert_values=expert_values,
        score_values=score_values,
        row=row,
        head=head,
        num_tokens=n,
        num_prompts=P.shape[0],
    )


def moe_eval(dec: MoEDecomposition) -> np.ndarray:
    """Softmax-weighted combination of the expert values."""
    return dec.gating_weights() @ dec.expert_values
