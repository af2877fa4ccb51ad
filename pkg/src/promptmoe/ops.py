"""Array functions that work on plain ndarrays and on autodiff nodes alike.

The attention and prompt-generation pipelines are written against this module
so a single implementation serves both the numeric forward pass and the
reverse-mode gradient pass: pass ndarrays and you get ndarrays, pass
:class:`~promptmoe.autodiff.Var` leaves and you get a differentiable graph.
Python operators (``+``, ``*``, ``@``, ...) already dispatch correctly on
both types; only named functions need explicit routing.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from . import tensor_core

__all__ = [
    "is_traced",
    "exp",
    "tanh",
    "relu",
    "sqrt",
    "asum",
    "concat",
    "reshape",
    "transpose",
    "softmax_rows",
    "channelwise_conv2d",
    "layer_norm_rows",
]


def is_traced(*xs) -> bool:
    return any(isinstance(x, ad.Var) for x in xs)


def exp(x):
    return ad.exp(x) if is_traced(x) else np.exp(x)


def tanh(x):
    return ad.tanh(x) if is_traced(x) else np.tanh(x)


def relu(x):
    return ad.relu(x) if is_traced(x) else np.where(x > 0, x, 0.0)


def sqrt(x):
    return ad.sqrt(x) if is_traced(x) else np.sqrt(x)


def asum(x, axis=None, keepdims=False):
    if is_traced(x):
        return ad.asum(x, axis=axis, keepdims=keepdims)
    return np.sum(x, axis=axis, keepdims=keepdims)


def concat(parts, axis=0):
    if is_traced(*parts):
        return ad.concat(parts, axis=axis)
    return np.concatenate([np.asarray(p) for p in parts], axis=axis)


def reshape(x, shape):
    return x.reshape(shape)


def transpose(x):
    return x.T


def softmax_rows(x):
    return ad.softmax_rows(x) if is_traced(x) else tensor_core.softmax_rows(x)


def channelwise_conv2d(x, kernel):
    if is_traced(x, kernel):
        return ad.channelwise_conv2d(x, kernel)
    return tensor_core.channelwise_conv2d(x, kernel)


def layer_norm_rows(x, gain, bias, eps: float = 1e-5):
    """Row-wise layer normalization; traced when any argument is a Var."""
    if not is_traced(x, gain, bias):
        return tensor_core.layer_norm_rows(x, gain, bias, eps)
    d = x.shape[1]
    mean = asum(x, axis=1, keepdims=True) / d
    centered = x - mean
    var = asum(centered * centered, axis=1, keepdims=True) / d
    return gain * (centered / sqrt(var + eps)) + bias
