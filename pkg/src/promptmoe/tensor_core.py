"""Dense numeric kernels every other module builds on.

Arrays are plain numpy ndarrays, C-contiguous (row-major), float64 unless the
caller explicitly passes float32 data. Verification paths always run in
float64. Public operations reject non-finite values: any NaN or Inf in an
input raises :class:`DomainError`.

Random numbers come from :class:`Rng`, a thin wrapper over numpy's Philox
counter-based bit generator. Philox is keyed through ``SeedSequence`` so the
same seed yields the same stream on every platform, and streams split into
independent children via spawn-key tuples (``rng.child(3, 7)``).
"""

from __future__ import annotations

import numpy as np

from .errors import DomainError, ShapeError

__all__ = [
    "Rng",
    "as_tensor",
    "check_finite",
    "softmax_rows",
    "channelwise_conv2d",
    "layer_norm",
    "layer_norm_rows",
]


def as_tensor(x, dtype=np.float64) -> np.ndarray:
    """Coerce ``x`` to a contiguous ndarray of the given dtype."""
    return np.ascontiguousarray(np.asarray(x, dtype=dtype))


def check_finite(name: str, x: np.ndarray) -> np.ndarray:
    """Raise DomainError if ``x`` contains NaN or Inf."""
    if not np.all(np.isfinite(x)):
        raise DomainError(f"{name} contains non-finite values")
    return x


def softmax_rows(m) -> np.ndarray:
    """Row-wise softmax of a 2-D array.

    Shift-invariant by construction: the row maximum is subtracted before
    exponentiation, so rows with large scores cannot overflow.
    """
    m = as_tensor(m)
    if m.ndim != 2:
        raise ShapeError(f"softmax_rows expects a 2-D array, got shape {m.shape}")
    check_finite("softmax input", m)
    shifted = m - m.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def channelwise_conv2d(x, kernel) -> np.ndarray:
    """Valid (stride 1, no padding) 2-D convolution sharing one kernel across channels.

    ``x`` has shape (H, W, d); ``kernel`` has shape (K, K). The output has
    shape (H-K+1, W-K+1, d) with
    ``out[i, j, c] = sum_{a,b} kernel[a, b] * x[i+a, j+b, c]``.
    """
    x = as_tensor(x)
    kernel = as_tensor(kernel)
    if x.ndim != 3:
        raise ShapeError(f"feature map must be (H, W, d), got shape {x.shape}")
    if kernel.ndim != 2 or kernel.shape[0] != kernel.shape[1]:
        raise ShapeError(f"kernel must be square (K, K), got shape {kernel.shape}")
    h, w, _ = x.shape
    k = kernel.shape[0]
    if k > h or k > w:
        raise ShapeError(f"kernel size {k} exceeds feature map {h}x{w}")
    check_finite("conv input", x)
    check_finite("conv kernel", kernel)
    out_h, out_w = h - k + 1, w - k + 1
    out = np.zeros((out_h, out_w, x.shape[2]))
    for a in range(k):
        for b in range(k):
            out += kernel[a, b] * x[a : a + out_h, b : b + out_w, :]
    return out


def layer_norm(v, gain, bias, eps: float = 1e-5) -> np.ndarray:
    """Normalize a vector to zero mean / unit variance, then apply affine terms."""
    v = as_tensor(v)
    if v.ndim != 1:
        raise ShapeError(f"layer_norm expects a vector, got shape {v.shape}")
    return layer_norm_rows(v[None, :], gain, bias, eps)[0]


def layer_norm_rows(x, gain, bias, eps: float = 1e-5) -> np.ndarray:
    """Row-wise layer normalization of a 2-D array (one feature vector per row)."""
    x = as_tensor(x)
    gain = as_tensor(gain)
    bias = as_tensor(bias)
    if x.ndim != 2:
        raise ShapeError(f"layer_norm_rows expects a 2-D array, got shape {x.shape}")
    d = x.shape[1]
    if gain.shape != (d,) or bias.shape != (d,):
        raise ShapeError(
            f"gain/bias must have shape ({d},), got {gain.shape} and {bias.shape}"
        )
    if eps <= 0:
        raise DomainError("layer_norm eps must be positive")
    check_finite("layer_norm input", x)
    mean = x.mean(axis=1, keepdims=True)
    centered = x - mean
    var = (centered * centered).mean(axis=1, keepdims=True)
    return gain * (centered / np.sqrt(var + eps)) + bias


class Rng:
    """Seeded Philox stream with deterministic splitting.

    Two instances built from the same ``(seed, key path)`` produce bit-identical
    draws on every platform. ``child(*indices)`` derives an independent
    substream; children of distinct index tuples never collide.
    """

    def __init__(self, seed: int, _spawn_key: tuple[int, ...] = ()):
        self.seed = int(seed)
        self.spawn_key = tuple(int(i) for i in _spawn_key)
        seq = np.random.SeedSequence(entropy=self.seed, spawn_key=self.spawn_key)
        self.generator = np.random.Generator(np.random.Philox(seq))

    def child(self, *indices: int) -> "Rng":
        return Rng(self.seed, self.spawn_key + tuple(indices))

    def uniform(self, low=0.0, high=1.0, size=None) -> np.ndarray:
        return self.generator.uniform(low, high, size=size)

    def normal(self, loc=0.0, scale=1.0, size=None) -> np.ndarray:
        return self.generator.normal(loc, scale, size=size)

    def integers(self, low, high=None, size=None) -> np.ndarray:
        return self.generator.integers(low, high, size=size)

    def __repr__(self) -> str:
        return f"Rng(seed={self.seed}, spawn_key={self.spawn_key})"
