"""Adaptive prompt generation and its parameter accounting.

Prompts are produced from the input tokens by a fixed pipeline: per-token
layer normalization, a single K x K convolution kernel shared across all d
channels, one learned weighted sum over the convolved spatial positions per
prompt, and a shared low-rank two-layer projector ``x -> W2 @ act(W1 @ x)``.
Projector weights (w1, w2) are a single instance shared by every block;
kernels, mixing coefficients, and layer-norm affine terms are per block.

Parameters serialize to a flat binary file (see :data:`MAGIC` and
:func:`save_vapt_params` for the exact layout) plus a JSON sidecar holding the
shape configuration; round-trips are bit-exact.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import ops
from .errors import DomainError, ShapeError
from .prompt_attention import AttentionWeights, prompted_msa_forward
from .tensor_core import Rng, as_tensor, check_finite

__all__ = [
    "PromptShapeConfig",
    "VaptParams",
    "token_wise_project",
    "adaptive_prompts_from_arrays",
    "generate_adaptive_prompts",
    "vapt_forward",
    "vapt_param_count",
    "vpt_param_count",
    "count_trainable_scalars",
    "init_vapt_params",
    "save_vapt_params",
    "load_vapt_params",
]

ACTIVATIONS = ("relu", "tanh", "identity")

LAYER_NORM_EPS = 1e-5

#: binary header of serialized parameter files
MAGIC = b"PMOEPAR1"

#: field order in the serialized layout
_ARRAY_FIELDS = ("conv_kernels", "alphas", "w1", "w2", "ln_gain", "ln_bias")


@dataclass(frozen=True)
class PromptShapeConfig:
    """Static shape of the prompt generator across a stack of blocks."""

    blocks: int
    prompts: int
    height: int
    width: int
    kernel_size: int
    rank: int
    dim: int

    def __post_init__(self):
        if self.blocks < 1 or self.prompts < 1:
            raise DomainError("blocks and prompts must be >= 1")
        if self.kernel_size < 1 or self.rank < 1 or self.dim < 1:
            raise DomainError("kernel_size, rank and dim must be >= 1")
        if self.conv_height < 1 or self.conv_width < 1:
            raise ShapeError(
                f"kernel {self.kernel_size} too large for {self.height}x{self.width} map"
            )

    @property
    def tokens(self) -> int:
        return self.height * self.width

    @property
    def conv_height(self) -> int:
        return self.height - self.kernel_size + 1

    @property
    def conv_width(self) -> int:
        return self.width - self.kernel_size + 1

    @property
    def conv_tokens(self) -> int:
        return self.conv_height * self.conv_width

    def to_dict(self) -> dict:
        return {
            "blocks": self.blocks,
            "prompts": self.prompts,
            "height": self.height,
            "width": self.width,
            "kernel_size": self.kernel_size,
            "rank": self.rank,
            "dim": self.dim,
        }


@dataclass
class VaptParams:
    """Trainable parameters of the adaptive prompt generator.

    ``w1``/``w2`` are shared by all blocks; everything else carries a leading
    block axis. ``use_layer_norm=False`` bypasses normalization so algebraic
    identities (selection, composition) hold exactly in tests.
    """

    shape: PromptShapeConfig
    conv_kernels: np.ndarray  # (L, K, K)
    alphas: np.ndarray  # (L, N_p, H'*W')
    w1: np.ndarray  # (r, d)
    w2: np.ndarray  # (d, r)
    ln_gain: np.ndarray  # (L, d)
    ln_bias: np.ndarray  # (L, d)
    activation: str = "relu"
    use_layer_norm: bool = True

    def __post_init__(self):
        cfg = self.shape
        for name in _ARRAY_FIELDS:
            arr = as_tensor(getattr(self, name))
            check_finite(name, arr)
            setattr(self, name, arr)
        expected = {
            "conv_kernels": (cfg.blocks, cfg.kernel_size, cfg.kernel_size),
            "alphas": (cfg.blocks, cfg.prompts, cfg.conv_tokens),
            "w1": (cfg.rank, cfg.dim),
            "w2": (cfg.dim, cfg.rank),
            "ln_gain": (cfg.blocks, cfg.dim),
            "ln_bias": (cfg.blocks, cfg.dim),
        }
        for name, shape in expected.items():
            if getattr(self, name).shape != shape:
                raise ShapeError(
                    f"{name} must have shape {shape}, got {getattr(self, name).shape}"
                )
        if cfg.rank >= cfg.dim:
            raise ShapeError(f"projector rank {cfg.rank} must be < dim {cfg.dim}")
        if self.activation not in ACTIVATIONS:
            raise DomainError(f"unknown activation {self.activation!r}")


def init_vapt_params(
    cfg: PromptShapeConfig,
    rng: Rng,
    activation: str = "relu",
    use_layer_norm: bool = True,
) -> VaptParams:
    """Scale-balanced uniform initialization; layer norm starts as identity."""
    a_scale = 1.0 / math.sqrt(cfg.conv_tokens)
    w_scale = 1.0 / math.sqrt(cfg.dim)
    k_scale = 1.0 / cfg.kernel_size
    return VaptParams(
        shape=cfg,
        conv_kernels=rng.uniform(-k_scale, k_scale, (cfg.blocks, cfg.kernel_size, cfg.kernel_size)),
        alphas=rng.uniform(-a_scale, a_scale, (cfg.blocks, cfg.prompts, cfg.conv_tokens)),
        w1=rng.uniform(-w_scale, w_scale, (cfg.rank, cfg.dim)),
        w2=rng.uniform(-w_scale, w_scale, (cfg.dim, cfg.rank)),
        ln_gain=np.ones((cfg.blocks, cfg.dim)),
        ln_bias=np.zeros((cfg.blocks, cfg.dim)),
        activation=activation,
        use_layer_norm=use_layer_norm,
    )


def _activation_fn(tag: str):
    if tag == "relu":
        return ops.relu
    if tag == "tanh":
        return ops.tanh
    if tag == "identity":
        return lambda x: x
    raise DomainError(f"unknown activation {tag!r}")


def token_wise_project(x_conv_flat, alpha_row) -> np.ndarray:
    """Weighted sum of convolved tokens: one aggregated feature vector."""
    x_conv_flat = as_tensor(x_conv_flat)
    alpha_row = as_tensor(alpha_row)
    if x_conv_flat.ndim != 2 or alpha_row.ndim != 1:
        raise ShapeError("expected a (tokens, d) matrix and a (tokens,) coefficient row")
    if alpha_row.shape[0] != x_conv_flat.shape[0]:
        raise ShapeError(
            f"coefficient length {alpha_row.shape[0]} != token count {x_conv_flat.shape[0]}"
        )
    check_finite("x_conv_flat", x_conv_flat)
    check_finite("alpha_row", alpha_row)
    return alpha_row @ x_conv_flat


def adaptive_prompts_from_arrays(
    x,
    kernel,
    alpha,
    w1,
    w2,
    ln_gain,
    ln_bias,
    activation: str,
    use_layer_norm: bool,
    height: int,
    width: int,
):
    """Prompt pipeline on raw arrays (or autodiff nodes) for a single block.

    ``x`` is (N, d) with N = height * width; ``alpha`` is (N_p, conv tokens).
    Returns the (N_p, d) prompt matrix.
    """
    act = _activation_fn(activation)
    n, d = x.shape
    if n != height * width:
        raise ShapeError(f"token count {n} != {height}x{width} feature map")
    if use_layer_norm:
        x = ops.layer_norm_rows(x, ln_gain, ln_bias, LAYER_NORM_EPS)
    fmap = ops.reshape(x, (height, width, d))
    conv = ops.channelwise_conv2d(fmap, kernel)
    flat = ops.reshape(conv, (conv.shape[0] * conv.shape[1], d))
    aggregated = alpha @ flat  # (N_p, d)
    hidden = act(aggregated @ ops.transpose(w1))  # (N_p, r)
    return hidden @ ops.transpose(w2)  # (N_p, d)


def generate_adaptive_prompts(X, params: VaptParams, block: int = 0):
    """Prompts for one block as a function of the input tokens."""
    cfg = params.shape
    if not 0 <= block < cfg.blocks:
        raise IndexError(f"block {block} out of range [0, {cfg.blocks})")
    return adaptive_prompts_from_arrays(
        X,
        params.conv_kernels[block],
        params.alphas[block],
        params.w1,
        params.w2,
        params.ln_gain[block],
        params.ln_bias[block],
        params.activation,
        params.use_layer_norm,
        cfg.height,
        cfg.width,
    )


def vapt_forward(X, params: VaptParams, w: AttentionWeights, block: int = 0):
    """Prompted attention with prompts generated from the input itself."""
    prompts = generate_adaptive_prompts(X, params, block)
    return prompted_msa_forward(X, prompts, w)


def vapt_param_count(cfg: PromptShapeConfig, include_layer_norm: bool = False) -> int:
    """Trainable scalars of the adaptive generator.

    The headline count covers mixing coefficients, convolution kernels and the
    shared projector; ``include_layer_norm=True`` adds the 2*L*d affine terms
    which the headline figure leaves out.
    """
    count = (
        cfg.blocks * cfg.prompts * cfg.conv_height * cfg.conv_width
        + cfg.blocks * cfg.kernel_size**2
        + 2 * cfg.rank * cfg.dim
    )
    if include_layer_norm:
        count += 2 * cfg.blocks * cfg.dim
    return count


def vpt_param_count(cfg: PromptShapeConfig) -> int:
    """Trainable scalars of plain prompt tuning: one d-vector per prompt per block."""
    return cfg.blocks * cfg.prompts * cfg.dim


def count_trainable_scalars(params: VaptParams, include_layer_norm: bool = False) -> int:
    """Enumerate the actual scalars stored in a parameter struct."""
    count = (
        params.conv_kernels.size + params.alphas.size + params.w1.size + params.w2.size
    )
    if include_layer_norm:
        count += params.ln_gain.size + params.ln_bias.size
    return count


# -- serialization ------------------------------------------------------------
#
# Binary layout (all integers little-endian uint32, all floats little-endian
# IEEE-754 doubles):
#
#   MAGIC (8 bytes)
#   for each field in _ARRAY_FIELDS order:
#       ndim, dim_0 ... dim_{ndim-1}, ndim*... doubles (C order)
#
# The sidecar "<path>.json" stores the shape configuration, activation tag,
# and the layer-norm switch.


def save_vapt_params(params: VaptParams, path) -> None:
    path = Path(path)
    chunks = [MAGIC]
    for name in _ARRAY_FIELDS:
        arr = np.ascontiguousarray(getattr(params, name), dtype="<f8")
        chunks.append(struct.pack("<I", arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        chunks.append(arr.tobytes())
    path.write_bytes(b"".join(chunks))
    sidecar = {
        "format": 1,
        "shape": params.shape.to_dict(),
        "activation": params.activation,
        "use_layer_norm": params.use_layer_norm,
    }
    Path(str(path) + ".json").write_text(
        json.dumps(sidecar, indent=2, sort_keys=True) + "\n"
    )


def load_vapt_params(path) -> VaptParams:
    path = Path(path)
    blob = path.read_bytes()
    if blob[: len(MAGIC)] != MAGIC:
        raise DomainError(f"{path} is not a serialized parameter file (bad magic)")
    sidecar = json.loads(Path(str(path) + ".json").read_text())
    offset = len(MAGIC)
    arrays = {}
    for name in _ARRAY_FIELDS:
        (ndim,) = struct.unpack_from("<I", blob, offset)
        offset += 4
        shape = struct.unpack_from(f"<{ndim}I", blob, offset)
        offset += 4 * ndim
        count = int(np.prod(shape))
        arrays[name] = (
            np.frombuffer(blob, dtype="<f8", count=count, offset=offset)
            .reshape(shape)
            .copy()
        )
        offset += 8 * count
    if offset != len(blob):
        raise DomainError(f"{path} has {len(blob) - offset} trailing bytes")
    return VaptParams(
        shape=PromptShapeConfig(**sidecar["shape"]),
        activation=sidecar["activation"],
        use_layer_norm=sidecar["use_layer_norm"],
        **arrays,
    )


def with_arrays(params: VaptParams, **arrays) -> VaptParams:
    """Copy of ``params`` with some arrays replaced (validated)."""
    return replace(params, **arrays)
