"""Ground-truth mixture regression model and dataset sampling.

The regression function gates N fixed "pre-trained" experts (linear maps with
quadratic gate scores, all known) together with ell learned "prompt" experts.
Each prompt expert is the low-rank map ``output_proj @ w2 @ act(w1_i @ x)``
with gate score ``(score_proj @ w2 @ act(w1_i @ x)) . x + b_i``; the unknowns
form a mixing measure: atom weights ``exp(b_i)`` at atoms ``(w1_i, w2)`` with
one shared ``w2``. Setting ``activation="identity"`` gives the linear variant
where only the products ``w2 @ w1_i`` are identified.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from ..errors import DomainError, ShapeError
from ..tensor_core import Rng, as_tensor, check_finite

__all__ = [
    "MixingMeasure",
    "PretrainedExpertSpec",
    "RegressionConfig",
    "pretrained_scores",
    "pretrained_expert_values",
    "gating_weights",
    "eval_true_regression",
    "eval_regression_batch",
    "sample_dataset",
    "make_pretrained_spec",
    "make_ground_truth",
]

_ACTIVATION_CODES = {"identity": 0, "tanh": 1, "relu": 2}


def _apply_activation(u: np.ndarray, activation: str) -> np.ndarray:
    if activation == "identity":
        return u
    if activation == "tanh":
        return np.tanh(u)
    if activation == "relu":
        return np.where(u > 0, u, 0.0)
    raise DomainError(f"unknown activation {activation!r}")


@dataclass
class MixingMeasure:
    """Weighted atoms ``sum_i exp(log_weights[i]) . delta_(w1[i], w2)``.

    Weights are stored as log-weights so they stay positive by construction;
    ``w2`` is a single array shared by every atom.
    """

    log_weights: np.ndarray  # (ell,)
    w1: np.ndarray  # (ell, r, d)
    w2: np.ndarray  # (d, r)

    def __post_init__(self):
        self.log_weights = as_tensor(self.log_weights)
        self.w1 = as_tensor(self.w1)
        self.w2 = as_tensor(self.w2)
        if self.log_weights.ndim != 1 or self.w1.ndim != 3 or self.w2.ndim != 2:
            raise ShapeError("expected log_weights (ell,), w1 (ell, r, d), w2 (d, r)")
        ell, r, d = self.w1.shape
        if self.log_weights.shape[0] != ell or self.w2.shape != (d, r):
            raise ShapeError(
                f"inconsistent atom shapes: {self.log_weights.shape}, "
                f"{self.w1.shape}, {self.w2.shape}"
            )
        for name in ("log_weights", "w1", "w2"):
            check_finite(name, getattr(self, name))

    @property
    def num_atoms(self) -> int:
        return self.log_weights.shape[0]

    @property
    def rank(self) -> int:
        return self.w1.shape[1]

    @property
    def dim(self) -> int:
        return self.w1.shape[2]

    def weights(self) -> np.ndarray:
        return np.exp(self.log_weights)

    def products(self) -> np.ndarray:
        """Per-atom product matrices w2 @ w1[i], shape (ell, d, d)."""
        return np.einsum("dr,ire->ide", self.w2, self.w1)

    def copy(self) -> "MixingMeasure":
        return MixingMeasure(
            log_weights=self.log_weights.copy(),
            w1=self.w1.copy(),
            w2=self.w2.copy(),
        )


@dataclass(frozen=True)
class PretrainedExpertSpec:
    """Known gating/expert parameters of the N fixed mixture components."""

    score_quad: np.ndarray  # (N, d, d) quadratic gate forms
    score_bias: np.ndarray  # (N,) gate biases
    experts: np.ndarray  # (N, d', d) linear expert maps

    def __post_init__(self):
        for name in ("score_quad", "score_bias", "experts"):
            arr = as_tensor(getattr(self, name))
            check_finite(name, arr)
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)
        n = self.score_bias.shape[0]
        if self.score_quad.shape[:1] != (n,) or self.experts.shape[:1] != (n,):
            raise ShapeError("pre-trained expert arrays disagree on N")

    @property
    def num_experts(self) -> int:
        return self.score_bias.shape[0]


@dataclass(frozen=True)
class RegressionConfig:
    """Shapes, noise level, activation and projections of one experiment."""

    dim: int = 2
    out_dim: int = 2
    rank: int = 1
    num_pretrained: int = 1
    num_true: int = 2
    max_fitted: int = 2
    sample_size: int = 1000
    noise_std: float = 0.1
    activation: str = "tanh"
    score_proj: np.ndarray = None  # (d, d); identity when omitted
    output_proj: np.ndarray = None  # (d', d); identity-like when omitted
    input_low: float = -1.0
    input_high: float = 1.0

    def __post_init__(self):
        if self.max_fitted < self.num_true:
            raise DomainError("max_fitted must be >= num_true")
        if self.noise_std < 0:
            raise DomainError("noise_std must be >= 0")
        if self.activation not in _ACTIVATION_CODES:
            raise DomainError(f"unknown activation {self.activation!r}")
        score_proj = (
            np.eye(self.dim) if self.score_proj is None else as_tensor(self.score_proj)
        )
        output_proj = (
            np.eye(self.out_dim, self.dim)
            if self.output_proj is None
            else as_tensor(self.output_proj)
        )
        if score_proj.shape != (self.dim, self.dim):
            raise ShapeError(f"score_proj must be ({self.dim}, {self.dim})")
        if output_proj.shape != (self.out_dim, self.dim):
            raise ShapeError(f"output_proj must be ({self.out_dim}, {self.dim})")
        object.__setattr__(self, "score_proj", score_proj)
        object.__setattr__(self, "output_proj", output_proj)

    @property
    def activation_code(self) -> int:
        return _ACTIVATION_CODES[self.activation]

    def with_(self, **changes) -> "RegressionConfig":
        return replace(self, **changes)


def pretrained_scores(X: np.ndarray, pre: PretrainedExpertSpec) -> np.ndarray:
    """Gate scores x^T Q_j x + c_j of the fixed components, shape (n, N)."""
    return np.einsum("nd,jde,ne->nj", X, pre.score_quad, X) + pre.score_bias


def pretrained_expert_values(X: np.ndarray, pre: PretrainedExpertSpec) -> np.ndarray:
    """Fixed expert outputs, shape (n, N, d')."""
    return np.einsum("jod,nd->njo", pre.experts, X)


def gating_weights(
    x: np.ndarray,
    G: MixingMeasure,
    pre: PretrainedExpertSpec,
    cfg: RegressionConfig,
) -> np.ndarray:
    """Softmax gate vector over the N fixed plus ell prompt components."""
    x = as_tensor(x)
    scores = []
    for j in range(pre.num_experts):
        scores.append(float(x @ pre.score_quad[j] @ x + pre.score_bias[j]))
    for i in range(G.num_atoms):
        t = G.w2 @ _apply_activation(G.w1[i] @ x, cfg.activation)
        scores.append(float((cfg.score_proj @ t) @ x + G.log_weights[i]))
    scores = np.asarray(scores)
    gates = np.exp(scores - scores.max())
    return gates / gates.sum()


def eval_true_regression(
    x: np.ndarray,
    G: MixingMeasure,
    pre: PretrainedExpertSpec,
    cfg: RegressionConfig,
) -> np.ndarray:
    """Regression function at a single input, written as a straight line.

    Scores are shifted by their maximum before exponentiation so extreme
    gates cannot overflow.
    """
    x = as_tensor(x)
    if x.shape != (cfg.dim,):
        raise ShapeError(f"input must have shape ({cfg.dim},), got {x.shape}")
    check_finite("x", x)
    scores = []
    outputs = []
    for j in range(pre.num_experts):
        scores.append(float(x @ pre.score_quad[j] @ x + pre.score_bias[j]))
        outputs.append(pre.experts[j] @ x)
    for i in range(G.num_atoms):
        t = G.w2 @ _apply_activation(G.w1[i] @ x, cfg.activation)
        scores.append(float((cfg.score_proj @ t) @ x + G.log_weights[i]))
        outputs.append(cfg.output_proj @ t)
    scores = np.asarray(scores)
    gates = np.exp(scores - scores.max())
    gates /= gates.sum()
    return sum(g * out for g, out in zip(gates, outputs))


def eval_regression_batch(
    X: np.ndarray,
    G: MixingMeasure,
    pre: PretrainedExpertSpec,
    cfg: RegressionConfig,
) -> np.ndarray:
    """Vectorized regression function over rows of X, shape (n, d')."""
    from . import kernels

    X = np.ascontiguousarray(X, dtype=np.float64)
    return kernels.predict_batch(
        X,
        pretrained_scores(X, pre),
        pretrained_expert_values(X, pre),
        X @ cfg.score_proj,
        G.log_weights,
        G.w1,
        G.w2,
        cfg.output_proj,
        cfg.activation_code,
    )


def sample_dataset(
    G_star: MixingMeasure,
    pre: PretrainedExpertSpec,
    cfg: RegressionConfig,
    rng: Rng,
) -> tuple[np.ndarray, np.ndarray]:
    """Draw (X, Y): inputs uniform on a box, isotropic Gaussian response noise."""
    n = cfg.sample_size
    X = rng.uniform(cfg.input_low, cfg.input_high, (n, cfg.dim))
    Y = eval_regression_batch(X, G_star, pre, cfg)
    if cfg.noise_std > 0:
        Y = Y + rng.normal(0.0, cfg.noise_std, (n, cfg.out_dim))
    return X, Y


def make_pretrained_spec(cfg: RegressionConfig, rng: Rng) -> PretrainedExpertSpec:
    """Fixed components: zero gate forms, random (then frozen) expert maps."""
    n = cfg.num_pretrained
    return PretrainedExpertSpec(
        score_quad=np.zeros((n, cfg.dim, cfg.dim)),
        score_bias=np.zeros(n),
        experts=rng.uniform(-1.0, 1.0, (n, cfg.out_dim, cfg.dim)),
    )


def make_ground_truth(
    cfg: RegressionConfig,
    rng: Rng,
    min_separation: float = 1.0,
    max_tries: int = 1000,
) -> MixingMeasure:
    """Sample a well-separated true mixing measure inside the parameter box.

    Atoms are resampled until they are pairwise at least ``min_separation``
    apart both as raw (w1) atoms and as product matrices (w2 @ w1), so both
    loss variants see distinct true components.
    """
    L = cfg.num_true
    for _ in range(max_tries):
        w2 = rng.uniform(-1.0, 1.0, (cfg.dim, cfg.rank))
        if np.linalg.norm(w2) < 0.5:
            continue
        w1 = rng.uniform(-1.5, 1.5, (L, cfg.rank, cfg.dim))
        ok = True
        for a in range(L):
            for b in range(a + 1, L):
                if np.linalg.norm(w1[a] - w1[b]) < min_separation:
                    ok = False
                if np.linalg.norm(w2 @ (w1[a] - w1[b])) < 0.5 * min_separation:
                    ok = False
        if not ok:
            continue
        log_weights = rng.uniform(-0.5, 0.5, L)
        return MixingMeasure(log_weights=log_weights, w1=w1, w2=w2)
    raise DomainError("could not sample a separated ground truth")
