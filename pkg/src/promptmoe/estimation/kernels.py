"""Backend selection for the fitting hot kernels.

The compiled Cython extension ``_speedups`` is preferred when it was built;
otherwise the vectorized numpy implementation ``_kernels_np`` serves the same
contract. Setting the environment variable ``PROMPTMOE_PURE=1`` before import
forces the numpy backend. ``benchmarks/bench_kernels.py`` compares the two.

Argument conventions shared by both backends (all float64, C-contiguous):

==============  ==============  =================================================
argument        shape           meaning
==============  ==============  =================================================
X               (n, d)          inputs, one sample per row
Y               (n, d')         targets
pre_scores      (n, N)          gate scores of the fixed components
pre_experts     (n, N, d')      outputs of the fixed components
xb              (n, d)          rows ``(score_proj^T x)^T`` (precomputed X @ B)
log_w           (ell,)          atom log-weights
w1              (ell, r, d)     per-atom first projector factors
w2              (d, r)          shared second projector factor
out_proj        (d', d)         output projection applied to prompt experts
act_code        int             0 identity, 1 tanh, 2 relu
==============  ==============  =================================================
"""

from __future__ import annotations

import os

import numpy as np

from . import _kernels_np

if os.environ.get("PROMPTMOE_PURE", "").strip() not in ("", "0"):
    _backend = _kernels_np
else:
    try:
        from . import _speedups as _backend  # type: ignore[no-redef]
    except ImportError:
        _backend = _kernels_np

__all__ = ["backend_name", "predict_batch", "objective_and_grad"]


def backend_name() -> str:
    """Either "cython" (compiled extension) or "numpy" (pure fallback)."""
    return _backend.BACKEND


def _c(a) -> np.ndarray:
    return np.ascontiguousarray(a, dtype=np.float64)


def predict_batch(X, pre_scores, pre_experts, xb, log_w, w1, w2, out_proj, act_code):
    return np.asarray(
        _backend.predict_batch(
            _c(X), _c(pre_scores), _c(pre_experts), _c(xb),
            _c(log_w), _c(w1), _c(w2), _c(out_proj), int(act_code),
        )
    )


def objective_and_grad(
    X, Y, pre_scores, pre_experts, xb, log_w, w1, w2, out_proj, act_code,
    want_grad: bool = True,
):
    obj, gb, gw1, gw2 = _backend.objective_and_grad(
        _c(X), _c(Y), _c(pre_scores), _c(pre_experts), _c(xb),
        _c(log_w), _c(w1), _c(w2), _c(out_proj), int(act_code), want_grad,
    )
    if not want_grad:
        return float(obj), None, None, None
    return float(obj), np.asarray(gb), np.asarray(gw1), np.asarray(gw2)
