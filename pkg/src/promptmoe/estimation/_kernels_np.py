"""Pure numpy implementation of the fitting hot kernels.

Same contract as the compiled module ``_speedups``; see
:mod:`promptmoe.estimation.kernels` for the selection logic and the argument
conventions. Everything is vectorized over the sample axis.
"""

from __future__ import annotations

import numpy as np

BACKEND = "numpy"


def _activation(u: np.ndarray, code: int) -> tuple[np.ndarray, np.ndarray]:
    """Value and elementwise derivative of the projector activation."""
    if code == 0:
        return u, np.ones_like(u)
    if code == 1:
        t = np.tanh(u)
        return t, 1.0 - t * t
    if code == 2:
        mask = u > 0
        return np.where(mask, u, 0.0), mask.astype(np.float64)
    raise ValueError(f"unknown activation code {code}")


def _gates_and_experts(X, pre_scores, xb, log_w, w1, w2, out_proj, act_code):
    u = np.einsum("ird,nd->nir", w1, X)
    s, s_deriv = _activation(u, act_code)
    t = np.einsum("dr,nir->nid", w2, s)
    prompt_scores = np.einsum("nid,nd->ni", t, xb) + log_w
    experts = np.einsum("od,nid->nio", out_proj, t)
    scores = np.concatenate([pre_scores, prompt_scores], axis=1)
    shifted = scores - scores.max(axis=1, keepdims=True)
    weights = np.exp(shifted)
    gates = weights / weights.sum(axis=1, keepdims=True)
    return gates, experts, s, s_deriv, t


def predict_batch(X, pre_scores, pre_experts, xb, log_w, w1, w2, out_proj, act_code):
    """Mixture regression outputs for every row of X, shape (n, d')."""
    n_pre = pre_scores.shape[1]
    gates, experts, _, _, _ = _gates_and_experts(
        X, pre_scores, xb, log_w, w1, w2, out_proj, act_code
    )
    out = np.einsum("nj,njo->no", gates[:, :n_pre], pre_experts)
    out += np.einsum("ni,nio->no", gates[:, n_pre:], experts)
    return out


def objective_and_grad(
    X,
    Y,
    pre_scores,
    pre_experts,
    xb,
    log_w,
    w1,
    w2,
    out_proj,
    act_code,
    want_grad=True,
):
    """Sum of squared residuals and its gradient in (log_w, w1, w2).

    Returns ``(objective, g_log_w, g_w1, g_w2)``; the gradient slots are None
    when ``want_grad`` is false.
    """
    n_pre = pre_scores.shape[1]
    gates, experts, s, s_deriv, _ = _gates_and_experts(
        X, pre_scores, xb, log_w, w1, w2, out_proj, act_code
    )
    g_pre = gates[:, :n_pre]
    g_prompt = gates[:, n_pre:]
    fitted = np.einsum("nj,njo->no", g_pre, pre_experts)
    fitted += np.einsum("ni,nio->no", g_prompt, experts)
    residual = fitted - Y
    objective = float(np.sum(residual * residual))
    if not want_grad:
        return objective, None, None, None

    rho = 2.0 * residual
    phi_pre = np.einsum("no,njo->nj", rho, pre_experts)
    phi_prompt = np.einsum("no,nio->ni", rho, experts)
    phi_bar = np.einsum("nj,nj->n", g_pre, phi_pre)
    phi_bar += np.einsum("ni,ni->n", g_prompt, phi_prompt)
    gamma = g_prompt * (phi_prompt - phi_bar[:, None])

    g_log_w = gamma.sum(axis=0)
    d_t = gamma[:, :, None] * xb[:, None, :]
    d_t += np.einsum("ni,nd->nid", g_prompt, rho @ out_proj)
    g_w2 = np.einsum("nid,nir->dr", d_t, s)
    d_u = s_deriv * np.einsum("dr,nid->nir", w2, d_t)
    g_w1 = np.einsum("nir,nd->ird", d_u, X)
    return objective, g_log_w, g_w1, g_w2
