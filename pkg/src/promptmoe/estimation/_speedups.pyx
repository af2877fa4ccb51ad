# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled fitting hot kernels: fused per-sample loops, no temporaries.

Mirrors the contract of ``_kernels_np``; selected at import time by
``promptmoe.estimation.kernels`` when the extension was built.
"""

import numpy as np

from libc.math cimport exp, fmax, tanh

BACKEND = "cython"


def predict_batch(
    double[:, ::1] X,
    double[:, ::1] pre_scores,
    double[:, :, ::1] pre_experts,
    double[:, ::1] xb,
    double[::1] log_w,
    double[:, :, ::1] w1,
    double[:, ::1] w2,
    double[:, ::1] out_proj,
    int act_code,
):
    cdef Py_ssize_t n = X.shape[0], d = X.shape[1]
    cdef Py_ssize_t npre = pre_scores.shape[1]
    cdef Py_ssize_t ell = log_w.shape[0], r = w1.shape[1]
    cdef Py_ssize_t dp = out_proj.shape[0]

    out_arr = np.zeros((n, dp))
    s_arr = np.zeros((ell, r))
    t_arr = np.zeros((ell, d))
    c_arr = np.zeros(ell)
    e_arr = np.zeros((ell, dp))
    wp_arr = np.zeros(npre if npre > 0 else 1)
    wq_arr = np.zeros(ell if ell > 0 else 1)
    cdef double[:, ::1] out = out_arr
    cdef double[:, ::1] s = s_arr
    cdef double[:, ::1] t = t_arr
    cdef double[::1] c = c_arr
    cdef double[:, ::1] e = e_arr
    cdef double[::1] wp = wp_arr
    cdef double[::1] wq = wq_arr

    cdef Py_ssize_t idx, i, j, k, q, o
    cdef double acc, m, denom, uv

    for idx in range(n):
        for i in range(ell):
            for q in range(r):
                acc = 0.0
                for k in range(d):
                    acc += w1[i, q, k] * X[idx, k]
                uv = acc
                if act_code == 1:
                    uv = tanh(uv)
                elif act_code == 2:
                    uv = uv if uv > 0.0 else 0.0
                s[i, q] = uv
            for k in range(d):
                acc = 0.0
                for q in range(r):
                    acc += w2[k, q] * s[i, q]
                t[i, k] = acc
            acc = log_w[i]
            for k in range(d):
                acc += t[i, k] * xb[idx, k]
            c[i] = acc
            for o in range(dp):
                acc = 0.0
                for k in range(d):
                    acc += out_proj[o, k] * t[i, k]
                e[i, o] = acc
        m = -1e308
        for j in range(npre):
            m = fmax(m, pre_scores[idx, j])
        for i in range(ell):
            m = fmax(m, c[i])
        denom = 0.0
        for j in range(npre):
            wp[j] = exp(pre_scores[idx, j] - m)
            denom += wp[j]
        for i in range(ell):
            wq[i] = exp(c[i] - m)
            denom += wq[i]
        for o in range(dp):
            acc = 0.0
            for j in range(npre):
                acc += wp[j] * pre_experts[idx, j, o]
            for i in range(ell):
                acc += wq[i] * e[i, o]
            out[idx, o] = acc / denom
    return out_arr


def objective_and_grad(
    double[:, ::1] X,
    double[:, ::1] Y,
    double[:, ::1] pre_scores,
    double[:, :, ::1] pre_experts,
    double[:, ::1] xb,
    double[::1] log_w,
    double[:, :, ::1] w1,
    double[:, ::1] w2,
    double[:, ::1] out_proj,
    int act_code,
    bint want_grad=True,
):
    cdef Py_ssize_t n = X.shape[0], d = X.shape[1], dp = Y.shape[1]
    cdef Py_ssize_t npre = pre_scores.shape[1]
    cdef Py_ssize_t ell = log_w.shape[0], r = w1.shape[1]

    gb_arr = np.zeros(ell)
    gw1_arr = np.zeros((ell, r, d))
    gw2_arr = np.zeros((d, r))
    s_arr = np.zeros((ell, r))
    sd_arr = np.zeros((ell, r))
    t_arr = np.zeros((ell, d))
    c_arr = np.zeros(ell)
    e_arr = np.zeros((ell, dp))
    wp_arr = np.zeros(npre if npre > 0 else 1)
    wq_arr = np.zeros(ell if ell > 0 else 1)
    rho_arr = np.zeros(dp)
    phq_arr = np.zeros(ell if ell > 0 else 1)
    dt_arr = np.zeros(d)
    rc_arr = np.zeros(d)

    cdef double[::1] gb = gb_arr
    cdef double[:, :, ::1] gw1 = gw1_arr
    cdef double[:, ::1] gw2 = gw2_arr
    cdef double[:, ::1] s = s_arr
    cdef double[:, ::1] sd = sd_arr
    cdef double[:, ::1] t = t_arr
    cdef double[::1] c = c_arr
    cdef double[:, ::1] e = e_arr
    cdef double[::1] wp = wp_arr
    cdef double[::1] wq = wq_arr
    cdef double[::1] rho = rho_arr
    cdef double[::1] phq = phq_arr
    cdef double[::1] dt = dt_arr
    cdef double[::1] rc = rc_arr

    cdef Py_ssize_t idx, i, j, k, q, o
    cdef double acc, m, denom, uv, tv, obj, f_o, res
    cdef double phibar, g_i, gam, dtv, duv

    obj = 0.0
    for idx in range(n):
        # forward pass for this sample
        for i in range(ell):
            for q in range(r):
                acc = 0.0
                for k in range(d):
                    acc += w1[i, q, k] * X[idx, k]
                if act_code == 0:
                    s[i, q] = acc
                    sd[i, q] = 1.0
                elif act_code == 1:
                    tv = tanh(acc)
                    s[i, q] = tv
                    sd[i, q] = 1.0 - tv * tv
                else:
                    if acc > 0.0:
                        s[i, q] = acc
                        sd[i, q] = 1.0
                    else:
                        s[i, q] = 0.0
                        sd[i, q] = 0.0
            for k in range(d):
                acc = 0.0
                for q in range(r):
                    acc += w2[k, q] * s[i, q]
                t[i, k] = acc
            acc = log_w[i]
            for k in range(d):
                acc += t[i, k] * xb[idx, k]
            c[i] = acc
            for o in range(dp):
                acc = 0.0
                for k in range(d):
                    acc += out_proj[o, k] * t[i, k]
                e[i, o] = acc
        m = -1e308
        for j in range(npre):
            m = fmax(m, pre_scores[idx, j])
        for i in range(ell):
            m = fmax(m, c[i])
        denom = 0.0
        for j in range(npre):
            wp[j] = exp(pre_scores[idx, j] - m)
            denom += wp[j]
        for i in range(ell):
            wq[i] = exp(c[i] - m)
            denom += wq[i]
        for o in range(dp):
            acc = 0.0
            for j in range(npre):
                acc += wp[j] * pre_experts[idx, j, o]
            for i in range(ell):
                acc += wq[i] * e[i, o]
            f_o = acc / denom
            res = f_o - Y[idx, o]
            obj += res * res
            rho[o] = 2.0 * res
        if not want_grad:
            continue
        # backward pass: gate softmax then the prompt-expert chain
        phibar = 0.0
        for j in range(npre):
            acc = 0.0
            for o in range(dp):
                acc += rho[o] * pre_experts[idx, j, o]
            phibar += (wp[j] / denom) * acc
        for i in range(ell):
            acc = 0.0
            for o in range(dp):
                acc += rho[o] * e[i, o]
            phq[i] = acc
            phibar += (wq[i] / denom) * acc
        for k in range(d):
            acc = 0.0
            for o in range(dp):
                acc += rho[o] * out_proj[o, k]
            rc[k] = acc
        for i in range(ell):
            g_i = wq[i] / denom
            gam = g_i * (phq[i] - phibar)
            gb[i] += gam
            for k in range(d):
                dtv = gam * xb[idx, k] + g_i * rc[k]
                dt[k] = dtv
                for q in range(r):
                    gw2[k, q] += dtv * s[i, q]
            for q in range(r):
                acc = 0.0
                for k in range(d):
                    acc += w2[k, q] * dt[k]
                duv = sd[i, q] * acc
                for k in range(d):
                    gw1[i, q, k] += duv * X[idx, k]

    if not want_grad:
        return obj, None, None, None
    return obj, gb_arr, gw1_arr, gw2_arr
