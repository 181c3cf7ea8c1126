"""Vectorized numpy kernels for the per-head attention pipeline.

This is the reference backend: every function here has a jit twin in
nb_kernels with the same signature and return layout. Forward functions
return the intermediates their backward twin needs; backward functions
take the upstream gradient last and return input gradients first, then
parameter gradients in declaration order.

Alignment score tensors (t1, t2) are kept as (L*L, d_attn) matrices with
row i*L+j holding tanh(seq_proj[j] + qry_proj[i]); both backends share
that layout so caches are interchangeable.
"""

from __future__ import annotations

import numpy as np

NAME = "numpy"


def softmax_rows(x: np.ndarray) -> np.ndarray:
    shifted = x - x.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def softmax_rows_backward(p: np.ndarray, dp: np.ndarray) -> np.ndarray:
    return p * (dp - (dp * p).sum(axis=1, keepdims=True))


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    out[~pos] = e / (1.0 + e)
    return out


# ------------------------------------------------------------- dual attention


def dual_attention_fwd(h, kp, wq, wk, wv):
    q = h @ wq
    k = h @ wk
    v = h @ wv
    m = q @ k.T
    inv = 1.0 / np.sqrt(wq.shape[1])
    a_sem = softmax_rows(m * inv)
    a_knw = softmax_rows(m * kp * inv)
    o_sem = a_sem @ v
    o_knw = a_knw @ v
    return q, k, v, m, a_sem, a_knw, o_sem, o_knw


def dual_attention_bwd(h, kp, wq, wk, wv, q, k, v, m, a_sem, a_knw, d_osem, d_oknw):
    da_sem = d_osem @ v.T
    da_knw = d_oknw @ v.T
    dv = a_sem.T @ d_osem + a_knw.T @ d_oknw
    ds_sem = softmax_rows_backward(a_sem, da_sem)
    ds_knw = softmax_rows_backward(a_knw, da_knw)
    inv = 1.0 / np.sqrt(wq.shape[1])
    dm = (ds_sem + ds_knw * kp) * inv
    dkp = ds_knw * m * inv
    dq = dm @ k
    dk = dm.T @ q
    dh = dq @ wq.T + dk @ wk.T + dv @ wv.T
    dwq = h.T @ dq
    dwk = h.T @ dk
    dwv = h.T @ dv
    return dh, dkp, dwq, dwk, dwv


# ------------------------------------------------------------- mutual alignment


def _align_fwd(seq, qry, seq_w, qry_w, qry_b, score_w, score_b):
    length = seq.shape[0]
    proj_seq = seq @ seq_w
    proj_qry = qry @ qry_w + qry_b
    t = np.tanh(proj_qry[:, None, :] + proj_seq[None, :, :]).reshape(length * length, -1)
    scores = (t @ score_w).reshape(length, length) + score_b
    weights = softmax_rows(scores)
    return weights, weights @ seq, t


def _align_bwd(seq, qry, seq_w, qry_w, score_w, weights, t, d_out):
    """Backprop one additive-attention stage.

    d_out is the gradient on `weights @ seq`. Returns gradients on seq and
    qry plus the five parameter gradients.
    """
    length = seq.shape[0]
    d_weights = d_out @ seq.T
    d_seq = weights.T @ d_out
    d_scores = softmax_rows_backward(weights, d_weights).reshape(length * length)
    d_score_w = t.T @ d_scores
    d_score_b = d_scores.sum()
    dt = d_scores[:, None] * score_w
    d_pre = (dt * (1.0 - t * t)).reshape(length, length, -1)
    d_proj_qry = d_pre.sum(axis=1)
    d_proj_seq = d_pre.sum(axis=0)
    d_qry = d_proj_qry @ qry_w.T
    d_qry_w = qry.T @ d_proj_qry
    d_qry_b = d_proj_qry.sum(axis=0)
    d_seq = d_seq + d_proj_seq @ seq_w.T
    d_seq_w = seq.T @ d_proj_seq
    return d_seq, d_qry, d_seq_w, d_qry_w, d_qry_b, d_score_w, d_score_b


def mutual_align_fwd(
    o_sem, o_knw,
    a1_seq_w, a1_qry_w, a1_qry_b, a1_score_w, a1_score_b,
    a2_seq_w, a2_qry_w, a2_qry_b, a2_score_w, a2_score_b,
):
    b1, o_hk, t1 = _align_fwd(o_knw, o_sem, a1_seq_w, a1_qry_w, a1_qry_b, a1_score_w, a1_score_b)
    b2, o_hs, t2 = _align_fwd(o_sem, o_hk, a2_seq_w, a2_qry_w, a2_qry_b, a2_score_w, a2_score_b)
    return o_hk, o_hs, b1, b2, t1, t2


def mutual_align_bwd(
    o_sem, o_knw,
    a1_seq_w, a1_qry_w, a1_score_w,
    a2_seq_w, a2_qry_w, a2_score_w,
    o_hk, b1, b2, t1, t2,
    d_ohk, d_ohs,
):
    d_osem, d_ohk2, da2_seq_w, da2_qry_w, da2_qry_b, da2_score_w, da2_score_b = _align_bwd(
        o_sem, o_hk, a2_seq_w, a2_qry_w, a2_score_w, b2, t2, d_ohs
    )
    d_oknw, d_osem2, da1_seq_w, da1_qry_w, da1_qry_b, da1_score_w, da1_score_b = _align_bwd(
        o_knw, o_sem, a1_seq_w, a1_qry_w, a1_score_w, b1, t1, d_ohk + d_ohk2
    )
    d_osem = d_osem + d_osem2
    return (
        d_osem, d_oknw,
        da1_seq_w, da1_qry_w, da1_qry_b, da1_score_w, da1_score_b,
        da2_seq_w, da2_qry_w, da2_qry_b, da2_score_w, da2_score_b,
    )


# ------------------------------------------------------------- gated fusion


def gated_fuse_fwd(o_hk, o_hs, fuse_knw_w, fuse_knw_b, fuse_sem_w, fuse_sem_b, gate_w, gate_b):
    d_hidden = fuse_knw_w.shape[1]
    tk = np.tanh(o_hk @ fuse_knw_w + fuse_knw_b)
    ts = np.tanh(o_hs @ fuse_sem_w + fuse_sem_b)
    pre = tk @ gate_w[:d_hidden] + ts @ gate_w[d_hidden:] + gate_b
    g = _sigmoid(pre)
    u = g[:, None] * ts + (1.0 - g)[:, None] * tk
    return u, g, tk, ts


def gated_fuse_bwd(o_hk, o_hs, fuse_knw_w, fuse_sem_w, gate_w, tk, ts, g, du):
    d_hidden = fuse_knw_w.shape[1]
    dg = ((ts - tk) * du).sum(axis=1)
    dts = g[:, None] * du
    dtk = (1.0 - g)[:, None] * du
    d_pre = g * (1.0 - g) * dg
    dtk = dtk + d_pre[:, None] * gate_w[:d_hidden]
    dts = dts + d_pre[:, None] * gate_w[d_hidden:]
    d_gate_w = np.concatenate((tk.T @ d_pre, ts.T @ d_pre))
    d_gate_b = d_pre.sum()
    dk_pre = dtk * (1.0 - tk * tk)
    ds_pre = dts * (1.0 - ts * ts)
    d_ohk = dk_pre @ fuse_knw_w.T
    d_ohs = ds_pre @ fuse_sem_w.T
    d_fuse_knw_w = o_hk.T @ dk_pre
    d_fuse_knw_b = dk_pre.sum(axis=0)
    d_fuse_sem_w = o_hs.T @ ds_pre
    d_fuse_sem_b = ds_pre.sum(axis=0)
    return d_ohk, d_ohs, d_fuse_knw_w, d_fuse_knw_b, d_fuse_sem_w, d_fuse_sem_b, d_gate_w, d_gate_b


# ------------------------------------------------------------- filtration


def filtration_fwd(o_sem, u, filt_gate_w, filt_gate_b, out_w, out_b):
    d_v = o_sem.shape[1]
    pre = o_sem @ filt_gate_w[:d_v] + u @ filt_gate_w[d_v:] + filt_gate_b
    g = _sigmoid(pre)
    yt = np.tanh(u @ out_w + out_b)
    y = g[:, None] * yt
    return y, g, yt


def filtration_bwd(o_sem, u, filt_gate_w, out_w, g, yt, dy):
    d_v = o_sem.shape[1]
    dg = (dy * yt).sum(axis=1)
    dyt = g[:, None] * dy
    d_pre_y = dyt * (1.0 - yt * yt)
    du = d_pre_y @ out_w.T
    d_out_w = u.T @ d_pre_y
    d_out_b = d_pre_y.sum(axis=0)
    d_pre_g = g * (1.0 - g) * dg
    d_osem = d_pre_g[:, None] * filt_gate_w[:d_v]
    du = du + d_pre_g[:, None] * filt_gate_w[d_v:]
    d_filt_gate_w = np.concatenate((o_sem.T @ d_pre_g, u.T @ d_pre_g))
    d_filt_gate_b = d_pre_g.sum()
    return d_osem, du, d_filt_gate_w, d_filt_gate_b, d_out_w, d_out_b


# ------------------------------------------------------------ normalization


def layernorm_fwd(x, gain, bias, eps):
    mu = x.mean(axis=1, keepdims=True)
    var = x.var(axis=1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x - mu) * inv
    return xhat * gain + bias, xhat, inv
