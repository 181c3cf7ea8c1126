"""Numba jit kernels: loop-style twins of np_kernels with identical
signatures and return layouts.

Matmuls stay on np.dot (BLAS) with explicit contiguity fixes for
transposed operands; reductions and activations run as scalar loops,
which numba turns into tight machine code. fastmath stays off so results
track the numpy backend to rounding error.
"""

from __future__ import annotations

import numpy as np
from numba import njit

NAME = "numba"


@njit(cache=True)
def _sig(x):
    if x >= 0.0:
        return 1.0 / (1.0 + np.exp(-x))
    e = np.exp(x)
    return e / (1.0 + e)


@njit(cache=True)
def softmax_rows(x):
    n, m = x.shape
    out = np.empty_like(x)
    for i in range(n):
        mx = x[i, 0]
        for j in range(1, m):
            if x[i, j] > mx:
                mx = x[i, j]
        s = 0.0
        for j in range(m):
            e = np.exp(x[i, j] - mx)
            out[i, j] = e
            s += e
        inv = 1.0 / s
        for j in range(m):
            out[i, j] *= inv
    return out


@njit(cache=True)
def softmax_rows_backward(p, dp):
    n, m = p.shape
    out = np.empty_like(p)
    for i in range(n):
        dot = 0.0
        for j in range(m):
            dot += dp[i, j] * p[i, j]
        for j in range(m):
            out[i, j] = p[i, j] * (dp[i, j] - dot)
    return out


@njit(cache=True)
def _t(a):
    return np.ascontiguousarray(a.T)


# ------------------------------------------------------------- dual attention


@njit(cache=True)
def dual_attention_fwd(h, kp, wq, wk, wv):
    h = np.ascontiguousarray(h)
    q = np.dot(h, wq)
    k = np.dot(h, wk)
    v = np.dot(h, wv)
    m = np.dot(q, _t(k))
    inv = 1.0 / np.sqrt(wq.shape[1])
    a_sem = softmax_rows(m * inv)
    a_knw = softmax_rows(m * kp * inv)
    o_sem = np.dot(a_sem, v)
    o_knw = np.dot(a_knw, v)
    return q, k, v, m, a_sem, a_knw, o_sem, o_knw


@njit(cache=True)
def dual_attention_bwd(h, kp, wq, wk, wv, q, k, v, m, a_sem, a_knw, d_osem, d_oknw):
    h = np.ascontiguousarray(h)
    d_osem = np.ascontiguousarray(d_osem)
    d_oknw = np.ascontiguousarray(d_oknw)
    vt = _t(v)
    da_sem = np.dot(d_osem, vt)
    da_knw = np.dot(d_oknw, vt)
    dv = np.dot(_t(a_sem), d_osem) + np.dot(_t(a_knw), d_oknw)
    ds_sem = softmax_rows_backward(a_sem, da_sem)
    ds_knw = softmax_rows_backward(a_knw, da_knw)
    inv = 1.0 / np.sqrt(wq.shape[1])
    dm = (ds_sem + ds_knw * kp) * inv
    dkp = ds_knw * m * inv
    dq = np.dot(dm, k)
    dk = np.dot(_t(dm), q)
    dh = np.dot(dq, _t(wq)) + np.dot(dk, _t(wk)) + np.dot(dv, _t(wv))
    ht = _t(h)
    dwq = np.dot(ht, dq)
    dwk = np.dot(ht, dk)
    dwv = np.dot(ht, dv)
    return dh, dkp, dwq, dwk, dwv


# ------------------------------------------------------------- mutual alignment


@njit(cache=True)
def _align_fwd(seq, qry, seq_w, qry_w, qry_b, score_w, score_b):
    length = seq.shape[0]
    d_attn = seq_w.shape[1]
    proj_seq = np.dot(seq, seq_w)
    proj_qry = np.dot(qry, qry_w)
    t = np.empty((length * length, d_attn))
    scores = np.empty((length, length))
    for i in range(length):
        base = i * length
        for j in range(length):
            s = score_b
            row = base + j
            for a in range(d_attn):
                val = np.tanh(proj_qry[i, a] + qry_b[a] + proj_seq[j, a])
                t[row, a] = val
                s += score_w[a] * val
            scores[i, j] = s
    weights = softmax_rows(scores)
    return weights, np.dot(weights, seq), t


@njit(cache=True)
def _align_bwd(seq, qry, seq_w, qry_w, score_w, weights, t, d_out):
    length = seq.shape[0]
    d_attn = seq_w.shape[1]
    d_out = np.ascontiguousarray(d_out)
    d_weights = np.dot(d_out, _t(seq))
    d_seq = np.dot(_t(weights), d_out)
    d_scores = softmax_rows_backward(weights, d_weights)
    d_score_w = np.zeros(d_attn)
    d_score_b = 0.0
    d_proj_qry = np.zeros((length, d_attn))
    d_proj_seq = np.zeros((length, d_attn))
    for i in range(length):
        base = i * length
        for j in range(length):
            ds = d_scores[i, j]
            d_score_b += ds
            row = base + j
            for a in range(d_attn):
                val = t[row, a]
                d_score_w[a] += ds * val
                d_pre = ds * score_w[a] * (1.0 - val * val)
                d_proj_qry[i, a] += d_pre
                d_proj_seq[j, a] += d_pre
    d_qry = np.dot(d_proj_qry, _t(qry_w))
    d_qry_w = np.dot(_t(qry), d_proj_qry)
    d_qry_b = np.zeros(d_attn)
    for i in range(length):
        for a in range(d_attn):
            d_qry_b[a] += d_proj_qry[i, a]
    d_seq = d_seq + np.dot(d_proj_seq, _t(seq_w))
    d_seq_w = np.dot(_t(seq), d_proj_seq)
    return d_seq, d_qry, d_seq_w, d_qry_w, d_qry_b, d_score_w, d_score_b


@njit(cache=True)
def mutual_align_fwd(
    o_sem, o_knw,
    a1_seq_w, a1_qry_w, a1_qry_b, a1_score_w, a1_score_b,
    a2_seq_w, a2_qry_w, a2_qry_b, a2_score_w, a2_score_b,
):
    o_sem = np.ascontiguousarray(o_sem)
    o_knw = np.ascontiguousarray(o_knw)
    b1, o_hk, t1 = _align_fwd(o_knw, o_sem, a1_seq_w, a1_qry_w, a1_qry_b, a1_score_w, a1_score_b)
    b2, o_hs, t2 = _align_fwd(o_sem, o_hk, a2_seq_w, a2_qry_w, a2_qry_b, a2_score_w, a2_score_b)
    return o_hk, o_hs, b1, b2, t1, t2


@njit(cache=True)
def mutual_align_bwd(
    o_sem, o_knw,
    a1_seq_w, a1_qry_w, a1_score_w,
    a2_seq_w, a2_qry_w, a2_score_w,
    o_hk, b1, b2, t1, t2,
    d_ohk, d_ohs,
):
    o_sem = np.ascontiguousarray(o_sem)
    o_knw = np.ascontiguousarray(o_knw)
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


@njit(cache=True)
def gated_fuse_fwd(o_hk, o_hs, fuse_knw_w, fuse_knw_b, fuse_sem_w, fuse_sem_b, gate_w, gate_b):
    length = o_hk.shape[0]
    d_hidden = fuse_knw_w.shape[1]
    o_hk = np.ascontiguousarray(o_hk)
    o_hs = np.ascontiguousarray(o_hs)
    tk = np.dot(o_hk, fuse_knw_w)
    ts = np.dot(o_hs, fuse_sem_w)
    g = np.empty(length)
    u = np.empty((length, d_hidden))
    for i in range(length):
        pre = gate_b
        for c in range(d_hidden):
            tkv = np.tanh(tk[i, c] + fuse_knw_b[c])
            tsv = np.tanh(ts[i, c] + fuse_sem_b[c])
            tk[i, c] = tkv
            ts[i, c] = tsv
            pre += gate_w[c] * tkv + gate_w[d_hidden + c] * tsv
        gv = _sig(pre)
        g[i] = gv
        for c in range(d_hidden):
            u[i, c] = gv * ts[i, c] + (1.0 - gv) * tk[i, c]
    return u, g, tk, ts


@njit(cache=True)
def gated_fuse_bwd(o_hk, o_hs, fuse_knw_w, fuse_sem_w, gate_w, tk, ts, g, du):
    length, d_hidden = tk.shape
    o_hk = np.ascontiguousarray(o_hk)
    o_hs = np.ascontiguousarray(o_hs)
    dk_pre = np.empty((length, d_hidden))
    ds_pre = np.empty((length, d_hidden))
    d_gate_w = np.zeros(2 * d_hidden)
    d_gate_b = 0.0
    for i in range(length):
        dg = 0.0
        for c in range(d_hidden):
            dg += (ts[i, c] - tk[i, c]) * du[i, c]
        d_pre = g[i] * (1.0 - g[i]) * dg
        d_gate_b += d_pre
        for c in range(d_hidden):
            d_gate_w[c] += tk[i, c] * d_pre
            d_gate_w[d_hidden + c] += ts[i, c] * d_pre
            dtk = (1.0 - g[i]) * du[i, c] + d_pre * gate_w[c]
            dts = g[i] * du[i, c] + d_pre * gate_w[d_hidden + c]
            dk_pre[i, c] = dtk * (1.0 - tk[i, c] * tk[i, c])
            ds_pre[i, c] = dts * (1.0 - ts[i, c] * ts[i, c])
    d_ohk = np.dot(dk_pre, _t(fuse_knw_w))
    d_ohs = np.dot(ds_pre, _t(fuse_sem_w))
    d_fuse_knw_w = np.dot(_t(o_hk), dk_pre)
    d_fuse_sem_w = np.dot(_t(o_hs), ds_pre)
    d_fuse_knw_b = np.zeros(d_hidden)
    d_fuse_sem_b = np.zeros(d_hidden)
    for i in range(length):
        for c in range(d_hidden):
            d_fuse_knw_b[c] += dk_pre[i, c]
            d_fuse_sem_b[c] += ds_pre[i, c]
    return d_ohk, d_ohs, d_fuse_knw_w, d_fuse_knw_b, d_fuse_sem_w, d_fuse_sem_b, d_gate_w, d_gate_b


# ------------------------------------------------------------- filtration


@njit(cache=True)
def filtration_fwd(o_sem, u, filt_gate_w, filt_gate_b, out_w, out_b):
    length = o_sem.shape[0]
    d_v = o_sem.shape[1]
    d_hidden = u.shape[1]
    u = np.ascontiguousarray(u)
    yt = np.dot(u, out_w)
    g = np.empty(length)
    y = np.empty((length, out_w.shape[1]))
    for i in range(length):
        pre = filt_gate_b
        for x in range(d_v):
            pre += filt_gate_w[x] * o_sem[i, x]
        for c in range(d_hidden):
            pre += filt_gate_w[d_v + c] * u[i, c]
        gv = _sig(pre)
        g[i] = gv
        for x in range(out_w.shape[1]):
            val = np.tanh(yt[i, x] + out_b[x])
            yt[i, x] = val
            y[i, x] = gv * val
    return y, g, yt


@njit(cache=True)
def filtration_bwd(o_sem, u, filt_gate_w, out_w, g, yt, dy):
    length = o_sem.shape[0]
    d_v = o_sem.shape[1]
    d_hidden = u.shape[1]
    u = np.ascontiguousarray(u)
    d_pre_y = np.empty((length, out_w.shape[1]))
    d_filt_gate_w = np.zeros(d_v + d_hidden)
    d_filt_gate_b = 0.0
    d_osem = np.empty((length, d_v))
    d_pre_g = np.empty(length)
    for i in range(length):
        dg = 0.0
        for x in range(out_w.shape[1]):
            dg += dy[i, x] * yt[i, x]
            d_pre_y[i, x] = g[i] * dy[i, x] * (1.0 - yt[i, x] * yt[i, x])
        dpg = g[i] * (1.0 - g[i]) * dg
        d_pre_g[i] = dpg
        d_filt_gate_b += dpg
        for x in range(d_v):
            d_osem[i, x] = dpg * filt_gate_w[x]
            d_filt_gate_w[x] += o_sem[i, x] * dpg
        for c in range(d_hidden):
            d_filt_gate_w[d_v + c] += u[i, c] * dpg
    du = np.dot(d_pre_y, _t(out_w))
    for i in range(length):
        for c in range(d_hidden):
            du[i, c] += d_pre_g[i] * filt_gate_w[d_v + c]
    d_out_w = np.dot(_t(u), d_pre_y)
    d_out_b = np.zeros(out_w.shape[1])
    for i in range(length):
        for x in range(out_w.shape[1]):
            d_out_b[x] += d_pre_y[i, x]
    return d_osem, du, d_filt_gate_w, d_filt_gate_b, d_out_w, d_out_b


@njit(cache=True)
def layernorm_fwd(x, gain, bias, eps):
    rows, d = x.shape
    out = np.empty((rows, d))
    xhat = np.empty((rows, d))
    inv = np.empty((rows, 1))
    for i in range(rows):
        mu = 0.0
        for j in range(d):
            mu += x[i, j]
        mu /= d
        var = 0.0
        for j in range(d):
            dev = x[i, j] - mu
            var += dev * dev
        var /= d
        iv = 1.0 / np.sqrt(var + eps)
        inv[i, 0] = iv
        for j in range(d):
            xh = (x[i, j] - mu) * iv
            xhat[i, j] = xh
            out[i, j] = xh * gain[j] + bias[j]
    return out, xhat, inv
