"""Independent scalar-loop reference for the attention stack.

Deliberately naive: pure Python floats, explicit index loops, math-module
functions only. This is the ground truth the vectorized and jit backends
are compared against; keep it boring and obviously correct.

Parameter dicts use the HeadParams field names; every value is a nested
list of floats (scalars are length-1 lists, matching their stored shape).
"""

from __future__ import annotations

import math


def sigmoid(x: float) -> float:
    if x >= 0:
        return 1.0 / (1.0 + math.exp(-x))
    e = math.exp(x)
    return e / (1.0 + e)


def softmax(xs: list[float]) -> list[float]:
    m = max(xs)
    es = [math.exp(v - m) for v in xs]
    z = sum(es)
    return [e / z for e in es]


def affine(x_rows, w, b=None):
    """Rows of x times w (in_dim x out_dim lists) plus optional bias."""
    out = []
    for row in x_rows:
        new = []
        for c in range(len(w[0])):
            s = b[c] if b is not None else 0.0
            for a in range(len(row)):
                s += row[a] * w[a][c]
            new.append(s)
        out.append(new)
    return out


def head_forward(h, kp, p):
    """Full per-head pipeline; returns every intermediate by name."""
    length = len(h)
    d_k = len(p["wq"][0])
    d_v = len(p["wv"][0])
    d_hidden = len(p["fuse_knw_w"][0])

    q = affine(h, p["wq"])
    k = affine(h, p["wk"])
    v = affine(h, p["wv"])
    inv = 1.0 / math.sqrt(d_k)

    s_sem = [[0.0] * length for _ in range(length)]
    s_knw = [[0.0] * length for _ in range(length)]
    for i in range(length):
        for j in range(length):
            dot = sum(q[i][x] * k[j][x] for x in range(d_k))
            s_sem[i][j] = dot * inv
            s_knw[i][j] = dot * kp[i][j] * inv
    a_sem = [softmax(row) for row in s_sem]
    a_knw = [softmax(row) for row in s_knw]

    def mix(weights, values, width):
        out = []
        for i in range(length):
            row = [0.0] * width
            for j in range(length):
                for x in range(width):
                    row[x] += weights[i][j] * values[j][x]
            out.append(row)
        return out

    o_sem = mix(a_sem, v, d_v)
    o_knw = mix(a_knw, v, d_v)

    def align(seq, qry, seq_w, qry_w, qry_b, score_w, score_b):
        d_attn = len(seq_w[0])
        proj_seq = affine(seq, seq_w)
        proj_qry = affine(qry, qry_w, qry_b)
        scores = []
        for i in range(length):
            row = []
            for j in range(length):
                s = score_b[0]
                for a in range(d_attn):
                    s += score_w[a] * math.tanh(proj_seq[j][a] + proj_qry[i][a])
                row.append(s)
            scores.append(row)
        weights = [softmax(row) for row in scores]
        return weights, mix(weights, seq, len(seq[0]))

    b1, o_hk = align(
        o_knw, o_sem, p["a1_seq_w"], p["a1_qry_w"], p["a1_qry_b"],
        p["a1_score_w"], p["a1_score_b"],
    )
    b2, o_hs = align(
        o_sem, o_hk, p["a2_seq_w"], p["a2_qry_w"], p["a2_qry_b"],
        p["a2_score_w"], p["a2_score_b"],
    )

    tk = [[math.tanh(c) for c in row] for row in affine(o_hk, p["fuse_knw_w"], p["fuse_knw_b"])]
    ts = [[math.tanh(c) for c in row] for row in affine(o_hs, p["fuse_sem_w"], p["fuse_sem_b"])]
    g_fuse, u = [], []
    for i in range(length):
        pre = p["fuse_gate_b"][0]
        for c in range(d_hidden):
            pre += p["fuse_gate_w"][c] * tk[i][c]
            pre += p["fuse_gate_w"][d_hidden + c] * ts[i][c]
        g = sigmoid(pre)
        g_fuse.append(g)
        u.append([g * ts[i][c] + (1.0 - g) * tk[i][c] for c in range(d_hidden)])

    g_filter, y = [], []
    yt = [[math.tanh(c) for c in row] for row in affine(u, p["out_w"], p["out_b"])]
    for i in range(length):
        pre = p["filt_gate_b"][0]
        for x in range(d_v):
            pre += p["filt_gate_w"][x] * o_sem[i][x]
        for c in range(d_hidden):
            pre += p["filt_gate_w"][d_v + c] * u[i][c]
        g = sigmoid(pre)
        g_filter.append(g)
        y.append([g * yt[i][x] for x in range(d_v)])

    return {
        "q": q, "k": k, "v": v,
        "s_sem": s_sem, "s_knw": s_knw,
        "a_sem": a_sem, "a_knw": a_knw,
        "o_sem": o_sem, "o_knw": o_knw,
        "b1": b1, "o_hk": o_hk, "b2": b2, "o_hs": o_hs,
        "tk": tk, "ts": ts, "g_fuse": g_fuse, "u": u,
        "g_filter": g_filter, "yt": yt, "y": y,
    }


def layer_forward(h, kp, head_params, w_proj, b_proj):
    """Concatenate per-head outputs and project back to model width."""
    per_head = [head_forward(h, kp, p)["y"] for p in head_params]
    concat = []
    for i in range(len(h)):
        row = []
        for y in per_head:
            row.extend(y[i])
        concat.append(row)
    return affine(concat, w_proj, b_proj)
