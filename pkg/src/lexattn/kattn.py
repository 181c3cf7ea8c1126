"""Per-head knowledge attention: dual-path scaled dot-product attention
modulated by the prior, then mutual alignment, gated fusion, and a
filtration gate.

Per token i the pipeline is:
  O_sem_i, O_knw_i   dual attention over shared Q/K/V, one path with the
                     prior multiplied into the pre-softmax scores
  o^_knw_i           additive attention over all O_knw_j scored against
                     O_sem_i (stage 1), then o^_sem_i over all O_sem_j
                     scored against o^_knw_i (stage 2)
  u_i                sigmoid-gated convex mix of tanh features of the two
                     refined vectors
  y_i                filtration: sigmoid([O_sem_i ; u_i]) * tanh(W u_i + b)

Heads run independently; their y outputs concatenate and project back to
model width. The heavy math lives in the kernel backends; this module
owns parameter layout and composition.
"""

from __future__ import annotations

from dataclasses import dataclass, fields

import numpy as np

from . import kernels
from .numcore import ParamStore, glorot_init

# (field, kind) pairs defining per-head parameter layout; kind determines
# the shape relative to (d_h, d_k, d_v, d_attn, d_hidden).
_HEAD_SPEC = (
    ("wq", "dh_dk"), ("wk", "dh_dk"), ("wv", "dh_dv"),
    ("a1_seq_w", "dv_da"), ("a1_qry_w", "dv_da"), ("a1_qry_b", "da"),
    ("a1_score_w", "da"), ("a1_score_b", "scalar"),
    ("a2_seq_w", "dv_da"), ("a2_qry_w", "dv_da"), ("a2_qry_b", "da"),
    ("a2_score_w", "da"), ("a2_score_b", "scalar"),
    ("fuse_knw_w", "dv_dhid"), ("fuse_knw_b", "dhid"),
    ("fuse_sem_w", "dv_dhid"), ("fuse_sem_b", "dhid"),
    ("fuse_gate_w", "two_dhid"), ("fuse_gate_b", "scalar"),
    ("filt_gate_w", "dv_plus_dhid"), ("filt_gate_b", "scalar"),
    ("out_w", "dhid_dv"), ("out_b", "dv"),
)


@dataclass
class HeadParams:
    """All trainable tensors of one attention head.

    Weights are stored (in_dim, out_dim) and applied as x @ W + b; vector
    weights for the scalar gates are 1-D; scalar biases are shape (1,).
    """

    wq: np.ndarray
    wk: np.ndarray
    wv: np.ndarray
    a1_seq_w: np.ndarray
    a1_qry_w: np.ndarray
    a1_qry_b: np.ndarray
    a1_score_w: np.ndarray
    a1_score_b: np.ndarray
    a2_seq_w: np.ndarray
    a2_qry_w: np.ndarray
    a2_qry_b: np.ndarray
    a2_score_w: np.ndarray
    a2_score_b: np.ndarray
    fuse_knw_w: np.ndarray
    fuse_knw_b: np.ndarray
    fuse_sem_w: np.ndarray
    fuse_sem_b: np.ndarray
    fuse_gate_w: np.ndarray
    fuse_gate_b: np.ndarray
    filt_gate_w: np.ndarray
    filt_gate_b: np.ndarray
    out_w: np.ndarray
    out_b: np.ndarray

    @staticmethod
    def field_names() -> tuple[str, ...]:
        return tuple(name for name, _ in _HEAD_SPEC)

    @classmethod
    def create(
        cls,
        rng: np.random.Generator,
        d_h: int,
        d_k: int,
        d_v: int,
        d_attn: int | None = None,
        d_hidden: int | None = None,
        store: ParamStore | None = None,
        prefix: str = "",
    ) -> "HeadParams":
        """Glorot weights, zero biases; optionally registered into a store."""
        d_attn = d_v if d_attn is None else d_attn
        d_hidden = d_v if d_hidden is None else d_hidden
        shapes = {
            "dh_dk": (d_h, d_k), "dh_dv": (d_h, d_v),
            "dv_da": (d_v, d_attn), "dv_dhid": (d_v, d_hidden),
            "dhid_dv": (d_hidden, d_v),
        }
        values = {}
        for name, kind in _HEAD_SPEC:
            if kind in shapes:
                v = glorot_init(rng, *shapes[kind])
            elif kind == "da":
                v = (
                    glorot_init(rng, d_attn, 1)[:, 0]
                    if name.endswith("score_w")
                    else np.zeros(d_attn)
                )
            elif kind == "two_dhid":
                v = glorot_init(rng, 2 * d_hidden, 1)[:, 0]
            elif kind == "dv_plus_dhid":
                v = glorot_init(rng, d_v + d_hidden, 1)[:, 0]
            elif kind == "dhid":
                v = np.zeros(d_hidden)
            elif kind == "dv":
                v = np.zeros(d_v)
            else:  # scalar
                v = np.zeros(1)
            if store is not None:
                store.add(f"{prefix}{name}", v)
            values[name] = v
        return cls(**values)

    def as_dict(self) -> dict[str, np.ndarray]:
        return {f.name: getattr(self, f.name) for f in fields(self)}


@dataclass
class DualAttnOutput:
    """Both attention paths with their post-softmax weights."""

    o_sem: np.ndarray
    o_knw: np.ndarray
    a_sem: np.ndarray
    a_knw: np.ndarray


@dataclass
class FusionTrace:
    """Per-token gate activity of one head, kept for inspection."""

    g_fuse: np.ndarray  # (L,)
    g_filter: np.ndarray  # (L,)
    u: np.ndarray  # (L, d_hidden)
    y: np.ndarray  # (L, d_v)

    def to_token_dicts(self) -> list[dict]:
        return [
            {"pos": i, "g_fuse": float(gf), "g_filter": float(gl)}
            for i, (gf, gl) in enumerate(zip(self.g_fuse, self.g_filter))
        ]


@dataclass
class HeadCache:
    """Forward intermediates one head's backward pass consumes."""

    h: np.ndarray
    kp: np.ndarray
    q: np.ndarray
    k: np.ndarray
    v: np.ndarray
    m: np.ndarray
    a_sem: np.ndarray
    a_knw: np.ndarray
    o_sem: np.ndarray
    o_knw: np.ndarray
    o_hk: np.ndarray
    o_hs: np.ndarray
    b1: np.ndarray
    b2: np.ndarray
    t1: np.ndarray
    t2: np.ndarray
    tk: np.ndarray
    ts: np.ndarray
    g_fuse: np.ndarray
    u: np.ndarray
    g_filter: np.ndarray
    yt: np.ndarray
    y: np.ndarray


def _check_head_shapes(h: np.ndarray, p: HeadParams) -> None:
    if h.ndim != 2 or h.shape[1] != p.wq.shape[0]:
        raise ValueError(f"hidden states {h.shape} do not match Wq {p.wq.shape}")


# ---------------------------------------------------------------- public ops


def dual_attention(h: np.ndarray, prior, p: HeadParams) -> DualAttnOutput:
    """Run both attention paths over shared Q/K/V."""
    _check_head_shapes(h, p)
    kp = prior.K if hasattr(prior, "K") else np.asarray(prior)
    if kp.shape != (h.shape[0], h.shape[0]):
        raise ValueError(f"prior {kp.shape} does not match sequence length {h.shape[0]}")
    ker = kernels.active()
    _, _, _, _, a_sem, a_knw, o_sem, o_knw = ker.dual_attention_fwd(
        h, kp, p.wq, p.wk, p.wv
    )
    return DualAttnOutput(o_sem=o_sem, o_knw=o_knw, a_sem=a_sem, a_knw=a_knw)


def mutual_align(
    o_sem: np.ndarray, o_knw: np.ndarray, p: HeadParams
) -> tuple[np.ndarray, np.ndarray]:
    """Refine each path against the other; returns (o_sem_hat, o_knw_hat)."""
    if o_sem.shape != o_knw.shape:
        raise ValueError(f"path shapes differ: {o_sem.shape} vs {o_knw.shape}")
    ker = kernels.active()
    o_hk, o_hs, _, _, _, _ = ker.mutual_align_fwd(
        o_sem, o_knw,
        p.a1_seq_w, p.a1_qry_w, p.a1_qry_b, p.a1_score_w, float(p.a1_score_b[0]),
        p.a2_seq_w, p.a2_qry_w, p.a2_qry_b, p.a2_score_w, float(p.a2_score_b[0]),
    )
    return o_hs, o_hk


def gated_fuse(
    o_sem_hat_i: np.ndarray, o_knw_hat_i: np.ndarray, p: HeadParams
) -> tuple[np.ndarray, float]:
    """Fuse one token's refined vectors; returns (u_i, g_fuse_i)."""
    o_hs = np.atleast_2d(o_sem_hat_i)
    o_hk = np.atleast_2d(o_knw_hat_i)
    u, g, _, _ = kernels.active().gated_fuse_fwd(
        o_hk, o_hs,
        p.fuse_knw_w, p.fuse_knw_b, p.fuse_sem_w, p.fuse_sem_b,
        p.fuse_gate_w, float(p.fuse_gate_b[0]),
    )
    if o_sem_hat_i.ndim == 1:
        return u[0], float(g[0])
    return u, g


def filtration(
    o_sem_i: np.ndarray, u_i: np.ndarray, p: HeadParams
) -> tuple[np.ndarray, float]:
    """Gate one token's fused vector; returns (y_i, g_filter_i)."""
    o_sem = np.atleast_2d(o_sem_i)
    u = np.atleast_2d(u_i)
    y, g, _ = kernels.active().filtration_fwd(
        o_sem, u, p.filt_gate_w, float(p.filt_gate_b[0]), p.out_w, p.out_b
    )
    if o_sem_i.ndim == 1:
        return y[0], float(g[0])
    return y, g


# ---------------------------------------------------------------- training path


def head_forward(h: np.ndarray, kp: np.ndarray, p: HeadParams) -> tuple[np.ndarray, HeadCache]:
    """Full per-head pipeline; returns its output and the backward cache."""
    _check_head_shapes(h, p)
    ker = kernels.active()
    q, k, v, m, a_sem, a_knw, o_sem, o_knw = ker.dual_attention_fwd(
        h, kp, p.wq, p.wk, p.wv
    )
    o_hk, o_hs, b1, b2, t1, t2 = ker.mutual_align_fwd(
        o_sem, o_knw,
        p.a1_seq_w, p.a1_qry_w, p.a1_qry_b, p.a1_score_w, float(p.a1_score_b[0]),
        p.a2_seq_w, p.a2_qry_w, p.a2_qry_b, p.a2_score_w, float(p.a2_score_b[0]),
    )
    u, g_fuse, tk, ts = ker.gated_fuse_fwd(
        o_hk, o_hs,
        p.fuse_knw_w, p.fuse_knw_b, p.fuse_sem_w, p.fuse_sem_b,
        p.fuse_gate_w, float(p.fuse_gate_b[0]),
    )
    y, g_filter, yt = ker.filtration_fwd(
        o_sem, u, p.filt_gate_w, float(p.filt_gate_b[0]), p.out_w, p.out_b
    )
    cache = HeadCache(
        h=h, kp=kp, q=q, k=k, v=v, m=m, a_sem=a_sem, a_knw=a_knw,
        o_sem=o_sem, o_knw=o_knw, o_hk=o_hk, o_hs=o_hs,
        b1=b1, b2=b2, t1=t1, t2=t2, tk=tk, ts=ts,
        g_fuse=g_fuse, u=u, g_filter=g_filter, yt=yt, y=y,
    )
    return y, cache


def head_backward(
    dy: np.ndarray, cache: HeadCache, p: HeadParams
) -> tuple[np.ndarray, np.ndarray, dict[str, np.ndarray]]:
    """Gradient of one head; returns (dH, dK_prior, per-parameter grads)."""
    ker = kernels.active()
    c = cache
    d_osem_f, du, d_filt_gate_w, d_filt_gate_b, d_out_w, d_out_b = ker.filtration_bwd(
        c.o_sem, c.u, p.filt_gate_w, p.out_w, c.g_filter, c.yt, dy
    )
    (
        d_ohk, d_ohs,
        d_fuse_knw_w, d_fuse_knw_b, d_fuse_sem_w, d_fuse_sem_b,
        d_fuse_gate_w, d_fuse_gate_b,
    ) = ker.gated_fuse_bwd(
        c.o_hk, c.o_hs, p.fuse_knw_w, p.fuse_sem_w, p.fuse_gate_w,
        c.tk, c.ts, c.g_fuse, du,
    )
    (
        d_osem, d_oknw,
        da1_seq_w, da1_qry_w, da1_qry_b, da1_score_w, da1_score_b,
        da2_seq_w, da2_qry_w, da2_qry_b, da2_score_w, da2_score_b,
    ) = ker.mutual_align_bwd(
        c.o_sem, c.o_knw,
        p.a1_seq_w, p.a1_qry_w, p.a1_score_w,
        p.a2_seq_w, p.a2_qry_w, p.a2_score_w,
        c.o_hk, c.b1, c.b2, c.t1, c.t2,
        d_ohk, d_ohs,
    )
    d_osem = d_osem + d_osem_f
    dh, dkp, dwq, dwk, dwv = ker.dual_attention_bwd(
        c.h, c.kp, p.wq, p.wk, p.wv,
        c.q, c.k, c.v, c.m, c.a_sem, c.a_knw,
        d_osem, d_oknw,
    )
    grads = {
        "wq": dwq, "wk": dwk, "wv": dwv,
        "a1_seq_w": da1_seq_w, "a1_qry_w": da1_qry_w, "a1_qry_b": da1_qry_b,
        "a1_score_w": da1_score_w, "a1_score_b": np.array([da1_score_b]),
        "a2_seq_w": da2_seq_w, "a2_qry_w": da2_qry_w, "a2_qry_b": da2_qry_b,
        "a2_score_w": da2_score_w, "a2_score_b": np.array([da2_score_b]),
        "fuse_knw_w": d_fuse_knw_w, "fuse_knw_b": d_fuse_knw_b,
        "fuse_sem_w": d_fuse_sem_w, "fuse_sem_b": d_fuse_sem_b,
        "fuse_gate_w": d_fuse_gate_w, "fuse_gate_b": np.array([d_fuse_gate_b]),
        "filt_gate_w": d_filt_gate_w, "filt_gate_b": np.array([d_filt_gate_b]),
        "out_w": d_out_w, "out_b": d_out_b,
    }
    return dh, dkp, grads


@dataclass
class LayerCache:
    """Per-head caches plus the pre-projection concat for one layer."""

    head_caches: list[HeadCache]
    concat: np.ndarray  # (L, n_heads*d_v), after any dropout mask
    concat_mask: np.ndarray | None


def layer_forward(
    h: np.ndarray,
    kp: np.ndarray,
    heads: list[HeadParams],
    w_proj: np.ndarray,
    b_proj: np.ndarray,
    concat_mask: np.ndarray | None = None,
) -> tuple[np.ndarray, LayerCache, list[FusionTrace]]:
    """All heads, concat, optional dropout mask, output projection."""
    if not heads:
        raise ValueError("at least one head is required")
    ys, caches, traces = [], [], []
    for p in heads:
        y, cache = head_forward(h, kp, p)
        ys.append(y)
        caches.append(cache)
        traces.append(
            FusionTrace(g_fuse=cache.g_fuse, g_filter=cache.g_filter, u=cache.u, y=y)
        )
    concat = np.concatenate(ys, axis=1)
    if concat.shape[1] != w_proj.shape[0]:
        raise ValueError(
            f"concatenated head width {concat.shape[1]} does not match projection {w_proj.shape}"
        )
    if concat_mask is not None:
        concat = concat * concat_mask
    out = concat @ w_proj + b_proj
    return out, LayerCache(caches, concat, concat_mask), traces


def layer_backward(
    d_out: np.ndarray,
    cache: LayerCache,
    heads: list[HeadParams],
    w_proj: np.ndarray,
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray, list[dict[str, np.ndarray]]]:
    """Returns (dH, dK_prior, dW_proj, db_proj, per-head grad dicts)."""
    d_w_proj = cache.concat.T @ d_out
    d_b_proj = d_out.sum(axis=0)
    d_concat = d_out @ w_proj.T
    if cache.concat_mask is not None:
        d_concat = d_concat * cache.concat_mask
    dh = np.zeros_like(cache.head_caches[0].h)
    dkp = np.zeros_like(cache.head_caches[0].kp)
    head_grads = []
    offset = 0
    for p, hc in zip(heads, cache.head_caches):
        d_v = hc.y.shape[1]
        dy = d_concat[:, offset : offset + d_v]
        offset += d_v
        dh_i, dkp_i, grads = head_backward(dy, hc, p)
        dh += dh_i
        dkp += dkp_i
        head_grads.append(grads)
    return dh, dkp, d_w_proj, d_b_proj, head_grads


def knowledge_attention_layer(
    h: np.ndarray,
    prior,
    heads: list[HeadParams],
    w_proj: np.ndarray,
    b_proj: np.ndarray,
) -> tuple[np.ndarray, list[FusionTrace]]:
    """Public layer op: heads -> concat -> projection, traces retained."""
    kp = prior.K if hasattr(prior, "K") else np.asarray(prior)
    out, _, traces = layer_forward(h, kp, heads, w_proj, b_proj)
    return out, traces
