"""Toy transformer encoder around the knowledge attention layer.

Token plus learned position embeddings feed n_layers blocks. Each block is
the knowledge attention layer followed by a tanh feed-forward sublayer,
both with residual connections and layer normalization. Classification
reads the first ([CLS]) position. The relation prior is built once per
example from the embedding output and shared by every block and head.

All gradients are hand written reverse mode. Dropout masks are cached per
forward pass so training backward passes stay exact; evaluation never
draws randomness.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from . import kattn, kernels
from .errors import DataFormatError, NumericError
from .kattn import FusionTrace, HeadParams
from .lexkb import LexicalKB
from .numcore import STREAM_INIT, ParamStore, glorot_init, make_rng, softmax_rows
from .prior import MODES, PriorCache, PriorConfig, PriorMatrix, build_prior, prior_backward
from .textio import TokenizedPair, Vocab

LN_EPS = 1e-5


@dataclass(frozen=True)
class EncoderConfig:
    """Model dimensions and prior settings, with desk-scale defaults."""

    d_h: int = 32
    d_k: int = 16
    d_v: int = 16
    n_heads: int = 2
    n_layers: int = 2
    d_ff: int = 64
    n_classes: int = 2
    max_a: int = 24
    max_b: int = 24
    gamma: float = 1.0
    prior_mode: str = "boost"
    kappa: float = 1.0
    dropout_rate: float = 0.1
    seed: int = 0

    def __post_init__(self) -> None:
        for name in ("d_h", "d_k", "d_v", "n_heads", "d_ff", "n_classes", "max_a", "max_b"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1, got {getattr(self, name)}")
        # n_layers=0 is legal: the block stack degenerates to the identity
        if self.n_layers < 0:
            raise ValueError(f"n_layers must be >= 0, got {self.n_layers}")
        if self.n_heads * self.d_v != self.d_h:
            raise ValueError(
                f"n_heads*d_v must equal d_h, got {self.n_heads}*{self.d_v} != {self.d_h}"
            )
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError(f"dropout_rate must be in [0, 1), got {self.dropout_rate}")
        if self.gamma < 0.0:
            raise ValueError(f"gamma must be >= 0, got {self.gamma}")
        if self.prior_mode not in MODES:
            raise ValueError(f"unknown prior mode {self.prior_mode!r}, expected one of {MODES}")

    @property
    def max_len(self) -> int:
        # [CLS] A [SEP] B [SEP]
        return self.max_a + self.max_b + 3

    def prior_config(self) -> PriorConfig:
        return PriorConfig(gamma=self.gamma, mode=self.prior_mode, kappa=self.kappa)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "EncoderConfig":
        return cls(**d)


def _build_params(config: EncoderConfig, vocab_size: int, store: ParamStore, rng):
    """Register every parameter in its canonical order; returns head views.

    This is the single source of truth for parameter names and shapes:
    creation, checkpoint validation, and the optimizer all walk the same
    layout.
    """
    store.add("emb.tok", glorot_init(rng, vocab_size, config.d_h))
    store.add("emb.pos", glorot_init(rng, config.max_len, config.d_h))
    heads = []
    for i in range(config.n_layers):
        heads.append(
            [
                HeadParams.create(
                    rng, config.d_h, config.d_k, config.d_v,
                    store=store, prefix=f"enc{i}.h{h}.",
                )
                for h in range(config.n_heads)
            ]
        )
        store.add(f"enc{i}.proj_w", glorot_init(rng, config.n_heads * config.d_v, config.d_h))
        store.add(f"enc{i}.proj_b", np.zeros(config.d_h))
        store.add(f"enc{i}.ln1_g", np.ones(config.d_h))
        store.add(f"enc{i}.ln1_b", np.zeros(config.d_h))
        store.add(f"enc{i}.ffn_w1", glorot_init(rng, config.d_h, config.d_ff))
        store.add(f"enc{i}.ffn_b1", np.zeros(config.d_ff))
        store.add(f"enc{i}.ffn_w2", glorot_init(rng, config.d_ff, config.d_h))
        store.add(f"enc{i}.ffn_b2", np.zeros(config.d_h))
        store.add(f"enc{i}.ln2_g", np.ones(config.d_h))
        store.add(f"enc{i}.ln2_b", np.zeros(config.d_h))
    store.add("cls.w", glorot_init(rng, config.d_h, config.n_classes))
    store.add("cls.b", np.zeros(config.n_classes))
    return heads


def param_shapes(config: EncoderConfig, vocab_size: int) -> dict[str, tuple[int, ...]]:
    """Expected name -> shape mapping, in canonical parameter order."""
    probe = ParamStore()
    _build_params(config, vocab_size, probe, np.random.default_rng(0))
    return {p.name: p.value.shape for p in probe}


@dataclass
class ModelState:
    """Config, vocabulary, and every trainable parameter.

    Head parameter dataclasses hold views of the store arrays, so in-place
    optimizer updates are visible to the forward pass without copying.
    """

    config: EncoderConfig
    vocab: Vocab
    store: ParamStore
    heads: list[list[HeadParams]]

    @classmethod
    def create(cls, config: EncoderConfig, vocab: Vocab) -> "ModelState":
        rng = make_rng(config.seed, STREAM_INIT)
        store = ParamStore()
        heads = _build_params(config, len(vocab), store, rng)
        return cls(config, vocab, store, heads)

    @classmethod
    def from_store(cls, config: EncoderConfig, vocab: Vocab, store: ParamStore) -> "ModelState":
        """Rebuild head views over an already-populated store."""
        expected = param_shapes(config, len(vocab))
        got = {p.name: p.value.shape for p in store}
        if got != expected:
            missing = sorted(set(expected) - set(got))
            extra = sorted(set(got) - set(expected))
            wrong = sorted(
                n for n in set(got) & set(expected) if got[n] != expected[n]
            )
            raise DataFormatError(
                "parameter layout does not match config:"
                f" missing={missing} extra={extra} wrong_shape={wrong}"
            )
        heads = [
            [
                HeadParams(
                    **{
                        name: store[f"enc{i}.h{h}.{name}"].value
                        for name in HeadParams.field_names()
                    }
                )
                for h in range(config.n_heads)
            ]
            for i in range(config.n_layers)
        ]
        return cls(config, vocab, store, heads)


# ---------------------------------------------------------------- primitives


def _dropout_mask(rng, shape, rate: float) -> np.ndarray:
    # inverted scaling keeps eval-time activations unscaled
    keep = (rng.random(shape) >= rate).astype(np.float64)
    return keep / (1.0 - rate)


def _layernorm_fwd(x, gain, bias):
    out, xhat, inv = kernels.active().layernorm_fwd(x, gain, bias, LN_EPS)
    return out, (xhat, inv)


def _layernorm_bwd(dy, gain, ln_cache):
    xhat, inv = ln_cache
    dxhat = dy * gain
    dgain = (dy * xhat).sum(axis=0)
    dbias = dy.sum(axis=0)
    dx = inv * (
        dxhat
        - dxhat.mean(axis=1, keepdims=True)
        - xhat * (dxhat * xhat).mean(axis=1, keepdims=True)
    )
    return dx, dgain, dbias


# ---------------------------------------------------------------- forward


@dataclass
class _BlockCache:
    attn_mask: np.ndarray | None
    layer_cache: kattn.LayerCache
    ln1: tuple
    ffn_in1: np.ndarray
    ffn_mask1: np.ndarray | None
    t: np.ndarray
    ffn_in2: np.ndarray
    ffn_mask2: np.ndarray | None
    ln2: tuple


@dataclass
class _ExampleCache:
    pair: TokenizedPair
    h0: np.ndarray  # post-dropout embedding output; also fed the prior
    emb_mask: np.ndarray | None
    prior: PriorMatrix
    prior_cache: PriorCache
    blocks: list[_BlockCache]
    h_final: np.ndarray
    cls_in: np.ndarray
    cls_mask: np.ndarray | None
    logits: np.ndarray
    probs: np.ndarray
    traces: list[list[FusionTrace]]


@dataclass
class Prediction:
    """Evaluation output for one pair: argmax label plus gate traces."""

    logits: np.ndarray
    probs: np.ndarray
    label: int
    traces: list[list[FusionTrace]] | None = None


def _require_rng(training: bool, rate: float, rng) -> bool:
    dropping = training and rate > 0.0
    if dropping and rng is None:
        raise ValueError("training forward with dropout_rate > 0 requires an rng")
    return dropping


def embed(pair: TokenizedPair, state: ModelState, *, training: bool = False, rng=None):
    """Token + position embeddings, dropout applied afterwards in training."""
    tok = state.store["emb.tok"].value
    pos = state.store["emb.pos"].value
    ids = pair.ids
    if ids.size and (int(ids.min()) < 0 or int(ids.max()) >= tok.shape[0]):
        raise DataFormatError(
            f"token id out of range for vocabulary of size {tok.shape[0]}"
        )
    if pair.length > state.config.max_len:
        raise DataFormatError(
            f"sequence length {pair.length} exceeds maximum {state.config.max_len}"
        )
    h0 = tok[ids] + pos[: pair.length]
    if _require_rng(training, state.config.dropout_rate, rng):
        h0 = h0 * _dropout_mask(rng, h0.shape, state.config.dropout_rate)
    return h0


def _blocks_forward(h0, kp, state: ModelState, training: bool, rng):
    """Run the block stack; returns (output, per-block caches, traces)."""
    cfg = state.config
    store = state.store
    dropping = _require_rng(training, cfg.dropout_rate, rng)
    rate = cfg.dropout_rate
    x = h0
    blocks: list[_BlockCache] = []
    all_traces: list[list[FusionTrace]] = []
    for i, layer_heads in enumerate(state.heads):
        pfx = f"enc{i}."
        attn_mask = _dropout_mask(rng, x.shape, rate) if dropping else None
        attn_in = x * attn_mask if attn_mask is not None else x
        concat_shape = (x.shape[0], cfg.n_heads * cfg.d_v)
        concat_mask = _dropout_mask(rng, concat_shape, rate) if dropping else None
        attn_out, layer_cache, traces = kattn.layer_forward(
            attn_in, kp, layer_heads,
            store[pfx + "proj_w"].value, store[pfx + "proj_b"].value,
            concat_mask,
        )
        h1, ln1 = _layernorm_fwd(
            x + attn_out, store[pfx + "ln1_g"].value, store[pfx + "ln1_b"].value
        )
        ffn_mask1 = _dropout_mask(rng, h1.shape, rate) if dropping else None
        ffn_in1 = h1 * ffn_mask1 if ffn_mask1 is not None else h1
        t = np.tanh(ffn_in1 @ store[pfx + "ffn_w1"].value + store[pfx + "ffn_b1"].value)
        ffn_mask2 = _dropout_mask(rng, t.shape, rate) if dropping else None
        ffn_in2 = t * ffn_mask2 if ffn_mask2 is not None else t
        ffn_out = ffn_in2 @ store[pfx + "ffn_w2"].value + store[pfx + "ffn_b2"].value
        x, ln2 = _layernorm_fwd(
            h1 + ffn_out, store[pfx + "ln2_g"].value, store[pfx + "ln2_b"].value
        )
        blocks.append(
            _BlockCache(attn_mask, layer_cache, ln1, ffn_in1, ffn_mask1, t,
                        ffn_in2, ffn_mask2, ln2)
        )
        all_traces.append(traces)
    return x, blocks, all_traces


def encode(h0, prior, state: ModelState, *, training: bool = False, rng=None):
    """The block stack alone: n_layers=0 returns the input unchanged."""
    kp = prior.K if hasattr(prior, "K") else np.asarray(prior)
    if h0.shape[1] != state.config.d_h:
        raise ValueError(f"hidden width {h0.shape[1]} != d_h {state.config.d_h}")
    out, _, _ = _blocks_forward(h0, kp, state, training, rng)
    return out


def classify(h, state: ModelState):
    """Logits and softmax probabilities read from the [CLS] position."""
    logits = h[0] @ state.store["cls.w"].value + state.store["cls.b"].value
    probs = softmax_rows(logits[None, :])[0]
    return logits, probs


def _forward_example(
    pair: TokenizedPair, kb: LexicalKB, state: ModelState, training: bool, rng
) -> _ExampleCache:
    cfg = state.config
    dropping = _require_rng(training, cfg.dropout_rate, rng)
    tok = state.store["emb.tok"].value
    pos = state.store["emb.pos"].value
    ids = pair.ids
    if ids.size and (int(ids.min()) < 0 or int(ids.max()) >= tok.shape[0]):
        raise DataFormatError(
            f"token id out of range for vocabulary of size {tok.shape[0]}"
        )
    if pair.length > cfg.max_len:
        raise DataFormatError(
            f"sequence length {pair.length} exceeds maximum {cfg.max_len}"
        )
    h0 = tok[ids] + pos[: pair.length]
    emb_mask = _dropout_mask(rng, h0.shape, cfg.dropout_rate) if dropping else None
    if emb_mask is not None:
        h0 = h0 * emb_mask
    prior, prior_cache = build_prior(pair, h0, kb, cfg.prior_config())
    h_final, blocks, traces = _blocks_forward(h0, prior.K, state, training, rng)
    cls_vec = h_final[0]
    cls_mask = _dropout_mask(rng, cls_vec.shape, cfg.dropout_rate) if dropping else None
    cls_in = cls_vec * cls_mask if cls_mask is not None else cls_vec
    logits = cls_in @ state.store["cls.w"].value + state.store["cls.b"].value
    probs = softmax_rows(logits[None, :])[0]
    return _ExampleCache(
        pair, h0, emb_mask, prior, prior_cache, blocks, h_final,
        cls_in, cls_mask, logits, probs, traces,
    )


def predict(
    pair: TokenizedPair, kb: LexicalKB, state: ModelState, *, with_traces: bool = False
) -> Prediction:
    """Deterministic evaluation forward for one pair."""
    cache = _forward_example(pair, kb, state, training=False, rng=None)
    return Prediction(
        logits=cache.logits,
        probs=cache.probs,
        label=int(np.argmax(cache.probs)),
        traces=cache.traces if with_traces else None,
    )


# ---------------------------------------------------------------- backward


def _backward_example(cache: _ExampleCache, d_logits, state: ModelState) -> None:
    store = state.store
    store["cls.w"].grad += np.outer(cache.cls_in, d_logits)
    store["cls.b"].grad += d_logits
    d_cls_in = store["cls.w"].value @ d_logits
    if cache.cls_mask is not None:
        d_cls_in = d_cls_in * cache.cls_mask
    dx = np.zeros_like(cache.h_final)
    dx[0] = d_cls_in
    dkp_total = np.zeros_like(cache.prior.K)
    for i in reversed(range(len(cache.blocks))):
        bc = cache.blocks[i]
        pfx = f"enc{i}."
        dr2, dg2, db2 = _layernorm_bwd(dx, store[pfx + "ln2_g"].value, bc.ln2)
        store[pfx + "ln2_g"].grad += dg2
        store[pfx + "ln2_b"].grad += db2
        # residual: dr2 reaches both the FFN branch and h1 directly
        store[pfx + "ffn_w2"].grad += bc.ffn_in2.T @ dr2
        store[pfx + "ffn_b2"].grad += dr2.sum(axis=0)
        dffn_in2 = dr2 @ store[pfx + "ffn_w2"].value.T
        dt = dffn_in2 * bc.ffn_mask2 if bc.ffn_mask2 is not None else dffn_in2
        da1 = dt * (1.0 - bc.t * bc.t)
        store[pfx + "ffn_w1"].grad += bc.ffn_in1.T @ da1
        store[pfx + "ffn_b1"].grad += da1.sum(axis=0)
        dffn_in1 = da1 @ store[pfx + "ffn_w1"].value.T
        dh1 = dr2 + (dffn_in1 * bc.ffn_mask1 if bc.ffn_mask1 is not None else dffn_in1)
        dr1, dg1, db1 = _layernorm_bwd(dh1, store[pfx + "ln1_g"].value, bc.ln1)
        store[pfx + "ln1_g"].grad += dg1
        store[pfx + "ln1_b"].grad += db1
        dh_attn, dkp, d_proj_w, d_proj_b, head_grads = kattn.layer_backward(
            dr1, bc.layer_cache, state.heads[i], store[pfx + "proj_w"].value
        )
        store[pfx + "proj_w"].grad += d_proj_w
        store[pfx + "proj_b"].grad += d_proj_b
        for h, grads in enumerate(head_grads):
            for name, g in grads.items():
                store[f"enc{i}.h{h}.{name}"].grad += g
        dkp_total += dkp
        dx = dr1 + (dh_attn * bc.attn_mask if bc.attn_mask is not None else dh_attn)
    dh0 = dx + prior_backward(dkp_total, cache.prior_cache)
    if cache.emb_mask is not None:
        dh0 = dh0 * cache.emb_mask
    ids = cache.pair.ids
    np.add.at(store["emb.tok"].grad, ids, dh0)
    store["emb.pos"].grad[: ids.shape[0]] += dh0


def batch_loss(
    batch: list[TokenizedPair], kb: LexicalKB, state: ModelState
) -> float:
    """Mean cross-entropy, forward only; never touches stored gradients."""
    if not batch:
        raise ValueError("batch must be non-empty")
    total = 0.0
    for idx, pair in enumerate(batch):
        cache = _forward_example(pair, kb, state, training=False, rng=None)
        total += _example_loss(cache, pair, idx, state.config.n_classes)
    return total / len(batch)


def _example_loss(cache: _ExampleCache, pair: TokenizedPair, idx: int, n_classes: int):
    if pair.label is None or not 0 <= pair.label < n_classes:
        raise DataFormatError(f"example {idx} has label {pair.label!r}, need 0..{n_classes - 1}")
    p_gold = cache.probs[pair.label]
    with np.errstate(divide="ignore"):
        loss = -np.log(p_gold)
    if not np.isfinite(loss) or not np.all(np.isfinite(cache.probs)):
        raise NumericError(f"non-finite loss at example {idx}")
    return float(loss)


class _ShadowParam:
    __slots__ = ("value",)

    def __init__(self, value: np.ndarray) -> None:
        self.value = value


class _ShadowStore:
    """Name -> value lookup with just enough surface for the forward pass."""

    def __init__(self, values: dict[str, np.ndarray]) -> None:
        self._values = values

    def __getitem__(self, name: str) -> _ShadowParam:
        return _ShadowParam(self._values[name])


def high_precision_batch_loss(batch: list[TokenizedPair], kb: LexicalKB, state: ModelState):
    """Mean cross-entropy recomputed with extended-precision parameters.

    Forward only, always on the numpy backend (the jit kernels are
    float64-bound). Every parameter is copied to longdouble, so rounding
    error in the returned loss sits far below float64 level; the gradient
    checker's refinement pass differences two of these to tell cancellation
    noise from a real disagreement. Returns a longdouble scalar so that
    difference happens before any rounding back to float64.
    """
    if not batch:
        raise ValueError("batch must be non-empty")
    cfg = state.config
    values = {p.name: p.value.astype(np.longdouble) for p in state.store}
    heads = [
        [
            HeadParams(
                **{
                    name: values[f"enc{i}.h{h}.{name}"]
                    for name in HeadParams.field_names()
                }
            )
            for h in range(cfg.n_heads)
        ]
        for i in range(cfg.n_layers)
    ]
    shadow = ModelState(cfg, state.vocab, _ShadowStore(values), heads)
    prev = kernels.backend_name()
    kernels.set_active("numpy")
    try:
        total = np.longdouble(0.0)
        for idx, pair in enumerate(batch):
            cache = _forward_example(pair, kb, shadow, training=False, rng=None)
            if pair.label is None or not 0 <= pair.label < cfg.n_classes:
                raise DataFormatError(
                    f"example {idx} has label {pair.label!r}, need 0..{cfg.n_classes - 1}"
                )
            with np.errstate(divide="ignore"):
                loss = -np.log(cache.probs[pair.label])
            if not np.isfinite(loss):
                raise NumericError(f"non-finite loss at example {idx}")
            total += loss
        return total / len(batch)
    finally:
        kernels.set_active(prev)


def loss_and_grads(
    batch: list[TokenizedPair],
    kb: LexicalKB,
    state: ModelState,
    *,
    training: bool = True,
    rng=None,
) -> float:
    """Mean cross-entropy over the batch; gradients accumulate in the store.

    Gradients are zeroed first, so one call leaves exactly this batch's
    mean-loss gradient behind. The non-finite check names the offending
    example.
    """
    if not batch:
        raise ValueError("batch must be non-empty")
    state.store.zero_grads()
    scale = 1.0 / len(batch)
    total = 0.0
    for idx, pair in enumerate(batch):
        cache = _forward_example(pair, kb, state, training, rng)
        total += _example_loss(cache, pair, idx, state.config.n_classes)
        d_logits = cache.probs.copy()
        d_logits[pair.label] -= 1.0
        d_logits *= scale
        _backward_example(cache, d_logits, state)
    return total * scale
