"""Knowledge-aware co-attention and the attention prior matrix.

Token states of the two spans are compared by dot product plus a gamma
bonus wherever the KB relates the lemma pair. Row-softmax over B gives
omega_a, column-softmax over A gives omega_b, and their average fills the
cross blocks of an L x L prior. Everything outside the A x B cross blocks
is exactly 1 so only cross-span attention is rescaled downstream.

Two modes shape the cross entries from the average `avg`:
  raw:   K = avg            (entries in (0, 1))
  boost: K = 1 + kappa*avg  (entries in (1, 1 + kappa], neutral-friendly)

The construction is differentiable in the token states; `prior_backward`
pushes a downstream dK back to the full hidden-state matrix.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .lexkb import LexicalKB
from .numcore import softmax_rows
from .textio import TokenizedPair

MODES = ("raw", "boost")


@dataclass
class PriorConfig:
    """Knobs for prior construction."""

    gamma: float = 1.0
    mode: str = "boost"
    kappa: float = 1.0


@dataclass
class CoAttention:
    """Alignment distributions and summaries between the two spans."""

    scores: np.ndarray  # (m, n) knowledge scores
    omega_a: np.ndarray  # (m, n), rows sum to 1
    omega_b: np.ndarray  # (m, n), columns sum to 1
    summary_a: np.ndarray  # (m, d) B-span summary per A token
    summary_b: np.ndarray  # (n, d) A-span summary per B token


@dataclass
class PriorMatrix:
    """L x L multiplicative attention prior for one encoded pair."""

    K: np.ndarray
    m: int
    n: int


@dataclass
class PriorCache:
    """Forward intermediates needed to backprop through the prior."""

    pair: TokenizedPair
    omega_a: np.ndarray
    omega_b: np.ndarray
    ha: np.ndarray
    hb: np.ndarray
    scale: float  # kappa in boost mode, 1 in raw mode


def indicator_matrix(
    lemmas_a: tuple[str, ...], lemmas_b: tuple[str, ...], kb: LexicalKB
) -> np.ndarray:
    """(m, n) matrix of relation indicators between span lemmas."""
    return kb.indicator_grid(lemmas_a, lemmas_b)


def coattention(
    ha: np.ndarray, hb: np.ndarray, ind: np.ndarray, gamma: float
) -> CoAttention:
    """Bidirectional alignment over knowledge scores S = HA HB^T + gamma*ind."""
    scores = ha @ hb.T + gamma * ind
    omega_a = softmax_rows(scores)
    omega_b = softmax_rows(scores.T).T
    return CoAttention(
        scores=scores,
        omega_a=omega_a,
        omega_b=omega_b,
        summary_a=omega_a @ hb,
        summary_b=omega_b.T @ ha,
    )


def build_prior(
    pair: TokenizedPair, h0: np.ndarray, kb: LexicalKB, cfg: PriorConfig
) -> tuple[PriorMatrix, PriorCache]:
    """Prior for one pair from its full hidden-state matrix (L, d)."""
    if cfg.mode not in MODES:
        raise ValueError(f"unknown prior mode {cfg.mode!r}, expected one of {MODES}")
    m, n, length = pair.m, pair.n, pair.length
    rows_a = slice(1, 1 + m)
    rows_b = slice(m + 2, m + 2 + n)
    ha, hb = h0[rows_a], h0[rows_b]
    ind = indicator_matrix(pair.lemmas_a, pair.lemmas_b, kb)
    co = coattention(ha, hb, ind, cfg.gamma)
    avg = 0.5 * (co.omega_a + co.omega_b)
    if cfg.mode == "boost":
        cross = 1.0 + cfg.kappa * avg
        scale = cfg.kappa
    else:
        cross = avg
        scale = 1.0
    # dtype follows the hidden states so wider-precision forwards stay wide
    K = np.ones((length, length), dtype=cross.dtype)
    K[rows_a, rows_b] = cross
    K[rows_b, rows_a] = cross.T
    cache = PriorCache(pair, co.omega_a, co.omega_b, ha, hb, scale)
    return PriorMatrix(K=K, m=m, n=n), cache


def _softmax_rows_backward(p: np.ndarray, dp: np.ndarray) -> np.ndarray:
    return p * (dp - (dp * p).sum(axis=1, keepdims=True))


def _softmax_cols_backward(p: np.ndarray, dp: np.ndarray) -> np.ndarray:
    return p * (dp - (dp * p).sum(axis=0, keepdims=True))


def prior_backward(dK: np.ndarray, cache: PriorCache) -> np.ndarray:
    """Gradient of a scalar loss w.r.t. the hidden states, given dLoss/dK.

    The indicator term is constant, so only the dot-product part of the
    scores carries gradient. Returns an (L, d) matrix; rows outside the
    two spans are zero because those prior entries are constant.
    """
    pair = cache.pair
    m, n = pair.m, pair.n
    rows_a = slice(1, 1 + m)
    rows_b = slice(m + 2, m + 2 + n)
    # both mirror placements feed the same avg entry
    davg = cache.scale * (dK[rows_a, rows_b] + dK[rows_b, rows_a].T)
    domega = 0.5 * davg
    ds = _softmax_rows_backward(cache.omega_a, domega)
    ds += _softmax_cols_backward(cache.omega_b, domega)
    dh0 = np.zeros((pair.length, cache.ha.shape[1]))
    dh0[rows_a] = ds @ cache.hb
    dh0[rows_b] = ds.T @ cache.ha
    return dh0
