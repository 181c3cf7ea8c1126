#!/usr/bin/env python3
"""Time the numpy and numba kernel backends on the attention hot path.

Three granularities: one head forward, one head forward+backward, and a
full model loss_and_grads over a two-pair batch. The numba backend gets
an untimed warmup call first so jit compilation never lands in a timing.

Run from the repository root:

    python3 benchmarks/bench_backends.py
    python3 benchmarks/bench_backends.py --length 20 --repeats 500
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from lexattn import kernels
from lexattn.encoder import EncoderConfig, ModelState, loss_and_grads
from lexattn.kattn import HeadParams, head_backward, head_forward
from lexattn.robustness import load_default_kb
from lexattn.textio import Example, build_vocab
from lexattn.trainer import encode_dataset

PAIRS = [
    Example(0, "the soup is hot", "well the soup is cold"),
    Example(1, "a big room", "a huge room"),
]


def _head_inputs(length: int, seed: int):
    cfg = EncoderConfig()
    rng = np.random.default_rng(seed)
    params = HeadParams.create(rng, cfg.d_h, cfg.d_k, cfg.d_v)
    h = rng.normal(size=(length, cfg.d_h))
    kp = 1.0 + 0.1 * rng.random((length, length))
    return h, kp, params


def _model_setup(seed: int):
    kb = load_default_kb()
    vocab = build_vocab(PAIRS)
    state = ModelState.create(EncoderConfig(max_a=8, max_b=8, seed=seed), vocab)
    batch = encode_dataset(PAIRS, state)
    return batch, kb, state


def _time(fn, repeats: int) -> float:
    fn()  # warmup: jit compile, caches, allocator
    start = time.perf_counter()
    for _ in range(repeats):
        fn()
    return (time.perf_counter() - start) / repeats * 1e3


def run(length: int, repeats: int, seed: int) -> list[tuple[str, dict[str, float]]]:
    h, kp, params = _head_inputs(length, seed)
    batch, kb, state = _model_setup(seed)

    def head_fwd():
        head_forward(h, kp, params)

    def head_fwd_bwd():
        y, cache = head_forward(h, kp, params)
        head_backward(np.ones_like(y), cache, params)

    def model_step():
        loss_and_grads(batch, kb, state, training=False)

    cases = [
        (f"head forward (L={length})", head_fwd),
        (f"head forward+backward (L={length})", head_fwd_bwd),
        ("model loss_and_grads (batch of 2)", model_step),
    ]
    rows = []
    for label, fn in cases:
        timings = {}
        for backend in kernels.available():
            kernels.set_active(backend)
            timings[backend] = _time(fn, repeats)
        rows.append((label, timings))
    kernels.set_active(None)
    return rows


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__.split("\n", 1)[0])
    ap.add_argument("--length", type=int, default=12, help="sequence length for the head cases")
    ap.add_argument("--repeats", type=int, default=200, help="timed calls per case")
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    rows = run(args.length, args.repeats, args.seed)
    backends = kernels.available()
    if "numba" not in backends:
        print("note: numba backend unavailable, timing numpy only")

    width = max(len(label) for label, _ in rows)
    header = f"{'case':<{width}}  " + "".join(f"{b + ' (ms)':>14}" for b in backends)
    if len(backends) > 1:
        header += f"{'speedup':>10}"
    print(header)
    print("-" * len(header))
    for label, timings in rows:
        line = f"{label:<{width}}  " + "".join(f"{timings[b]:>14.4f}" for b in backends)
        if "numpy" in timings and "numba" in timings:
            line += f"{timings['numpy'] / timings['numba']:>9.1f}x"
        print(line)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
