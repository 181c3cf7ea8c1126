"""Lexical-knowledge-infused attention for sentence-pair classification.

A compact, from-scratch stack: a lexical relation store feeds a
co-attention prior that biases one path of a dual-path self-attention
encoder; the two paths are mutually aligned, gated together, and filtered
per token. Training runs on hand-written backprop (finite-difference
checked) with Adadelta and a scheduled L2 decay.
"""

__version__ = "0.1.0"
