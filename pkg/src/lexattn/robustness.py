"""Deterministic lexical corpus transforms and a synthetic pair generator.

SwapAnt replaces every antonym-bearing token of text_b and flips the
paraphrase label to 0; SwapSyn substitutes synonyms and keeps the label.
gen_synthetic builds balanced sentence-pair corpora from a template bank
plus the KB's relation pairs; every emitted example is distinct, so the
train/validation/test splits are disjoint by construction.
"""

from __future__ import annotations

from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

from .errors import DataFormatError
from .lexkb import LexicalKB, RelationKind, load_kb
from .textio import Example, tokenize

FILLERS = ("well", "honestly", "frankly", "look", "so")


@dataclass(frozen=True)
class Swap:
    """One token replacement inside text_b."""

    position: int
    old: str
    new: str
    kind: RelationKind

    def to_dict(self) -> dict:
        return {
            "position": self.position,
            "old": self.old,
            "new": self.new,
            "kind": self.kind.name,
        }


@dataclass(frozen=True)
class TransformedPair:
    original: Example
    transformed: Example
    swaps: tuple[Swap, ...]

    def to_dict(self) -> dict:
        def ex(e: Example) -> dict:
            return {"label": e.label, "text_a": e.text_a, "text_b": e.text_b}

        return {
            "original": ex(self.original),
            "transformed": ex(self.transformed),
            "swaps": [s.to_dict() for s in self.swaps],
        }


def _swap_tokens(pair: Example, kb: LexicalKB, kind: RelationKind, rng) -> TransformedPair | None:
    tokens = tokenize(pair.text_b)
    new_tokens = list(tokens)
    swaps = []
    for i, tok in enumerate(tokens):
        candidates = kb.related(tok, kind)
        if not candidates:
            continue
        choice = candidates[int(rng.integers(len(candidates)))]
        new_tokens[i] = choice
        swaps.append(Swap(i, tok, choice, kind))
    if not swaps:
        return None
    label = 0 if kind is RelationKind.ANTONYM else pair.label
    transformed = Example(label, pair.text_a, " ".join(new_tokens))
    return TransformedPair(pair, transformed, tuple(swaps))


def swap_antonyms(pair: Example, kb: LexicalKB, rng) -> TransformedPair | None:
    """Antonym-substitute text_b of a paraphrase pair, flipping the label.

    Pairs not labeled 1 are skipped (the flip is undefined for them), as
    are pairs whose text_b carries no antonym-bearing token.
    """
    if pair.label != 1:
        return None
    return _swap_tokens(pair, kb, RelationKind.ANTONYM, rng)


def swap_synonyms(pair: Example, kb: LexicalKB, rng) -> TransformedPair | None:
    """Synonym-substitute text_b, preserving the label; None when no token
    has a synonym."""
    return _swap_tokens(pair, kb, RelationKind.SYNONYM, rng)


TRANSFORMS = {"swap-ant": swap_antonyms, "swap-syn": swap_synonyms}


def transform_dataset(
    dataset: list[Example], kb: LexicalKB, kind: str, rng
) -> list[TransformedPair]:
    """Apply one named transform across a dataset; skipped pairs drop out."""
    try:
        fn = TRANSFORMS[kind]
    except KeyError:
        raise ValueError(f"unknown transform {kind!r}, expected one of {sorted(TRANSFORMS)}")
    out = []
    for pair in dataset:
        result = fn(pair, kb, rng)
        if result is not None:
            out.append(result)
    return out


# ---------------------------------------------------------------- generator


@dataclass(frozen=True)
class SyntheticSplits:
    """Disjoint train/validation/test datasets of distinct examples."""

    train: list[Example]
    val: list[Example]
    test: list[Example]

    @property
    def all(self) -> list[Example]:
        return [*self.train, *self.val, *self.test]


def _with_fillers(sentence: str, rng) -> str:
    k = int(rng.integers(4))
    prefix = [FILLERS[int(rng.integers(len(FILLERS)))] for _ in range(k)]
    return " ".join(prefix + [sentence])


def gen_synthetic(
    kb: LexicalKB, n_pairs: int, template_bank: list[str], rng
) -> SyntheticSplits:
    """Balanced synthetic corpus: label-1 pairs substitute a synonym pair
    into a shared template, label-0 pairs an antonym pair. Every emitted
    example is distinct, so the seeded 70/15/15 split is disjoint by
    construction; relation pairs recur freely across splits, keeping the
    held-out challenge at the sentence level (unseen template, filler and
    orientation combinations)."""
    templates = [t.strip() for t in template_bank if t.strip()]
    if not templates:
        raise DataFormatError("template bank is empty")
    for t in templates:
        if t.count("{}") != 1:
            raise DataFormatError(f"template must contain exactly one {{}} slot: {t!r}")
    if n_pairs < 0:
        raise ValueError(f"n_pairs must be >= 0, got {n_pairs}")
    syn_edges = kb.pairs(RelationKind.SYNONYM)
    ant_edges = kb.pairs(RelationKind.ANTONYM)
    if not syn_edges or not ant_edges:
        raise DataFormatError(
            "generator needs at least one synonym and one antonym pair, got "
            f"{len(syn_edges)} and {len(ant_edges)}"
        )
    examples: list[Example] = []
    seen: set[tuple] = set()
    # the global alternation keeps |#label1 - #label0| <= 1 for any n_pairs,
    # contiguous split blocks included
    for i in range(n_pairs):
        label = 1 - (i % 2)
        pool = syn_edges if label == 1 else ant_edges
        for _ in range(200):
            w1, w2 = pool[int(rng.integers(len(pool)))]
            if int(rng.integers(2)):
                w1, w2 = w2, w1
            template = templates[int(rng.integers(len(templates)))]
            example = Example(
                label,
                _with_fillers(template.format(w1), rng),
                _with_fillers(template.format(w2), rng),
            )
            key = (example.label, example.text_a, example.text_b)
            if key not in seen:
                seen.add(key)
                examples.append(example)
                break
        else:
            raise DataFormatError(
                f"could not draw {n_pairs} distinct examples from "
                f"{len(templates)} templates and this KB; corpus space exhausted"
            )
    n_val = round(0.15 * n_pairs)
    n_test = round(0.15 * n_pairs)
    n_train = n_pairs - n_val - n_test
    return SyntheticSplits(
        train=examples[:n_train],
        val=examples[n_train : n_train + n_val],
        test=examples[n_train + n_val :],
    )


# ---------------------------------------------------------------- bundled data


def load_templates(path: str | Path) -> list[str]:
    """Template file: one template per line, blanks and # comments skipped."""
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    return [ln.strip() for ln in lines if ln.strip() and not ln.lstrip().startswith("#")]


def load_default_kb() -> LexicalKB:
    """The bundled desk-scale KB: 16 adjective families, 96 synonym and 144
    antonym pairs."""
    with resources.as_file(resources.files("lexattn") / "data" / "desk_kb.tsv") as p:
        return load_kb(p)


def load_default_templates() -> list[str]:
    with resources.as_file(resources.files("lexattn") / "data" / "templates.txt") as p:
        return load_templates(p)
