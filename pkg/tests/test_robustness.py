"""Transform semantics, generator balance, and split disjointness."""

import json

import numpy as np
import pytest

from lexattn.errors import DataFormatError
from lexattn.lexkb import LexicalKB, RelationKind
from lexattn.numcore import STREAM_TRANSFORM, make_rng
from lexattn.robustness import (
    FILLERS,
    SyntheticSplits,
    TransformedPair,
    gen_synthetic,
    load_default_kb,
    load_default_templates,
    swap_antonyms,
    swap_synonyms,
    transform_dataset,
)
from lexattn.textio import Example, tokenize


def _rng(seed=0):
    return make_rng(seed, STREAM_TRANSFORM)


def _basic_kb():
    kb = LexicalKB()
    kb.add("hot", "cold", RelationKind.ANTONYM)
    kb.add("hot", "warm", RelationKind.SYNONYM)
    kb.add("car", "automobile", RelationKind.SYNONYM)
    return kb


# ----------------------------------------------------------------- swap-ant


def test_swap_antonyms_flips_label_and_records_swap():
    pair = Example(1, "the soup is hot", "the soup is hot")
    out = swap_antonyms(pair, _basic_kb(), _rng())
    assert out is not None
    assert out.original == pair
    assert out.transformed.label == 0
    assert out.transformed.text_a == pair.text_a
    assert out.transformed.text_b == "the soup is cold"
    assert len(out.swaps) == 1
    swap = out.swaps[0]
    assert (swap.position, swap.old, swap.new) == (3, "hot", "cold")
    assert swap.kind is RelationKind.ANTONYM


def test_swap_antonyms_skips_non_paraphrase_pairs():
    pair = Example(0, "the soup is hot", "the soup is hot")
    assert swap_antonyms(pair, _basic_kb(), _rng()) is None


def test_swap_antonyms_skips_when_no_token_qualifies():
    pair = Example(1, "the soup is hot", "the soup is ready")
    assert swap_antonyms(pair, _basic_kb(), _rng()) is None


def test_swap_antonyms_replaces_every_qualifying_token():
    pair = Example(1, "hot or not", "hot soup stays hot")
    out = swap_antonyms(pair, _basic_kb(), _rng())
    assert out.transformed.text_b == "cold soup stays cold"
    assert [s.position for s in out.swaps] == [0, 3]


def test_swap_leaves_unswapped_tokens_identical():
    pair = Example(1, "hot , right ?", "yes : hot , right ?")
    out = swap_antonyms(pair, _basic_kb(), _rng())
    before = tokenize(pair.text_b)
    after = tokenize(out.transformed.text_b)
    assert len(before) == len(after)
    swapped = {s.position for s in out.swaps}
    for i, (b, a) in enumerate(zip(before, after)):
        if i in swapped:
            assert b != a
        else:
            assert b == a


def test_swap_candidate_choice_is_seeded():
    kb = _basic_kb()
    kb.add("hot", "icy", RelationKind.ANTONYM)
    pair = Example(1, "x", "hot")
    picks = {swap_antonyms(pair, kb, _rng(seed)).transformed.text_b for seed in range(20)}
    assert picks == {"cold", "icy"}
    a = swap_antonyms(pair, kb, _rng(7)).transformed.text_b
    b = swap_antonyms(pair, kb, _rng(7)).transformed.text_b
    assert a == b


# ----------------------------------------------------------------- swap-syn


def test_swap_synonyms_preserves_label():
    kb = _basic_kb()
    for label in (0, 1):
        pair = Example(label, "a car", "my car broke")
        out = swap_synonyms(pair, kb, _rng())
        assert out.transformed.label == label
        assert out.transformed.text_b == "my automobile broke"


def test_swap_synonyms_twice_restores_two_cycle():
    kb = LexicalKB()
    kb.add("car", "automobile", RelationKind.SYNONYM)
    pair = Example(1, "x", "the car stopped")
    once = swap_synonyms(pair, kb, _rng())
    twice = swap_synonyms(once.transformed, kb, _rng())
    assert once.transformed.text_b == "the automobile stopped"
    assert twice.transformed.text_b == pair.text_b


def test_swap_synonyms_skips_when_nothing_matches():
    assert swap_synonyms(Example(1, "x", "nothing here"), _basic_kb(), _rng()) is None


# ------------------------------------------------------------- whole-dataset


def test_transform_dataset_drops_skipped_pairs():
    data = [
        Example(1, "a", "hot tea"),
        Example(0, "a", "hot tea"),
        Example(1, "a", "plain tea"),
    ]
    out = transform_dataset(data, _basic_kb(), "swap-ant", _rng())
    assert len(out) == 1
    assert out[0].original is data[0]
    assert all(isinstance(t, TransformedPair) for t in out)


def test_transform_dataset_rejects_unknown_kind():
    with pytest.raises(ValueError, match="swap-ant"):
        transform_dataset([], _basic_kb(), "swap-all", _rng())


def test_transformed_pair_round_trips_through_json():
    pair = Example(1, "the soup is hot", "the soup is hot")
    out = swap_antonyms(pair, _basic_kb(), _rng())
    doc = json.loads(json.dumps(out.to_dict()))
    assert doc["original"]["label"] == 1
    assert doc["transformed"]["label"] == 0
    assert doc["swaps"] == [{"position": 3, "old": "hot", "new": "cold", "kind": "ANTONYM"}]


# ------------------------------------------------------------------ generator


def _tiny_kb():
    kb = LexicalKB()
    kb.add("hot", "warm", RelationKind.SYNONYM)
    kb.add("hot", "cold", RelationKind.ANTONYM)
    return kb


def test_gen_synthetic_two_pairs_one_template():
    splits = gen_synthetic(_tiny_kb(), 2, ["the soup is {}"], _rng())
    assert [len(splits.train), len(splits.val), len(splits.test)] == [2, 0, 0]
    assert sorted(e.label for e in splits.train) == [0, 1]
    for e in splits.train:
        words_a = tokenize(e.text_a)
        words_b = tokenize(e.text_b)
        # shared template tail, one substituted slot, optional filler prefix
        assert words_a[-4:-1] == ["the", "soup", "is"]
        assert words_b[-4:-1] == ["the", "soup", "is"]
        assert {words_a[-1], words_b[-1]} in ({"hot", "warm"}, {"hot", "cold"})


def test_gen_synthetic_labels_balanced():
    for n in (7, 20, 33):
        splits = gen_synthetic(_tiny_kb(), n, ["it was {}"], _rng(3))
        labels = [e.label for e in splits.all]
        assert len(labels) == n
        assert abs(labels.count(1) - labels.count(0)) <= 1


def test_gen_synthetic_split_sizes():
    splits = gen_synthetic(load_default_kb(), 200, load_default_templates(), _rng())
    assert len(splits.val) == 30
    assert len(splits.test) == 30
    assert len(splits.train) == 140


def test_gen_synthetic_is_seeded():
    kb = load_default_kb()
    templates = load_default_templates()
    a = gen_synthetic(kb, 60, templates, _rng(5))
    b = gen_synthetic(kb, 60, templates, _rng(5))
    c = gen_synthetic(kb, 60, templates, _rng(6))
    assert a == b
    assert a != c


def test_gen_synthetic_zero_pairs():
    splits = gen_synthetic(_tiny_kb(), 0, ["{} day"], _rng())
    assert splits == SyntheticSplits([], [], [])


def test_gen_synthetic_filler_prefixes_stay_in_bank():
    splits = gen_synthetic(load_default_kb(), 120, ["the {} house"], _rng(9))
    lengths = set()
    for e in splits.all:
        for text in (e.text_a, e.text_b):
            words = tokenize(text)
            assert words[-3] == "the"
            assert words[-1] == "house"
            prefix = words[:-3]
            lengths.add(len(prefix))
            assert all(w in FILLERS for w in prefix)
    assert lengths == {0, 1, 2, 3}


def test_gen_synthetic_rejects_bad_inputs():
    with pytest.raises(DataFormatError, match="template"):
        gen_synthetic(_tiny_kb(), 4, [], _rng())
    with pytest.raises(DataFormatError, match="one"):
        gen_synthetic(_tiny_kb(), 4, ["{} and {}"], _rng())
    with pytest.raises(ValueError, match="n_pairs"):
        gen_synthetic(_tiny_kb(), -1, ["{} day"], _rng())
    syn_only = LexicalKB()
    syn_only.add("hot", "warm", RelationKind.SYNONYM)
    with pytest.raises(DataFormatError, match="antonym"):
        gen_synthetic(syn_only, 4, ["{} day"], _rng())


def _example_word_pair(example, lemmas):
    """The substituted (a-side, b-side) words; templates and fillers never
    collide with KB lemmas in the bundled data."""
    wa = [t for t in tokenize(example.text_a) if t in lemmas]
    wb = [t for t in tokenize(example.text_b) if t in lemmas]
    assert len(wa) == 1 and len(wb) == 1
    return frozenset((wa[0], wb[0]))


def test_gen_synthetic_examples_distinct_and_splits_disjoint():
    splits = gen_synthetic(load_default_kb(), 600, load_default_templates(), _rng(2))
    keys = [(e.label, e.text_a, e.text_b) for e in splits.all]
    assert len(set(keys)) == len(keys) == 600


def test_gen_synthetic_substitutes_one_related_pair_per_example():
    kb = load_default_kb()
    lemmas = set(kb.lemmas())
    splits = gen_synthetic(kb, 400, load_default_templates(), _rng(4))
    syn = {frozenset(p) for p in kb.pairs(RelationKind.SYNONYM)}
    ant = {frozenset(p) for p in kb.pairs(RelationKind.ANTONYM)}
    for e in splits.all:
        pair = _example_word_pair(e, lemmas)
        assert pair in (syn if e.label == 1 else ant)


def test_tiny_kb_still_fills_every_split():
    splits = gen_synthetic(_tiny_kb(), 40, ["so {}"], _rng(1))
    assert [len(splits.train), len(splits.val), len(splits.test)] == [28, 6, 6]
    assert {e.label for e in splits.val} == {0, 1}


def test_gen_synthetic_exhausted_corpus_space_raises(monkeypatch):
    # one filler word, one bare template, one edge per label: 32 distinct
    # examples per label exist, so asking for 50 of each must fail cleanly
    monkeypatch.setattr("lexattn.robustness.FILLERS", ("well",))
    with pytest.raises(DataFormatError, match="distinct"):
        gen_synthetic(_tiny_kb(), 100, ["{}"], _rng(0))


# ---------------------------------------------------------------- bundled data


def test_default_kb_shape():
    kb = load_default_kb()
    assert len(kb.pairs(RelationKind.SYNONYM)) == 96
    assert len(kb.pairs(RelationKind.ANTONYM)) == 144
    assert len(kb.lemmas()) == 96


def test_default_templates_shape():
    templates = load_default_templates()
    assert len(templates) == 12
    assert all(t.count("{}") == 1 for t in templates)
    assert all(not t.startswith("#") for t in templates)
