"""Text handling: tokenizer, vocabulary, sentence-pair encoding, datasets.

The encoded layout for a pair (A, B) is `[CLS] A [SEP] B [SEP]`, giving a
sequence length of m + n + 3. Token positions of the A span are 1..m and
of the B span m+2..m+n+1; helpers on TokenizedPair hide the arithmetic.
"""

from __future__ import annotations

import re
import string
import unicodedata
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DataFormatError

PAD_ID = 0
UNK_ID = 1
CLS_ID = 2
SEP_ID = 3

RESERVED_TOKENS = ("<pad>", "<unk>", "<cls>", "<sep>")

# Each ASCII punctuation character is its own token; everything else
# groups into maximal runs within a whitespace-delimited chunk.
_PUNCT = re.escape(string.punctuation)
_TOKEN_RE = re.compile(f"[{_PUNCT}]|[^{_PUNCT}]+")


def tokenize(text: str) -> list[str]:
    """Lowercase, split on Unicode whitespace, split off ASCII punctuation."""
    text = unicodedata.normalize("NFC", text).lower()
    return [tok for chunk in text.split() for tok in _TOKEN_RE.findall(chunk)]


@dataclass(frozen=True)
class Example:
    """One labeled sentence pair."""

    label: int
    text_a: str
    text_b: str


LabeledDataset = list[Example]


@dataclass
class Vocab:
    """Token table with reserved ids 0..3 (pad, unk, cls, sep)."""

    id_to_token: list[str]
    _token_to_id: dict[str, int]

    @classmethod
    def from_tokens(cls, tokens: list[str]) -> "Vocab":
        if list(tokens[:4]) != list(RESERVED_TOKENS):
            raise DataFormatError(f"vocab must start with {RESERVED_TOKENS}")
        return cls(list(tokens), {t: i for i, t in enumerate(tokens)})

    def id(self, token: str) -> int:
        return self._token_to_id.get(token, UNK_ID)

    def __len__(self) -> int:
        return len(self.id_to_token)


def build_vocab(dataset: LabeledDataset, min_freq: int = 1) -> Vocab:
    """Frequency vocabulary over both texts of every example.

    Tokens are ordered by descending frequency, ties broken
    lexicographically, after the four reserved slots.
    """
    counts: dict[str, int] = {}
    for ex in dataset:
        for text in (ex.text_a, ex.text_b):
            for tok in tokenize(text):
                counts[tok] = counts.get(tok, 0) + 1
    kept = sorted(
        (t for t, c in counts.items() if c >= min_freq),
        key=lambda t: (-counts[t], t),
    )
    if not kept:
        raise DataFormatError("cannot build a vocabulary from an empty corpus")
    return Vocab.from_tokens(list(RESERVED_TOKENS) + kept)


@dataclass(frozen=True)
class TokenizedPair:
    """An encoded sentence pair with its post-truncation lemmas."""

    ids: np.ndarray
    lemmas_a: tuple[str, ...]
    lemmas_b: tuple[str, ...]
    label: int | None = None

    @property
    def m(self) -> int:
        return len(self.lemmas_a)

    @property
    def n(self) -> int:
        return len(self.lemmas_b)

    @property
    def length(self) -> int:
        return int(self.ids.shape[0])

    def pos_a(self, i: int) -> int:
        """Sequence position of A-span token i."""
        return 1 + i

    def pos_b(self, j: int) -> int:
        """Sequence position of B-span token j."""
        return self.m + 2 + j


def encode_pair(
    text_a: str,
    text_b: str,
    vocab: Vocab,
    max_a: int,
    max_b: int,
    label: int | None = None,
) -> TokenizedPair:
    """Tokenize, truncate each side to its cutoff, and lay out the ids."""
    toks_a = tokenize(text_a)[:max_a]
    toks_b = tokenize(text_b)[:max_b]
    if not toks_a or not toks_b:
        raise DataFormatError("both texts of a pair must contain at least one token")
    ids = (
        [CLS_ID]
        + [vocab.id(t) for t in toks_a]
        + [SEP_ID]
        + [vocab.id(t) for t in toks_b]
        + [SEP_ID]
    )
    return TokenizedPair(
        ids=np.asarray(ids, dtype=np.int64),
        lemmas_a=tuple(toks_a),
        lemmas_b=tuple(toks_b),
        label=label,
    )


def load_dataset(path: str | Path, n_classes: int = 2) -> LabeledDataset:
    """Read `label<TAB>text_a<TAB>text_b` lines; labels must be in range."""
    out: LabeledDataset = []
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.rstrip("\n").rstrip("\r")
            if not line.strip():
                continue
            fields = line.split("\t")
            if len(fields) != 3:
                raise DataFormatError(
                    f"{path}: line {lineno}: expected 3 tab-separated fields, got {len(fields)}"
                )
            label_text, text_a, text_b = fields
            try:
                label = int(label_text)
            except ValueError:
                raise DataFormatError(
                    f"{path}: line {lineno}: label {label_text!r} is not an integer"
                ) from None
            if not 0 <= label < n_classes:
                raise DataFormatError(
                    f"{path}: line {lineno}: label {label} outside 0..{n_classes - 1}"
                )
            out.append(Example(label, text_a, text_b))
    return out


def save_dataset(dataset: LabeledDataset, path: str | Path) -> None:
    lines = [f"{ex.label}\t{ex.text_a}\t{ex.text_b}" for ex in dataset]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
