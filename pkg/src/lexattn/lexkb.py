"""Lexical relation store.

Holds typed word-pair relations (synonym, antonym, hypernym, hyponym) and
answers per-pair queries as 4-dim multi-hot vectors. Symmetric kinds are
closed under symmetry; hypernym/hyponym mirror each other, so a single
direction in the input file is enough.
"""

from __future__ import annotations

import unicodedata
from enum import IntEnum
from pathlib import Path

import numpy as np

from .errors import DataFormatError


class RelationKind(IntEnum):
    """Relation codes; each one is a fixed slot in the relation vector."""

    SYNONYM = 0
    ANTONYM = 1
    HYPERNYM = 2
    HYPONYM = 3


N_RELATIONS = len(RelationKind)

_MIRROR = {
    RelationKind.SYNONYM: RelationKind.SYNONYM,
    RelationKind.ANTONYM: RelationKind.ANTONYM,
    RelationKind.HYPERNYM: RelationKind.HYPONYM,
    RelationKind.HYPONYM: RelationKind.HYPERNYM,
}


def normalize_lemma(text: str) -> str:
    """Canonical lemma form: NFC-normalized lowercase."""
    return unicodedata.normalize("NFC", text).lower()


def indicator(relation_vec: np.ndarray) -> float:
    """1.0 if any relation is present, else 0.0."""
    return 1.0 if relation_vec.any() else 0.0


def knowledge_score(
    ha: np.ndarray, hb: np.ndarray, relation_vec: np.ndarray, gamma: float
) -> float:
    """Similarity of two token states plus a gamma bonus when related."""
    return float(np.dot(ha, hb)) + gamma * indicator(relation_vec)


class LexicalKB:
    """In-memory relation store over normalized lemmas."""

    def __init__(self) -> None:
        self._rel: dict[tuple[str, str], set[RelationKind]] = {}
        self._by_lemma: dict[tuple[str, RelationKind], set[str]] = {}
        self._lemmas: set[str] = set()
        self._grid_cache: dict[tuple, np.ndarray] = {}

    def add(self, a: str, b: str, kind: RelationKind) -> None:
        """Insert a relation and its closure (symmetric or mirrored)."""
        a, b = normalize_lemma(a), normalize_lemma(b)
        if a == b:
            raise DataFormatError(f"self-pair relation not allowed: {a!r}")
        kind = RelationKind(kind)
        self._grid_cache.clear()
        self._insert(a, b, kind)
        self._insert(b, a, _MIRROR[kind])

    def _insert(self, a: str, b: str, kind: RelationKind) -> None:
        self._rel.setdefault((a, b), set()).add(kind)
        self._by_lemma.setdefault((a, kind), set()).add(b)
        self._lemmas.update((a, b))

    def relations(self, a: str, b: str) -> frozenset[RelationKind]:
        key = (normalize_lemma(a), normalize_lemma(b))
        return frozenset(self._rel.get(key, ()))

    def has_relation(self, a: str, b: str) -> bool:
        return bool(self.relations(a, b))

    def relation_vector(self, a: str, b: str) -> np.ndarray:
        """Multi-hot (4,) float64 vector for the ordered pair (a, b)."""
        vec = np.zeros(N_RELATIONS)
        for kind in self.relations(a, b):
            vec[kind] = 1.0
        return vec

    def related(self, lemma: str, kind: RelationKind) -> tuple[str, ...]:
        """All lemmas standing in `kind` to `lemma`, sorted."""
        hits = self._by_lemma.get((normalize_lemma(lemma), kind), ())
        return tuple(sorted(hits))

    def pairs(self, kind: RelationKind) -> list[tuple[str, str]]:
        """Unique pairs carrying `kind`; symmetric kinds deduplicate to a < b."""
        symmetric = _MIRROR[kind] == kind
        out = set()
        for (a, b), kinds in self._rel.items():
            if kind not in kinds:
                continue
            if symmetric:
                out.add((a, b) if a < b else (b, a))
            else:
                out.add((a, b))
        return sorted(out)

    def counts(self) -> dict[str, int]:
        return {k.name.lower(): len(self.pairs(k)) for k in RelationKind}

    def indicator_grid(
        self, lemmas_a: tuple[str, ...], lemmas_b: tuple[str, ...]
    ) -> np.ndarray:
        """(m, n) relation-indicator matrix between two lemma spans.

        Memoized per span pair (the forward pass re-derives it constantly,
        e.g. under finite differencing); the returned array is read-only.
        """
        key = (lemmas_a, lemmas_b)
        grid = self._grid_cache.get(key)
        if grid is None:
            grid = np.zeros((len(lemmas_a), len(lemmas_b)))
            for i, la in enumerate(lemmas_a):
                for j, lb in enumerate(lemmas_b):
                    if self.has_relation(la, lb):
                        grid[i, j] = 1.0
            grid.flags.writeable = False
            self._grid_cache[key] = grid
        return grid

    def lemmas(self) -> tuple[str, ...]:
        return tuple(sorted(self._lemmas))

    def n_lemmas(self) -> int:
        return len(self._lemmas)


def load_kb(path: str | Path) -> LexicalKB:
    """Read a TSV of `lemma_a<TAB>lemma_b<TAB>relation` lines.

    Blank lines and lines starting with '#' are skipped. Relation names
    are case-insensitive. Any malformed line fails with its line number.
    """
    kb = LexicalKB()
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.rstrip("\n").rstrip("\r")
            if not line.strip() or line.lstrip().startswith("#"):
                continue
            fields = line.split("\t")
            if len(fields) != 3:
                raise DataFormatError(
                    f"{path}: line {lineno}: expected 3 tab-separated fields, got {len(fields)}"
                )
            a, b, rel = fields
            try:
                kind = RelationKind[rel.strip().upper()]
            except KeyError:
                raise DataFormatError(
                    f"{path}: line {lineno}: unknown relation {rel.strip()!r}"
                ) from None
            try:
                kb.add(a, b, kind)
            except DataFormatError as err:
                raise DataFormatError(f"{path}: line {lineno}: {err}") from None
    return kb


def save_kb(kb: LexicalKB, path: str | Path) -> None:
    """Write one canonical line per relation (mirrors are implied)."""
    lines = []
    for kind in (RelationKind.SYNONYM, RelationKind.ANTONYM, RelationKind.HYPERNYM):
        for a, b in kb.pairs(kind):
            lines.append(f"{a}\t{b}\t{kind.name.lower()}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
