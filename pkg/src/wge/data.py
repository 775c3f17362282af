"""Triple files, vocabularies, negative sampling and filter sets."""
from __future__ import annotations

import hashlib
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

SPLITS = ("train", "valid", "test")


class TripleParseError(ValueError):
    pass


@dataclass
class Vocab:
    entities: list[str] = field(default_factory=list)
    relations: list[str] = field(default_factory=list)

    def __post_init__(self):
        self.entity_ids = {e: i for i, e in enumerate(self.entities)}
        self.relation_ids = {r: i for i, r in enumerate(self.relations)}

    @property
    def n_entities(self) -> int:
        return len(self.entities)

    @property
    def n_relations(self) -> int:
        return len(self.relations)

    def add_entity(self, label: str) -> int:
        idx = self.entity_ids.get(label)
        if idx is None:
            idx = self.entity_ids[label] = len(self.entities)
            self.entities.append(label)
        return idx

    def add_relation(self, label: str) -> int:
        idx = self.relation_ids.get(label)
        if idx is None:
            idx = self.relation_ids[label] = len(self.relations)
            self.relations.append(label)
        return idx

    def digest(self) -> str:
        """Stable hash of both label lists, used to pair checkpoints with datasets."""
        h = hashlib.sha256()
        for kind, labels in (("E", self.entities), ("R", self.relations)):
            for label in labels:
                h.update(f"{kind}\t{label}\n".encode("utf-8"))
        return h.hexdigest()


class TripleStore:
    """Integer triples per split plus the set of every known true triple."""

    def __init__(self, vocab: Vocab, splits: dict[str, np.ndarray]):
        self.vocab = vocab
        self.splits = {name: np.asarray(arr, dtype=np.int64).reshape(-1, 3) for name, arr in splits.items()}
        for name, arr in self.splits.items():
            if arr.size and (arr[:, [0, 2]].max() >= vocab.n_entities or arr[:, 1].max() >= vocab.n_relations
                             or arr.min() < 0):
                raise ValueError(f"split {name!r} references ids outside the vocabulary")
        self.known = {tuple(t) for arr in self.splits.values() for t in arr.tolist()}
        self.train_set = {tuple(t) for t in self.split("train").tolist()}
        self._tails: dict[tuple[int, int], set[int]] | None = None
        self._heads: dict[tuple[int, int], set[int]] | None = None

    def split(self, name: str) -> np.ndarray:
        return self.splits.get(name, np.zeros((0, 3), dtype=np.int64))

    @property
    def train(self) -> np.ndarray:
        return self.split("train")

    def labels(self, triple) -> tuple[str, str, str]:
        h, r, t = (int(x) for x in triple)
        return self.vocab.entities[h], self.vocab.relations[r], self.vocab.entities[t]

    def _build_answer_index(self) -> None:
        tails, heads = defaultdict(set), defaultdict(set)
        for h, r, t in self.known:
            tails[(h, r)].add(t)
            heads[(r, t)].add(h)
        self._tails, self._heads = dict(tails), dict(heads)

    def true_tails(self, h: int, r: int) -> set[int]:
        if self._tails is None:
            self._build_answer_index()
        return self._tails.get((h, r), set())

    def true_heads(self, r: int, t: int) -> set[int]:
        if self._heads is None:
            self._build_answer_index()
        return self._heads.get((r, t), set())

    def filtered_candidates(self, h: int | None, r: int, t: int | None, gold: int | None = None) -> np.ndarray:
        """Entity ids left to rank for ``(h, r, ?)`` or ``(?, r, t)`` after filtering.

        Pass ``None`` for the missing slot. Every entity that would complete a
        known true triple (train, valid or test) is removed, except ``gold``,
        which defaults to the entity in the missing slot being evaluated and is
        always kept.
        """
        if (h is None) == (t is None):
            raise ValueError("exactly one of h and t must be None")
        known = self.true_tails(h, r) if t is None else self.true_heads(r, t)
        mask = np.ones(self.vocab.n_entities, dtype=bool)
        if known:
            mask[np.fromiter(known, dtype=np.int64)] = False
        if gold is not None:
            mask[gold] = True
        return np.flatnonzero(mask)


def read_triples(path: str | Path) -> list[tuple[str, str, str]]:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"triple file not found: {path}")
    rows = []
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\r\n")
            if not line.strip():
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise TripleParseError(f"{path}:{lineno}: expected 3 tab-separated fields, got {len(parts)}")
            rows.append((parts[0], parts[1], parts[2]))
    return rows


def _encode(rows, vocab: Vocab) -> np.ndarray:
    seen, out = set(), []
    for h, r, t in rows:
        trip = (vocab.add_entity(h), vocab.add_relation(r), vocab.add_entity(t))
        if trip not in seen:
            seen.add(trip)
            out.append(trip)
    return np.array(out, dtype=np.int64).reshape(-1, 3)


def load_tsv(path: str | Path) -> tuple[TripleStore, Vocab]:
    """Load a single TSV file as the train split."""
    vocab = Vocab()
    store = TripleStore(vocab, {"train": _encode(read_triples(path), vocab)})
    return store, vocab


def load_dataset(directory: str | Path, require=("train",)) -> tuple[TripleStore, Vocab]:
    """Load ``train.txt``/``valid.txt``/``test.txt`` from a dataset directory.

    Ids are assigned in order of first appearance, train first. Duplicate
    lines within a split are dropped.
    """
    directory = Path(directory)
    if not directory.is_dir():
        raise FileNotFoundError(f"dataset directory not found: {directory}")
    vocab = Vocab()
    splits = {}
    for name in SPLITS:
        path = directory / f"{name}.txt"
        if not path.exists():
            if name in require:
                raise FileNotFoundError(f"missing required split file: {path}")
            continue
        splits[name] = _encode(read_triples(path), vocab)
    return TripleStore(vocab, splits), vocab


@dataclass
class NegativeBatch:
    """Positives followed by their corruptions; ``labels`` is 1 for positives and 0 for negatives."""

    triples: np.ndarray
    labels: np.ndarray
    source: np.ndarray  # row index of the positive each row derives from

    def __len__(self) -> int:
        return len(self.triples)


def negative_sample(positives: np.ndarray, n_entities: int, n_neg: int, rng: np.random.Generator,
                    known: set | None = None, max_tries: int = 100) -> NegativeBatch:
    """Corrupt the head or the tail (fair coin) of every positive ``n_neg`` times.

    Replacement entities are uniform. A sample equal to its source, or present
    in ``known`` when given, is redrawn; after ``max_tries`` redraws the last
    draw that differs from the source is kept.
    """
    if n_neg < 1:
        raise ValueError("n_neg must be >= 1")
    if n_entities < 2:
        raise ValueError("need at least two entities to corrupt triples")
    positives = np.asarray(positives, dtype=np.int64).reshape(-1, 3)
    neg = np.repeat(positives, n_neg, axis=0)
    src = np.repeat(np.arange(len(positives)), n_neg)
    corrupt_head = rng.random(len(neg)) < 0.5
    slot = np.where(corrupt_head, 0, 2)
    rows = np.arange(len(neg))
    neg[rows, slot] = rng.integers(0, n_entities, size=len(neg))

    orig = np.repeat(positives, n_neg, axis=0)
    for _ in range(max_tries):
        bad = np.all(neg == orig, axis=1)
        if known is not None:
            bad |= np.fromiter((tuple(t) in known for t in neg.tolist()), dtype=bool, count=len(neg))
        if not bad.any():
            break
        idx = np.flatnonzero(bad)
        neg[idx, slot[idx]] = rng.integers(0, n_entities, size=len(idx))
    # the source itself is never allowed through
    same = np.flatnonzero(np.all(neg == orig, axis=1))
    for i in same:
        e = orig[i, slot[i]]
        neg[i, slot[i]] = (e + 1 + rng.integers(0, n_entities - 1)) % n_entities

    triples = np.concatenate([positives, neg])
    labels = np.concatenate([np.ones(len(positives)), np.zeros(len(neg))])
    source = np.concatenate([np.arange(len(positives)), src])
    return NegativeBatch(triples, labels, source)
