import numpy as np
import pytest

from wge import TOY_DATASET
from wge.data import TripleStore, Vocab, load_dataset

ACCEPTANCE_LINES: list[str] = []


def random_kg(seed: int, n_triples: int, n_entities: int, n_relations: int, allow_loops: bool = False) -> np.ndarray:
    rng = np.random.default_rng(seed)
    out = set()
    while len(out) < n_triples:
        h, t = (int(x) for x in rng.integers(0, n_entities, 2))
        r = int(rng.integers(0, n_relations))
        if h == t and not allow_loops:
            continue
        out.add((h, r, t))
    return np.array(sorted(out), dtype=np.int64)


def store_from(triples, n_entities, n_relations, **extra) -> TripleStore:
    vocab = Vocab([f"e{i}" for i in range(n_entities)], [f"r{i}" for i in range(n_relations)])
    return TripleStore(vocab, {"train": np.asarray(triples), **extra})


@pytest.fixture
def toy_store():
    store, _ = load_dataset(TOY_DATASET)
    return store


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
