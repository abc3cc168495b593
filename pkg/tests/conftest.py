import sys

import numpy as np
import pytest

from kgperturb.kg import KnowledgeGraph, Vocabulary, parse_triples

TINY6 = [
    ("A", "r1", "B"),
    ("B", "r1", "C"),
    ("C", "r1", "A"),
    ("A", "r2", "D"),
    ("D", "r2", "E"),
    ("E", "r2", "F"),
]


def make_kg(rows):
    return parse_triples("\t".join(r) for r in rows)


@pytest.fixture
def tiny6():
    return make_kg(TINY6)


def random_kg(rng, n_entities, n_relations, n_triples):
    ent = Vocabulary(f"e{i}" for i in range(n_entities))
    rel = Vocabulary(f"r{i}" for i in range(n_relations))
    seen = set()
    target = min(n_triples, n_entities * n_entities * n_relations)
    while len(seen) < target:
        seen.add((int(rng.integers(n_entities)), int(rng.integers(n_relations)), int(rng.integers(n_entities))))
    return KnowledgeGraph(ent, rel, sorted(seen))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for n in sorted(lines):
            terminalreporter.write_line(lines[n])
