"""Knowledge-graph data model: vocabularies, triple set, adjacency indices, TSV I/O."""

from __future__ import annotations

import logging
from collections import Counter, deque
from pathlib import Path
from typing import Iterable, Sequence

logger = logging.getLogger(__name__)

Triple = tuple[int, int, int]


class KGError(Exception):
    pass


class ParseError(KGError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class EditError(KGError):
    pass


class Vocabulary:
    """Bidirectional label <-> dense id mapping."""

    def __init__(self, labels: Iterable[str] = ()):
        self._labels: list[str] = []
        self._index: dict[str, int] = {}
        for label in labels:
            self.add(label)

    def add(self, label: str) -> int:
        idx = self._index.get(label)
        if idx is None:
            idx = len(self._labels)
            self._labels.append(label)
            self._index[label] = idx
        return idx

    def id(self, label: str) -> int:
        try:
            return self._index[label]
        except KeyError:
            raise KeyError(f"unknown label {label!r}") from None

    def label(self, idx: int) -> str:
        if not 0 <= idx < len(self._labels):
            raise KeyError(f"id {idx} out of range [0, {len(self._labels)})")
        return self._labels[idx]

    @property
    def labels(self) -> tuple[str, ...]:
        return tuple(self._labels)

    def __contains__(self, label: str) -> bool:
        return label in self._index

    def __len__(self) -> int:
        return len(self._labels)

    def __eq__(self, other: object) -> bool:
        return isinstance(other, Vocabulary) and self._labels == other._labels

    def __hash__(self):
        return hash(tuple(self._labels))


class KnowledgeGraph:
    """Immutable snapshot of G = (E, R, T).

    Triples are kept as an ordered tuple with set semantics. Vocabularies are
    closed: edits may only reference existing entity and relation ids.
    """

    def __init__(self, entities: Vocabulary, relations: Vocabulary, triples: Iterable[Triple] = ()):
        self.entities = entities
        self.relations = relations
        n_e, n_r = len(entities), len(relations)
        seq: list[Triple] = []
        seen: set[Triple] = set()
        for h, r, t in triples:
            tr = (int(h), int(r), int(t))
            if not (0 <= tr[0] < n_e and 0 <= tr[2] < n_e and 0 <= tr[1] < n_r):
                raise KGError(f"triple {tr} out of vocabulary bounds")
            if tr in seen:
                raise KGError(f"duplicate triple {tr}")
            seen.add(tr)
            seq.append(tr)
        self._triples = tuple(seq)
        self._set = frozenset(seen)
        self._indices = None

    @classmethod
    def _trusted(cls, entities: Vocabulary, relations: Vocabulary, seq: list[Triple],
                 seen: set[Triple]) -> KnowledgeGraph:
        """Build from triples already known to be in bounds and distinct."""
        kg = cls.__new__(cls)
        kg.entities, kg.relations = entities, relations
        kg._triples, kg._set, kg._indices = tuple(seq), frozenset(seen), None
        return kg

    def _derive_indices(self, parent: KnowledgeGraph, removed: Sequence[Triple], added: Sequence[Triple]) -> None:
        """Update a copy of ``parent``'s indices instead of rebuilding them.

        Per-key lists keep triple order, so the result equals a full rebuild.
        """
        out_i, in_i, und, heads, tails = (dict(ix) for ix in parent._indices)
        touched_lists: set[tuple[int, int]] = set()
        touched_sets: set[tuple[int, int]] = set()

        def own_list(ix, which, key):
            if (which, key) not in touched_lists:
                ix[key] = list(ix.get(key, []))
                touched_lists.add((which, key))
            return ix[key]

        def own_set(ix, which, key):
            if (which, key) not in touched_sets:
                ix[key] = set(ix.get(key, set()))
                touched_sets.add((which, key))
            return ix[key]

        for h, r, t in removed:
            own_list(out_i, 0, h).remove((r, t))
            own_list(in_i, 1, t).remove((r, h))
        for h, r, t in added:
            own_list(out_i, 0, h).append((r, t))
            own_list(in_i, 1, t).append((r, h))
            own_set(heads, 3, r).add(h)
            own_set(tails, 4, r).add(t)
            if h != t:
                own_set(und, 2, h).add(t)
                own_set(und, 2, t).add(h)
        for h, r, t in removed:
            if h != t and not any(x == t for _, x in out_i.get(h, [])) \
                    and not any(x == t for _, x in in_i.get(h, [])):
                own_set(und, 2, h).discard(t)
                own_set(und, 2, t).discard(h)
            if not any(q == r for q, _ in out_i.get(h, [])):
                own_set(heads, 3, r).discard(h)
            if not any(q == r for q, _ in in_i.get(t, [])):
                own_set(tails, 4, r).discard(t)
        tables = (out_i, in_i, und, heads, tails)
        for which, key in touched_lists | touched_sets:
            if not tables[which][key]:
                del tables[which][key]
        self._indices = (out_i, in_i, und, heads, tails)

    def _build_indices(self) -> tuple:
        out_index: dict[int, list[tuple[int, int]]] = {}
        in_index: dict[int, list[tuple[int, int]]] = {}
        undirected: dict[int, set[int]] = {}
        heads: dict[int, set[int]] = {}
        tails: dict[int, set[int]] = {}
        for h, r, t in self._triples:
            heads.setdefault(r, set()).add(h)
            tails.setdefault(r, set()).add(t)
            out_index.setdefault(h, []).append((r, t))
            in_index.setdefault(t, []).append((r, h))
            if h != t:
                undirected.setdefault(h, set()).add(t)
                undirected.setdefault(t, set()).add(h)
        return out_index, in_index, undirected, heads, tails

    # adjacency indices are built on first use: chains of edits create many
    # intermediate snapshots that are never queried
    @property
    def out_index(self) -> dict[int, list[tuple[int, int]]]:
        if self._indices is None:
            self._indices = self._build_indices()
        return self._indices[0]

    @property
    def in_index(self) -> dict[int, list[tuple[int, int]]]:
        if self._indices is None:
            self._indices = self._build_indices()
        return self._indices[1]

    @property
    def undirected_index(self) -> dict[int, set[int]]:
        if self._indices is None:
            self._indices = self._build_indices()
        return self._indices[2]

    @property
    def triples(self) -> tuple[Triple, ...]:
        return self._triples

    @property
    def triple_set(self) -> frozenset[Triple]:
        return self._set

    @property
    def n_entities(self) -> int:
        return len(self.entities)

    @property
    def n_relations(self) -> int:
        return len(self.relations)

    def __len__(self) -> int:
        return len(self._triples)

    def __contains__(self, triple: Triple) -> bool:
        return tuple(triple) in self._set

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, KnowledgeGraph):
            return NotImplemented
        return (self.entities == other.entities and self.relations == other.relations
                and self._set == other._set)

    def __hash__(self):
        return hash(self._set)

    def __repr__(self) -> str:
        return f"KnowledgeGraph(|E|={self.n_entities}, |R|={self.n_relations}, |T|={len(self)})"

    def same_vocabulary(self, other: KnowledgeGraph) -> bool:
        return self.entities == other.entities and self.relations == other.relations

    def with_triples(self, triples: Iterable[Triple]) -> KnowledgeGraph:
        return KnowledgeGraph(self.entities, self.relations, triples)

    def neighbors(self, e: int) -> set[int]:
        return self.undirected_index.get(e, set())

    def relation_endpoints(self, r: int, heads: bool = True, tails: bool = True) -> set[int]:
        """Entities appearing as head and/or tail of some ``r`` triple."""
        if self._indices is None:
            self._indices = self._build_indices()
        out: set[int] = set()
        if heads:
            out |= self._indices[3].get(r, set())
        if tails:
            out |= self._indices[4].get(r, set())
        return out

    def incident(self, e: int) -> list[tuple[int, int]]:
        """(relation, other endpoint) pairs for every triple touching ``e``, either direction."""
        return self.out_index.get(e, []) + self.in_index.get(e, [])

    def triple_labels(self, triple: Triple) -> tuple[str, str, str]:
        h, r, t = triple
        return self.entities.label(h), self.relations.label(r), self.entities.label(t)

    def entity_id(self, label: str) -> int:
        return self.entities.id(label)

    def relation_id(self, label: str) -> int:
        return self.relations.id(label)


def _check_entity(kg: KnowledgeGraph, e: int) -> None:
    if not 0 <= e < kg.n_entities:
        raise KeyError(f"unknown entity id {e}")


def _check_relation(kg: KnowledgeGraph, r: int) -> None:
    if not 0 <= r < kg.n_relations:
        raise KeyError(f"unknown relation id {r}")


def parse_triples(lines: Iterable[str], entities: Vocabulary | None = None,
                  relations: Vocabulary | None = None) -> KnowledgeGraph:
    """Build a graph from TSV lines.

    With ``entities``/``relations`` given, the vocabulary is closed: unknown
    labels are a parse error and an empty triple set is allowed.
    """
    closed = entities is not None and relations is not None
    ent = entities if entities is not None else Vocabulary()
    rel = relations if relations is not None else Vocabulary()
    triples: list[Triple] = []
    seen: set[Triple] = set()
    dropped = 0
    for lineno, raw in enumerate(lines, start=1):
        line = raw.rstrip("\r\n")
        if not line.strip() or line.startswith("#"):
            continue
        fields = line.split("\t")
        if len(fields) != 3:
            raise ParseError(f"expected 3 tab-separated fields, got {len(fields)}", lineno)
        h, r, t = fields
        try:
            if closed:
                tr = (ent.id(h), rel.id(r), ent.id(t))
            else:
                tr = (ent.add(h), rel.add(r), ent.add(t))
        except KeyError as exc:
            raise ParseError(str(exc), lineno) from None
        if tr in seen:
            dropped += 1
            continue
        seen.add(tr)
        triples.append(tr)
    if not triples and not closed:
        raise ParseError("no triples found")
    if dropped:
        logger.warning("dropped %d duplicate triple(s)", dropped)
    kg = KnowledgeGraph(ent, rel, triples)
    kg.duplicates_dropped = dropped
    return kg


def load_triples(path, reference: KnowledgeGraph | None = None) -> KnowledgeGraph:
    """Load a triple TSV file.

    ``reference`` pins the vocabularies to those of an existing graph, which is
    how perturbed graphs are read back (they may have lost every edge).
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"triples file not found: {path}")
    with open(path, encoding="utf-8") as fh:
        if reference is None:
            return parse_triples(fh)
        return parse_triples(fh, Vocabulary(reference.entities.labels),
                             Vocabulary(reference.relations.labels))


def canonical_triples(kg: KnowledgeGraph) -> list[Triple]:
    """Triples sorted by (head, relation, tail) label.

    Label order rather than id order: ids are reassigned by first appearance on
    load, so only a label sort makes save/load a fixed point.
    """
    return sorted(kg.triples, key=kg.triple_labels)


def format_triples(kg: KnowledgeGraph) -> str:
    lines = ["\t".join(kg.triple_labels(tr)) for tr in canonical_triples(kg)]
    return "".join(line + "\n" for line in lines)


def save_triples(kg: KnowledgeGraph, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(format_triples(kg))


def n_hop_neighbors(kg: KnowledgeGraph, e: int, L: int) -> set[int]:
    """Entities within ``L`` undirected hops of ``e``, excluding ``e``."""
    _check_entity(kg, e)
    if L < 1:
        raise ValueError("L must be >= 1")
    seen = {e}
    frontier = deque([(e, 0)])
    while frontier:
        node, depth = frontier.popleft()
        if depth == L:
            continue
        for nb in kg.neighbors(node):
            if nb not in seen:
                seen.add(nb)
                frontier.append((nb, depth + 1))
    seen.discard(e)
    return seen


def relation_subgraph(kg: KnowledgeGraph, r: int) -> KnowledgeGraph:
    """G^r: the full entity vocabulary with only relation-``r`` triples."""
    _check_relation(kg, r)
    return kg.with_triples(tr for tr in kg.triples if tr[1] == r)


def relation_histogram(kg: KnowledgeGraph) -> dict[int, int]:
    return dict(Counter(r for _, r, _ in kg.triples))


def apply_edits(kg: KnowledgeGraph, removed: Sequence[Triple], added: Sequence[Triple]) -> KnowledgeGraph:
    """Remove then add triples atomically, returning a new snapshot."""
    removed = [tuple(tr) for tr in removed]
    added = [(int(tr[0]), int(tr[1]), int(tr[2])) for tr in added]
    n_e, n_r = kg.n_entities, kg.n_relations
    for h, r, t in added:
        if not (0 <= h < n_e and 0 <= t < n_e and 0 <= r < n_r):
            raise KGError(f"triple {(h, r, t)} out of vocabulary bounds")
    gone: set[Triple] = set()
    for tr in removed:
        if tr not in kg.triple_set or tr in gone:
            raise EditError(f"cannot remove absent triple {tr}")
        gone.add(tr)
    remaining = [tr for tr in kg.triples if tr not in gone]
    present = set(remaining)
    for tr in added:
        if tr in present:
            raise EditError(f"cannot add duplicate triple {tr}")
        present.add(tr)
        remaining.append(tr)
    out = KnowledgeGraph._trusted(kg.entities, kg.relations, remaining, present)
    if kg._indices is not None:
        out._derive_indices(kg, removed, added)
    return out


def unlabeled_pairs(kg: KnowledgeGraph) -> Counter:
    """Multiset of (head, tail) pairs with relation labels dropped."""
    return Counter((h, t) for h, _, t in kg.triples)


def degree_sequence(kg: KnowledgeGraph) -> Counter:
    """Relation-blind endpoint counts (each triple adds one to head and tail)."""
    deg: Counter = Counter()
    for h, _, t in kg.triples:
        deg[h] += 1
        deg[t] += 1
    return deg
