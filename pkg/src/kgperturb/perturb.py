"""Heuristic perturbations (relation swap / replace, edge rewire / delete) and
the scale-sweep driver that applies a fraction of |T| edge touches."""

from __future__ import annotations

import enum
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .kg import KGError, KnowledgeGraph, Triple, apply_edits
from .scorer import ScorerParams, argmin_relation

logger = logging.getLogger(__name__)

MAX_RETRIES = 16
EDITS_HEADER = "kgperturb-edits v1"


class PerturbError(KGError):
    pass


class DeadEnd(PerturbError):
    """Raised when a step cannot find a legal edit within the retry budget."""


class HeuristicKind(str, enum.Enum):
    RelationSwap = "RS"
    RelationReplace = "RR"
    EdgeRewire = "ER"
    EdgeDelete = "ED"

    @classmethod
    def parse(cls, value) -> HeuristicKind:
        if isinstance(value, cls):
            return value
        for kind in cls:
            if value in (kind.value, kind.name):
                return kind
        raise ValueError(f"unknown perturbation method {value!r}")


METHODS = ("RS", "RR", "ER", "ED", "RL-RR", "RL-ER")

Edit = tuple[tuple[Triple, ...], tuple[Triple, ...]]


@dataclass
class PerturbationRecord:
    method: str
    seed: int
    scale: float
    edits: list[Edit] = field(default_factory=list)
    skipped: int = 0

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}")

    def replay(self, kg: KnowledgeGraph) -> KnowledgeGraph:
        for removed, added in self.edits:
            kg = apply_edits(kg, removed, added)
        return kg

    def inverse(self) -> list[Edit]:
        return [(added, removed) for removed, added in reversed(self.edits)]


def _pick(rng: np.random.Generator, pool: Sequence[Triple]) -> Triple:
    return pool[int(rng.integers(len(pool)))]


def relation_swap(kg: KnowledgeGraph, rng: np.random.Generator,
                  pool: Sequence[Triple] | None = None) -> tuple[KnowledgeGraph, Edit]:
    """Exchange the relations of two distinct triples.

    The first triple is drawn from ``pool`` (default: every triple), the second
    from the pool when it has another member, otherwise from the whole graph.
    """
    if len(kg) < 2:
        raise PerturbError("relation swap needs at least 2 triples")
    pool = list(kg.triples) if pool is None else list(pool)
    for _ in range(MAX_RETRIES):
        a = _pick(rng, pool)
        rest = [tr for tr in pool if tr != a]
        if not rest:
            rest = [tr for tr in kg.triples if tr != a]
        b = _pick(rng, rest)
        new_a = (a[0], b[1], a[2])
        new_b = (b[0], a[1], b[2])
        removed, added = (a, b), (new_a, new_b)
        try:
            return apply_edits(kg, removed, added), (removed, added)
        except KGError:
            continue
    raise DeadEnd("no legal relation swap found")


def relation_replace(kg: KnowledgeGraph, scorer: ScorerParams, rng: np.random.Generator,
                     pool: Sequence[Triple] | None = None) -> tuple[KnowledgeGraph, Edit]:
    """Replace a random triple's relation with the lowest-scoring relation."""
    if len(kg) < 1:
        raise PerturbError("relation replace needs at least 1 triple")
    pool = list(kg.triples) if pool is None else list(pool)
    for _ in range(MAX_RETRIES):
        h, r, t = _pick(rng, pool)
        r2 = argmin_relation(scorer, h, t)
        new = (h, r2, t)
        if r2 != r and new in kg:
            continue
        edit = (((h, r, t),), (new,))
        return apply_edits(kg, *edit), edit
    raise DeadEnd("every sampled triple would duplicate an existing edge")


def rewire_candidates(kg: KnowledgeGraph, head: int, relation: int, head_only: bool = False) -> list[int]:
    """Entities incident to some ``relation`` edge that are neither ``head`` nor its 1-hop neighbours."""
    incident = kg.relation_endpoints(relation, heads=True, tails=not head_only)
    excluded = kg.neighbors(head) | {head}
    return sorted(incident - excluded)


def edge_rewire(kg: KnowledgeGraph, rng: np.random.Generator, pool: Sequence[Triple] | None = None,
                head_only: bool = False) -> tuple[KnowledgeGraph, Edit]:
    """Point a random triple's tail at a non-neighbour that also carries its relation."""
    if len(kg) < 1:
        raise PerturbError("edge rewire needs at least 1 triple")
    pool = list(kg.triples) if pool is None else list(pool)
    for _ in range(MAX_RETRIES):
        h, r, t = _pick(rng, pool)
        cands = rewire_candidates(kg, h, r, head_only)
        if not cands:
            continue
        t2 = cands[int(rng.integers(len(cands)))]
        edit = (((h, r, t),), ((h, r, t2),))
        return apply_edits(kg, *edit), edit
    raise DeadEnd("no rewiring candidates for any sampled triple")


def edge_delete(kg: KnowledgeGraph, rng: np.random.Generator,
                pool: Sequence[Triple] | None = None) -> tuple[KnowledgeGraph, Edit]:
    if len(kg) < 1:
        raise PerturbError("cannot delete from an empty graph")
    pool = list(kg.triples) if pool is None else list(pool)
    tr = _pick(rng, pool)
    edit = ((tr,), ())
    return apply_edits(kg, *edit), edit


def n_touches(scale: float, n_triples: int) -> int:
    return math.ceil(scale * n_triples - 1e-9)


def perturb_scale(kg: KnowledgeGraph, method, scale: float, scorer: ScorerParams | None = None,
                  seed: int = 0, head_only: bool = False) -> tuple[KnowledgeGraph, PerturbationRecord]:
    """Apply ``ceil(scale * |T|)`` edge touches of one heuristic.

    Targets are drawn without replacement from the original triples, so a run
    at a smaller scale is a prefix of the run at a larger scale with the same
    seed. A swap touches two edges; every other step touches one. Steps that hit
    a dead end are skipped and counted.
    """
    kind = HeuristicKind.parse(method)
    if not 0.0 <= scale <= 1.0:
        raise ValueError("scale must lie in [0, 1]")
    if kind is HeuristicKind.RelationReplace and scorer is None:
        raise ValueError("relation replacement requires a scorer")
    rng = np.random.default_rng(seed)
    record = PerturbationRecord(method=kind.value, seed=seed, scale=scale)
    budget = n_touches(scale, len(kg))
    untouched = list(kg.triples)
    cur = kg
    touched = 0
    while touched < budget:
        pool = [tr for tr in untouched if tr in cur] or None
        try:
            if kind is HeuristicKind.RelationSwap:
                cur, edit = relation_swap(cur, rng, pool)
                touched += 2
            else:
                if kind is HeuristicKind.RelationReplace:
                    cur, edit = relation_replace(cur, scorer, rng, pool)
                elif kind is HeuristicKind.EdgeRewire:
                    cur, edit = edge_rewire(cur, rng, pool, head_only=head_only)
                else:
                    cur, edit = edge_delete(cur, rng, pool)
                touched += 1
        except DeadEnd as exc:
            logger.info("skipping %s step: %s", kind.value, exc)
            record.skipped += 1
            touched += 2 if kind is HeuristicKind.RelationSwap else 1
            continue
        record.edits.append(edit)
        done = set(edit[0])
        untouched = [tr for tr in untouched if tr not in done]
    return cur, record


def format_edits(kg: KnowledgeGraph, record: PerturbationRecord) -> str:
    lines = [f"{EDITS_HEADER} method={record.method} seed={record.seed} scale={record.scale:.9f}",
             f"# skipped={record.skipped} edits={len(record.edits)}"]
    for removed, added in record.edits:
        for tr in removed:
            lines.append("-\t" + "\t".join(kg.triple_labels(tr)))
        for tr in added:
            lines.append("+\t" + "\t".join(kg.triple_labels(tr)))
    return "\n".join(lines) + "\n"


def save_edits(kg: KnowledgeGraph, record: PerturbationRecord, path) -> None:
    Path(path).write_text(format_edits(kg, record), encoding="utf-8")


def load_edits(kg: KnowledgeGraph, path) -> PerturbationRecord:
    """Read an edit log; an edit boundary is any removal line following an addition."""
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines or not lines[0].startswith(EDITS_HEADER):
        raise PerturbError(f"{path}: not an edit log")
    meta = dict(kv.split("=", 1) for kv in lines[0].split()[2:])
    record = PerturbationRecord(method=meta["method"], seed=int(meta["seed"]), scale=float(meta["scale"]))
    removed: list[Triple] = []
    added: list[Triple] = []
    for line in lines[1:]:
        if line.startswith("#"):
            if "skipped=" in line:
                record.skipped = int(line.split("skipped=")[1].split()[0])
            continue
        sign, h, r, t = line.split("\t")
        tr = (kg.entity_id(h), kg.relation_id(r), kg.entity_id(t))
        if sign == "-":
            if added:
                record.edits.append((tuple(removed), tuple(added)))
                removed, added = [], []
            removed.append(tr)
        elif sign == "+":
            added.append(tr)
        else:
            raise PerturbError(f"bad edit line {line!r}")
    if removed or added:
        record.edits.append((tuple(removed), tuple(added)))
    return record
