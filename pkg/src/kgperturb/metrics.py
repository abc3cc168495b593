"""Semantic (ATS) and structural (SC2D, SD2) distances between a graph and its
perturbed copy."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .kg import KnowledgeGraph
from .nn import format_float
from .scorer import ScorerError, ScorerParams

REPORT_HEADER = "ats,sc2d,sd2,b"


class VocabularyMismatch(ValueError):
    pass


@dataclass(frozen=True)
class MetricReport:
    ats: float
    sc2d: float
    sd2: float
    b: float = 1.0

    def csv_row(self) -> str:
        return ",".join(format_float(v) for v in (self.ats, self.sc2d, self.sd2, self.b))


def ats(scorer: ScorerParams, kg: KnowledgeGraph) -> float:
    """Mean scorer plausibility over the edges of ``kg``."""
    if len(kg) == 0:
        raise ScorerError("ATS is undefined for an empty triple set")
    return float(np.mean(scorer.score_triples(kg.triples)))


def _simple_adjacency(n: int, pairs) -> list[set[int]]:
    adj: list[set[int]] = [set() for _ in range(n)]
    for h, t in pairs:
        if h != t:
            adj[h].add(t)
            adj[t].add(h)
    return adj


def _clustering_from_adj(adj: list[set[int]]) -> np.ndarray:
    out = np.zeros(len(adj))
    for v, nbrs in enumerate(adj):
        k = len(nbrs)
        if k < 2:
            continue
        links = sum(len(adj[u] & nbrs) for u in nbrs) // 2
        out[v] = 2.0 * links / (k * (k - 1))
    return out


def local_clustering(kg: KnowledgeGraph) -> np.ndarray:
    """Watts-Strogatz coefficient per entity on the undirected simple projection."""
    return _clustering_from_adj(_simple_adjacency(kg.n_entities, ((h, t) for h, _, t in kg.triples)))


def _per_relation_adjacency(kg: KnowledgeGraph) -> list[list[set[int]]]:
    buckets: list[list[tuple[int, int]]] = [[] for _ in range(kg.n_relations)]
    for h, r, t in kg.triples:
        buckets[r].append((h, t))
    return [_simple_adjacency(kg.n_entities, pairs) for pairs in buckets]


def average_clustering_vector(kg: KnowledgeGraph) -> np.ndarray:
    """Mean over relations of the clustering vector of each relation subgraph."""
    if kg.n_relations == 0:
        return np.zeros(kg.n_entities)
    vecs = [_clustering_from_adj(adj) for adj in _per_relation_adjacency(kg)]
    return np.mean(vecs, axis=0)


def average_degree_vector(kg: KnowledgeGraph) -> np.ndarray:
    """Mean over relations of undirected simple degree in each relation subgraph."""
    if kg.n_relations == 0:
        return np.zeros(kg.n_entities)
    vecs = [np.array([len(s) for s in adj], dtype=np.float64) for adj in _per_relation_adjacency(kg)]
    return np.mean(vecs, axis=0)


def _check_vocab(kg_o: KnowledgeGraph, kg_p: KnowledgeGraph) -> None:
    if not kg_o.same_vocabulary(kg_p):
        raise VocabularyMismatch("graphs must share entity and relation vocabularies")


def sc2d(kg_o: KnowledgeGraph, kg_p: KnowledgeGraph, b: float = 1.0) -> float:
    _check_vocab(kg_o, kg_p)
    dist = np.linalg.norm(average_clustering_vector(kg_o) - average_clustering_vector(kg_p))
    return float(1.0 / (dist + b))


def sd2(kg_o: KnowledgeGraph, kg_p: KnowledgeGraph, b: float = 1.0) -> float:
    _check_vocab(kg_o, kg_p)
    dist = np.linalg.norm(average_degree_vector(kg_o) - average_degree_vector(kg_p))
    return float(1.0 / (dist + b))


def metric_report(scorer: ScorerParams, kg_o: KnowledgeGraph, kg_p: KnowledgeGraph,
                  b: float = 1.0) -> MetricReport:
    """ATS is NaN when ``kg_p`` has no edges left."""
    value = ats(scorer, kg_p) if len(kg_p) else float("nan")
    return MetricReport(ats=value, sc2d=sc2d(kg_o, kg_p, b), sd2=sd2(kg_o, kg_p, b), b=b)


def write_report(report: MetricReport, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(REPORT_HEADER + "\n" + report.csv_row() + "\n")
