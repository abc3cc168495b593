"""Diagonal bilinear (DistMult-style) edge scorer used for ATS, RR and the
RL action restriction."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .kg import KnowledgeGraph
from .nn import ParamBlock, adam_step, format_float, log_sigmoid, sgd_step, sigmoid

CHECKPOINT_HEADER = "kgperturb-scorer v1"


class ScorerError(Exception):
    pass


class NoLegalSubaction(ScorerError):
    pass


@dataclass(frozen=True)
class ScorerTrainConfig:
    dim: int = 16
    epochs: int = 300
    lr: float = 0.05
    n_neg: int = 2
    seed: int = 0
    optimizer: str = "adam"

    def __post_init__(self):
        if self.dim < 1 or self.epochs < 1 or self.n_neg < 1:
            raise ValueError("dim, epochs and n_neg must be >= 1")


class ScorerParams:
    def __init__(self, entity_emb, relation_emb):
        self.entity_emb = np.array(entity_emb, dtype=np.float64)
        self.relation_emb = np.array(relation_emb, dtype=np.float64)
        if self.entity_emb.ndim != 2 or self.relation_emb.ndim != 2:
            raise ScorerError("embedding tables must be 2-D")
        if self.entity_emb.shape[1] != self.relation_emb.shape[1]:
            raise ScorerError("entity and relation embeddings differ in width")
        if not (np.all(np.isfinite(self.entity_emb)) and np.all(np.isfinite(self.relation_emb))):
            raise ScorerError("non-finite embedding values")

    @property
    def dim(self) -> int:
        return self.entity_emb.shape[1]

    @property
    def n_entities(self) -> int:
        return self.entity_emb.shape[0]

    @property
    def n_relations(self) -> int:
        return self.relation_emb.shape[0]

    @staticmethod
    def _checked(ids, n: int, what: str):
        ids = np.asarray(ids)
        if ids.size and (ids.min() < 0 or ids.max() >= n):
            raise IndexError(f"{what} id out of range: {ids}")
        return ids

    def _ent(self, e):
        return self.entity_emb[self._checked(e, self.n_entities, "entity")]

    def _rel(self, r):
        return self.relation_emb[self._checked(r, self.n_relations, "relation")]

    def raw(self, h, r, t):
        """Un-squashed bilinear value sum_i h_i r_i t_i (vectorised over ids)."""
        return np.sum(self._ent(h) * self._rel(r) * self._ent(t), axis=-1)

    def score(self, h, r, t):
        return sigmoid(self.raw(h, r, t))

    def score_triples(self, triples) -> np.ndarray:
        arr = np.asarray(triples, dtype=np.int64).reshape(-1, 3)
        if len(arr) == 0:
            return np.zeros(0)
        return self.score(arr[:, 0], arr[:, 1], arr[:, 2])

    def __eq__(self, other):
        return (isinstance(other, ScorerParams)
                and np.array_equal(self.entity_emb, other.entity_emb)
                and np.array_equal(self.relation_emb, other.relation_emb))


def score_triple(s: ScorerParams, h: int, r: int, t: int) -> float:
    return float(s.score(h, r, t))


def argmin_relation(s: ScorerParams, h: int, t: int) -> int:
    """Relation minimising score(h, r, t) over all of R; ties go to the lowest id."""
    if s.n_relations < 1:
        raise ScorerError("empty relation vocabulary")
    scores = s.relation_emb @ (s._ent(h) * s._ent(t))
    return int(np.argmin(scores))


def k_lowest_score_candidates(s: ScorerParams, candidates: Sequence[int], context: tuple,
                              K: int) -> list[int]:
    """Keep the ``K`` candidates whose substituted triple scores lowest.

    ``context`` is ``("relation", h, t)`` when candidates are relations or
    ``("tail", h, r)`` when candidates are tail entities. Result is ascending
    by score, ties by candidate id.
    """
    cands = np.asarray(list(candidates), dtype=np.int64)
    if len(cands) == 0:
        raise NoLegalSubaction("no legal subaction")
    if K < 1:
        raise ValueError("K must be >= 1")
    kind, a, b = context
    if kind == "relation":
        scores = s.raw(np.full_like(cands, a), cands, np.full_like(cands, b))
    elif kind == "tail":
        scores = s.raw(np.full_like(cands, a), np.full_like(cands, b), cands)
    else:
        raise ValueError(f"unknown context kind {kind!r}")
    order = np.lexsort((cands, scores))
    return [int(c) for c in cands[order[:K]]]


def logistic_loss_and_grads(params: ScorerParams, pos, neg):
    """Mean logistic loss over positives (label 1) and negatives (label 0).

    Returns ``(loss, d_entity, d_relation)``.
    """
    pos = np.asarray(pos, dtype=np.int64).reshape(-1, 3)
    neg = np.asarray(neg, dtype=np.int64).reshape(-1, 3)
    trip = np.concatenate([pos, neg])
    labels = np.concatenate([np.ones(len(pos)), np.zeros(len(neg))])
    E, R = params.entity_emb, params.relation_emb
    hv, rv, tv = E[trip[:, 0]], R[trip[:, 1]], E[trip[:, 2]]
    x = np.sum(hv * rv * tv, axis=1)
    n = len(trip)
    loss = -np.sum(labels * log_sigmoid(x) + (1 - labels) * log_sigmoid(-x)) / n
    dx = (sigmoid(x) - labels) / n
    d_ent = np.zeros_like(E)
    d_rel = np.zeros_like(R)
    np.add.at(d_ent, trip[:, 0], dx[:, None] * rv * tv)
    np.add.at(d_ent, trip[:, 2], dx[:, None] * hv * rv)
    np.add.at(d_rel, trip[:, 1], dx[:, None] * hv * tv)
    return float(loss), d_ent, d_rel


def corrupt(kg: KnowledgeGraph, triples: np.ndarray, n_neg: int, rng: np.random.Generator,
            max_tries: int = 32) -> np.ndarray:
    """Uniform head-or-tail corruption, resampling collisions with true triples."""
    out = np.repeat(np.asarray(triples, dtype=np.int64).reshape(-1, 3), n_neg, axis=0)
    n = len(out)
    col = np.where(rng.random(n) < 0.5, 0, 2)
    out[np.arange(n), col] = rng.integers(kg.n_entities, size=n)
    true = kg.triple_set
    for i in range(n):
        for _ in range(max_tries):
            if (int(out[i, 0]), int(out[i, 1]), int(out[i, 2])) not in true:
                break
            out[i, col[i]] = rng.integers(kg.n_entities)
    return out


def init_params(n_entities: int, n_relations: int, dim: int, seed: int) -> ScorerParams:
    rng = np.random.default_rng(seed)
    lim = 1.0 / np.sqrt(dim)
    ent = rng.uniform(-lim, lim, size=(n_entities, dim))
    rel = rng.uniform(-lim, lim, size=(n_relations, dim))
    return ScorerParams(ent, rel)


def train_scorer(kg: KnowledgeGraph, cfg: ScorerTrainConfig = ScorerTrainConfig()) -> ScorerParams:
    """Full-batch link-prediction training with fresh negatives every epoch."""
    if len(kg) == 0:
        raise ScorerError("cannot train a scorer on a graph without triples")
    init = init_params(kg.n_entities, kg.n_relations, cfg.dim, cfg.seed)
    rng = np.random.default_rng([cfg.seed, 1])
    ent = ParamBlock("entity", init.entity_emb)
    rel = ParamBlock("relation", init.relation_emb)
    pos = np.asarray(kg.triples, dtype=np.int64)
    for _ in range(cfg.epochs):
        neg = corrupt(kg, pos, cfg.n_neg, rng)
        _, d_ent, d_rel = logistic_loss_and_grads(ScorerParams(ent.value, rel.value), pos, neg)
        ent.grad[...] = d_ent
        rel.grad[...] = d_rel
        if cfg.optimizer == "adam":
            adam_step([ent, rel], cfg.lr)
        elif cfg.optimizer == "sgd":
            sgd_step([ent, rel], cfg.lr)
        else:
            raise ValueError(f"unknown optimizer {cfg.optimizer!r}")
    return ScorerParams(ent.value, rel.value)


def save_scorer(s: ScorerParams, path) -> None:
    lines = [f"{CHECKPOINT_HEADER} d={s.dim}"]
    for prefix, table in (("e", s.entity_emb), ("r", s.relation_emb)):
        for row in table:
            lines.append(prefix + "\t" + "\t".join(format_float(v) for v in row))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_scorer(path) -> ScorerParams:
    text = Path(path).read_text(encoding="utf-8").splitlines()
    if not text or not text[0].startswith(CHECKPOINT_HEADER + " d="):
        raise ScorerError(f"{path}: not a scorer checkpoint")
    dim = int(text[0].split("d=")[1])
    ent, rel = [], []
    for line in text[1:]:
        fields = line.split("\t")
        row = [float(v) for v in fields[1:]]
        if len(row) != dim:
            raise ScorerError(f"{path}: row width {len(row)} != d={dim}")
        (ent if fields[0] == "e" else rel).append(row)
    return ScorerParams(np.array(ent).reshape(-1, dim), np.array(rel).reshape(-1, dim))

