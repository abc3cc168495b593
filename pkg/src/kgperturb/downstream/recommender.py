"""KGCN-lite: user-conditioned neighbour aggregation over the item KG, scored
by an inner product with the user embedding."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.stats import rankdata

from ..kg import KnowledgeGraph
from ..nn import ParamBlock, adam_step, dump_blocks, load_blocks, log_sigmoid, sigmoid, softmax, uniform_init
from .world import Interactions

CHECKPOINT_HEADER = "kgperturb-recommender v1"
GRAPH_MODES = ("intact", "zero-graph-emb", "random-graph-emb")


class FrozenModelError(RuntimeError):
    pass


@dataclass(frozen=True)
class RecConfig:
    dim: int = 16
    hops: int = 1
    epochs: int = 100
    lr: float = 0.01
    batch_size: int = 32
    l2: float = 1e-3
    seed: int = 0


def auc(labels, scores) -> float:
    """Rank-statistic AUC; tied scores count one half."""
    labels = np.asarray(labels)
    scores = np.asarray(scores, dtype=np.float64)
    n_pos = int(np.sum(labels == 1))
    n_neg = int(np.sum(labels == 0))
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUC needs at least one positive and one negative")
    ranks = rankdata(scores)
    return float((np.sum(ranks[labels == 1]) - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


class RecModel:
    def __init__(self, n_users: int, n_entities: int, n_relations: int, cfg: RecConfig = RecConfig()):
        rng = np.random.default_rng(cfg.seed)
        d = cfg.dim
        self.cfg = cfg
        self.hops = cfg.hops
        self.users = ParamBlock("user", uniform_init(rng, (n_users, d), d))
        self.entities = ParamBlock("entity", uniform_init(rng, (n_entities, d), d))
        self.relations = ParamBlock("relation", uniform_init(rng, (n_relations, d), d))
        self.frozen = False

    @property
    def params(self) -> list[ParamBlock]:
        return [self.users, self.entities, self.relations]

    def _check_kg(self, kg: KnowledgeGraph) -> None:
        if kg.n_entities != self.entities.shape[0] or kg.n_relations != self.relations.shape[0]:
            raise ValueError("KG vocabulary does not match the model's embedding tables")

    # -- forward ----------------------------------------------------------
    def _rep(self, u, x, level, nbrs, cache, E, R):
        key = (x, level)
        if key in cache:
            return cache[key][0]
        if level == 0:
            cache[key] = (E[x], None)
            return E[x]
        base = self._rep(u, x, level - 1, nbrs, cache, E, R)
        nb = nbrs(x)
        if not nb:
            cache[key] = (base, None)
            return base
        rs = np.fromiter((r for r, _ in nb), dtype=np.int64, count=len(nb))
        ts = [t for _, t in nb]
        w = softmax(R[rs] @ u)
        child = np.stack([self._rep(u, t, level - 1, nbrs, cache, E, R) for t in ts])
        out = base + w @ child
        cache[key] = (out, (rs, ts, w, child))
        return out

    def _rep_backward(self, u, x, level, g, cache, R, grads):
        dU, dE, dR = grads
        if level == 0:
            dE[x] += g
            return
        self._rep_backward(u, x, level - 1, g, cache, R, grads)
        agg = cache[(x, level)][1]
        if agg is None:
            return
        rs, ts, w, child = agg
        dw = child @ g
        dlogit = w * (dw - w @ dw)
        dU[:] += R[rs].T @ dlogit
        np.add.at(dR, rs, np.outer(dlogit, u))
        for j, t in enumerate(ts):
            self._rep_backward(u, t, level - 1, w[j] * g, cache, R, grads)

    def item_vector(self, user: int, item: int, kg: KnowledgeGraph, nbrs=None, graph_mode: str = "intact",
                    rng=None, E=None, R=None):
        E = self.entities.value if E is None else E
        R = self.relations.value if R is None else R
        u = self.users.value[user]
        nbrs = nbrs or (lambda x: kg.incident(x))
        if graph_mode == "intact" or self.hops == 0:
            return self._rep(u, item, self.hops, nbrs, {}, E, R)
        if graph_mode == "zero-graph-emb":
            return E[item].copy()
        if graph_mode == "random-graph-emb":
            return E[item] + rng.standard_normal(E.shape[1])
        raise ValueError(f"unknown graph mode {graph_mode!r}")

    def logits(self, kg: KnowledgeGraph, users, items, graph_mode: str = "intact", nbrs=None,
               seed: int = 0, E=None, R=None) -> np.ndarray:
        self._check_kg(kg)
        rng = np.random.default_rng(seed)
        out = np.empty(len(users))
        for k, (u, v) in enumerate(zip(users, items)):
            vec = self.item_vector(int(u), int(v), kg, nbrs, graph_mode, rng, E, R)
            out[k] = self.users.value[int(u)] @ vec
        return out

    def predict(self, kg: KnowledgeGraph, users, items, **kw) -> np.ndarray:
        return sigmoid(self.logits(kg, users, items, **kw))

    # -- training ---------------------------------------------------------
    def loss_and_grads(self, kg: KnowledgeGraph, users, items, labels) -> float:
        """Mean logistic loss plus L2; gradients accumulate into the blocks."""
        E, R, U = self.entities.value, self.relations.value, self.users.value
        dU, dE, dR = self.users.grad, self.entities.grad, self.relations.grad
        n = len(users)
        loss = 0.0
        nbrs = kg.incident
        for u, v, y in zip(users, items, labels):
            u, v = int(u), int(v)
            cache = {}
            uvec = U[u]
            vec = self._rep(uvec, v, self.hops, nbrs, cache, E, R)
            z = float(uvec @ vec)
            loss -= (y * log_sigmoid(z) + (1 - y) * log_sigmoid(-z)) / n
            dz = (float(sigmoid(z)) - y) / n
            du = dz * vec
            self._rep_backward(uvec, v, self.hops, dz * uvec, cache, R, (du, dE, dR))
            dU[u] += du
        lam = self.cfg.l2
        for b in self.params:
            loss += 0.5 * lam * float(np.sum(b.value ** 2))
            b.grad += lam * b.value
        return float(loss)


def train_recommender(kg: KnowledgeGraph, inter: Interactions, cfg: RecConfig = RecConfig()) -> RecModel:
    users, items, labels = inter.subset("train")
    if len(users) == 0:
        raise ValueError("empty training split")
    if items.max() >= kg.n_entities or items.min() < 0:
        raise ValueError("interaction item absent from the KG")
    model = RecModel(max(inter.n_users, int(users.max()) + 1), kg.n_entities, kg.n_relations, cfg)
    rng = np.random.default_rng([cfg.seed, 7])
    for _ in range(cfg.epochs):
        order = rng.permutation(len(users))
        for start in range(0, len(order), cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            for b in model.params:
                b.zero_grad()
            model.loss_and_grads(kg, users[idx], items[idx], labels[idx])
            adam_step(model.params, cfg.lr)
    model.frozen = True
    return model


def eval_auc(model: RecModel, kg: KnowledgeGraph, inter: Interactions, split: str = "test", **kw) -> float:
    if not model.frozen:
        raise FrozenModelError("evaluate only frozen models")
    users, items, labels = inter.subset(split)
    return auc(labels, model.logits(kg, users, items, **kw))


def save_recommender(model: RecModel, path) -> None:
    c = model.cfg
    header = (f"{CHECKPOINT_HEADER} dim={c.dim} hops={c.hops} users={model.users.shape[0]} "
              f"entities={model.entities.shape[0]} relations={model.relations.shape[0]}")
    Path(path).write_text("\n".join([header] + dump_blocks(model.params)) + "\n", encoding="utf-8")


def load_recommender(path) -> RecModel:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines or not lines[0].startswith(CHECKPOINT_HEADER):
        raise ValueError(f"{path}: not a recommender checkpoint")
    meta = dict(kv.split("=") for kv in lines[0].split()[2:])
    cfg = RecConfig(dim=int(meta["dim"]), hops=int(meta["hops"]))
    model = RecModel(int(meta["users"]), int(meta["entities"]), int(meta["relations"]), cfg)
    load_blocks(lines[1:], model.params)
    model.frozen = True
    return model
