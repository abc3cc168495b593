"""Path-pooling multiple-choice QA scorer: relation paths of length <= 2
between question and answer entities are encoded, mean-pooled and scored."""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..kg import KnowledgeGraph
from ..nn import Mlp, ParamBlock, adam_step, dump_blocks, load_blocks, softmax, uniform_init
from .recommender import FrozenModelError
from .world import QaTask

CHECKPOINT_HEADER = "kgperturb-qa v1"
KL_CLAMP = 1e-12


@dataclass(frozen=True)
class QaConfig:
    rel_dim: int = 8
    hidden: int = 16
    epochs: int = 60
    lr: float = 0.01
    seed: int = 0


def enumerate_paths(kg: KnowledgeGraph, sources, targets) -> Counter:
    """Count relation signatures of undirected paths of length <= 2.

    One-hop paths are keyed ``(r, None)``; two-hop paths ``(r1, r2)`` through an
    intermediate entity distinct from both endpoints.
    """
    targets = set(targets)
    out: Counter = Counter()
    for q in sources:
        for r1, m in kg.incident(q):
            if m in targets and m != q:
                out[(r1, None)] += 1
            if m == q:
                continue
            for r2, a in kg.incident(m):
                if a in targets and a != q and a != m:
                    out[(r1, r2)] += 1
    return out


class QaModel:
    def __init__(self, n_relations: int, cfg: QaConfig = QaConfig()):
        rng = np.random.default_rng(cfg.seed)
        self.cfg = cfg
        self.n_relations = n_relations
        # last row is the padding relation for one-hop paths
        self.rel = ParamBlock("qa.relation", uniform_init(rng, (n_relations + 1, cfg.rel_dim), cfg.rel_dim))
        self.path_mlp = Mlp([2 * cfg.rel_dim, cfg.hidden, cfg.hidden], rng, name="qa.path")
        self.cls_mlp = Mlp([cfg.hidden, cfg.hidden, 1], rng, name="qa.cls", zero_output=True)
        self.frozen = False

    @property
    def params(self) -> list[ParamBlock]:
        return [self.rel] + self.path_mlp.params + self.cls_mlp.params

    def _path_arrays(self, paths: Counter):
        pad = self.n_relations
        keys = sorted(paths, key=lambda k: (k[0], -1 if k[1] is None else k[1]))
        r1 = np.array([k[0] for k in keys], dtype=np.int64)
        r2 = np.array([pad if k[1] is None else k[1] for k in keys], dtype=np.int64)
        counts = np.array([paths[k] for k in keys], dtype=np.float64)
        return r1, r2, counts

    def candidate_paths(self, kg: KnowledgeGraph, task: QaTask) -> list:
        return [self._path_arrays(enumerate_paths(kg, task.question, a)) for a in task.answers]

    def _pooled(self, cand_paths, rel_table):
        """Mean path encoding per candidate; zero vector when a candidate has no paths."""
        H = self.cfg.hidden
        pooled = np.zeros((len(cand_paths), H))
        tapes = []
        for c, (r1, r2, counts) in enumerate(cand_paths):
            if len(r1) == 0:
                tapes.append(None)
                continue
            feats = np.concatenate([rel_table[r1], rel_table[r2]], axis=1)
            enc, tape = self.path_mlp.forward(feats)
            weights = counts / counts.sum()
            pooled[c] = weights @ enc
            tapes.append((r1, r2, weights, tape))
        return pooled, tapes

    def logits(self, cand_paths, graph_mode: str = "intact", rng=None, rel_table=None):
        rel_table = self.rel.value if rel_table is None else rel_table
        if graph_mode == "intact":
            pooled, _ = self._pooled(cand_paths, rel_table)
        elif graph_mode == "zero-graph-emb":
            pooled = np.zeros((len(cand_paths), self.cfg.hidden))
        elif graph_mode == "random-graph-emb":
            pooled = rng.standard_normal((len(cand_paths), self.cfg.hidden))
        else:
            raise ValueError(f"unknown graph mode {graph_mode!r}")
        return self.cls_mlp(pooled)[:, 0]

    def loss_and_grads(self, cand_paths, correct: int, scale: float = 1.0) -> float:
        """Cross-entropy of the k-way softmax; gradients accumulate (times ``scale``)."""
        pooled, tapes = self._pooled(cand_paths, self.rel.value)
        z, cls_tape = self.cls_mlp.forward(pooled)
        z = z[:, 0]
        p = softmax(z)
        zmax = z.max()
        loss = zmax + np.log(np.sum(np.exp(z - zmax))) - z[correct]
        dz = p.copy()
        dz[correct] -= 1.0
        dpooled = self.cls_mlp.backward(cls_tape, scale * dz[:, None])
        d = self.cfg.rel_dim
        for c, tape in enumerate(tapes):
            if tape is None:
                continue
            r1, r2, weights, path_tape = tape
            denc = np.outer(weights, dpooled[c])
            dfeat = self.path_mlp.backward(path_tape, denc)
            np.add.at(self.rel.grad, r1, dfeat[:, :d])
            np.add.at(self.rel.grad, r2, dfeat[:, d:])
        return float(loss)


def train_qa(kg: KnowledgeGraph, tasks: list[QaTask], cfg: QaConfig = QaConfig(), batch_size: int = 8) -> QaModel:
    if not tasks:
        raise ValueError("no training tasks")
    model = QaModel(kg.n_relations, cfg)
    paths = [model.candidate_paths(kg, t) for t in tasks]
    rng = np.random.default_rng([cfg.seed, 11])
    for _ in range(cfg.epochs):
        order = rng.permutation(len(tasks))
        for start in range(0, len(order), batch_size):
            idx = order[start:start + batch_size]
            for b in model.params:
                b.zero_grad()
            for i in idx:
                model.loss_and_grads(paths[i], tasks[i].correct, 1.0 / len(idx))
            adam_step(model.params, cfg.lr)
    model.frozen = True
    return model


def eval_qa(model: QaModel, kg: KnowledgeGraph, tasks: list[QaTask], graph_mode: str = "intact",
            seed: int = 0, rel_table=None) -> tuple[float, list[np.ndarray]]:
    """Accuracy (argmax, ties to the lowest index) and per-task answer distributions."""
    if not model.frozen:
        raise FrozenModelError("evaluate only frozen models")
    if kg.n_relations != model.n_relations:
        raise ValueError("KG relation vocabulary does not match the model")
    rng = np.random.default_rng(seed)
    dists, hits = [], 0
    for t in tasks:
        z = model.logits(model.candidate_paths(kg, t), graph_mode, rng, rel_table)
        p = softmax(z)
        dists.append(p)
        hits += int(np.argmax(z) == t.correct)
    return hits / len(tasks), dists


def mean_kl_to_dirac(dists, tasks) -> float:
    """KL(dirac(correct) || p) = -log p[correct], averaged over tasks."""
    return float(np.mean([-np.log(max(p[t.correct], KL_CLAMP)) for p, t in zip(dists, tasks)]))


def save_qa(model: QaModel, path) -> None:
    c = model.cfg
    header = f"{CHECKPOINT_HEADER} rel_dim={c.rel_dim} hidden={c.hidden} relations={model.n_relations}"
    Path(path).write_text("\n".join([header] + dump_blocks(model.params)) + "\n", encoding="utf-8")


def load_qa(path) -> QaModel:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines or not lines[0].startswith(CHECKPOINT_HEADER):
        raise ValueError(f"{path}: not a QA checkpoint")
    meta = dict(kv.split("=") for kv in lines[0].split()[2:])
    model = QaModel(int(meta["relations"]), QaConfig(rel_dim=int(meta["rel_dim"]), hidden=int(meta["hidden"])))
    load_blocks(lines[1:], model.params)
    model.frozen = True
    return model
