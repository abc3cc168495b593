"""Noisy-embedding baselines and the frozen evaluators used as reward sources."""

from __future__ import annotations

import numpy as np

from ..kg import KnowledgeGraph
from .qa import QaModel, eval_qa, mean_kl_to_dirac
from .recommender import FrozenModelError, RecModel, eval_auc
from .world import Interactions, QaTask

NOISY_MODES = ("zero-graph-emb", "random-graph-emb", "random-kg-emb", "random-neighborhood")


class ModeMismatch(ValueError):
    pass


def random_neighborhood(kg: KnowledgeGraph, seed: int = 0):
    """Neighbour lookup where every entity keeps its relations but gets uniformly drawn partners."""
    rng = np.random.default_rng(seed)
    table = {}
    for e in range(kg.n_entities):
        inc = kg.incident(e)
        others = rng.integers(kg.n_entities, size=len(inc))
        table[e] = [(r, int(o)) for (r, _), o in zip(inc, others)]
    return table.__getitem__


def noisy_baseline_eval(model, kg: KnowledgeGraph, mode: str, data, split: str = "test", seed: int = 0) -> float:
    """Score a frozen model with its graph pathway replaced by noise.

    ``data`` is an :class:`Interactions` for a recommender (returns AUC) or a
    list of :class:`QaTask` for a QA model (returns accuracy).
    """
    if mode not in NOISY_MODES:
        raise ValueError(f"unknown noisy mode {mode!r}")
    if not model.frozen:
        raise FrozenModelError("evaluate only frozen models")
    rng = np.random.default_rng(seed)
    if isinstance(model, RecModel):
        if mode in ("zero-graph-emb", "random-graph-emb"):
            return eval_auc(model, kg, data, split, graph_mode=mode, seed=seed)
        if mode == "random-kg-emb":
            E = rng.standard_normal(model.entities.shape)
            R = rng.standard_normal(model.relations.shape)
            return eval_auc(model, kg, data, split, E=E, R=R)
        return eval_auc(model, kg, data, split, nbrs=random_neighborhood(kg, seed))
    if isinstance(model, QaModel):
        if mode == "random-neighborhood":
            raise ModeMismatch("random-neighborhood applies to the recommender only")
        if mode == "random-kg-emb":
            return eval_qa(model, kg, data, rel_table=rng.standard_normal(model.rel.shape))[0]
        return eval_qa(model, kg, data, graph_mode=mode, seed=seed)[0]
    raise TypeError(f"unsupported model type {type(model).__name__}")


class RecommenderEvaluator:
    """Frozen recommender seen as g(G): ``statistic`` is dev AUC, higher is better."""

    higher_is_better = True

    def __init__(self, model: RecModel, interactions: Interactions, split: str = "dev"):
        if not model.frozen:
            raise FrozenModelError("evaluator needs a frozen model")
        self.model = model
        self.interactions = interactions
        self.split = split

    def statistic(self, kg: KnowledgeGraph) -> float:
        return eval_auc(self.model, kg, self.interactions, self.split)

    def score(self, kg: KnowledgeGraph) -> float:
        return eval_auc(self.model, kg, self.interactions, "test")


class QaEvaluator:
    """Frozen QA model seen as g(G): ``statistic`` is mean KL to the correct answer, lower is better."""

    higher_is_better = False

    def __init__(self, model: QaModel, tasks: list[QaTask], test_tasks: list[QaTask] | None = None):
        if not model.frozen:
            raise FrozenModelError("evaluator needs a frozen model")
        self.model = model
        self.tasks = tasks
        self.test_tasks = tasks if test_tasks is None else test_tasks

    def statistic(self, kg: KnowledgeGraph) -> float:
        _, dists = eval_qa(self.model, kg, self.tasks)
        return mean_kl_to_dirac(dists, self.tasks)

    def score(self, kg: KnowledgeGraph) -> float:
        return eval_qa(self.model, kg, self.test_tasks)[0]
