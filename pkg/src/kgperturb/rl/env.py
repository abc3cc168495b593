"""Perturbation environment seen by the DQN: subaction candidate sets,
edit application, delayed scaled rewards and epsilon-greedy selection."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..kg import KnowledgeGraph, apply_edits
from ..perturb import MAX_RETRIES, PerturbationRecord, n_touches, rewire_candidates
from ..scorer import NoLegalSubaction, ScorerParams, k_lowest_score_candidates
from .policy import DqnPolicy, q1_scores, q2_scores

VARIANTS = ("RL-RR", "RL-ER")
REWARD_FLOOR = 1e-6


class RewardTracker:
    """Running mean of |raw reward|, used to rescale rewards to ``scale_target``."""

    def __init__(self, scale_target: float = 1.0, mode: str = "delta", floor: float = REWARD_FLOOR):
        if scale_target <= 0:
            raise ValueError("scale_target must be positive")
        if mode not in ("delta", "absolute"):
            raise ValueError(f"unknown reward mode {mode!r}")
        self.scale_target = scale_target
        self.mode = mode
        self.floor = floor
        self.mean_abs = 0.0
        self.n_events = 0
        self.previous = None

    def scale(self, raw: float) -> float:
        self.n_events += 1
        self.mean_abs += (abs(raw) - self.mean_abs) / self.n_events
        return raw * self.scale_target / max(self.mean_abs, self.floor)


@dataclass(frozen=True)
class RewardEvent:
    raw: float
    scaled: float
    statistic: float


def compute_reward(tracker: RewardTracker, evaluator, kg: KnowledgeGraph, step: int, T: int) -> RewardEvent | None:
    """Reward every ``T`` steps: the improvement of the evaluator's statistic since the last event."""
    if T < 1:
        raise ValueError("T must be >= 1")
    if step % T != 0:
        return None
    stat = float(evaluator.statistic(kg))
    if tracker.mode == "absolute":
        raw = stat
    elif evaluator.higher_is_better:
        raw = stat - tracker.previous
    else:
        raw = tracker.previous - stat
    tracker.previous = stat
    return RewardEvent(raw, tracker.scale(raw), stat)


@dataclass
class Action:
    a0: object
    a1: object
    a2: object
    c1: list
    c2: list


class KgEnv:
    """One episode touches ``ceil(scale * |T|)`` distinct original edges of ``kg``.

    RL-RR replaces the relation of the chosen edge; RL-ER rewires its tail. The
    substitution candidates are cut to the ``K`` lowest scorer values before the
    policy ranks them.
    """

    def __init__(self, kg: KnowledgeGraph, scorer: ScorerParams, evaluator, variant: str = "RL-RR", K: int = 8,
                 T: int = 20, scale: float = 1.0, er_variant: str = "non-neighbor", reward_mode: str = "delta",
                 reward_scale: float = 1.0, seed: int = 0):
        if variant not in VARIANTS:
            raise ValueError(f"unknown variant {variant!r}")
        if er_variant not in ("non-neighbor", "neighbor"):
            raise ValueError(f"unknown RL-ER variant {er_variant!r}")
        if K < 1 or T < 1:
            raise ValueError("K and T must be >= 1")
        self.original = kg
        self.scorer = scorer
        self.evaluator = evaluator
        self.variant = variant
        self.K, self.T, self.scale = K, T, scale
        self.er_variant = er_variant
        self.seed = seed
        self.tracker = RewardTracker(reward_scale, reward_mode)
        d = scorer.dim
        self.dims = (d, 2 * d, d, 4 * d)
        self._baseline = None
        self.reset()

    # -- episode state ------------------------------------------------------
    def reset(self, rng=None) -> None:
        self.kg = self.original
        self.untouched = set(self.original.triples)
        self.dead: set = set()
        self.steps = 0
        self.budget = n_touches(self.scale, len(self.original))
        self.record = PerturbationRecord(self.variant, self.seed, self.scale)
        if self.evaluator is not None:
            if self._baseline is None:
                self._baseline = float(self.evaluator.statistic(self.original))
            self.tracker.previous = self._baseline

    def _live_edges(self, head=None):
        pool = (tr for tr in self.untouched if tr not in self.dead)
        if head is not None:
            pool = (tr for tr in pool if tr[0] == head)
        return pool

    def heads(self) -> list[int]:
        return sorted({tr[0] for tr in self._live_edges()})

    def sample_a0(self, rng: np.random.Generator):
        if self.steps >= self.budget:
            return None
        heads = self.heads()
        if not heads:
            return None
        return heads[int(rng.integers(len(heads)))]

    def a1_candidates(self, a0) -> list:
        return sorted(self._live_edges(a0))

    def a2_candidates(self, a0, a1) -> list:
        h, r, t = a1
        kg = self.kg
        if self.variant == "RL-RR":
            cands = [q for q in range(kg.n_relations) if q != r and (h, q, t) not in kg]
            context = ("relation", h, t)
        else:
            if self.er_variant == "non-neighbor":
                cands = rewire_candidates(kg, h, r)
            else:
                cands = sorted(e for e in kg.neighbors(h) if e not in (h, t) and (h, r, e) not in kg)
            context = ("tail", h, r)
        if not cands:
            return []
        return sorted(k_lowest_score_candidates(self.scorer, cands, context, self.K))

    def mark_dead(self, a0, a1) -> None:
        self.dead.add(a1)
        self.record.skipped += 1

    # -- embeddings ---------------------------------------------------------
    def embed0(self, a0s) -> np.ndarray:
        return self.scorer.entity_emb[np.asarray(a0s, dtype=np.int64)]

    def embed1(self, edges) -> np.ndarray:
        e = np.asarray(edges, dtype=np.int64).reshape(-1, 3)
        return np.concatenate([self.scorer.relation_emb[e[:, 1]], self.scorer.entity_emb[e[:, 2]]], axis=1)

    def embed2(self, a2s) -> np.ndarray:
        table = self.scorer.relation_emb if self.variant == "RL-RR" else self.scorer.entity_emb
        return table[np.asarray(a2s, dtype=np.int64)]

    def embed_history(self, action: Action) -> np.ndarray:
        return np.concatenate([self.embed0([action.a0])[0], self.embed1([action.a1])[0], self.embed2([action.a2])[0]])

    # -- transition ---------------------------------------------------------
    def step(self, action: Action, global_step: int | None = None):
        h, r, t = action.a1
        new = (h, action.a2, t) if self.variant == "RL-RR" else (h, r, action.a2)
        edit = ((action.a1,), (new,))
        self.kg = apply_edits(self.kg, *edit)
        self.record.edits.append(edit)
        self.untouched.discard(action.a1)
        self.steps += 1
        event = None
        if global_step is not None and self.evaluator is not None:
            event = compute_reward(self.tracker, self.evaluator, self.kg, global_step, self.T)
        done = self.steps >= self.budget or not self.heads()
        return (event.scaled if event else None), done, event


def _eps_pick(scores_fn, n: int, eps: float, rng: np.random.Generator) -> int:
    if rng.random() < eps:
        return int(rng.integers(n))
    return int(np.argmax(scores_fn()))


def select_action(policy: DqnPolicy, env, s, eps: float, rng: np.random.Generator) -> Action | None:
    """Epsilon-greedy over each subaction level; ``None`` once no head can be sampled.

    Candidate lists are ascending by id so greedy ties go to the lowest id. A
    chosen edge without substitutes is retired and the draw repeats.
    """
    if not 0.0 <= eps <= 1.0:
        raise ValueError("epsilon must lie in [0, 1]")
    net = policy.online
    for _ in range(MAX_RETRIES):
        a0 = env.sample_a0(rng)
        if a0 is None:
            return None
        c1 = env.a1_candidates(a0)
        e0 = env.embed0([a0])[0]
        i = _eps_pick(lambda: q1_scores(net, s, e0, env.embed1(c1)), len(c1), eps, rng)
        a1 = c1[i]
        c2 = env.a2_candidates(a0, a1)
        if not c2:
            env.mark_dead(a0, a1)
            continue
        e1 = env.embed1([a1])[0]
        j = _eps_pick(lambda: q2_scores(net, s, e0, e1, env.embed2(c2)), len(c2), eps, rng)
        return Action(a0, a1, c2[j], c1, c2)
    raise NoLegalSubaction(f"no legal substitution after {MAX_RETRIES} draws")
