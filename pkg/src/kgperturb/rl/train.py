"""DQN training loop: replay, epsilon schedule, target syncing and the
final greedy rollout that yields the perturbed graph."""

from __future__ import annotations

import csv
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from ..kg import KnowledgeGraph
from ..nn import adam_step, format_float
from ..scorer import ScorerParams
from .env import KgEnv, select_action
from .policy import BellmanBatch, DqnPolicy, PolicyShape, bellman_loss, bellman_targets, pack_histories, run_state

CURVE_HEADER = ["step", "raw_reward", "scaled_reward", "task_statistic"]


@dataclass(frozen=True)
class RlTrainConfig:
    episodes: int = 3
    scale: float = 1.0
    max_steps: int = 0
    T: int = 20
    K: int = 8
    gamma: float = 0.95
    eps_start: float = 1.0
    eps_end: float = 0.05
    eps_decay_steps: int = 2000
    lr: float = 1e-3
    target_sync: int = 100
    batch_size: int = 16
    replay_capacity: int = 4096
    hidden: int = 32
    width: int = 32
    history_window: int = 32
    shuffle_recompute: int = 1
    reward_scale: float = 1.0
    reward_mode: str = "delta"
    er_variant: str = "non-neighbor"
    seed: int = 0

    def __post_init__(self):
        if self.T < 1 or self.K < 1:
            raise ValueError("T and K must be >= 1")
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError("gamma must lie in [0, 1]")
        if not (0.0 <= self.eps_start <= 1.0 and 0.0 <= self.eps_end <= 1.0):
            raise ValueError("epsilon must lie in [0, 1]")
        if self.episodes < 1 or self.batch_size < 1 or self.replay_capacity < self.batch_size:
            raise ValueError("need episodes >= 1 and replay capacity >= batch size")
        if self.target_sync < 1 or self.shuffle_recompute < 1 or self.history_window < 0:
            raise ValueError("invalid schedule parameters")
        if not 0.0 <= self.scale <= 1.0:
            raise ValueError("scale must lie in [0, 1]")

    def epsilon(self, step: int) -> float:
        if self.eps_decay_steps <= 0:
            return self.eps_end
        frac = min(1.0, step / self.eps_decay_steps)
        return self.eps_start + frac * (self.eps_end - self.eps_start)


@dataclass
class Transition:
    history: list
    n_hist: int
    e0: np.ndarray
    e1: np.ndarray
    e2: np.ndarray
    c2: np.ndarray
    reward: float
    done: bool = False
    e0n: np.ndarray | None = None
    c1n: np.ndarray | None = None
    perms: tuple = (None, None)
    perm_epoch: int = -1


class ReplayBuffer:
    def __init__(self, capacity: int):
        self.items: deque = deque(maxlen=capacity)

    def add(self, tr: Transition) -> None:
        self.items.append(tr)

    def __len__(self) -> int:
        return len(self.items)

    def sample(self, rng: np.random.Generator, n: int) -> list[Transition]:
        idx = rng.choice(len(self.items), size=n, replace=False)
        return [self.items[int(i)] for i in idx]


@dataclass
class TrainResult:
    policy: DqnPolicy
    kg: object
    record: object
    curve: list = field(default_factory=list)
    losses: list = field(default_factory=list)


def _window(tr: Transition, n: int, W: int) -> list:
    return tr.history[max(0, n - W):n]


def make_batch(batch: list[Transition], dx: int, W: int, rng: np.random.Generator, epoch: int) -> BellmanBatch:
    """Stack transitions; each history window is re-shuffled once per ``epoch``."""
    for tr in batch:
        if tr.perm_epoch != epoch:
            n_cur = min(W, tr.n_hist)
            n_next = min(W, tr.n_hist + 1)
            tr.perms = (rng.permutation(n_cur), rng.permutation(n_next))
            tr.perm_epoch = epoch
    cur = [_window(tr, tr.n_hist, W) for tr in batch]
    nxt = [_window(tr, tr.n_hist + 1, W) for tr in batch]
    X, mask = pack_histories(cur, dx, W, [tr.perms[0] for tr in batch])
    Xn, mask_n = pack_histories(nxt, dx, W, [tr.perms[1] for tr in batch])
    d0, d1 = batch[0].e0.shape[0], batch[0].e1.shape[0]
    c2_seg = np.concatenate([np.full(len(tr.c2), b) for b, tr in enumerate(batch)])
    live = [(b, tr) for b, tr in enumerate(batch) if not tr.done and tr.c1n is not None and len(tr.c1n)]
    c1n = np.concatenate([tr.c1n for _, tr in live]) if live else np.zeros((0, d1))
    c1n_seg = np.concatenate([np.full(len(tr.c1n), b) for b, tr in live]) if live else np.zeros(0, dtype=np.int64)
    e0n = np.stack([tr.e0n if tr.e0n is not None else np.zeros(d0) for tr in batch])
    return BellmanBatch(
        X=X, mask=mask,
        e0=np.stack([tr.e0 for tr in batch]), e1=np.stack([tr.e1 for tr in batch]),
        e2=np.stack([tr.e2 for tr in batch]),
        c2=np.concatenate([tr.c2 for tr in batch]), c2_seg=c2_seg.astype(np.int64),
        reward=np.array([tr.reward for tr in batch]), done=np.array([int(tr.done) for tr in batch]),
        Xn=Xn, mask_n=mask_n, e0n=e0n, c1n=c1n, c1n_seg=c1n_seg.astype(np.int64),
    )


def bellman_update(policy: DqnPolicy, batch: BellmanBatch, lr: float, gamma: float,
                   target_sync: int = 100) -> float:
    """One Adam step on both Bellman losses; targets are fully re-synced every ``target_sync`` updates."""
    y1, y2 = bellman_targets(policy.target, batch, gamma)
    for b in policy.params:
        b.zero_grad()
    loss = bellman_loss(policy.online, batch, y1, y2)[0]
    adam_step(policy.params, lr)
    policy.n_updates += 1
    if policy.n_updates % target_sync == 0:
        policy.sync()
    return loss


def current_state(policy: DqnPolicy, history: list, W: int) -> np.ndarray:
    X, mask = pack_histories([history[max(0, len(history) - W):]], policy.shape.dx, W)
    return run_state(policy.online, X, mask)[0][0]


def train_on_env(env, cfg: RlTrainConfig, variant: str = "RL-RR") -> TrainResult:
    """Train a fresh policy on ``env`` for ``cfg.episodes`` episodes, then roll out greedily."""
    d0, d1, d2, dx = env.dims
    policy = DqnPolicy(PolicyShape(d0, d1, d2, dx, cfg.hidden, cfg.width), seed=cfg.seed, variant=variant)
    rng = np.random.default_rng([cfg.seed, 1])
    replay = ReplayBuffer(cfg.replay_capacity)
    W = cfg.history_window
    curve, losses = [], []
    step = 0
    for _ in range(cfg.episodes):
        env.reset(rng)
        history: list = []
        pending: Transition | None = None
        n_ep = 0
        while True:
            s = current_state(policy, history, W)
            act = select_action(policy, env, s, cfg.epsilon(step), rng)
            if act is None:
                if pending is not None:
                    pending.done = True
                    replay.add(pending)
                break
            if pending is not None:
                pending.e0n = env.embed0([act.a0])[0]
                pending.c1n = env.embed1(act.c1)
                replay.add(pending)
            step += 1
            n_ep += 1
            reward, done, event = env.step(act, step)
            if event is not None:
                curve.append((step, event.raw, event.scaled, event.statistic))
            tr = Transition(history, len(history), env.embed0([act.a0])[0], env.embed1([act.a1])[0],
                            env.embed2([act.a2])[0], env.embed2(act.c2), 0.0 if reward is None else reward)
            if dx:
                history.append(env.embed_history(act))
            if done or (cfg.max_steps and n_ep >= cfg.max_steps):
                tr.done = True
                replay.add(tr)
                pending = None
            else:
                pending = tr
            if len(replay) >= cfg.batch_size:
                batch = make_batch(replay.sample(rng, cfg.batch_size), dx, W, rng,
                                   policy.n_updates // cfg.shuffle_recompute)
                losses.append(bellman_update(policy, batch, cfg.lr, cfg.gamma, cfg.target_sync))
            if pending is None:
                break
    kg, record = greedy_rollout(policy, env, cfg)
    return TrainResult(policy, kg, record, curve, losses)


def greedy_rollout(policy: DqnPolicy, env, cfg: RlTrainConfig):
    """Evaluation episode with epsilon = 0 and insertion-order states; seeded for exact reruns."""
    rng = np.random.default_rng([cfg.seed, 2])
    env.reset(rng)
    history: list = []
    n = 0
    while True:
        act = select_action(policy, env, current_state(policy, history, cfg.history_window), 0.0, rng)
        if act is None:
            break
        _, done, _ = env.step(act, None)
        if env.dims[3]:
            history.append(env.embed_history(act))
        n += 1
        if done or (cfg.max_steps and n >= cfg.max_steps):
            break
    return getattr(env, "kg", None), getattr(env, "record", None)


def train_policy(kg: KnowledgeGraph, evaluator, scorer: ScorerParams, variant: str = "RL-RR",
                 cfg: RlTrainConfig = RlTrainConfig()) -> TrainResult:
    env = make_env(kg, evaluator, scorer, variant, cfg)
    return train_on_env(env, cfg, variant)


def make_env(kg, evaluator, scorer, variant: str, cfg: RlTrainConfig) -> KgEnv:
    return KgEnv(kg, scorer, evaluator, variant, K=cfg.K, T=cfg.T, scale=cfg.scale, er_variant=cfg.er_variant,
                 reward_mode=cfg.reward_mode, reward_scale=cfg.reward_scale, seed=cfg.seed)


def write_reward_curve(curve, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CURVE_HEADER)
        for step, raw, scaled, stat in curve:
            w.writerow([int(step), format_float(raw), format_float(scaled), format_float(stat)])
