"""Hierarchical DQN: an LSTM state embedding over past actions and two
factored Q functions, one per subaction level, each an inner product of a
candidate head and a state head."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..nn import LstmCell, Mlp, ParamBlock, UpdateError, copy_values, dump_blocks, load_blocks

CHECKPOINT_HEADER = "kgperturb-dqn v1"


@dataclass(frozen=True)
class PolicyShape:
    """Embedding widths: d0 head entity, d1 chosen edge, d2 substitution, dx one history item."""

    d0: int
    d1: int
    d2: int
    dx: int
    hidden: int = 32
    width: int = 32


class QNet:
    def __init__(self, shape: PolicyShape, rng: np.random.Generator, prefix: str = ""):
        H, w = shape.hidden, shape.width
        self.shape = shape
        self.state_cell = LstmCell(shape.dx, H, rng, f"{prefix}state") if shape.dx > 0 else None
        self.cell1 = LstmCell(shape.d0, H, rng, f"{prefix}q1.cell")
        self.cand1 = Mlp([shape.d1, w, w], rng, f"{prefix}q1.cand")
        self.head1 = Mlp([H, w, w], rng, f"{prefix}q1.state")
        self.cell2 = LstmCell(shape.d1 + shape.d0, H, rng, f"{prefix}q2.cell")
        self.cand2 = Mlp([shape.d2, w, w], rng, f"{prefix}q2.cand")
        self.head2 = Mlp([H, w, w], rng, f"{prefix}q2.state")

    @property
    def params(self) -> list[ParamBlock]:
        out = list(self.state_cell.params) if self.state_cell else []
        for m in (self.cell1, self.cand1, self.head1, self.cell2, self.cand2, self.head2):
            out += m.params
        return out


class DqnPolicy:
    def __init__(self, shape: PolicyShape, seed: int = 0, variant: str = "RL-RR"):
        rng = np.random.default_rng(seed)
        self.shape = shape
        self.variant = variant
        self.online = QNet(shape, rng)
        self.target = QNet(shape, rng, prefix="target.")
        self.sync()
        self.n_updates = 0

    def sync(self) -> None:
        copy_values(self.online.params, self.target.params)

    @property
    def params(self) -> list[ParamBlock]:
        return self.online.params


# -- state embedding ---------------------------------------------------------
def pack_histories(histories, dx: int, window: int, perms=None):
    """Right-align the last ``window`` items of each history into ``(B, W, dx)`` plus a mask.

    ``perms`` optionally reorders each windowed history (training-time shuffles).
    """
    B = len(histories)
    W = min(window, max((len(h) for h in histories), default=0))
    X = np.zeros((B, W, dx))
    mask = np.zeros((B, W), dtype=bool)
    for b, h in enumerate(histories):
        items = h[max(0, len(h) - W):]
        if not items:
            continue
        arr = np.asarray(items, dtype=np.float64)
        if perms is not None and perms[b] is not None:
            arr = arr[perms[b]]
        X[b, W - len(arr):] = arr
        mask[b, W - len(arr):] = True
    return X, mask


def run_state(net: QNet, X, mask):
    """Masked LSTM pass from the zero state; padded steps leave (h, c) untouched."""
    B, W = mask.shape
    H = net.shape.hidden
    h = np.zeros((B, H))
    c = np.zeros((B, H))
    tapes = []
    if net.state_cell is None:
        return h, tapes
    for t in range(W):
        if not mask[:, t].any():
            continue
        hn, cn, tape = net.state_cell.forward(X[:, t], h, c)
        m = mask[:, t:t + 1]
        h = np.where(m, hn, h)
        c = np.where(m, cn, c)
        tapes.append((tape, m))
    return h, tapes


def run_state_backward(net: QNet, tapes, dS) -> None:
    dh = dS
    dc = np.zeros_like(dS)
    for tape, m in reversed(tapes):
        _, dh_prev, dc_prev = net.state_cell.backward(tape, dh * m, dc * m)
        dh = np.where(m, dh_prev, dh)
        dc = np.where(m, dc_prev, dc)


def state_embed(policy: DqnPolicy, history, window: int = 32, net: QNet | None = None) -> np.ndarray:
    """State vector for one history of embedded actions, fed in the given order."""
    net = net or policy.online
    X, mask = pack_histories([history], policy.shape.dx, window)
    return run_state(net, X, mask)[0][0]


# -- Q functions -------------------------------------------------------------
def inner_q(cand_mlp: Mlp, state_mlp: Mlp, cand_emb, h) -> np.ndarray:
    cand_emb = np.atleast_2d(np.asarray(cand_emb, dtype=np.float64))
    if cand_emb.shape[0] == 0:
        raise ValueError("empty candidate list")
    return cand_mlp(cand_emb) @ state_mlp(np.asarray(h, dtype=np.float64))


def q1_scores(net: QNet, s, e0, cand1) -> np.ndarray:
    H = net.shape.hidden
    h1 = net.cell1.forward(e0, s, np.zeros(H))[0]
    return inner_q(net.cand1, net.head1, cand1, h1)


def q2_scores(net: QNet, s, e0, e1, cand2) -> np.ndarray:
    H = net.shape.hidden
    h2 = net.cell2.forward(np.concatenate([e1, e0]), s, np.zeros(H))[0]
    return inner_q(net.cand2, net.head2, cand2, h2)


# -- Bellman regression ------------------------------------------------------
@dataclass
class BellmanBatch:
    """Numeric view of a transition batch.

    ``c2``/``c2_seg`` hold the stacked current-step substitution candidates and
    their row owner; ``c1n``/``c1n_seg`` the next-step edge candidates.
    """

    X: np.ndarray
    mask: np.ndarray
    e0: np.ndarray
    e1: np.ndarray
    e2: np.ndarray
    c2: np.ndarray
    c2_seg: np.ndarray
    reward: np.ndarray
    done: np.ndarray
    Xn: np.ndarray
    mask_n: np.ndarray
    e0n: np.ndarray
    c1n: np.ndarray
    c1n_seg: np.ndarray


def _segment_max(values, seg, n_rows):
    out = np.full(n_rows, -np.inf)
    np.maximum.at(out, seg, values)
    return out


def bellman_targets(net: QNet, batch: BellmanBatch, gamma: float) -> tuple[np.ndarray, np.ndarray]:
    """y1 = gamma * max_a2 Q2'(s, a0, a1, a2); y2 = r + gamma * (1 - done) * max_a1' Q1'(s', a0', a1')."""
    B = len(batch.e0)
    H = net.shape.hidden
    zeros = np.zeros((B, H))
    S = run_state(net, batch.X, batch.mask)[0]
    h2 = net.cell2.forward(np.concatenate([batch.e1, batch.e0], axis=1), S, zeros)[0]
    g2 = net.head2(h2)
    q2 = np.sum(net.cand2(batch.c2) * g2[batch.c2_seg], axis=1)
    y1 = gamma * _segment_max(q2, batch.c2_seg, B)
    y2 = batch.reward.astype(np.float64).copy()
    live = (batch.done == 0)
    if live.any() and len(batch.c1n):
        Sn = run_state(net, batch.Xn, batch.mask_n)[0]
        h1n = net.cell1.forward(batch.e0n, Sn, zeros)[0]
        g1 = net.head1(h1n)
        q1n = np.sum(net.cand1(batch.c1n) * g1[batch.c1n_seg], axis=1)
        best = _segment_max(q1n, batch.c1n_seg, B)
        y2[live] += gamma * best[live]
    if not (np.all(np.isfinite(y1)) and np.all(np.isfinite(y2))):
        raise UpdateError("non-finite Bellman target")
    return y1, y2


def bellman_loss(net: QNet, batch: BellmanBatch, y1, y2, backward: bool = True) -> tuple[float, float, float]:
    """Mean squared Bellman errors of both levels; gradients accumulate when ``backward``.

    Returns ``(total, loss1, loss2)``.
    """
    B = len(batch.e0)
    H = net.shape.hidden
    zeros = np.zeros((B, H))
    S, st_tapes = run_state(net, batch.X, batch.mask)
    h1, _, tp1 = net.cell1.forward(batch.e0, S, zeros)
    f1, tf1 = net.cand1.forward(batch.e1)
    g1, tg1 = net.head1.forward(h1)
    q1 = np.sum(f1 * g1, axis=1)
    x2 = np.concatenate([batch.e1, batch.e0], axis=1)
    h2, _, tp2 = net.cell2.forward(x2, S, zeros)
    f2, tf2 = net.cand2.forward(batch.e2)
    g2, tg2 = net.head2.forward(h2)
    q2 = np.sum(f2 * g2, axis=1)
    l1 = float(np.mean((q1 - y1) ** 2))
    l2 = float(np.mean((q2 - y2) ** 2))
    if not np.isfinite(l1 + l2):
        raise UpdateError("non-finite Bellman loss")
    if backward:
        dq1 = (2.0 / B) * (q1 - y1)[:, None]
        dq2 = (2.0 / B) * (q2 - y2)[:, None]
        net.cand1.backward(tf1, dq1 * g1)
        dS = net.cell1.backward(tp1, net.head1.backward(tg1, dq1 * f1))[1]
        net.cand2.backward(tf2, dq2 * g2)
        dS = dS + net.cell2.backward(tp2, net.head2.backward(tg2, dq2 * f2))[1]
        if st_tapes:
            run_state_backward(net, st_tapes, dS)
    return l1 + l2, l1, l2


# -- checkpoint --------------------------------------------------------------
def save_policy(policy: DqnPolicy, path) -> None:
    s = policy.shape
    header = (f"{CHECKPOINT_HEADER} variant={policy.variant} d0={s.d0} d1={s.d1} d2={s.d2} dx={s.dx} "
              f"hidden={s.hidden} width={s.width} updates={policy.n_updates}")
    lines = [header] + dump_blocks(policy.online.params + policy.target.params)
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_policy(path) -> DqnPolicy:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines or not lines[0].startswith(CHECKPOINT_HEADER):
        raise ValueError(f"{path}: not a DQN checkpoint")
    meta = dict(kv.split("=", 1) for kv in lines[0].split()[2:])
    shape = PolicyShape(*(int(meta[k]) for k in ("d0", "d1", "d2", "dx", "hidden", "width")))
    policy = DqnPolicy(shape, variant=meta["variant"])
    load_blocks(lines[1:], policy.online.params + policy.target.params)
    policy.n_updates = int(meta["updates"])
    return policy
