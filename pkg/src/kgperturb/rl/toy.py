"""Ten-state chain MDP exposed through the same subaction interface as the KG
environment, plus a value-iteration oracle for its optimal actions."""

from __future__ import annotations

import numpy as np

from .env import Action
from .policy import DqnPolicy, q1_scores

LEFT, RIGHT = 0, 1


class ChainEnv:
    """Positions ``0..n-1``; both ends are terminal and pay ``r_left`` / ``r_right``.

    Subaction 0 is the current position, subaction 1 the move and subaction 2 a
    single dummy choice. There is no action history, so the state vector is zero.
    """

    def __init__(self, n: int = 10, r_left: float = 0.2, r_right: float = 1.0):
        if n < 3:
            raise ValueError("chain needs at least 3 states")
        self.n, self.r_left, self.r_right = n, r_left, r_right
        self.dims = (n, 2, 1, 0)
        self.pos = n // 2
        self._eye = np.eye(n)

    def reset(self, rng: np.random.Generator) -> None:
        self.pos = int(rng.integers(1, self.n - 1))

    def sample_a0(self, rng) -> int:
        return self.pos

    def a1_candidates(self, a0) -> list[int]:
        return [LEFT, RIGHT]

    def a2_candidates(self, a0, a1) -> list[int]:
        return [0]

    def mark_dead(self, a0, a1) -> None:  # pragma: no cover - never triggered
        raise AssertionError("chain moves always have a substitute")

    def embed0(self, a0s) -> np.ndarray:
        return self._eye[np.asarray(a0s, dtype=np.int64)]

    def embed1(self, moves) -> np.ndarray:
        return np.eye(2)[np.asarray(moves, dtype=np.int64)]

    def embed2(self, a2s) -> np.ndarray:
        return np.ones((len(a2s), 1))

    def step(self, action: Action, global_step=None):
        self.pos += -1 if action.a1 == LEFT else 1
        if self.pos == 0:
            return self.r_left, True, None
        if self.pos == self.n - 1:
            return self.r_right, True, None
        return None, False, None


def chain_optimal_actions(n: int, r_left: float, r_right: float, discount: float, tol: float = 1e-12) -> np.ndarray:
    """Optimal move per interior position by value iteration (ties go left)."""
    V = np.zeros(n)

    def q(s):
        out = []
        for nxt in (s - 1, s + 1):
            r = r_left if nxt == 0 else r_right if nxt == n - 1 else 0.0
            terminal = nxt in (0, n - 1)
            out.append(r + (0.0 if terminal else discount * V[nxt]))
        return out

    while True:
        newV = V.copy()
        for s in range(1, n - 1):
            newV[s] = max(q(s))
        if np.max(np.abs(newV - V)) < tol:
            break
        V = newV
    return np.array([int(np.argmax(q(s))) for s in range(1, n - 1)])


def greedy_chain_actions(policy: DqnPolicy, env: ChainEnv) -> np.ndarray:
    s = np.zeros(policy.shape.hidden)
    moves = env.embed1([LEFT, RIGHT])
    return np.array([int(np.argmax(q1_scores(policy.online, s, env.embed0([p])[0], moves)))
                     for p in range(1, env.n - 1)])
