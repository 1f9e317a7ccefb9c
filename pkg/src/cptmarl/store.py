"""Per-agent experience dictionary keyed by (state, own action, aggregate)."""
from __future__ import annotations

import numpy as np

from .namg import aggregate_key


class ExperienceStore:
    """Append-only archive of ``(reward, next_state)`` samples.

    Keys are ``(state, own_action, aggregate)``; aggregates are binned on the
    agent's observable lattice ``grid`` so that float noise never splits a key.
    Samples live in dense per-key buffers that double in capacity as needed,
    which lets many keys be sampled in one vectorised draw.
    """

    def __init__(self, n_states: int, n_actions: int, grid, capacity: int = 64):
        self.grid = np.asarray(grid, dtype=float)
        self._lookup = {aggregate_key(v): k for k, v in enumerate(self.grid)}
        shape = (n_states, n_actions, self.grid.size)
        self.counts = np.zeros(shape, dtype=np.int64)
        self.reward_sums = np.zeros(shape)
        self._rewards = np.zeros(shape + (capacity,))
        self._next = np.zeros(shape + (capacity,), dtype=np.int64)

    def index(self, aggregate: float) -> int:
        return self._lookup[aggregate_key(aggregate)]

    def _reserve(self, needed: int) -> None:
        cap = self._rewards.shape[-1]
        if needed <= cap:
            return
        while cap < needed:
            cap *= 2
        pad = [(0, 0)] * 3 + [(0, cap - self._rewards.shape[-1])]
        self._rewards = np.pad(self._rewards, pad)
        self._next = np.pad(self._next, pad)

    def push(self, state: int, action: int, aggregate: float, reward: float, next_state: int) -> None:
        self.push_index(state, action, self.index(aggregate), reward, next_state)

    def push_index(self, state: int, action: int, k: int, rewards, next_states) -> None:
        rewards = np.atleast_1d(np.asarray(rewards, dtype=float))
        next_states = np.atleast_1d(np.asarray(next_states, dtype=np.int64))
        key = (int(state), int(action), int(k))
        n = int(self.counts[key])
        self._reserve(n + rewards.size)
        self._rewards[key][n:n + rewards.size] = rewards
        self._next[key][n:n + rewards.size] = next_states
        self.counts[key] += rewards.size
        self.reward_sums[key] += rewards.sum()

    def count(self, state: int, action: int, aggregate: float) -> int:
        return int(self.counts[state, action, self.index(aggregate)])

    def entries(self, state: int, action: int, aggregate: float) -> list[tuple[float, int]]:
        key = (state, action, self.index(aggregate))
        n = int(self.counts[key])
        return list(zip(self._rewards[key][:n].tolist(), self._next[key][:n].tolist()))

    def sample_index(self, state: int, action: int, k: int, size: int, rng: np.random.Generator):
        n = int(self.counts[state, action, k])
        if n == 0:
            raise KeyError(f"no samples stored for {(state, action, k)}")
        pick = rng.integers(0, n, size=size)
        return self._rewards[state, action, k, pick], self._next[state, action, k, pick]

    def sample_many(self, state: int, actions, ks, u):
        """Read one stored sample per (action, k) pair, choosing entries by uniforms ``u``."""
        n = self.counts[state, actions, ks]
        pick = np.minimum((u * n).astype(np.int64), n - 1)
        return self._rewards[state, actions, ks, pick], self._next[state, actions, ks, pick]

    def mean_rewards(self) -> np.ndarray:
        """(S, A, K) per-key mean reward, NaN where nothing has been stored."""
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(self.counts > 0, self.reward_sums / np.maximum(self.counts, 1), np.nan)

    def __len__(self) -> int:
        return int(self.counts.sum())

    def keys(self):
        return [tuple(int(i) for i in key) for key in np.argwhere(self.counts > 0)]
