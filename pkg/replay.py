"""Proportional prioritized experience replay on an array-backed sum-tree."""
import logging
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from models import ReplayConfig
from schemas import ReplayError

logger = logging.getLogger(__name__)


class SumTree:
    """Binary tree in an array: leaves hold priorities, every parent the sum of its two children."""

    def __init__(self, size: int):
        self.size = size
        self.nodes = np.zeros(2 * size - 1)

    @property
    def total(self) -> float:
        return float(self.nodes[0])

    def leaf(self, slot: int) -> float:
        return float(self.nodes[slot + self.size - 1])

    def leaves(self) -> np.ndarray:
        return self.nodes[self.size - 1:]

    def update(self, slot: int, value: float) -> None:
        idx = slot + self.size - 1
        self.nodes[idx] = value
        while idx > 0:
            idx = (idx - 1) // 2
            self.nodes[idx] = self.nodes[2 * idx + 1] + self.nodes[2 * idx + 2]

    def find(self, cumsum: float) -> int:
        """Slot whose cumulative priority interval contains cumsum; empty leaves are never returned."""
        idx = 0
        while 2 * idx + 1 < self.nodes.size:
            left, right = 2 * idx + 1, 2 * idx + 2
            if self.nodes[left] > 0 and (cumsum <= self.nodes[left] or self.nodes[right] <= 0):
                idx = left
            else:
                cumsum -= self.nodes[left]
                idx = right
        return idx - (self.size - 1)


@dataclass
class ReplayBatch:
    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    next_states: np.ndarray
    indices: np.ndarray    # global insertion ordinals
    weights: np.ndarray    # importance-sampling weights, max 1

    def __len__(self) -> int:
        return int(self.actions.size)


class PerBuffer:
    """Ring storage of (s, a, r, s') with priorities p_i; sampled with P(i) = p_i^a / sum p_j^a."""

    def __init__(self, cfg: ReplayConfig, state_dim: int, total_steps: int = 1):
        self.capacity = cfg.capacity
        self.alpha = cfg.alpha
        self.beta_start = cfg.beta_start
        self.beta_end = cfg.beta_end
        self.priority_epsilon = cfg.priority_epsilon
        self.total_steps = max(int(total_steps), 1)

        self.tree = SumTree(self.capacity)
        self.states = np.zeros((self.capacity, state_dim))
        self.actions = np.zeros(self.capacity, dtype=int)
        self.rewards = np.zeros(self.capacity)
        self.next_states = np.zeros((self.capacity, state_dim))
        self.ordinals = np.full(self.capacity, -1, dtype=np.int64)
        self.raw_priorities = np.zeros(self.capacity)

        self.pushed = 0
        self.max_priority = 1.0
        self.stale_updates = 0

    def __len__(self) -> int:
        return min(self.pushed, self.capacity)

    def beta_at(self, step: int) -> float:
        """Importance exponent annealed linearly over the whole training run."""
        fraction = min(max(step / self.total_steps, 0.0), 1.0)
        return self.beta_start + fraction * (self.beta_end - self.beta_start)

    def priority(self, ordinal: int) -> float:
        return float(self.raw_priorities[ordinal % self.capacity])

    def push(self, state: np.ndarray, action: int, reward: float, next_state: np.ndarray) -> None:
        slot = self.pushed % self.capacity
        self.states[slot] = state
        self.actions[slot] = action
        self.rewards[slot] = reward
        self.next_states[slot] = next_state
        self.ordinals[slot] = self.pushed
        self.raw_priorities[slot] = self.max_priority
        self.tree.update(slot, self.max_priority ** self.alpha)
        self.pushed += 1

    def probabilities(self) -> np.ndarray:
        leaves = self.tree.leaves()[: len(self)]
        return leaves / self.tree.total

    def sample(self, batch_size: int, rng: np.random.Generator, beta: Optional[float] = None) -> ReplayBatch:
        size = len(self)
        if size < batch_size:
            raise ReplayError(f"Buffer holds {size} transitions, batch needs {batch_size}")
        beta = self.beta_start if beta is None else beta

        total = self.tree.total
        segment = total / batch_size
        slots = np.empty(batch_size, dtype=int)
        for i in range(batch_size):
            slots[i] = self.tree.find(rng.uniform(segment * i, segment * (i + 1)))

        probs = self.tree.nodes[slots + self.capacity - 1] / total
        weights = (size * probs) ** (-beta)
        weights = weights / weights.max()
        return ReplayBatch(
            states=self.states[slots].copy(),
            actions=self.actions[slots].copy(),
            rewards=self.rewards[slots].copy(),
            next_states=self.next_states[slots].copy(),
            indices=self.ordinals[slots].copy(),
            weights=weights,
        )

    def update_priorities(self, indices: Sequence[int], td_abs: Sequence[float]) -> None:
        for ordinal, td in zip(indices, td_abs):
            ordinal = int(ordinal)
            if ordinal < 0 or ordinal >= self.pushed:
                raise ReplayError(f"Replay index {ordinal} was never inserted")
            if ordinal < self.pushed - self.capacity:
                self.stale_updates += 1
                continue
            p = abs(float(td)) + self.priority_epsilon
            self.max_priority = max(self.max_priority, p)
            self.raw_priorities[ordinal % self.capacity] = p
            self.tree.update(ordinal % self.capacity, p ** self.alpha)
        if self.stale_updates:
            logger.debug(f"Ignored {self.stale_updates} stale priority updates so far")
