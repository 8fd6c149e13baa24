"""Experience replay: a sum-tree prioritized memory with trajectory-scheduled
insertion priorities, plus a plain uniform ring buffer for the baselines.

Items are addressed by an insertion id (a monotonically increasing integer).
The slot of id ``k`` is ``k % capacity``; an id is stale once the slot has been
overwritten, which ``update_priority`` detects and rejects.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Any, Iterable, Sequence

import numpy as np

PRIORITY_FLOOR = 1e-3


class ReplayError(Exception):
    pass


class UnderfilledMemoryError(ReplayError):
    pass


class StaleIndexError(ReplayError, IndexError):
    pass


@dataclass(frozen=True)
class Transition:
    state_enc: Any
    action: int
    reward: float
    next_state_enc: Any
    terminal: bool
    state_key: Any = None
    next_state_key: Any = None


@dataclass
class TransitionBatch:
    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    next_states: np.ndarray
    terminals: np.ndarray
    state_keys: list
    next_state_keys: list

    def __len__(self):
        return len(self.actions)


class EpisodicMemory:
    """Transitions of the episode in progress, in arrival order."""

    def __init__(self):
        self.transitions: list[Transition] = []

    def append(self, t: Transition) -> None:
        if not math.isfinite(t.reward):
            raise ValueError(f"non-finite reward {t.reward}")
        if self.transitions and self.transitions[-1].terminal:
            raise ValueError("episode already holds its terminal transition")
        self.transitions.append(t)

    def clear(self) -> None:
        self.transitions = []

    def __len__(self):
        return len(self.transitions)

    def __iter__(self):
        return iter(self.transitions)

    def __getitem__(self, i):
        return self.transitions[i]


@dataclass(frozen=True)
class PrioritySchedule:
    rho_c: float = 0.2
    u: float = 1.1
    w_max: float = 10.0

    def __post_init__(self):
        if not self.u > 1:
            raise ValueError("rising rate u must exceed 1")
        if not self.rho_c > 0:
            raise ValueError("rho_c must be positive")
        if not self.w_max >= 1:
            raise ValueError("w_max must be >= 1")


def schedule_weights(n: int, sched: PrioritySchedule = PrioritySchedule()) -> np.ndarray:
    """Rising weights ``exp(rho_c * u**i)`` for i = 0..n-1, clamped at ``w_max``.

    The exponent is clamped in log space so long trajectories never overflow.
    """
    if n < 1:
        raise ValueError("trajectory length must be >= 1")
    cap = math.log(sched.w_max)
    # rho_c * u**i > cap  <=>  i > log(cap / rho_c) / log(u); evaluate only below that
    i = np.arange(n, dtype=float)
    i_cap = math.log(cap / sched.rho_c) / math.log(sched.u) if cap > sched.rho_c else 0.0
    expo = np.full(n, cap)
    below = i < i_cap
    expo[below] = np.minimum(sched.rho_c * sched.u ** i[below], cap)
    # exp(log(w_max)) can round one ulp above w_max
    return np.minimum(np.exp(expo), sched.w_max)


class _Storage:
    """Circular array storage shared by both memories."""

    def __init__(self, capacity: int):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = int(capacity)
        self.size = 0
        self.next_id = 0
        self._states = None
        self._next_states = None
        self._actions = np.zeros(self.capacity, dtype=np.intp)
        self._rewards = np.zeros(self.capacity)
        self._terminals = np.zeros(self.capacity, dtype=bool)
        self._keys: list = [None] * self.capacity
        self._next_keys: list = [None] * self.capacity

    def __len__(self):
        return self.size

    def _write(self, t: Transition) -> int:
        s = np.asarray(t.state_enc, dtype=float)
        if self._states is None:
            self._states = np.zeros((self.capacity, s.size))
            self._next_states = np.zeros((self.capacity, s.size))
        elif s.size != self._states.shape[1]:
            raise ValueError(f"state encoding has {s.size} entries, memory holds {self._states.shape[1]}")
        if not math.isfinite(t.reward):
            raise ValueError(f"non-finite reward {t.reward}")
        slot = self.next_id % self.capacity
        self._states[slot] = s
        self._next_states[slot] = np.asarray(t.next_state_enc, dtype=float)
        self._actions[slot] = t.action
        self._rewards[slot] = t.reward
        self._terminals[slot] = t.terminal
        self._keys[slot] = t.state_key
        self._next_keys[slot] = t.next_state_key
        self.next_id += 1
        self.size = min(self.size + 1, self.capacity)
        return slot

    def _gather(self, slots: np.ndarray) -> TransitionBatch:
        return TransitionBatch(
            states=self._states[slots],
            actions=self._actions[slots],
            rewards=self._rewards[slots],
            next_states=self._next_states[slots],
            terminals=self._terminals[slots],
            state_keys=[self._keys[i] for i in slots],
            next_state_keys=[self._next_keys[i] for i in slots],
        )

    def _ids_for(self, slots: np.ndarray) -> np.ndarray:
        # id of the live item in each slot
        base = self.next_id - self.next_id % self.capacity
        ids = base + slots
        return np.where(ids >= self.next_id, ids - self.capacity, ids)

    def get(self, item_id: int) -> Transition:
        slot = self._slot(item_id)
        return Transition(self._states[slot].copy(), int(self._actions[slot]),
                          float(self._rewards[slot]), self._next_states[slot].copy(),
                          bool(self._terminals[slot]), self._keys[slot], self._next_keys[slot])

    def _slot(self, item_id: int) -> int:
        item_id = int(item_id)
        if not (self.next_id - self.size <= item_id < self.next_id):
            raise StaleIndexError(f"item {item_id} is not stored (live ids "
                                  f"{self.next_id - self.size}..{self.next_id - 1})")
        return item_id % self.capacity


class SumTreeMemory(_Storage):
    """Proportional prioritized replay over a binary sum-tree.

    ``tree[1]`` is the root; leaves live at ``tree[leaf0 + slot]``. The tree is
    padded to a power of two so every leaf sits at the same depth.
    """

    def __init__(self, capacity: int = 8192):
        super().__init__(capacity)
        self.depth = max(1, math.ceil(math.log2(self.capacity)))
        self.leaf0 = 1 << self.depth
        self.tree = np.zeros(2 * self.leaf0)

    @property
    def total(self) -> float:
        return float(self.tree[1])

    @property
    def leaf_priorities(self) -> np.ndarray:
        return self.tree[self.leaf0:self.leaf0 + self.capacity]

    @property
    def p_max(self) -> float:
        """Largest priority currently stored (1 for an empty memory)."""
        if self.size == 0:
            return 1.0
        return float(self.leaf_priorities.max())

    def _set_leaves(self, slots, priorities) -> None:
        nodes = np.asarray(slots, dtype=np.intp) + self.leaf0
        self.tree[nodes] = priorities
        for _ in range(self.depth):
            # duplicate parents just recompute the same sum
            nodes = nodes >> 1
            self.tree[nodes] = self.tree[2 * nodes] + self.tree[2 * nodes + 1]

    def push(self, t: Transition, priority: float) -> int:
        if not priority > 0:
            raise ValueError("priority must be positive")
        item_id = self.next_id
        slot = self._write(t)
        self._set_leaves([slot], [priority])
        return item_id

    def push_trajectory(self, episode: Iterable[Transition],
                        sched: PrioritySchedule | None = PrioritySchedule()) -> list[int]:
        """Insert an episode with priorities ``p_max * w_i``.

        ``p_max`` is read once, before the first insertion. With ``sched=None``
        every transition gets ``p_max`` (plain prioritized replay insertion).
        """
        items = list(episode)
        if not items:
            raise ValueError("cannot push an empty episode")
        p_max = self.p_max
        if sched is None:
            weights = np.ones(len(items))
        else:
            weights = schedule_weights(len(items), sched)
        ids = []
        slots = []
        for t in items:
            ids.append(self.next_id)
            slots.append(self._write(t))
        # later items win when an episode longer than capacity wraps around
        keep = {s: i for i, s in enumerate(slots)}
        order = sorted(keep.values())
        self._set_leaves([slots[i] for i in order], p_max * weights[order])
        return ids

    def sample(self, batch_size: int, rng: np.random.Generator):
        """Draw ``batch_size`` items with replacement, P(j) = p_j / sum(p).

        Returns ``(batch, ids, probabilities)``.
        """
        if self.size < batch_size or self.size == 0:
            raise UnderfilledMemoryError(f"memory holds {self.size} < {batch_size} items")
        slots = self._descend(rng.random(batch_size) * self.total)
        bad = self.tree[self.leaf0 + slots] <= 0.0
        while bad.any():
            # rounding at a subtree boundary can land on an empty padding leaf
            slots[bad] = self._descend(rng.random(int(bad.sum())) * self.total)
            bad = self.tree[self.leaf0 + slots] <= 0.0
        probs = self.tree[self.leaf0 + slots] / self.total
        return self._gather(slots), self._ids_for(slots), probs

    def _descend(self, values: np.ndarray) -> np.ndarray:
        idx = np.ones(len(values), dtype=np.intp)
        v = values.copy()
        for _ in range(self.depth):
            left = 2 * idx
            left_sum = self.tree[left]
            go_right = v >= left_sum
            v = np.where(go_right, v - left_sum, v)
            idx = left + go_right
        return idx - self.leaf0

    def update_priority(self, item_id: int, td_error: float) -> float:
        priority = abs(float(td_error)) + PRIORITY_FLOOR
        self._set_leaves([self._slot(item_id)], [priority])
        return priority

    def update_priorities(self, item_ids: Sequence[int], td_errors) -> np.ndarray:
        """Vectorised ``update_priority``; duplicate ids keep the last error."""
        slots = np.array([self._slot(i) for i in item_ids], dtype=np.intp)
        priorities = np.abs(np.asarray(td_errors, dtype=float)) + PRIORITY_FLOOR
        self._set_leaves(slots, priorities)
        return priorities

    def rebuild(self) -> None:
        """Recompute every internal node from the leaves."""
        for level in range(self.depth - 1, -1, -1):
            lo, hi = 1 << level, 1 << (level + 1)
            nodes = np.arange(lo, hi)
            self.tree[lo:hi] = self.tree[2 * nodes] + self.tree[2 * nodes + 1]

    def check_consistency(self) -> float:
        """Largest |node - (left + right)| over internal nodes."""
        nodes = np.arange(1, self.leaf0)
        return float(np.max(np.abs(self.tree[nodes] - self.tree[2 * nodes] - self.tree[2 * nodes + 1])))

    def dump_priorities(self, path) -> None:
        """Debug CSV of ``(index, priority)`` for every stored item, oldest first."""
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["index", "priority"])
            for item_id in range(self.next_id - self.size, self.next_id):
                writer.writerow([item_id, repr(float(self.tree[self.leaf0 + item_id % self.capacity]))])


class UniformMemory(_Storage):
    """FIFO ring buffer with uniform sampling (DQN-style replay)."""

    def __init__(self, capacity: int = 8192):
        super().__init__(capacity)

    def push(self, t: Transition) -> int:
        item_id = self.next_id
        self._write(t)
        return item_id

    def sample(self, batch_size: int, rng: np.random.Generator):
        if self.size < batch_size or self.size == 0:
            raise UnderfilledMemoryError(f"memory holds {self.size} < {batch_size} items")
        slots = rng.integers(0, self.size, size=batch_size)
        probs = np.full(batch_size, 1.0 / self.size)
        return self._gather(slots), self._ids_for(slots), probs
