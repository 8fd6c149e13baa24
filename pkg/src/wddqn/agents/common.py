"""Configuration and small helpers shared by all agents."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class AgentConfig:
    gamma: float = 0.99
    c: float = 0.1
    epsilon_start: float = 1.0
    epsilon_end: float = 0.01
    epsilon_steps: int = 10_000
    batch_size: int = 32
    lr: float = 1e-4
    target_sync_interval: int = 500
    q_hidden: tuple = (128, 128)
    lrn_hidden: tuple = (64, 64)
    memory_capacity: int = 8192
    use_lrn: bool = True
    use_srs: bool = True
    alpha: float = 0.1  # tabular step size

    def __post_init__(self):
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError("gamma must lie in [0, 1]")
        if not self.c > 0:
            raise ValueError("c must be positive")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        self.q_hidden = tuple(self.q_hidden)
        self.lrn_hidden = tuple(self.lrn_hidden)


def epsilon_at(step: int, config: AgentConfig) -> float:
    """Linear anneal from ``epsilon_start`` to ``epsilon_end`` over ``epsilon_steps``."""
    if step >= config.epsilon_steps:
        return config.epsilon_end
    frac = step / config.epsilon_steps
    return config.epsilon_start + frac * (config.epsilon_end - config.epsilon_start)


def greedy(row: np.ndarray, rng: np.random.Generator) -> int:
    """Argmax with ties broken uniformly at random."""
    best = np.flatnonzero(row == row.max())
    if len(best) == 1:
        return int(best[0])
    return int(rng.choice(best))


def compute_beta(row, a_star: int, c: float, a_low: int | None = None) -> float:
    """Weight on the single estimator: ``d / (c + d)``.

    ``d = |row[a_star] - row[a_low]|`` where ``row`` is the evaluator's values
    at s'. ``a_low`` defaults to the row's own argmin; the learners pass the
    chooser's argmin instead, which keeps the weighted estimate between the
    single and double estimates.
    """
    row = np.asarray(row, dtype=float)
    if not c > 0:
        raise ValueError("c must be positive")
    if a_low is None:
        a_low = int(np.argmin(row))
    spread = abs(float(row[a_star]) - float(row[a_low]))
    return spread / (c + spread)


def compute_beta_rows(rows: np.ndarray, a_star: np.ndarray, c: float, a_low: np.ndarray | None = None) -> np.ndarray:
    """Row-wise ``compute_beta``."""
    idx = np.arange(len(rows))
    low = rows.min(axis=1) if a_low is None else rows[idx, a_low]
    spread = np.abs(rows[idx, a_star] - low)
    return spread / (c + spread)
