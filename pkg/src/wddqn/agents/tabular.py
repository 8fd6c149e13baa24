"""Tabular Q-learning, double Q-learning and weighted double Q-learning."""
from __future__ import annotations

import numpy as np

from ..lenient import TemperatureTable, lenient_q_update
from .common import compute_beta, epsilon_at, greedy

SINGLE = "single"
DOUBLE = "double"
WEIGHTED = "weighted"
VARIANTS = (SINGLE, DOUBLE, WEIGHTED)


class TabularQ:
    """Q tables keyed by state; unseen pairs read 0.

    ``single`` uses one table (``u``); ``double`` and ``weighted`` keep two.
    """

    def __init__(self, n_actions: int, variant: str = SINGLE):
        if variant not in VARIANTS:
            raise ValueError(f"unknown variant {variant!r}")
        self.n_actions = n_actions
        self.variant = variant
        self.u: dict = {}
        self.v: dict | None = None if variant == SINGLE else {}

    def _row(self, table: dict, s) -> np.ndarray:
        row = table.get(s)
        if row is None:
            row = table[s] = np.zeros(self.n_actions)
        return row

    def row(self, s) -> np.ndarray:
        """Action values used for acting: the table itself, or the U/V mean."""
        if self.v is None:
            return self._row(self.u, s)
        return 0.5 * (self._row(self.u, s) + self._row(self.v, s))

    def value(self, s, a: int) -> float:
        return float(self.row(s)[a])

    def set(self, s, a: int, value: float) -> None:
        if self.v is not None:
            raise TypeError("set() is only defined for single-table Q")
        self._row(self.u, s)[a] = value

    def tables(self):
        return (self.u,) if self.v is None else (self.u, self.v)


def tabular_update(tq: TabularQ, transition, alpha: float, gamma: float, c: float,
                   rng: np.random.Generator | None = None, update_u: bool | None = None) -> None:
    """One TD update of ``tq`` from ``transition`` (keys are read from ``state_key``).

    For two-table variants a fair coin picks the updated table unless
    ``update_u`` fixes it.
    """
    s, a, r = transition.state_key, transition.action, transition.reward
    s2, done = transition.next_state_key, transition.terminal

    if tq.variant == SINGLE:
        q = tq._row(tq.u, s)
        boot = 0.0 if done else gamma * float(np.max(tq._row(tq.u, s2)))
        q[a] += alpha * (r + boot - q[a])
        return

    if update_u is None:
        update_u = bool(rng.random() < 0.5)
    own, other = (tq.u, tq.v) if update_u else (tq.v, tq.u)
    q = tq._row(own, s)
    if done:
        boot = 0.0
    else:
        own_next = tq._row(own, s2)
        other_next = tq._row(other, s2)
        a_star = int(np.argmax(own_next))
        if tq.variant == DOUBLE:
            boot = gamma * other_next[a_star]
        else:
            beta = compute_beta(other_next, a_star, c, a_low=int(np.argmin(own_next)))
            # evaluator + beta * (chooser - evaluator): exact when the two agree
            boot = gamma * (other_next[a_star] + beta * (own_next[a_star] - other_next[a_star]))
    q[a] += alpha * (r + boot - q[a])


class TabularAgent:
    """Epsilon-greedy tabular learner with the harness act/observe/learn interface.

    ``variant`` is one of the tabular variants or ``"lenient"`` (single table
    updated through the lenient gate).
    """

    def __init__(self, n_actions: int, variant: str, config, leniency_params,
                 rng: np.random.Generator):
        self.lenient = variant == "lenient"
        self.q = TabularQ(n_actions, SINGLE if self.lenient else variant)
        self.config = config
        self.params = leniency_params
        self.rng = rng
        self.steps = 0
        self.temps = TemperatureTable(n_actions, leniency_params.max_temperature) if self.lenient else None

    @property
    def epsilon(self) -> float:
        return epsilon_at(self.steps, self.config)

    def act(self, s_enc, s_key) -> int:
        if self.rng.random() < self.epsilon:
            return int(self.rng.integers(self.q.n_actions))
        return greedy(self.q.row(s_key), self.rng)

    def observe(self, t) -> None:
        self.steps += 1
        if self.lenient:
            lenient_q_update(self.q, t, self.temps, self.params, self.config.alpha,
                             self.config.gamma, self.rng)
        else:
            tabular_update(self.q, t, self.config.alpha, self.config.gamma, self.config.c, self.rng)

    def learn(self) -> dict:
        return {}

    def end_episode(self) -> None:
        pass
