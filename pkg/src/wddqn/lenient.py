"""Leniency: temperatures, the optimistic TD gate, reward statistics and the
lenient reward network (a learned per-(state, action) expected reward that
forgives negative corrections while temperatures are still high).
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .nn import AdamState, Batch, DenseNet, forward, net_init, train_batch


class MissingStatsError(KeyError):
    pass


@dataclass(frozen=True)
class LeniencyParams:
    K: float = 2.0
    kappa: float = 0.95
    eta: float = 0.6
    max_temperature: float = 1.0
    # True applies the reward-net gate as "x < l" instead of "x > l"
    literal_lrn_gate: bool = False

    def __post_init__(self):
        if not self.K > 0:
            raise ValueError("K must be positive")
        if not (0.0 <= self.kappa <= 1.0 and 0.0 <= self.eta <= 1.0):
            raise ValueError("kappa and eta must lie in [0, 1]")
        if self.max_temperature < 0:
            raise ValueError("max_temperature must be >= 0")


def leniency(T: float, K: float) -> float:
    """``1 - exp(-K T)``: how likely a negative update is forgiven."""
    if T < 0:
        raise ValueError("temperature must be >= 0")
    return -math.expm1(-K * T)


def lenient_q_gate(delta: float, l: float, x: float) -> bool:
    """Apply the update? Positive errors always; negative ones only when x > l."""
    return delta > 0 or x > l


class TemperatureTable:
    def __init__(self, n_actions: int, max_temperature: float = 1.0):
        self.n_actions = n_actions
        self.max_temperature = max_temperature
        self._temps: dict = {}

    def get(self, s_key, a: int) -> float:
        row = self._temps.get(s_key)
        return self.max_temperature if row is None else row[a]

    def mean(self, s_key) -> float:
        row = self._temps.get(s_key)
        return self.max_temperature if row is None else sum(row) / self.n_actions

    def set(self, s_key, a: int, T: float) -> None:
        row = self._temps.get(s_key)
        if row is None:
            row = self._temps[s_key] = [self.max_temperature] * self.n_actions
        row[a] = T

    def leniency(self, s_key, a: int, K: float) -> float:
        return leniency(self.get(s_key, a), K)

    def items(self):
        for s_key, row in self._temps.items():
            for a, T in enumerate(row):
                yield s_key, a, T

    def __len__(self):
        return len(self._temps)


def decay_temperature(table: TemperatureTable, s_key, a: int, next_key, terminal: bool,
                      params: LeniencyParams) -> float:
    """Discount T(s, a), folding in the successor's mean temperature unless terminal."""
    T = table.get(s_key, a)
    if terminal:
        new_T = params.kappa * T
    else:
        new_T = params.kappa * ((1.0 - params.eta) * T + params.eta * table.mean(next_key))
    # folding in a hotter successor must not re-heat the pair
    new_T = min(new_T, T)
    table.set(s_key, a, new_T)
    return new_T


class RewardStats:
    """Running mean of the immediate reward per (state, action)."""

    def __init__(self):
        self._stats: dict = {}

    def record(self, s_key, a: int, r: float) -> float:
        if not math.isfinite(r):
            raise ValueError(f"non-finite reward {r}")
        n, mean = self._stats.get((s_key, a), (0, 0.0))
        n += 1
        mean += (r - mean) / n
        self._stats[(s_key, a)] = (n, mean)
        return mean

    def mean(self, s_key, a: int) -> float:
        try:
            return self._stats[(s_key, a)][1]
        except KeyError:
            raise MissingStatsError((s_key, a)) from None

    def count(self, s_key, a: int) -> int:
        entry = self._stats.get((s_key, a))
        return 0 if entry is None else entry[0]

    def __contains__(self, key) -> bool:
        return key in self._stats

    def items(self):
        for (s_key, a), (n, mean) in self._stats.items():
            yield s_key, a, n, mean


def record_reward(stats: RewardStats, s_key, a: int, r: float) -> float:
    return stats.record(s_key, a, r)


class LenientRewardNet:
    """Dense regressor of the expected immediate reward, one output per action."""

    def __init__(self, input_dim: int, n_actions: int, rng: np.random.Generator,
                 hidden=(64, 64), lr: float = 1e-4):
        self.net: DenseNet = net_init((input_dim, *hidden, n_actions), rng)
        self.adam = AdamState.for_net(self.net, lr=lr)

    @property
    def n_actions(self) -> int:
        return self.net.n_outputs

    def predict(self, s_enc, a: int) -> float:
        return float(forward(self.net, s_enc)[a])

    def predict_batch(self, states: np.ndarray, actions: np.ndarray) -> np.ndarray:
        return forward(self.net, states)[np.arange(len(actions)), actions]


def lrn_predict(lrn: LenientRewardNet, s_enc, a: int) -> float:
    return lrn.predict(s_enc, a)


def lrn_update(lrn: LenientRewardNet, s_keys, s_encs, actions, stats: RewardStats,
               table: TemperatureTable | None, params: LeniencyParams,
               rng: np.random.Generator) -> float:
    """One lenient regression step toward the per-pair mean rewards.

    Items whose correction is negative are kept only if a uniform draw clears
    the pair's leniency. ``table=None`` disables leniency entirely. Returns the
    loss over the kept items (0.0 if none were kept).
    """
    actions = np.asarray(actions, dtype=np.intp)
    s_encs = np.atleast_2d(np.asarray(s_encs, dtype=float))
    targets = np.array([stats.mean(k, a) for k, a in zip(s_keys, actions)])
    preds = lrn.predict_batch(s_encs, actions)
    delta = targets - preds
    if table is None:
        keep = np.ones(len(actions), dtype=bool)
    else:
        l = np.array([table.leniency(k, a, params.K) for k, a in zip(s_keys, actions)])
        x = rng.random(len(actions))
        passes = x < l if params.literal_lrn_gate else x > l
        keep = (delta > 0) | passes
    if not keep.any():
        return 0.0
    return train_batch(lrn.net, Batch(s_encs[keep], actions[keep], targets[keep]), lrn.adam)


def lenient_q_update(q, transition, table: TemperatureTable, params: LeniencyParams,
                     alpha: float, gamma: float, rng: np.random.Generator) -> bool:
    """Tabular lenient Q-learning step on ``q`` (a ``TabularQ``-like table).

    ``q`` needs ``value(s, a)``, ``row(s)`` and ``set(s, a, v)``. Returns whether
    the update was applied; the pair's temperature is decayed either way.
    """
    s, a = transition.state_key, transition.action
    bootstrap = 0.0 if transition.terminal else gamma * max(q.row(transition.next_state_key))
    delta = transition.reward + bootstrap - q.value(s, a)
    l = table.leniency(s, a, params.K)
    applied = lenient_q_gate(delta, l, rng.random())
    if applied:
        q.set(s, a, q.value(s, a) + alpha * delta)
    decay_temperature(table, s, a, transition.next_state_key, transition.terminal, params)
    return applied


def dump_leniency(path, table: TemperatureTable, stats: RewardStats,
                  lrn: LenientRewardNet | None, params: LeniencyParams, encode=None) -> None:
    """Debug CSV of ``state_key, action, T, l, mean_reward, lrn_estimate``.

    ``encode`` maps a state key to its feature vector; without it the LRN
    column is left empty.
    """
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["state_key", "action", "temperature", "leniency", "mean_reward", "lrn_estimate"])
        for s_key, a, n, mean in stats.items():
            T = table.get(s_key, a)
            est = "" if lrn is None or encode is None else repr(lrn.predict(encode(s_key), a))
            writer.writerow([repr(s_key), a, repr(T), repr(leniency(T, params.K)), repr(mean), est])
