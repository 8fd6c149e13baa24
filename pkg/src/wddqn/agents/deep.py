"""Deep agents: WDDQN (twin cross-evaluating Q-networks with a lenient reward
network and scheduled replay) and the DQN / double DQN / lenient DQN baselines.

Every agent exposes the same interface to the harness::

    a = agent.act(s_enc, s_key)
    agent.observe(transition)
    metrics = agent.learn()
    agent.end_episode()
"""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from ..lenient import (LeniencyParams, LenientRewardNet, RewardStats, TemperatureTable,
                       decay_temperature, lrn_update)
from ..nn import AdamState, Batch, DenseNet, copy_params, forward, load_params, net_init, save_params, train_batch
from ..replay import (EpisodicMemory, PrioritySchedule, SumTreeMemory, Transition,
                      TransitionBatch, UniformMemory)
from .common import AgentConfig, compute_beta_rows, epsilon_at, greedy

_NAN = float("nan")


def select_action(nets, s_enc, epsilon: float, rng: np.random.Generator) -> int:
    """Epsilon-greedy on the mean of the given networks' outputs."""
    n_actions = nets[0].n_outputs
    if rng.random() < epsilon:
        return int(rng.integers(n_actions))
    row = forward(nets[0], s_enc)
    if len(nets) > 1:
        for net in nets[1:]:
            row = row + forward(net, s_enc)
        row = row / len(nets)
    return greedy(row, rng)


def weighted_target(batch: TransitionBatch, chooser: DenseNet, evaluator: DenseNet,
                    lrn: LenientRewardNet | None, config: AgentConfig, return_beta: bool = False):
    """Targets ``R(s,a) + gamma * (b * chooser(s',a*) + (1-b) * evaluator(s',a*))``.

    ``a*`` maximises the chooser at ``s'``; ``b`` comes from the evaluator's
    spread between ``a*`` and the chooser's lowest-valued action. ``R`` is the
    reward-net estimate, or the raw reward when ``lrn`` is None. Terminal items
    get no bootstrap.
    """
    q_choose = forward(chooser, batch.next_states)
    q_eval = forward(evaluator, batch.next_states)
    idx = np.arange(len(batch))
    a_star = np.argmax(q_choose, axis=1)
    beta = compute_beta_rows(q_eval, a_star, config.c, a_low=np.argmin(q_choose, axis=1))
    q_w = q_eval[idx, a_star] + beta * (q_choose[idx, a_star] - q_eval[idx, a_star])
    if lrn is None:
        rewards = batch.rewards
    else:
        rewards = lrn.predict_batch(batch.states, batch.actions)
    targets = rewards + config.gamma * np.where(batch.terminals, 0.0, q_w)
    return (targets, beta) if return_beta else targets


def ddqn_target(batch: TransitionBatch, online: DenseNet, target: DenseNet, gamma: float) -> np.ndarray:
    """Online net picks the next action, target net evaluates it."""
    a_star = np.argmax(forward(online, batch.next_states), axis=1)
    q_next = forward(target, batch.next_states)[np.arange(len(batch)), a_star]
    return batch.rewards + gamma * np.where(batch.terminals, 0.0, q_next)


def dqn_target(batch: TransitionBatch, target: DenseNet, gamma: float) -> np.ndarray:
    q_next = forward(target, batch.next_states).max(axis=1)
    return batch.rewards + gamma * np.where(batch.terminals, 0.0, q_next)


def _mean_or_nan(values) -> float:
    return float(np.mean(values)) if len(values) else _NAN


class WddqnAgent:
    """Twin Q-networks that evaluate each other through a weighted double estimator.

    ``config.use_lrn`` replaces raw rewards in targets with the lenient reward
    network; ``config.use_srs`` inserts finished episodes with rising
    priorities instead of a flat ``p_max``.
    """

    def __init__(self, input_dim: int, n_actions: int, config: AgentConfig | None = None,
                 leniency: LeniencyParams | None = None, schedule: PrioritySchedule | None = None,
                 rng: np.random.Generator | None = None):
        self.config = config or AgentConfig()
        self.leniency = leniency or LeniencyParams()
        self.schedule = schedule or PrioritySchedule()
        self.rng = rng if rng is not None else np.random.default_rng()
        sizes = (input_dim, *self.config.q_hidden, n_actions)
        self.qU = net_init(sizes, self.rng)
        self.qV = net_init(sizes, self.rng)
        self.adam_u = AdamState.for_net(self.qU, lr=self.config.lr)
        self.adam_v = AdamState.for_net(self.qV, lr=self.config.lr)
        self.lrn = None
        if self.config.use_lrn:
            self.lrn = LenientRewardNet(input_dim, n_actions, self.rng,
                                        hidden=self.config.lrn_hidden, lr=self.config.lr)
        self.global_memory = SumTreeMemory(self.config.memory_capacity)
        self.episodic = EpisodicMemory()
        self.temp_table = TemperatureTable(n_actions, self.leniency.max_temperature)
        self.stats = RewardStats()
        self.steps = 0
        self.u_updates = 0
        self.v_updates = 0

    @property
    def n_actions(self) -> int:
        return self.qU.n_outputs

    @property
    def epsilon(self) -> float:
        return epsilon_at(self.steps, self.config)

    def act(self, s_enc, s_key=None, epsilon: float | None = None) -> int:
        eps = self.epsilon if epsilon is None else epsilon
        return select_action((self.qU, self.qV), s_enc, eps, self.rng)

    def observe(self, t: Transition) -> None:
        self.episodic.append(t)
        self.stats.record(t.state_key, t.action, t.reward)
        self.steps += 1

    def learn(self) -> dict:
        cfg = self.config
        if len(self.global_memory) < cfg.batch_size:
            return {}
        batch, ids, _ = self.global_memory.sample(cfg.batch_size, self.rng)
        train_u = bool(self.rng.random() < 0.5)
        if train_u:
            chooser, evaluator, adam = self.qU, self.qV, self.adam_u
            self.u_updates += 1
        else:
            chooser, evaluator, adam = self.qV, self.qU, self.adam_v
            self.v_updates += 1
        targets, beta = weighted_target(batch, chooser, evaluator, self.lrn, cfg, return_beta=True)
        loss, preds = train_batch(chooser, Batch(batch.states, batch.actions, targets), adam,
                                  return_predictions=True)
        self.global_memory.update_priorities(ids, targets - preds)

        lrn_loss = _NAN
        if self.lrn is not None:
            lrn_loss = lrn_update(self.lrn, batch.state_keys, batch.states, batch.actions,
                                  self.stats, self.temp_table, self.leniency, self.rng)
        return {
            "loss_u": loss if train_u else _NAN,
            "loss_v": _NAN if train_u else loss,
            "loss_lrn": lrn_loss,
            "beta": float(beta.mean()),
        }

    def end_episode(self) -> None:
        if not len(self.episodic):
            return
        self.global_memory.push_trajectory(self.episodic, self.schedule if self.config.use_srs else None)
        if self.lrn is not None:
            for t in self.episodic:
                decay_temperature(self.temp_table, t.state_key, t.action, t.next_state_key,
                                  t.terminal, self.leniency)
        self.episodic.clear()

    # -- checkpoints -------------------------------------------------------

    def save(self, directory) -> None:
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        save_params(self.qU, d / "q_u.bin")
        save_params(self.qV, d / "q_v.bin")
        if self.lrn is not None:
            save_params(self.lrn.net, d / "lrn.bin")
        save_tables(d / "tables.json", self.temp_table, self.stats)

    def load(self, directory) -> None:
        d = Path(directory)
        copy_params(load_params(d / "q_u.bin"), self.qU)
        copy_params(load_params(d / "q_v.bin"), self.qV)
        if self.lrn is not None:
            copy_params(load_params(d / "lrn.bin"), self.lrn.net)
        self.temp_table, self.stats = load_tables(d / "tables.json", self.n_actions,
                                                  self.leniency.max_temperature)


class DqnAgent:
    """Uniform-replay DQN with a periodically synced target network.

    ``kind`` selects the target: ``dqn`` (max over the target net), ``ddqn``
    (online argmax, target evaluation) or ``lenient`` (DQN targets, with
    negative-error items dropped from the loss by the leniency gate).
    """

    KINDS = ("dqn", "ddqn", "lenient")

    def __init__(self, input_dim: int, n_actions: int, kind: str = "ddqn",
                 config: AgentConfig | None = None, leniency: LeniencyParams | None = None,
                 rng: np.random.Generator | None = None):
        if kind not in self.KINDS:
            raise ValueError(f"unknown baseline kind {kind!r}")
        self.kind = kind
        self.config = config or AgentConfig()
        self.leniency = leniency or LeniencyParams()
        self.rng = rng if rng is not None else np.random.default_rng()
        sizes = (input_dim, *self.config.q_hidden, n_actions)
        self.online = net_init(sizes, self.rng)
        self.target = net_init(sizes, self.rng)
        copy_params(self.online, self.target)
        self.adam = AdamState.for_net(self.online, lr=self.config.lr)
        self.memory = UniformMemory(self.config.memory_capacity)
        self.temp_table = TemperatureTable(n_actions, self.leniency.max_temperature)
        self.steps = 0

    @property
    def n_actions(self) -> int:
        return self.online.n_outputs

    @property
    def epsilon(self) -> float:
        return epsilon_at(self.steps, self.config)

    def act(self, s_enc, s_key=None, epsilon: float | None = None) -> int:
        eps = self.epsilon if epsilon is None else epsilon
        return select_action((self.online,), s_enc, eps, self.rng)

    def observe(self, t: Transition) -> None:
        self.memory.push(t)
        if self.kind == "lenient":
            decay_temperature(self.temp_table, t.state_key, t.action, t.next_state_key,
                              t.terminal, self.leniency)
        self.steps += 1
        if self.steps % self.config.target_sync_interval == 0:
            copy_params(self.online, self.target)

    def learn(self) -> dict:
        cfg = self.config
        if len(self.memory) < cfg.batch_size:
            return {}
        batch, _, _ = self.memory.sample(cfg.batch_size, self.rng)
        if self.kind == "ddqn":
            targets = ddqn_target(batch, self.online, self.target, cfg.gamma)
        else:
            targets = dqn_target(batch, self.target, cfg.gamma)
        states, actions = batch.states, batch.actions
        if self.kind == "lenient":
            preds = forward(self.online, states)[np.arange(len(batch)), actions]
            delta = targets - preds
            lens = np.array([self.temp_table.leniency(k, a, self.leniency.K)
                             for k, a in zip(batch.state_keys, actions)])
            keep = (delta > 0) | (self.rng.random(len(batch)) > lens)
            if not keep.any():
                return {"loss_u": _NAN, "loss_v": _NAN, "loss_lrn": _NAN, "beta": _NAN}
            states, actions, targets = states[keep], actions[keep], targets[keep]
        loss = train_batch(self.online, Batch(states, actions, targets), self.adam)
        return {"loss_u": loss, "loss_v": _NAN, "loss_lrn": _NAN, "beta": _NAN}

    def end_episode(self) -> None:
        pass

    def save(self, directory) -> None:
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        save_params(self.online, d / "online.bin")
        save_params(self.target, d / "target.bin")
        save_tables(d / "tables.json", self.temp_table, RewardStats())

    def load(self, directory) -> None:
        d = Path(directory)
        copy_params(load_params(d / "online.bin"), self.online)
        copy_params(load_params(d / "target.bin"), self.target)
        self.temp_table, _ = load_tables(d / "tables.json", self.n_actions,
                                         self.leniency.max_temperature)


def _plain(key):
    if isinstance(key, tuple):
        return [_plain(k) for k in key]
    return key


def _hashable(obj):
    if isinstance(obj, list):
        return tuple(_hashable(o) for o in obj)
    return obj


def save_tables(path, temps: TemperatureTable, stats: RewardStats) -> None:
    """Key-value dump of temperatures and reward statistics as JSON."""
    doc = {
        "temperatures": [[_plain(s), a, T] for s, a, T in temps.items()],
        "reward_stats": [[_plain(s), a, n, mean] for s, a, n, mean in stats.items()],
    }
    Path(path).write_text(json.dumps(doc), encoding="utf-8")


def load_tables(path, n_actions: int, max_temperature: float):
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    temps = TemperatureTable(n_actions, max_temperature)
    for s, a, T in doc["temperatures"]:
        temps.set(_hashable(s), a, T)
    stats = RewardStats()
    for s, a, n, mean in doc["reward_stats"]:
        stats._stats[(_hashable(s), a)] = (n, mean)
    return temps, stats
