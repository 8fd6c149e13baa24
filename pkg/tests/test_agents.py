import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from wddqn.agents import (AgentConfig, DqnAgent, TabularAgent, TabularQ, WddqnAgent, compute_beta,
                          compute_beta_rows, ddqn_target, dqn_target, epsilon_at, greedy,
                          select_action, tabular_update, weighted_target)
from wddqn.checks import estimator_bias, estimator_bias_reference
from wddqn.lenient import LeniencyParams
from wddqn.nn import DenseNet, copy_params, forward, net_init
from wddqn.replay import PRIORITY_FLOOR, Transition, TransitionBatch, schedule_weights


def const_net(row):
    """One-layer net whose output is ``row`` for every input (zero weights)."""
    row = np.asarray(row, dtype=float)
    return DenseNet((2, len(row)), [np.zeros((2, len(row)))], [row.copy()])


def batch_of(n, rewards=None, terminals=None, dim=2):
    return TransitionBatch(np.ones((n, dim)), np.zeros(n, dtype=np.intp),
                           np.zeros(n) if rewards is None else np.asarray(rewards, float),
                           np.ones((n, dim)),
                           np.zeros(n, bool) if terminals is None else np.asarray(terminals),
                           [None] * n, [None] * n)


# -- beta --------------------------------------------------------------------

def test_beta_examples():
    assert compute_beta([2.0, 2.0, 2.0], 1, 0.1) == 0.0
    assert compute_beta([1.0, 0.5], 0, 0.1) == pytest.approx(0.5 / 0.6)
    assert compute_beta([1e9, 0.0], 0, 0.1) == pytest.approx(1.0)
    assert compute_beta([1e9, 0.0], 0, 0.1) < 1.0
    with pytest.raises(ValueError):
        compute_beta([1.0, 0.0], 0, 0.0)


def test_beta_reference_action():
    # spread measured against a given low action instead of the row minimum
    assert compute_beta([1.0, 0.5, -3.0], 0, 0.1, a_low=1) == pytest.approx(0.5 / 0.6)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(-50, 50), min_size=2, max_size=6), st.floats(-100, 100), st.data())
def test_beta_shift_invariant_and_bounded(row, shift, data):
    a = data.draw(st.integers(0, len(row) - 1))
    b1 = compute_beta(row, a, 0.1)
    b2 = compute_beta(np.asarray(row) + shift, a, 0.1)
    assert b1 == pytest.approx(b2, abs=1e-6)
    assert 0.0 <= b1 < 1.0


def test_beta_rows_match_scalar():
    rng = np.random.default_rng(0)
    rows = rng.normal(size=(20, 4))
    a = rng.integers(0, 4, 20)
    low = rng.integers(0, 4, 20)
    np.testing.assert_allclose(compute_beta_rows(rows, a, 0.1),
                               [compute_beta(r, i, 0.1) for r, i in zip(rows, a)], rtol=1e-15)
    np.testing.assert_allclose(compute_beta_rows(rows, a, 0.1, low),
                               [compute_beta(r, i, 0.1, j) for r, i, j in zip(rows, a, low)], rtol=1e-15)


# -- targets -------------------------------------------------------------------

def test_weighted_target_example():
    # chooser (2 at a*=0, min at 1), evaluator 4 at a*, 3.6 at the chooser's low action:
    # spread 0.4 against c=0.4 gives beta 0.5
    cfg = AgentConfig(gamma=0.9, c=0.4)
    chooser, evaluator = const_net([2.0, 1.0]), const_net([4.0, 3.6])
    batch = batch_of(1, rewards=[1.0])
    targets, beta = weighted_target(batch, chooser, evaluator, None, cfg, return_beta=True)
    assert beta[0] == pytest.approx(0.5)
    assert targets[0] == pytest.approx(3.7)


def test_weighted_target_terminal_uses_reward_only():
    t = weighted_target(batch_of(2, rewards=[1.5, -2.0], terminals=[True, True]),
                        const_net([9.0, 1.0]), const_net([5.0, 7.0]), None, AgentConfig())
    np.testing.assert_array_equal(t, [1.5, -2.0])


def test_weighted_target_equal_nets_is_max_target():
    rng = np.random.default_rng(1)
    net = net_init([3, 8, 4], rng)
    twin = net_init([3, 8, 4], rng)
    copy_params(net, twin)
    batch = TransitionBatch(rng.normal(size=(10, 3)), rng.integers(0, 4, 10), rng.normal(size=10),
                            rng.normal(size=(10, 3)), rng.random(10) < 0.3, [None] * 10, [None] * 10)
    cfg = AgentConfig(gamma=0.95)
    np.testing.assert_allclose(weighted_target(batch, net, twin, None, cfg),
                               dqn_target(batch, twin, 0.95), rtol=1e-12)


def test_weighted_target_uses_reward_net():
    class FixedReward:
        def predict_batch(self, states, actions):
            return np.full(len(actions), 10.0)
    t = weighted_target(batch_of(1, rewards=[-99.0], terminals=[True]), const_net([0, 0]),
                        const_net([0, 0]), FixedReward(), AgentConfig())
    assert t[0] == 10.0


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000))
def test_weighted_bootstrap_between_chooser_and_evaluator(seed):
    rng = np.random.default_rng(seed)
    u, v = net_init([3, 6, 4], rng), net_init([3, 6, 4], rng)
    for b in u.biases + v.biases:
        b[:] = rng.normal(size=b.shape)
    batch = TransitionBatch(rng.normal(size=(8, 3)), rng.integers(0, 4, 8), np.zeros(8),
                            rng.normal(size=(8, 3)), np.zeros(8, bool), [None] * 8, [None] * 8)
    cfg = AgentConfig(gamma=1.0)
    t = weighted_target(batch, u, v, None, cfg)
    qu, qv = forward(u, batch.next_states), forward(v, batch.next_states)
    a = qu.argmax(axis=1)
    lo = np.minimum(qu[np.arange(8), a], qv[np.arange(8), a])
    hi = np.maximum(qu[np.arange(8), a], qv[np.arange(8), a])
    assert np.all(t >= lo - 1e-12) and np.all(t <= hi + 1e-12)


def test_ddqn_target_example():
    batch = batch_of(2, rewards=[0.0, 2.0], terminals=[False, True])
    t = ddqn_target(batch, const_net([0.0, 1.0]), const_net([5.0, 7.0]), 0.9)
    assert t[0] == pytest.approx(6.3)
    assert t[1] == 2.0


def test_ddqn_equal_nets_is_dqn():
    rng = np.random.default_rng(2)
    net = net_init([3, 5, 2], rng)
    batch = TransitionBatch(rng.normal(size=(6, 3)), rng.integers(0, 2, 6), rng.normal(size=6),
                            rng.normal(size=(6, 3)), np.zeros(6, bool), [None] * 6, [None] * 6)
    np.testing.assert_allclose(ddqn_target(batch, net, net, 0.9), dqn_target(batch, net, 0.9))


# -- action selection ------------------------------------------------------------

def test_select_action_mean_of_nets():
    rng = np.random.default_rng(3)
    assert select_action((const_net([1, 0, 0, 0]), const_net([3, 0, 0, 0])), np.ones(2), 0.0, rng) == 0
    assert select_action((const_net([1, 0, 0, 0]), const_net([-3, 0, 0, 2])), np.ones(2), 0.0, rng) == 3


def test_select_action_uniform_when_exploring():
    rng = np.random.default_rng(4)
    nets = (const_net([9, 0, 0, 0]), const_net([9, 0, 0, 0]))
    counts = np.bincount([select_action(nets, np.ones(2), 1.0, rng) for _ in range(8000)], minlength=4)
    assert np.all(np.abs(counts / 8000 - 0.25) < 0.02)


def test_select_action_ties_uniform():
    rng = np.random.default_rng(5)
    nets = (const_net([1, -2, 3, 0.5]), const_net([-1, 2, -3, -0.5]))
    counts = np.bincount([select_action(nets, np.ones(2), 0.0, rng) for _ in range(8000)], minlength=4)
    assert np.all(np.abs(counts / 8000 - 0.25) < 0.02)


def test_greedy_and_epsilon_schedule():
    assert greedy(np.array([0.0, 2.0, 1.0]), np.random.default_rng(0)) == 1
    cfg = AgentConfig()
    assert epsilon_at(0, cfg) == 1.0
    assert epsilon_at(5000, cfg) == pytest.approx(0.505)
    assert epsilon_at(10_000, cfg) == 0.01 and epsilon_at(10**6, cfg) == 0.01


@pytest.mark.parametrize("kw", [dict(gamma=1.5), dict(c=0.0), dict(batch_size=0)])
def test_agent_config_validation(kw):
    with pytest.raises(ValueError):
        AgentConfig(**kw)


# -- tabular oracle ------------------------------------------------------------------

def random_mdp(rng):
    n_states = int(rng.integers(1, 5))
    return (rng.integers(0, n_states + 1, size=(n_states, 2)),   # next state (n_states = terminal)
            rng.normal(size=(n_states, 2)), n_states)


def run_stream(rng, mdp, steps):
    nxt, mean_r, n_states = mdp
    s = 0
    for _ in range(steps):
        a = int(rng.integers(2))
        s2 = int(nxt[s, a])
        term = s2 == n_states
        yield Transition(None, a, float(mean_r[s, a] + rng.normal()), None, term, s, s2)
        s = 0 if term else s2


def test_single_matches_hand_oracle_on_random_mdps():
    rng = np.random.default_rng(6)
    alpha, gamma = 0.3, 0.9
    for _ in range(100):
        mdp = random_mdp(rng)
        tq = TabularQ(2)
        oracle = np.zeros((mdp[2] + 1, 2))
        for t in run_stream(rng, mdp, 60):
            boot = 0.0 if t.terminal else gamma * oracle[t.next_state_key].max()
            oracle[t.state_key, t.action] += alpha * (t.reward + boot - oracle[t.state_key, t.action])
            tabular_update(tq, t, alpha, gamma, 0.1)
            for s in range(mdp[2]):
                assert np.all(np.abs(tq.row(s) - oracle[s]) <= 1e-12)


def test_weighted_with_identical_tables_matches_single_exactly():
    rng = np.random.default_rng(7)
    for _ in range(100):
        mdp = random_mdp(rng)
        single, weighted = TabularQ(2, "single"), TabularQ(2, "weighted")
        for t in run_stream(rng, mdp, 60):
            tabular_update(single, t, 0.3, 0.9, 0.1)
            # update both tables with the same transition so U and V stay identical
            tabular_update(weighted, t, 0.3, 0.9, 0.1, update_u=True)
            weighted.v[t.state_key] = weighted.u[t.state_key].copy()
            for s in range(mdp[2]):
                assert weighted.u.get(s, np.zeros(2)).tolist() == single.u.get(s, np.zeros(2)).tolist()


def test_double_cross_evaluates():
    tq = TabularQ(2, "double")
    tq.u["b"] = np.array([1.0, 5.0])
    tq.v["b"] = np.array([7.0, 2.0])
    tabular_update(tq, Transition(None, 0, 0.0, None, False, "a", "b"), 1.0, 1.0, 0.1, update_u=True)
    assert tq.u["a"][0] == 2.0  # V evaluated at U's argmax (action 1)


def test_weighted_tabular_arithmetic():
    tq = TabularQ(2, "weighted")
    tq.u["b"] = np.array([1.0, 5.0])
    tq.v["b"] = np.array([7.0, 2.0])
    tabular_update(tq, Transition(None, 0, 1.0, None, False, "a", "b"), 0.5, 0.9, 0.1, update_u=True)
    # a* = 1 (U argmax), U's low action = 0; spread on V: |2 - 7| = 5
    beta = 5 / 5.1
    expected = 0.5 * (1.0 + 0.9 * (beta * 5.0 + (1 - beta) * 2.0))
    assert tq.u["a"][0] == pytest.approx(expected, rel=1e-15)


def test_single_terminal_example():
    tq = TabularQ(2)
    tabular_update(tq, Transition(None, 1, 1.0, None, True, "s", None), 0.5, 0.9, 0.1)
    assert tq.value("s", 1) == 0.5


def test_tabular_validation():
    with pytest.raises(ValueError):
        TabularQ(2, "triple")
    with pytest.raises(TypeError):
        TabularQ(2, "double").set("s", 0, 1.0)


def test_estimator_bias_vectorised_matches_scalar():
    fast = estimator_bias(6, 400, seed=11)
    slow = estimator_bias_reference(6, 400, seed=11)
    for name in ("single", "weighted", "double"):
        np.testing.assert_array_equal(getattr(fast, name), getattr(slow, name))


def test_tabular_agent_interface():
    agent = TabularAgent(4, "weighted", AgentConfig(), LeniencyParams(), np.random.default_rng(0))
    a = agent.act(None, "s")
    agent.observe(Transition(None, a, 1.0, None, True, "s", None))
    assert agent.learn() == {}
    assert agent.steps == 1
    lenient = TabularAgent(4, "lenient", AgentConfig(), LeniencyParams(), np.random.default_rng(0))
    lenient.observe(Transition(None, 0, 1.0, None, True, "s", None))
    assert lenient.temps.get("s", 0) == pytest.approx(0.95)


# -- WDDQN agent -------------------------------------------------------------------

def small_cfg(**kw):
    base = dict(q_hidden=(16,), lrn_hidden=(8,), batch_size=4, memory_capacity=64)
    base.update(kw)
    return AgentConfig(**base)


def feed_episode(agent, n, rng, dim=3):
    for i in range(n):
        s = rng.normal(size=dim)
        agent.observe(Transition(s, int(rng.integers(2)), float(rng.normal()), rng.normal(size=dim),
                                 i == n - 1, ("k", i), ("k", i + 1)))
    agent.end_episode()


def test_wddqn_episode_end_pushes_scheduled_priorities():
    agent = WddqnAgent(3, 2, small_cfg(), rng=np.random.default_rng(0))
    rng = np.random.default_rng(1)
    feed_episode(agent, 3, rng)
    assert len(agent.episodic) == 0 and len(agent.global_memory) == 3
    np.testing.assert_allclose(agent.global_memory.leaf_priorities[:3], schedule_weights(3), rtol=1e-12)
    assert agent.stats.count(("k", 0), agent.global_memory.get(0).action) >= 1
    # temperatures decayed once per pair, terminal pair by kappa
    assert agent.temp_table.get(("k", 2), agent.global_memory.get(2).action) == pytest.approx(0.95)


def test_wddqn_without_srs_inserts_flat():
    agent = WddqnAgent(3, 2, small_cfg(use_srs=False), rng=np.random.default_rng(0))
    feed_episode(agent, 3, np.random.default_rng(1))
    np.testing.assert_array_equal(agent.global_memory.leaf_priorities[:3], [1.0, 1.0, 1.0])


def test_wddqn_learn_noop_when_underfilled():
    agent = WddqnAgent(3, 2, small_cfg(), rng=np.random.default_rng(0))
    feed_episode(agent, 2, np.random.default_rng(1))
    assert agent.learn() == {}


def test_wddqn_learn_trains_one_net_and_sets_priorities():
    agent = WddqnAgent(3, 2, small_cfg(use_lrn=False, batch_size=8), rng=np.random.default_rng(2))
    feed_episode(agent, 8, np.random.default_rng(3))
    u0, v0 = agent.qU.flat.copy(), agent.qV.flat.copy()
    # reproduce the learn step's draws to know the sampled batch
    probe = np.random.default_rng()
    probe.bit_generator.state = agent.rng.bit_generator.state
    batch, ids, _ = agent.global_memory.sample(8, probe)
    train_u = probe.random() < 0.5
    chooser, evaluator = (agent.qU, agent.qV) if train_u else (agent.qV, agent.qU)
    targets = weighted_target(batch, chooser, evaluator, None, agent.config)
    preds = forward(chooser, batch.states)[np.arange(8), batch.actions]
    metrics = agent.learn()
    changed_u = not np.array_equal(u0, agent.qU.flat)
    changed_v = not np.array_equal(v0, agent.qV.flat)
    assert changed_u != changed_v and changed_u == train_u
    assert np.isnan(metrics["loss_v" if train_u else "loss_u"])
    expected = np.abs(targets - preds) + PRIORITY_FLOOR
    last = {int(i): p for i, p in zip(ids, expected)}
    for i, p in last.items():
        assert agent.global_memory.leaf_priorities[i % 64] == pytest.approx(p, rel=1e-12)


def test_wddqn_coin_is_fair():
    agent = WddqnAgent(3, 2, small_cfg(q_hidden=(4,), lrn_hidden=(4,)), rng=np.random.default_rng(4))
    feed_episode(agent, 10, np.random.default_rng(5))
    for _ in range(4000):
        agent.learn()
    assert abs(agent.u_updates / 4000 - 0.5) < 0.03


def test_wddqn_twin_nets_share_shape():
    agent = WddqnAgent(5, 4, small_cfg(), rng=np.random.default_rng(6))
    assert agent.qU.layer_sizes == agent.qV.layer_sizes == (5, 16, 4)
    assert not np.array_equal(agent.qU.flat, agent.qV.flat)


def test_wddqn_matches_dqn_targets_with_beta_one():
    # raw rewards, identical nets and c tiny enough that beta == 1 up to rounding
    rng = np.random.default_rng(7)
    agent = WddqnAgent(3, 4, small_cfg(use_lrn=False, c=1e-300), rng=rng)
    copy_params(agent.qU, agent.qV)
    batch = TransitionBatch(rng.normal(size=(6, 3)), rng.integers(0, 4, 6), rng.normal(size=6),
                            rng.normal(size=(6, 3)), np.zeros(6, bool), [None] * 6, [None] * 6)
    np.testing.assert_array_equal(weighted_target(batch, agent.qU, agent.qV, None, agent.config),
                                  dqn_target(batch, agent.qV, agent.config.gamma))


@pytest.mark.slow
def test_wddqn_bandit_convergence():
    wins = 0
    for seed in range(20):
        rng = np.random.default_rng(seed)
        cfg = AgentConfig(q_hidden=(16,), lrn_hidden=(16,), epsilon_steps=1000, lr=1e-3)
        agent = WddqnAgent(1, 2, cfg, rng=rng)
        s = np.ones(1)
        for step in range(2000):
            a = agent.act(s, "bandit")
            agent.observe(Transition(s, a, float(a), s, True, "bandit", None))
            agent.end_episode()
            agent.learn()
        wins += agent.act(s, "bandit", epsilon=0.0) == 1
    assert wins >= 19


def test_wddqn_checkpoint_round_trip(tmp_path):
    agent = WddqnAgent(3, 2, small_cfg(), rng=np.random.default_rng(8))
    feed_episode(agent, 5, np.random.default_rng(9))
    agent.save(tmp_path)
    other = WddqnAgent(3, 2, small_cfg(), rng=np.random.default_rng(10))
    other.load(tmp_path)
    np.testing.assert_array_equal(other.qU.flat, agent.qU.flat)
    np.testing.assert_array_equal(other.lrn.net.flat, agent.lrn.net.flat)
    assert sorted(other.temp_table.items()) == sorted(agent.temp_table.items())
    assert sorted(other.stats.items()) == sorted(agent.stats.items())


# -- baselines ---------------------------------------------------------------------

def test_dqn_syncs_target_on_interval():
    agent = DqnAgent(3, 2, "ddqn", small_cfg(target_sync_interval=5), rng=np.random.default_rng(11))
    rng = np.random.default_rng(12)
    for i in range(4):
        agent.observe(Transition(rng.normal(size=3), 0, 1.0, rng.normal(size=3), False, i, i + 1))
        agent.learn()
    assert not np.array_equal(agent.online.flat, agent.target.flat)
    agent.observe(Transition(rng.normal(size=3), 0, 1.0, rng.normal(size=3), False, 4, 5))
    np.testing.assert_array_equal(agent.online.flat, agent.target.flat)


def test_lenient_baseline_drops_forgiven_items():
    agent = DqnAgent(3, 2, "lenient", small_cfg(batch_size=4), rng=np.random.default_rng(13))
    s = np.ones(3)
    for i in range(4):
        agent.observe(Transition(s, 0, -100.0, s, True, "x", None))
    # one decay per observation; every sampled item has a large negative error
    assert agent.temp_table.get("x", 0) == pytest.approx(0.95 ** 4)
    kept = 0
    for _ in range(300):
        before = agent.online.flat.copy()
        agent.learn()
        kept += not np.array_equal(before, agent.online.flat)
    assert kept < 300  # some batches are forgiven entirely


def test_dqn_rejects_unknown_kind():
    with pytest.raises(ValueError):
        DqnAgent(3, 2, "sarsa")
