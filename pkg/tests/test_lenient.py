import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from wddqn.agents.tabular import TabularQ, tabular_update
from wddqn.lenient import (LeniencyParams, LenientRewardNet, MissingStatsError, RewardStats,
                           TemperatureTable, decay_temperature, dump_leniency, leniency,
                           lenient_q_gate, lenient_q_update, lrn_predict, lrn_update, record_reward)
from wddqn.replay import Transition

P = LeniencyParams()


def test_leniency_values():
    assert leniency(0.0, 2.0) == 0.0
    assert leniency(1.0, 2.0) == pytest.approx(0.8647, abs=1e-4)
    assert leniency(1.0, 2.0) == pytest.approx(1 - math.exp(-2), rel=1e-15)
    with pytest.raises(ValueError):
        leniency(-0.1, 2.0)


@given(st.floats(0, 50), st.floats(0, 50))
def test_leniency_monotone_and_bounded(a, b):
    la, lb = leniency(a, 2.0), leniency(b, 2.0)
    assert 0.0 <= la < 1.0 or a * 2.0 > 30  # saturates to 1.0 in floating point only for huge T
    if a < b:
        assert la <= lb


def test_decay_terminal():
    t = TemperatureTable(4)
    assert decay_temperature(t, "s", 0, "s2", True, P) == pytest.approx(0.95)
    assert t.get("s", 0) == pytest.approx(0.95)
    assert t.get("s", 1) == 1.0


def test_decay_fold_in_example():
    t = TemperatureTable(2)
    t.set("s2", 0, 0.2)
    t.set("s2", 1, 0.8)
    assert t.mean("s2") == pytest.approx(0.5)
    assert abs(decay_temperature(t, "s", 0, "s2", False, P) - 0.665) <= 1e-9


def test_eta_zero_is_terminal_rule():
    p = LeniencyParams(eta=0.0)
    t1, t2 = TemperatureTable(2), TemperatureTable(2)
    t2.set("x", 0, 0.01)
    t2.set("x", 1, 0.01)
    assert decay_temperature(t1, "s", 1, None, True, p) == decay_temperature(t2, "s", 1, "x", False, p)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 4), st.integers(0, 1), st.integers(0, 4), st.booleans()),
                min_size=1, max_size=80))
def test_temperatures_never_increase(moves):
    t = TemperatureTable(2)
    for s, a, s2, term in moves:
        before = t.get(s, a)
        after = decay_temperature(t, s, a, s2, term, P)
        assert 0.0 <= after <= before


def test_gate_rules():
    assert lenient_q_gate(0.5, 0.99, 0.0)
    assert all(lenient_q_gate(-1.0, 0.0, x) for x in np.linspace(1e-9, 0.999, 50))
    assert not lenient_q_gate(-1.0, 0.9, 0.5)


def test_gate_frequency_at_high_leniency():
    rng = np.random.default_rng(0)
    hits = np.mean([lenient_q_gate(-1.0, 0.9, x) for x in rng.random(10_000)])
    assert abs(hits - 0.10) <= 0.01


def test_reward_stats_means():
    stats = RewardStats()
    record_reward(stats, "s", 0, -30)
    assert record_reward(stats, "s", 0, 40) == pytest.approx(5.0)
    assert stats.count("s", 0) == 2 and stats.count("s", 1) == 0
    assert ("s", 0) in stats
    with pytest.raises(MissingStatsError):
        stats.mean("s", 1)
    with pytest.raises(ValueError):
        stats.record("s", 0, float("inf"))


def test_reward_stats_stochastic_goal_mean():
    rng = np.random.default_rng(1)
    stats = RewardStats()
    for r in np.where(rng.random(10_000) < 0.6, 10, 100):
        stats.record("S", 0, int(r))
    assert abs(stats.mean("S", 0) - 46) <= 1


@settings(max_examples=40, deadline=None)
@given(st.lists(st.integers(-1000, 1000), min_size=1, max_size=300))
def test_reward_stats_exact_mean(rewards):
    stats = RewardStats()
    for r in rewards:
        stats.record(0, 0, r)
    assert abs(stats.mean(0, 0) - sum(rewards) / len(rewards)) <= 1e-9


def test_lrn_untrained_zero_input_and_pure():
    lrn = LenientRewardNet(6, 4, np.random.default_rng(2))
    assert lrn_predict(lrn, np.zeros(6), 3) == 0.0
    before = lrn.net.flat.copy()
    x = np.random.default_rng(3).normal(size=6)
    assert lrn_predict(lrn, x, 1) == lrn_predict(lrn, x, 1)
    np.testing.assert_array_equal(lrn.net.flat, before)
    assert lrn.n_actions == 4


def balanced_goal_stream(rng, n):
    # each consecutive pair holds one -30 and one +40 in random order
    pairs = np.where(rng.random(n // 2) < 0.5, 0, 1)
    return np.stack([np.where(pairs == 0, -30.0, 40.0), np.where(pairs == 0, 40.0, -30.0)], 1).ravel()


def test_lrn_converges_to_goal_mean_without_leniency():
    rng = np.random.default_rng(4)
    lrn = LenientRewardNet(4, 4, rng)
    stats = RewardStats()
    s = np.array([1.0, 0.0, 0.0, 1.0])
    for r in balanced_goal_stream(rng, 5000):
        stats.record("g", 2, float(r))
        lrn_update(lrn, ["g"], s, [2], stats, None, P, rng)
    assert stats.mean("g", 2) == pytest.approx(5.0)
    assert abs(lrn.predict(s, 2) - 5.0) <= 0.5


def test_lrn_tracks_running_mean_on_iid_stream():
    rng = np.random.default_rng(4)
    lrn = LenientRewardNet(4, 4, rng)
    stats = RewardStats()
    s = np.array([1.0, 0.0, 0.0, 1.0])
    for _ in range(5000):
        stats.record("g", 2, float(rng.choice([-30, 40])))
        lrn_update(lrn, ["g"], s, [2], stats, None, P, rng)
    assert abs(lrn.predict(s, 2) - stats.mean("g", 2)) <= 0.1


def test_lrn_fits_fixed_table_with_zero_leniency():
    rng = np.random.default_rng(5)
    lrn = LenientRewardNet(5, 2, rng, lr=1e-3)
    stats = RewardStats()
    encs = np.eye(5)
    truth = rng.uniform(-3, 3, size=(5, 2))
    for s in range(5):
        for a in range(2):
            stats.record(s, a, truth[s, a])
    table = TemperatureTable(2, max_temperature=0.0)
    keys = [s for s in range(5) for _ in range(2)]
    acts = [a for _ in range(5) for a in range(2)]
    for _ in range(2000):
        lrn_update(lrn, keys, encs[keys], acts, stats, table, P, rng)
    est = np.array([[lrn.predict(encs[s], a) for a in range(2)] for s in range(5)])
    assert np.max(np.abs(est - truth)) < 0.1


def test_lrn_negative_correction_frequency_at_max_temperature():
    # fresh pair, delta < 0: the item joins the loss with probability 1 - l(1) ~ 0.135
    rng = np.random.default_rng(6)
    lrn = LenientRewardNet(3, 2, rng)
    stats = RewardStats()
    stats.record("s", 0, -100.0)
    table = TemperatureTable(2)
    s = np.ones(3)
    kept = 0
    for _ in range(4000):
        before = lrn.net.flat.copy()
        lrn_update(lrn, ["s"], s, [0], stats, table, P, rng)
        kept += not np.array_equal(before, lrn.net.flat)
    assert abs(kept / 4000 - math.exp(-2)) < 0.02


def test_lrn_positive_corrections_always_applied():
    rng = np.random.default_rng(7)
    lrn = LenientRewardNet(3, 2, rng)
    stats = RewardStats()
    stats.record("s", 1, 100.0)
    table = TemperatureTable(2)
    s = np.ones(3)
    for _ in range(50):
        before = lrn.predict(s, 1)
        assert lrn_update(lrn, ["s"], s, [1], stats, table, P, rng) > 0
        assert lrn.predict(s, 1) > before


def test_literal_gate_flag_inverts_negative_acceptance():
    rng = np.random.default_rng(8)
    lrn = LenientRewardNet(3, 2, rng)
    stats = RewardStats()
    stats.record("s", 0, -100.0)
    table = TemperatureTable(2)
    literal = LeniencyParams(literal_lrn_gate=True)
    kept = 0
    for _ in range(2000):
        before = lrn.net.flat.copy()
        lrn_update(lrn, ["s"], np.ones(3), [0], stats, table, literal, rng)
        kept += not np.array_equal(before, lrn.net.flat)
    assert abs(kept / 2000 - leniency(1.0, 2.0)) < 0.03


def test_lrn_update_requires_stats():
    lrn = LenientRewardNet(2, 2, np.random.default_rng(0))
    with pytest.raises(MissingStatsError):
        lrn_update(lrn, ["nope"], np.ones(2), [0], RewardStats(), None, P, np.random.default_rng(0))


def test_lrn_update_decays_nothing():
    lrn = LenientRewardNet(2, 2, np.random.default_rng(0))
    stats = RewardStats()
    stats.record("s", 0, 1.0)
    table = TemperatureTable(2)
    lrn_update(lrn, ["s"], np.ones(2), [0], stats, table, P, np.random.default_rng(0))
    assert table.get("s", 0) == 1.0 and len(table) == 0


# -- lenient tabular Q -------------------------------------------------------

def chain_stream(rng, n):
    # 3-state chain: 0 -> 1 -> 2 (terminal); action 1 moves right, action 0 stays
    out = []
    s = 0
    for _ in range(n):
        a = int(rng.integers(2))
        s2 = min(s + a, 2)
        r = float(rng.normal(1.0 if s2 == 2 else -0.1, 1.0))
        out.append(Transition(None, a, r, None, s2 == 2, s, s2))
        s = 0 if s2 == 2 else s2
    return out


def test_zero_leniency_recovers_q_learning():
    rng = np.random.default_rng(9)
    stream = chain_stream(rng, 3000)
    lenient, plain = TabularQ(2), TabularQ(2)
    table = TemperatureTable(2, max_temperature=0.0)
    for t in stream:
        assert lenient_q_update(lenient, t, table, P, 0.1, 0.9, rng)
        tabular_update(plain, t, 0.1, 0.9, 0.1)
        for s in range(3):
            assert lenient.row(s).tolist() == plain.row(s).tolist()


def test_positive_update_ignores_temperature():
    q = TabularQ(2)
    table = TemperatureTable(2, max_temperature=100.0)
    t = Transition(None, 0, 5.0, None, True, "s", "end")
    assert lenient_q_update(q, t, table, P, 0.5, 0.9, np.random.default_rng(0))
    assert q.value("s", 0) == 2.5


def test_bad_reward_forgiven_at_max_leniency():
    rng = np.random.default_rng(10)
    unchanged = 0
    for _ in range(5000):
        q = TabularQ(2)
        table = TemperatureTable(2)
        t = Transition(None, 1, -10.0, None, True, "s", "end")
        lenient_q_update(q, t, table, P, 0.1, 0.9, rng)
        unchanged += q.value("s", 1) == 0.0
        assert table.get("s", 1) == pytest.approx(0.95)
    assert abs(unchanged / 5000 - leniency(1.0, 2.0)) < 0.02


def test_dump_leniency(tmp_path):
    stats = RewardStats()
    stats.record((0, 1), 2, 3.0)
    table = TemperatureTable(4)
    lrn = LenientRewardNet(2, 4, np.random.default_rng(0))
    dump_leniency(tmp_path / "l.csv", table, stats, lrn, P, encode=lambda k: np.array(k, float))
    lines = (tmp_path / "l.csv").read_text().splitlines()
    assert lines[0] == "state_key,action,temperature,leniency,mean_reward,lrn_estimate"
    assert lines[1].startswith('"(0, 1)",2,1.0,')


@pytest.mark.parametrize("kw", [dict(K=0), dict(kappa=1.5), dict(eta=-0.1), dict(max_temperature=-1)])
def test_params_validation(kw):
    with pytest.raises(ValueError):
        LeniencyParams(**kw)
