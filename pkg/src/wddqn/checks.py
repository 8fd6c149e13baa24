"""Built-in numeric checks: the estimator-bias experiment and a quick oracle
suite used by ``wddqn check``.

The bias experiment runs many independent tabular learners at once on a
two-state chain: in state 0 both actions lead to state 1 with reward 0; in
state 1 action ``a`` ends the episode with reward ``N(means[a], sigma)``.
The arms are close relative to the noise, which is where max-based
estimates overshoot and cross-evaluated ones undershoot.
"""
from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np
from scipy import stats

from .agents.common import compute_beta, compute_beta_rows
from .agents.tabular import TabularQ, tabular_update
from .lenient import LeniencyParams, TemperatureTable, decay_temperature, leniency, lenient_q_gate
from .nn import finite_diff_check, net_init
from .replay import SumTreeMemory, Transition, schedule_weights


@dataclass
class BiasResult:
    single: np.ndarray
    weighted: np.ndarray
    double: np.ndarray
    seconds: float

    def gap_ci(self, a: str, b: str, confidence: float = 0.95, seed: int = 0):
        """Bootstrap confidence interval of mean(a - b) over trials."""
        diff = getattr(self, a) - getattr(self, b)
        res = stats.bootstrap((diff,), np.mean, confidence_level=confidence,
                              n_resamples=2000, random_state=np.random.default_rng(seed))
        return float(res.confidence_interval.low), float(res.confidence_interval.high)


def _draws(rng, trials):
    # per step: action, reward noise and the double/weighted coin (True -> update U)
    return rng.integers(2, size=trials), rng.normal(size=trials), rng.random(trials) < 0.5


ARM_MEANS = (0.0, -0.1)


def _pair_update(tables, idx, s, a, target_r, coin, alpha, gamma, c, weighted, terminal):
    for own_i, mask in ((0, coin), (1, ~coin)):
        if not mask.any():
            continue
        own, other = tables[own_i], tables[1 - own_i]
        rows = idx[mask]
        if terminal:
            boot = 0.0
        else:
            own_next, other_next = own[rows, 1], other[rows, 1]
            sub = np.arange(len(rows))
            a_star = np.argmax(own_next, axis=1)
            if weighted:
                beta = compute_beta_rows(other_next, a_star, c, a_low=np.argmin(own_next, axis=1))
                boot = gamma * (other_next[sub, a_star] + beta * (own_next[sub, a_star] - other_next[sub, a_star]))
            else:
                boot = gamma * other_next[sub, a_star]
        acts = a[mask]
        own[rows, s, acts] += alpha * (target_r[mask] + boot - own[rows, s, acts])


def _estimates(q, dbl, wtd, c):
    idx = np.arange(len(q))
    single = q[:, 1].max(axis=1)
    double = dbl[1][idx, 1, np.argmax(dbl[0][:, 1], axis=1)]
    u1, v1 = wtd[0][:, 1], wtd[1][:, 1]
    a_star = np.argmax(u1, axis=1)
    beta = compute_beta_rows(v1, a_star, c, a_low=np.argmin(u1, axis=1))
    weighted = v1[idx, a_star] + beta * (u1[idx, a_star] - v1[idx, a_star])
    return single, weighted, double


def estimator_bias(trials: int = 1000, steps: int = 10_000, seed: int = 0, alpha: float = 0.1,
                   gamma: float = 0.99, c: float = 0.1, sigma: float = 1.0,
                   means=ARM_MEANS) -> BiasResult:
    """Run single, double and weighted tabular learners on identical experience.

    Returns per-trial estimates of the value of state 1 after ``steps``
    transitions: ``max Q`` for single, ``Q^V(argmax Q^U)`` for double and the
    weighted combination of U and V at ``argmax Q^U`` for weighted.
    """
    t0 = time.perf_counter()
    rng = np.random.default_rng(seed)
    means = np.asarray(means, dtype=float)
    idx = np.arange(trials)
    q = np.zeros((trials, 2, 2))          # [trial, state, action]
    dbl = np.zeros((2, trials, 2, 2))     # [U/V, trial, state, action]
    wtd = np.zeros((2, trials, 2, 2))
    zeros = np.zeros(trials)
    for t in range(steps):
        s = t % 2
        a, noise, coin = _draws(rng, trials)
        if s == 0:
            q[idx, 0, a] += alpha * (gamma * q[:, 1].max(axis=1) - q[idx, 0, a])
            r, terminal = zeros, False
        else:
            r = means[a] + sigma * noise
            q[idx, 1, a] += alpha * (r - q[idx, 1, a])
            terminal = True
        _pair_update(dbl, idx, s, a, r, coin, alpha, gamma, c, False, terminal)
        _pair_update(wtd, idx, s, a, r, coin, alpha, gamma, c, True, terminal)
    single, weighted, double = _estimates(q, dbl, wtd, c)
    return BiasResult(single, weighted, double, time.perf_counter() - t0)


def estimator_bias_reference(trials: int, steps: int, seed: int = 0, alpha: float = 0.1,
                             gamma: float = 0.99, c: float = 0.1, sigma: float = 1.0,
                             means=ARM_MEANS) -> BiasResult:
    """Same experiment driven through ``tabular_update`` one transition at a time."""
    t0 = time.perf_counter()
    rng = np.random.default_rng(seed)
    means = np.asarray(means, dtype=float)
    learners = [(TabularQ(2, "single"), TabularQ(2, "double"), TabularQ(2, "weighted"))
                for _ in range(trials)]
    for t in range(steps):
        s = t % 2
        a, noise, coin = _draws(rng, trials)
        for i, (single, double, weighted) in enumerate(learners):
            r = 0.0 if s == 0 else float(means[a[i]] + sigma * noise[i])
            tr = Transition(None, int(a[i]), r, None, s == 1, s, 1 if s == 0 else None)
            tabular_update(single, tr, alpha, gamma, c)
            tabular_update(double, tr, alpha, gamma, c, update_u=bool(coin[i]))
            tabular_update(weighted, tr, alpha, gamma, c, update_u=bool(coin[i]))

    def stack(tables):
        return np.array([[t.get(st, np.zeros(2)) for st in (0, 1)] for t in tables])

    q = stack(l[0].u for l in learners)
    dbl = np.array([stack(l[1].u for l in learners), stack(l[1].v for l in learners)])
    wtd = np.array([stack(l[2].u for l in learners), stack(l[2].v for l in learners)])
    single, weighted, double = _estimates(q, dbl, wtd, c)
    return BiasResult(single, weighted, double, time.perf_counter() - t0)


def _sum_tree_drift(rng, n_mutations):
    mem = SumTreeMemory(1024)
    blank = Transition(np.zeros(1), 0, 0.0, np.zeros(1), False)
    for _ in range(1024):
        mem.push(blank, float(rng.uniform(0.01, 5)))
    for _ in range(n_mutations // 1000):
        ids = rng.integers(mem.next_id - mem.size, mem.next_id, 1000)
        mem.update_priorities(ids, rng.normal(scale=20, size=1000))
    leaves = mem.leaf_priorities[:mem.size]
    return abs(mem.total - float(leaves.sum()))


def _proportional_frequency(rng, draws):
    mem = SumTreeMemory(2)
    blank = Transition(np.zeros(1), 0, 0.0, np.zeros(1), False)
    mem.push(blank, 1.0)
    second = mem.push(blank, 3.0)
    hits = sum(int(np.sum(mem.sample(2, rng)[1] == second)) for _ in range(draws // 2))
    return hits / draws


def run_checks(quick: bool = False):
    """Yield ``(name, passed, detail)`` for each built-in check."""
    rng = np.random.default_rng(0)

    l1 = leniency(1.0, 2.0)
    yield "leniency(T=1, K=2)", abs(l1 - 0.8647) <= 1e-4, f"{l1:.6f}"

    table = TemperatureTable(2)
    table.set("s2", 0, 0.25)
    table.set("s2", 1, 0.75)
    t = decay_temperature(table, "s", 0, "s2", False, LeniencyParams())
    yield "temperature fold-in", abs(t - 0.665) <= 1e-9, f"{t:.12f}"

    x = rng.random(10_000)
    freq = float(np.mean([lenient_q_gate(-1.0, 0.9, v) for v in x]))
    yield "negative update frequency at l=0.9", abs(freq - 0.10) <= 0.01, f"{freq:.4f}"

    w = schedule_weights(3)
    ok = np.allclose(w, [1.2214, 1.2461, 1.2740], atol=1e-3)
    big = schedule_weights(10_000)
    ok_big = bool(np.all(np.diff(big) >= 0) and big.max() <= 10.0)
    yield "replay schedule weights", ok and ok_big, np.array2string(w, precision=4)

    drift = _sum_tree_drift(rng, 10_000 if quick else 100_000)
    yield "sum-tree root equals leaf sum", drift <= 1e-9, f"drift {drift:.2e}"

    freq = _proportional_frequency(rng, 10_000)
    yield "proportional sampling [1, 3]", abs(freq - 0.75) <= 0.02, f"{freq:.4f}"

    beta = compute_beta([1.0, 0.5], 0, 0.1)
    yield "beta example", abs(beta - 0.5 / 0.6) <= 1e-12, f"{beta:.4f}"

    worst = 0.0
    for sizes in ((20, 128, 128, 4), (20, 64, 64, 4)):
        net = net_init(sizes, rng)
        worst = max(worst, finite_diff_check(net, rng.normal(size=sizes[0]), 1, 0.7))
    yield "finite-difference gradients", worst < 1e-4, f"max rel err {worst:.2e}"

    res = estimator_bias(trials=200 if quick else 1000, steps=2000 if quick else 10_000)
    lo1, _ = res.gap_ci("single", "weighted")
    lo2, _ = res.gap_ci("weighted", "double")
    yield ("estimator bias ordering single > weighted > double", lo1 > 0 and lo2 > 0,
           f"means {res.single.mean():.4f} > {res.weighted.mean():.4f} > {res.double.mean():.4f}, "
           f"95% CI lower bounds {lo1:.4f}, {lo2:.4f}, {res.seconds:.1f}s")
