"""Experiment orchestration: configuration files, seeded training runs,
per-episode records, windowed reward statistics and CSV output.

Config files are flat ``key = value`` text; ``#`` starts a comment. Keys:

    env.name              pacman | predator | predator-stochastic
    env.size              pacman grid side (default 5)
    env.goal_mode         random | fixed (pacman)
    env.max_steps         episode step cap (default 4*size^2 pacman, 200 predator)
    env.map               path to a .map file (predator; default bundled map)
    agent.kind            dqn | ddqn | lenient | wddqn | wddqn-no-lrn-srs |
                          wddqn-lrn-only | tabular-q | tabular-double |
                          tabular-weighted | tabular-lenient
    agent.gamma, agent.c, agent.lr, agent.batch_size, agent.alpha,
    agent.epsilon_start, agent.epsilon_end, agent.epsilon_steps,
    agent.target_sync, agent.q_hidden, agent.lrn_hidden (comma lists)
    replay.capacity, replay.rho_c, replay.u, replay.w_max
    lenient.K, lenient.kappa, lenient.eta, lenient.max_temperature,
    lenient.literal_gate
    train.max_episodes    default 2500
    train.seeds           comma list, default 0
    train.out             output directory

Outputs per run: ``episodes.csv`` (one row per episode, columns
``EPISODE_COLUMNS``), ``summary.csv`` (one row per 50-episode window, columns
``SUMMARY_COLUMNS``), ``config.txt`` (resolved config) and ``run_info.json``
(wall-clock; kept out of the CSVs so they stay reproducible byte for byte).
"""
from __future__ import annotations

import csv
import json
import logging
import time
from collections import defaultdict
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import env as envs
from .agents import AgentConfig, DqnAgent, TabularAgent, WddqnAgent
from .lenient import LeniencyParams
from .replay import PrioritySchedule, Transition

log = logging.getLogger(__name__)

ENV_NAMES = ("pacman", "predator", "predator-stochastic")
DEEP_KINDS = ("dqn", "ddqn", "lenient", "wddqn", "wddqn-no-lrn-srs", "wddqn-lrn-only")
TABULAR_KINDS = ("tabular-q", "tabular-double", "tabular-weighted", "tabular-lenient")
AGENT_KINDS = DEEP_KINDS + TABULAR_KINDS

EPISODE_COLUMNS = ["episode", "total_reward", "steps", "efficiency_ratio", "epsilon",
                   "loss_u", "loss_v", "loss_lrn", "outcome"]
SUMMARY_COLUMNS = ["window", "first_episode", "n_episodes", "mean_reward", "min_reward",
                   "max_reward", "mean_ratio"]
COMPARE_COLUMNS = ["agent", "seed", "window", "n_episodes", "mean_reward", "min_reward",
                   "max_reward", "mean_ratio", "optimal_ref", "suboptimal_ref"]

WINDOW = 50


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    env_name: str = "pacman"
    env_size: int = 5
    goal_mode: str = envs.GOAL_RANDOM
    env_max_steps: int | None = None
    map_path: str | None = None
    agent_kind: str = "wddqn"
    agent: AgentConfig = field(default_factory=AgentConfig)
    leniency: LeniencyParams = field(default_factory=LeniencyParams)
    schedule: PrioritySchedule = field(default_factory=PrioritySchedule)
    max_episodes: int = 2500
    seeds: list = field(default_factory=lambda: [0])
    out_dir: str | None = None

    def __post_init__(self):
        if self.env_name not in ENV_NAMES:
            raise ConfigError(f"unknown env {self.env_name!r}; expected one of {ENV_NAMES}")
        if self.agent_kind not in AGENT_KINDS:
            raise ConfigError(f"unknown agent kind {self.agent_kind!r}; expected one of {AGENT_KINDS}")
        if not self.seeds:
            raise ConfigError("at least one seed is required")
        if self.max_episodes < 1:
            raise ConfigError("train.max_episodes must be >= 1")

    @property
    def resolved_agent(self) -> AgentConfig:
        """Agent config with the ablation switches implied by ``agent_kind``."""
        if self.agent_kind == "wddqn-no-lrn-srs":
            return replace(self.agent, use_lrn=False, use_srs=False)
        if self.agent_kind == "wddqn-lrn-only":
            return replace(self.agent, use_lrn=True, use_srs=False)
        return self.agent

    def to_text(self) -> str:
        a, l, s = self.agent, self.leniency, self.schedule
        lines = {
            "env.name": self.env_name,
            "env.size": self.env_size,
            "env.goal_mode": self.goal_mode,
            "env.max_steps": "" if self.env_max_steps is None else self.env_max_steps,
            "env.map": self.map_path or "",
            "agent.kind": self.agent_kind,
            "agent.gamma": a.gamma,
            "agent.c": a.c,
            "agent.lr": a.lr,
            "agent.batch_size": a.batch_size,
            "agent.alpha": a.alpha,
            "agent.epsilon_start": a.epsilon_start,
            "agent.epsilon_end": a.epsilon_end,
            "agent.epsilon_steps": a.epsilon_steps,
            "agent.target_sync": a.target_sync_interval,
            "agent.q_hidden": ",".join(map(str, a.q_hidden)),
            "agent.lrn_hidden": ",".join(map(str, a.lrn_hidden)),
            "replay.capacity": a.memory_capacity,
            "replay.rho_c": s.rho_c,
            "replay.u": s.u,
            "replay.w_max": s.w_max,
            "lenient.K": l.K,
            "lenient.kappa": l.kappa,
            "lenient.eta": l.eta,
            "lenient.max_temperature": l.max_temperature,
            "lenient.literal_gate": str(l.literal_lrn_gate).lower(),
            "train.max_episodes": self.max_episodes,
            "train.seeds": ",".join(map(str, self.seeds)),
        }
        return "".join(f"{k} = {v}\n" for k, v in lines.items())


def _ints(v: str) -> tuple:
    return tuple(int(x) for x in v.split(",") if x.strip())


def _bool(v: str) -> bool:
    if v.lower() in ("1", "true", "yes", "on"):
        return True
    if v.lower() in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {v!r}")


# key -> (section, field name, parser); section None targets ExperimentConfig
_KEYS = {
    "env.name": (None, "env_name", str),
    "env.size": (None, "env_size", int),
    "env.goal_mode": (None, "goal_mode", str),
    "env.max_steps": (None, "env_max_steps", lambda v: int(v) if v else None),
    "env.map": (None, "map_path", lambda v: v or None),
    "agent.kind": (None, "agent_kind", str),
    "agent.gamma": ("agent", "gamma", float),
    "agent.c": ("agent", "c", float),
    "agent.lr": ("agent", "lr", float),
    "agent.batch_size": ("agent", "batch_size", int),
    "agent.alpha": ("agent", "alpha", float),
    "agent.epsilon_start": ("agent", "epsilon_start", float),
    "agent.epsilon_end": ("agent", "epsilon_end", float),
    "agent.epsilon_steps": ("agent", "epsilon_steps", int),
    "agent.target_sync": ("agent", "target_sync_interval", int),
    "agent.q_hidden": ("agent", "q_hidden", _ints),
    "agent.lrn_hidden": ("agent", "lrn_hidden", _ints),
    "replay.capacity": ("agent", "memory_capacity", int),
    "replay.rho_c": ("schedule", "rho_c", float),
    "replay.u": ("schedule", "u", float),
    "replay.w_max": ("schedule", "w_max", float),
    "lenient.K": ("leniency", "K", float),
    "lenient.kappa": ("leniency", "kappa", float),
    "lenient.eta": ("leniency", "eta", float),
    "lenient.max_temperature": ("leniency", "max_temperature", float),
    "lenient.literal_gate": ("leniency", "literal_lrn_gate", _bool),
    "train.max_episodes": (None, "max_episodes", int),
    "train.seeds": (None, "seeds", lambda v: list(_ints(v))),
    "train.out": (None, "out_dir", lambda v: v or None),
}


def parse_config(text: str) -> ExperimentConfig:
    top, sections = {}, defaultdict(dict)
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, value = (p.strip() for p in line.split("=", 1))
        if key not in _KEYS:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        section, name, conv = _KEYS[key]
        try:
            parsed = conv(value)
        except ValueError as exc:
            raise ConfigError(f"line {lineno}: bad value for {key}: {exc}") from None
        (top if section is None else sections[section])[name] = parsed
    try:
        return ExperimentConfig(
            agent=AgentConfig(**sections["agent"]),
            leniency=LeniencyParams(**sections["leniency"]),
            schedule=PrioritySchedule(**sections["schedule"]),
            **top,
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def load_config(path) -> ExperimentConfig:
    return parse_config(Path(path).read_text(encoding="utf-8"))


# ---------------------------------------------------------------------------
# Games behind one interface
# ---------------------------------------------------------------------------


class Game:
    """Uniform reset/step view over both benchmark games."""

    def __init__(self, config: ExperimentConfig):
        self.name = config.env_name
        if self.name == "pacman":
            kw = {} if config.env_max_steps is None else {"max_steps": config.env_max_steps}
            self.config = envs.PacmanConfig(size=config.env_size, goal_mode=config.goal_mode, **kw)
            self.n_agents = 1
        else:
            kw = {}
            if config.env_max_steps is not None:
                kw["max_steps"] = config.env_max_steps
            if config.map_path:
                kw["layout"] = envs.load_map_file(config.map_path)
            self.config = envs.predator_config(stochastic=self.name == "predator-stochastic", **kw)
            self.n_agents = 2
        self.input_dim = self.config.input_dim
        self.n_actions = envs.N_ACTIONS

    def reset(self, rng):
        if self.name == "pacman":
            return envs.pacman_reset(self.config, rng)
        return envs.predator_reset(self.config)

    def step(self, state, actions, rng) -> envs.StepResult:
        if self.name == "pacman":
            return envs.pacman_step(state, actions[0], self.config, rng)
        return envs.predator_step(state, actions, self.config, rng)

    def encode(self, state) -> np.ndarray:
        return envs.encode_observation(state, self.config)

    def min_steps(self, state) -> int:
        return envs.min_steps(state, self.config)

    @property
    def reference_lines(self) -> tuple:
        """(optimal, sub-optimal) expected team rewards; None where undefined."""
        if self.name == "pacman":
            return (None, None)
        return (self.config.reward_g.mean, self.config.reward_s.mean)


def make_agent(config: ExperimentConfig, game: Game, rng: np.random.Generator):
    kind = config.agent_kind
    agent_cfg = config.resolved_agent
    if kind.startswith("wddqn"):
        return WddqnAgent(game.input_dim, game.n_actions, agent_cfg, config.leniency,
                          config.schedule, rng)
    if kind in DqnAgent.KINDS:
        return DqnAgent(game.input_dim, game.n_actions, kind, agent_cfg, config.leniency, rng)
    variant = {"tabular-q": "single", "tabular-double": "double",
               "tabular-weighted": "weighted", "tabular-lenient": "lenient"}[kind]
    return TabularAgent(game.n_actions, variant, agent_cfg, config.leniency, rng)


# ---------------------------------------------------------------------------
# Metrics
# ---------------------------------------------------------------------------


@dataclass
class EpisodeRecord:
    episode: int
    total_reward: float
    steps: int
    efficiency_ratio: float
    epsilon: float
    loss_u: float
    loss_v: float
    loss_lrn: float
    outcome: str

    def row(self) -> list:
        return [self.episode, _fmt(self.total_reward), self.steps, _fmt(self.efficiency_ratio),
                _fmt(self.epsilon), _fmt(self.loss_u), _fmt(self.loss_v), _fmt(self.loss_lrn),
                self.outcome]


@dataclass
class WindowStats:
    mean: float
    min: float
    max: float
    size: int


@dataclass
class RunSummary:
    seed: int
    agent_kind: str
    env_name: str
    windows: list
    ratio_windows: list
    records: list = field(repr=False, default_factory=list)
    wall_clock: float = 0.0

    @property
    def final_window(self) -> WindowStats:
        return self.windows[-1]

    def mean_reward(self, last: int) -> float:
        return float(np.mean([r.total_reward for r in self.records[-last:]]))

    def mean_ratio(self, last: int) -> float:
        return float(np.mean([r.efficiency_ratio for r in self.records[-last:]]))


def _fmt(x: float) -> str:
    return repr(float(x))


def efficiency_ratio(min_steps: int, actual_steps: int, reached: bool) -> float:
    """Shortest possible episode length over the length actually used; 0 if the goal was missed."""
    if actual_steps < 1:
        raise ValueError("actual_steps must be >= 1")
    if not reached:
        return 0.0
    return min_steps / actual_steps


def rolling_metrics(values, window: int = WINDOW) -> list[WindowStats]:
    """Non-overlapping windows; the last one may be shorter."""
    if window < 1:
        raise ValueError("window must be >= 1")
    values = np.asarray(values, dtype=float)
    out = []
    for start in range(0, len(values), window):
        chunk = values[start:start + window]
        out.append(WindowStats(float(chunk.mean()), float(chunk.min()), float(chunk.max()), len(chunk)))
    return out


# ---------------------------------------------------------------------------
# Running
# ---------------------------------------------------------------------------


def run_episodes(config: ExperimentConfig, seed: int, progress=None) -> list[EpisodeRecord]:
    """Train from scratch for ``config.max_episodes`` episodes; fully determined by ``seed``."""
    game = Game(config)
    root = np.random.SeedSequence(seed)
    env_seq, *agent_seqs = root.spawn(1 + game.n_agents)
    env_rng = np.random.default_rng(env_seq)
    agents = [make_agent(config, game, np.random.default_rng(s)) for s in agent_seqs]

    records = []
    for episode in range(config.max_episodes):
        state = game.reset(env_rng)
        enc, key = game.encode(state), envs.state_key(state)
        shortest = game.min_steps(state)
        epsilon = agents[0].epsilon
        losses = defaultdict(list)
        total, steps = 0.0, 0
        while True:
            actions = [ag.act(enc, key) for ag in agents]
            res = game.step(state, actions, env_rng)
            nxt = res.next_state
            nenc, nkey = game.encode(nxt), envs.state_key(nxt)
            for ag, a in zip(agents, actions):
                ag.observe(Transition(enc, a, res.reward, nenc, res.terminal, key, nkey))
                for name, value in ag.learn().items():
                    if not np.isnan(value):
                        losses[name].append(value)
            total += res.reward
            steps += 1
            state, enc, key = nxt, nenc, nkey
            if res.terminal:
                break
        for ag in agents:
            ag.end_episode()
        reached = res.info == "goal"
        rec = EpisodeRecord(
            episode=episode,
            total_reward=total,
            steps=steps,
            efficiency_ratio=efficiency_ratio(shortest, steps, reached),
            epsilon=epsilon,
            loss_u=_mean(losses["loss_u"]),
            loss_v=_mean(losses["loss_v"]),
            loss_lrn=_mean(losses["loss_lrn"]),
            outcome=res.info,
        )
        records.append(rec)
        if progress is not None:
            progress(rec)
    return records


def _mean(values) -> float:
    return float(np.mean(values)) if values else float("nan")


def summarize(config: ExperimentConfig, seed: int, records, wall_clock: float = 0.0) -> RunSummary:
    rewards = [r.total_reward for r in records]
    ratios = [r.efficiency_ratio for r in records]
    return RunSummary(seed, config.agent_kind, config.env_name, rolling_metrics(rewards),
                      rolling_metrics(ratios), records, wall_clock)


def write_run(out_dir, config: ExperimentConfig, summary: RunSummary) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "episodes.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(EPISODE_COLUMNS)
        for rec in summary.records:
            w.writerow(rec.row())
    with open(out / "summary.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SUMMARY_COLUMNS)
        first = 0
        for i, (win, rwin) in enumerate(zip(summary.windows, summary.ratio_windows)):
            w.writerow([i, first, win.size, _fmt(win.mean), _fmt(win.min), _fmt(win.max), _fmt(rwin.mean)])
            first += win.size
    cfg = replace(config, seeds=[summary.seed])
    (out / "config.txt").write_text(cfg.to_text(), encoding="utf-8")
    (out / "run_info.json").write_text(json.dumps({"seed": summary.seed, "wall_clock_s": summary.wall_clock}),
                                       encoding="utf-8")


def run(config: ExperimentConfig, seed: int | None = None, out_dir=None, progress=None) -> RunSummary:
    """One seeded training run; writes CSVs when an output directory is given."""
    seed = config.seeds[0] if seed is None else seed
    t0 = time.perf_counter()
    records = run_episodes(config, seed, progress)
    summary = summarize(config, seed, records, time.perf_counter() - t0)
    out_dir = out_dir if out_dir is not None else config.out_dir
    if out_dir is not None:
        write_run(out_dir, config, summary)
    log.info("%s on %s seed %d: final window mean %.2f (%.1fs)", config.agent_kind,
             config.env_name, seed, summary.final_window.mean, summary.wall_clock)
    return summary


def _run_one(args):
    config, seed, out = args
    return run(config, seed, out)


def sweep(config: ExperimentConfig, seeds=None, out_dir=None, jobs: int = 1) -> list[RunSummary]:
    """Independent runs per seed, written to ``<out_dir>/seed_<n>``."""
    seeds = list(config.seeds if seeds is None else seeds)
    out_dir = out_dir if out_dir is not None else config.out_dir
    tasks = [(config, s, None if out_dir is None else Path(out_dir) / f"seed_{s}") for s in seeds]
    if jobs > 1:
        from concurrent.futures import ProcessPoolExecutor
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(_run_one, tasks))
    return [_run_one(t) for t in tasks]


def _read_run(directory: Path):
    cfg = load_config(directory / "config.txt")
    with open(directory / "summary.csv", newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    return cfg, rows


def _find_runs(paths) -> list[Path]:
    found = []
    for p in map(Path, paths):
        if (p / "summary.csv").exists():
            found.append(p)
        else:
            found.extend(sorted(q.parent for q in p.glob("*/summary.csv")))
    return found


def compare(inputs, out_path) -> int:
    """Merge run directories (or sweep directories) into one plot-ready CSV.

    Returns the number of merged series.
    """
    dirs = _find_runs(inputs)
    if not dirs:
        raise ConfigError("compare needs at least one run directory")
    runs = [_read_run(d) for d in dirs]
    env_names = {cfg.env_name for cfg, _ in runs}
    if len(env_names) > 1:
        raise ConfigError(f"runs use different environments: {sorted(env_names)}")
    optimal, suboptimal = Game(runs[0][0]).reference_lines
    with open(out_path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(COMPARE_COLUMNS)
        for cfg, rows in runs:
            for row in rows:
                w.writerow([cfg.agent_kind, cfg.seeds[0], row["window"], row["n_episodes"],
                            row["mean_reward"], row["min_reward"], row["max_reward"], row["mean_ratio"],
                            "" if optimal is None else _fmt(optimal),
                            "" if suboptimal is None else _fmt(suboptimal)])
    return len(runs)

