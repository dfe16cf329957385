"""Experiment orchestration: episode loop, controllers, reports, convergence.

Every episode replays the same demand from an empty network.  Signal
decisions are taken once per phase duration; learning controllers store one
transition per intersection per decision and train in federated lockstep
whenever their batches fill.
"""

from __future__ import annotations

import csv
import dataclasses
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import pressure
from .agent import Agent, Hyperparams, Transition
from .fedserver import FedServer, RoundRunner, make_agents, provision
from .netmodel import FlowSpec, Network, gen_synthetic_flow, grid_network, load_flow, load_roadnet
from .simcore import PHASE_DURATION, Simulation

HEURISTICS = ("fixedtime", "maxpressure", "maxhp")
LEARNERS = ("fitlight", "fitlight-p", "fitlight-mp")
CONTROLLERS = HEURISTICS + LEARNERS
LIGHT_PRUNE_RATES = (0.2, 0.4, 0.6)
AGENT_BYTE_BUDGET = 16 * 1024

REPORT_COLUMNS = ("episode", "avg_travel_time_s", "mean_reward", "completed", "in_network")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ExperimentConfig:
    controller: str = "maxhp"
    grid_rows: int = 1
    grid_cols: int = 3
    roadnet: str | None = None
    flow: str | None = None
    flow_rate: float = 500.0
    flow_seed: int = 0
    flow_profile: str = "gaussian"
    episodes: int = 1
    episode_seconds: int = 3600
    gamma: float = 0.99
    lam: float = 0.95
    batch_size: int = 5
    clip: float = 0.2
    lr_actor: float = 0.0005
    lr_critic: float = 0.001
    alpha_slope: float = 0.001
    alpha_override: float | None = None
    local_step: bool = True
    state_scale: float = 10.0
    prune_rates: tuple[float, ...] | None = None
    action_mode: str = "sample"
    seed: int = 0
    parallel: bool = False
    round_timeout: float = 60.0
    convergence_window: int = 10
    convergence_tol: float = 0.05

    def __post_init__(self) -> None:
        if self.controller not in CONTROLLERS:
            raise ConfigError(f"controller must be one of {CONTROLLERS}, got {self.controller!r}")
        if self.episodes < 1:
            raise ConfigError("episodes must be at least 1")
        if self.episode_seconds <= 0 or self.episode_seconds % PHASE_DURATION:
            raise ConfigError(f"episode_seconds must be a positive multiple of {PHASE_DURATION}")
        if self.action_mode not in ("sample", "greedy"):
            raise ConfigError("action_mode must be 'sample' or 'greedy'")
        if self.prune_rates is not None:
            object.__setattr__(self, "prune_rates", tuple(float(r) for r in self.prune_rates))

    @property
    def hyperparams(self) -> Hyperparams:
        return Hyperparams(self.gamma, self.lam, self.batch_size, self.clip, self.lr_actor,
                           self.lr_critic, self.alpha_slope, self.alpha_override, self.local_step,
                           self.state_scale)

    @property
    def matrix_prune_rates(self) -> tuple[float, float]:
        """Per-matrix pruning fractions for the two weight matrices of each network.

        Three rates are read per neuron layer (input, hidden, output): each
        prunes that layer's outgoing connections, so the last has no effect.
        """
        rates = self.prune_rates
        if rates is None:
            rates = LIGHT_PRUNE_RATES if self.controller == "fitlight-mp" else (0.0, 0.0)
        if len(rates) == 3:
            rates = rates[:2]
        if len(rates) != 2:
            raise ConfigError(f"prune_rates needs 2 or 3 entries, got {len(rates)}")
        return tuple(rates)

    def replace(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes)


def _coerce(name: str, value):
    fields = {f.name: f for f in dataclasses.fields(ExperimentConfig)}
    if name not in fields:
        raise ConfigError(f"unknown config key {name!r}")
    if name == "prune_rates" and value is not None:
        return tuple(float(v) for v in value)
    return value


def config_from_mapping(data: dict, **overrides) -> ExperimentConfig:
    flat: dict = {}
    for key, value in data.items():
        if isinstance(value, dict):  # allow [section] tables
            flat.update(value)
        else:
            flat[key] = value
    flat.update({k: v for k, v in overrides.items() if v is not None})
    try:
        return ExperimentConfig(**{k.replace("-", "_"): _coerce(k.replace("-", "_"), v)
                                   for k, v in flat.items()})
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


def load_config(path: str | Path, **overrides) -> ExperimentConfig:
    try:
        import tomllib
    except ImportError:  # Python 3.10
        import tomli as tomllib

    try:
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return config_from_mapping(data, **overrides)


@dataclass(frozen=True)
class EpisodeReport:
    episode: int
    avg_travel_time: float
    mean_reward: float
    completed: int
    in_network: int
    intersection_rewards: tuple[float, ...] = ()
    wall_clock_s: float = 0.0

    def __post_init__(self) -> None:
        if not (math.isfinite(self.avg_travel_time) and math.isfinite(self.mean_reward)):
            raise ValueError(f"episode {self.episode} produced a non-finite metric")


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    reports: list[EpisodeReport]
    agents: list[Agent] = field(default_factory=list)
    server: FedServer | None = None

    @property
    def travel_times(self) -> list[float]:
        return [r.avg_travel_time for r in self.reports]

    def convergence_episode(self) -> int | None:
        return detect_convergence(self.reports, self.config.convergence_window,
                                  self.config.convergence_tol)


def build_network(cfg: ExperimentConfig) -> Network:
    if cfg.roadnet:
        return load_roadnet(cfg.roadnet)
    return grid_network(cfg.grid_rows, cfg.grid_cols)


def build_flow(cfg: ExperimentConfig, net: Network) -> FlowSpec:
    if cfg.flow:
        return load_flow(net, cfg.flow)
    return gen_synthetic_flow(net, cfg.flow_rate, cfg.flow_seed, cfg.episode_seconds,
                              profile=cfg.flow_profile)


def _heuristic_phases(kind: str, sim: Simulation) -> list[int]:
    if kind == "fixedtime":
        return [pressure.fixedtime_select(sim.now)] * len(sim.net.intersections)
    select = pressure.maxhp_select if kind == "maxhp" else pressure.maxpressure_select
    return [select(obs) for obs in sim.observe_all()]


def _episode_report(episode: int, sim: Simulation, rewards: np.ndarray, started: float) -> EpisodeReport:
    stats = sim.travel_time_stats()
    per_inter = tuple(float(x) for x in rewards.mean(axis=0)) if rewards.size else ()
    mean_reward = float(rewards.mean()) if rewards.size else 0.0
    return EpisodeReport(episode, stats.average_travel_time, mean_reward, stats.completed,
                         stats.in_network, per_inter, time.perf_counter() - started)


def run_heuristic(cfg: ExperimentConfig, net: Network, flow: FlowSpec,
                  on_episode: Callable[[EpisodeReport], None] | None = None) -> ExperimentResult:
    reports = []
    sim = Simulation(net, flow)
    decisions = cfg.episode_seconds // PHASE_DURATION
    for episode in range(1, cfg.episodes + 1):
        started = time.perf_counter()
        sim.reset()
        rewards = np.zeros((decisions, len(net.intersections)))
        for k in range(decisions):
            sim.run(PHASE_DURATION, _heuristic_phases(cfg.controller, sim))
            rewards[k] = [-pressure.hp_vector(o).intersection_hp for o in sim.observe_all()]
        reports.append(_episode_report(episode, sim, rewards, started))
        if on_episode:
            on_episode(reports[-1])
    return ExperimentResult(cfg, reports)


def make_learners(cfg: ExperimentConfig, n_intersections: int) -> tuple[list[Agent], FedServer]:
    prov = provision(n_intersections, cfg.matrix_prune_rates, base_seed=cfg.seed)
    kind = "count" if cfg.controller == "fitlight-p" else "hp"
    agents = make_agents(prov, cfg.hyperparams, cfg.seed, pressure_kind=kind)
    for agent in agents:
        size = len(agent.to_bytes())
        if cfg.controller == "fitlight-mp" and size > AGENT_BYTE_BUDGET:
            raise ConfigError(f"pruned agent needs {size} bytes, over the {AGENT_BYTE_BUDGET} byte budget")
    return agents, FedServer(prov.registry)


def run_learner(cfg: ExperimentConfig, net: Network, flow: FlowSpec,
                on_episode: Callable[[EpisodeReport], None] | None = None) -> ExperimentResult:
    agents, server = make_learners(cfg, len(net.intersections))
    runner = RoundRunner(server, parallel=cfg.parallel, timeout=cfg.round_timeout)
    sim = Simulation(net, flow)
    decisions = cfg.episode_seconds // PHASE_DURATION
    reports = []
    try:
        for episode in range(1, cfg.episodes + 1):
            started = time.perf_counter()
            sim.reset()
            for agent in agents:
                agent.episode = episode
                agent.memory.clear()
            rewards = np.zeros((decisions, len(agents)))
            observations = sim.observe_all()
            states = [a.encode(o) for a, o in zip(agents, observations)]
            for k in range(decisions):
                chosen = [a.act(s, cfg.action_mode) for a, s in zip(agents, states)]
                expert = [pressure.maxhp_select(o) for o in observations]
                sim.run(PHASE_DURATION, [c[0] for c in chosen])
                observations = sim.observe_all()
                next_states = [a.encode(o) for a, o in zip(agents, observations)]
                full = False
                for i, agent in enumerate(agents):
                    r = agent.reward(observations[i])
                    rewards[k, i] = r
                    full |= agent.remember(Transition(states[i], chosen[i][0], expert[i], r,
                                                      next_states[i], chosen[i][1]))
                if full:
                    runner.run_round(agents)
                states = next_states
            reports.append(_episode_report(episode, sim, rewards, started))
            if on_episode:
                on_episode(reports[-1])
    finally:
        runner.close()
    return ExperimentResult(cfg, reports, agents, server)


def run_experiment(cfg: ExperimentConfig, checkpoint_dir: str | Path | None = None,
                   on_episode: Callable[[EpisodeReport], None] | None = None) -> ExperimentResult:
    net = build_network(cfg)
    flow = build_flow(cfg, net)
    if cfg.controller in HEURISTICS:
        result = run_heuristic(cfg, net, flow, on_episode)
    else:
        result = run_learner(cfg, net, flow, on_episode)
    if checkpoint_dir is not None and result.agents:
        write_checkpoints(result, net, checkpoint_dir)
    return result


def write_checkpoints(result: ExperimentResult, net: Network, directory: str | Path) -> list[Path]:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = []
    for agent, inter in zip(result.agents, net.intersections):
        path = directory / f"{inter.id}.agent"
        path.write_bytes(agent.to_bytes())
        paths.append(path)
    if result.server is not None:
        result.server.write_log(directory / "rounds.csv")
    return paths


def detect_convergence(reports: Sequence[EpisodeReport] | Sequence[float], window: int = 10,
                       tol: float = 0.05) -> int | None:
    """First 1-based episode after which every value stays within ``tol`` of the final-window mean."""
    values = [r.avg_travel_time if isinstance(r, EpisodeReport) else float(r) for r in reports]
    if window < 1 or len(values) < window:
        return None
    plateau = float(np.mean(values[-window:]))
    lo, hi = plateau * (1.0 - tol), plateau * (1.0 + tol)
    first = None
    for i in range(len(values) - 1, -1, -1):
        if lo <= values[i] <= hi:
            first = i + 1
        else:
            break
    return first


def emit_reports(reports: Sequence[EpisodeReport], path: str | Path) -> None:
    try:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(REPORT_COLUMNS)
            for r in reports:
                writer.writerow([r.episode, repr(r.avg_travel_time), repr(r.mean_reward),
                                 r.completed, r.in_network])
    except OSError as exc:
        raise OSError(f"cannot write reports to {path}: {exc}") from exc


def read_reports(path: str | Path) -> list[EpisodeReport]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != REPORT_COLUMNS:
            raise ValueError(f"{path}: unexpected header {reader.fieldnames}")
        return [EpisodeReport(int(row["episode"]), float(row["avg_travel_time_s"]),
                              float(row["mean_reward"]), int(row["completed"]),
                              int(row["in_network"])) for row in reader]


def pearson(x: Sequence[float], y: Sequence[float]) -> float:
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape or x.size < 2:
        raise ValueError("need two equal-length series of at least 2 points")
    if np.std(x) == 0 or np.std(y) == 0:
        return float("nan")
    return float(np.corrcoef(x, y)[0, 1])


def reward_correlation(reports: Sequence[EpisodeReport]) -> float:
    """Correlation of travel time with the negated mean reward over episodes."""
    return pearson([r.avg_travel_time for r in reports], [-r.mean_reward for r in reports])
