"""Experiment driver: agents on the network benchmark, per-seed and aggregate CSVs."""
from __future__ import annotations

import csv
import functools
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import ArgumentError, CapacityError
from .factored import MAX_FLAT_STATES, DbnStructure
from .metrics import StepRecord, distribution_error, moving_average, structure_error
from .planner import AgentModel, LearnedTransition, PlannerConfig, plan, value_iteration_backup
from .structure import (
    MhConfig,
    ModelBelief,
    fixed_belief,
    init_particles,
    resample_particles,
    should_resample,
    update_belief,
)
from .dirichlet import StructurePrior
from .sysadmin import (
    RUNNING,
    SysadminEnv,
    SysadminParams,
    Topology,
    action_label,
    build_topology,
    expected_next_values,
    max_reward,
    noop_matrix,
    rebooted,
    reward_matrix,
    true_structure,
)

log = logging.getLogger(__name__)

AGENT_KINDS = ("structure-learning", "known-structure", "full-joint", "known-mdp")
ENV_DEFAULTS = {
    "linear10": dict(k=10, resample_threshold=-100.0, depth=2, branch=5),
    "tree13": dict(k=8, resample_threshold=-150.0, depth=2, branch=4),
    "dense12": dict(k=8, resample_threshold=-120.0, depth=2, branch=4),
}
CSV_COLUMNS = (
    "step",
    "action",
    "reward",
    "cum_discounted_return",
    "planning_ms",
    "dist_error",
    "struct_error",
    "log_likelihood",
    "resampled",
)
AGGREGATE_COLUMNS = (
    "reward",
    "reward_ma",
    "cum_discounted_return",
    "planning_ms",
    "dist_error",
    "struct_error",
    "log_likelihood",
    "resampled",
)


@dataclass(frozen=True)
class ExperimentConfig:
    env: str = "linear10"
    agent: str = "structure-learning"
    k: int = 10
    resample_threshold: float = -100.0
    depth: int = 2
    branch: int = 5
    gamma: float = 0.95
    steps: int = 1500
    seeds: int = 50
    base_seed: int = 0
    metrics_interval: int = 10
    burn_in: int = 1000
    thinning: int = 50
    out: str = "results"
    ess: float = 1.0
    learn_from_reboots: bool = True
    timing: bool = True
    jobs: int = 1
    ma_window: int = 50

    def __post_init__(self):
        if self.agent not in AGENT_KINDS:
            raise ArgumentError(f"unknown agent {self.agent!r}; choose from {AGENT_KINDS}")
        for name in ("k", "depth", "branch", "steps", "seeds", "metrics_interval", "thinning", "jobs", "ma_window"):
            if getattr(self, name) < 1:
                raise ArgumentError(f"{name} must be >= 1")
        if self.burn_in < 0:
            raise ArgumentError("burn_in must be >= 0")
        if not 0 < self.gamma < 1:
            raise ArgumentError("gamma must lie in (0, 1)")
        if self.ess <= 0:
            raise ArgumentError("ess must be positive")

    @classmethod
    def for_env(cls, env: str, **overrides) -> "ExperimentConfig":
        """Config with the published per-network defaults, then ``overrides``."""
        base = dict(ENV_DEFAULTS.get(env, ENV_DEFAULTS["linear10"]))
        base.update({k: v for k, v in overrides.items() if v is not None})
        return cls(env=env, **base)

    @property
    def planner(self) -> PlannerConfig:
        return PlannerConfig(depth=self.depth, branch=self.branch, gamma=self.gamma)

    @property
    def mh(self) -> MhConfig:
        return MhConfig(burn_in=self.burn_in, thinning=self.thinning)


class PlanningAgent:
    """Bayesian agent: lookahead planning on one learned no-reboot DBN with known reboots."""

    def __init__(self, env: SysadminEnv, belief: ModelBelief, cfg: ExperimentConfig, rng, mh_rng, resample: bool):
        self.env = env
        self.belief = belief
        self.cfg = cfg
        self.rng = rng
        self.mh_rng = mh_rng
        self.resample = resample
        n = env.topology.n
        sources = [LearnedTransition("noop")] + [LearnedTransition("noop", {i: RUNNING}) for i in range(n)]
        self.model = AgentModel(
            env.topology.space,
            sources,
            functools.partial(reward_matrix, n_actions=env.n_actions, params=env.params),
        )
        self.planner = replace(cfg.planner, fringe=functools.partial(max_reward, params=env.params))

    def act(self, s) -> int:
        return plan(self.model, np.asarray(s), {"noop": self.belief}, self.planner, self.rng)

    def observe(self, s, a: int, s_next) -> bool:
        target = rebooted(a)
        if target is not None and not self.cfg.learn_from_reboots:
            return False
        update_belief(self.belief, s, a, s_next, mask=target)
        if self.resample and should_resample(self.belief):
            resample_particles(self.belief, self.cfg.mh, self.mh_rng)
            return True
        return False


class KnownMdpAgent:
    """Greedy policy of value iteration on the true model."""

    belief = None

    def __init__(self, env: SysadminEnv, gamma: float):
        self.env = env
        self.policy = known_mdp_policy(env.topology, env.params, gamma)

    def act(self, s) -> int:
        return int(self.policy[self.env.topology.space.index(s)])

    def observe(self, s, a, s_next) -> bool:
        return False


@functools.lru_cache(maxsize=8)
def known_mdp_policy(topology: Topology, params: SysadminParams, gamma: float, tol: float = 1e-8) -> np.ndarray:
    space = topology.space
    if space.n_states > MAX_FLAT_STATES:
        raise CapacityError(f"known-mdp needs a flat model; {space.n_states} states exceeds {MAX_FLAT_STATES}")
    t = noop_matrix(topology, params)
    rewards = reward_matrix(space.enumerate(), topology.n_actions, params)
    res = value_iteration_backup(lambda v: expected_next_values(t, v, topology.n), rewards, gamma, tol)
    return res.policy


def make_agent(kind: str, env: SysadminEnv, cfg: ExperimentConfig, rng=None, mh_rng=None):
    rng = rng if rng is not None else np.random.default_rng(cfg.base_seed)
    mh_rng = mh_rng if mh_rng is not None else rng
    space = env.topology.space
    if kind == "known-mdp":
        return KnownMdpAgent(env, cfg.gamma)
    if kind == "structure-learning":
        belief = init_particles(
            StructurePrior("uniform", constraint="symmetric_unit_diag"),
            cfg.k,
            space,
            rng,
            resample_threshold=cfg.resample_threshold,
            ess=cfg.ess,
        )
        return PlanningAgent(env, belief, cfg, rng, mh_rng, resample=True)
    if kind == "known-structure":
        structure = true_structure(env.topology)
    elif kind == "full-joint":
        structure = DbnStructure.complete(env.topology.n)
    else:
        raise ArgumentError(f"unknown agent {kind!r}")
    return PlanningAgent(env, fixed_belief(structure, space, ess=cfg.ess), cfg, rng, mh_rng, resample=False)


def seed_streams(base_seed: int, seed_index: int) -> tuple[np.random.Generator, ...]:
    """Independent (environment, agent, MCMC) generators for one run.

    The environment stream depends only on the seed, so every agent faces the
    same failure noise for a given seed index.
    """
    ss = np.random.SeedSequence(entropy=base_seed, spawn_key=(seed_index,))
    return tuple(np.random.default_rng(c) for c in ss.spawn(3))


def run_seed(cfg: ExperimentConfig, seed_index: int) -> list[StepRecord]:
    topology = build_topology(cfg.env)
    env = SysadminEnv(topology, replace(SysadminParams(), gamma=cfg.gamma))
    env_rng, agent_rng, mh_rng = seed_streams(cfg.base_seed, seed_index)
    agent = make_agent(cfg.agent, env, cfg, agent_rng, mh_rng)
    truth_model, truth_structure = env.model, true_structure(topology)
    state = env.reset()
    ret = 0.0
    records = []
    for step in range(1, cfg.steps + 1):
        s = np.asarray(state.state)
        t0 = time.perf_counter()
        a = agent.act(s)
        ms = (time.perf_counter() - t0) * 1e3 if cfg.timing else 0.0
        state, r = env.step(state, a, env_rng)
        resampled = agent.observe(s, a, np.asarray(state.state))
        ret += cfg.gamma ** (step - 1) * r
        rec = StepRecord(step, a, r, ret, ms, resampled=resampled)
        if agent.belief is not None:
            rec.log_likelihood = agent.belief.log_likelihood
        if step % cfg.metrics_interval == 0 or step == cfg.steps:
            if agent.belief is None:
                rec.dist_error, rec.struct_error = 0.0, 0.0
            else:
                rec.dist_error = distribution_error(agent.belief, truth_model)
                rec.struct_error = structure_error(agent.belief, truth_structure)
        if not (math.isfinite(rec.log_likelihood) and math.isfinite(ret)):
            raise FloatingPointError(f"non-finite value at step {step}")
        records.append(rec)
    return records


def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, (bool, np.bool_)):
        return str(int(x))
    return f"{x:.9g}"


def write_seed_csv(path: Path, records: list[StepRecord]) -> None:
    try:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(CSV_COLUMNS)
            for r in records:
                w.writerow(
                    [
                        r.step,
                        action_label(r.action),
                        _fmt(r.reward),
                        _fmt(r.cum_discounted_return),
                        _fmt(r.planning_ms),
                        _fmt(r.dist_error),
                        _fmt(r.struct_error),
                        _fmt(r.log_likelihood),
                        _fmt(r.resampled),
                    ]
                )
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc}") from exc


def _column(records: list[StepRecord], name: str, window: int) -> np.ndarray:
    if name == "reward_ma":
        return moving_average([r.reward for r in records], window)
    vals = [getattr(r, name) for r in records]
    return np.array([np.nan if v is None else float(v) for v in vals])


def aggregate(runs: list[list[StepRecord]], window: int = 50) -> dict[str, np.ndarray]:
    """Across-seed mean and standard error per step; NaN where no seed has a value."""
    out = {"step": np.array([r.step for r in runs[0]])}
    for name in AGGREGATE_COLUMNS:
        m = np.stack([_column(r, name, window) for r in runs])
        have = (~np.isnan(m)).sum(axis=0)
        with np.errstate(invalid="ignore", divide="ignore"):
            mean = np.nansum(m, axis=0) / have
            var = np.nansum((m - mean) ** 2, axis=0) / (have - 1)
            out[f"{name}_mean"] = np.where(have > 0, mean, np.nan)
            out[f"{name}_stderr"] = np.where(have > 1, np.sqrt(var / have), np.nan)
    return out


def write_aggregate_csv(path: Path, agg: dict[str, np.ndarray]) -> None:
    cols = list(agg)
    try:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(cols)
            for t in range(len(agg["step"])):
                row = []
                for c in cols:
                    v = agg[c][t]
                    row.append(str(int(v)) if c == "step" else ("" if np.isnan(v) else _fmt(float(v))))
                w.writerow(row)
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc}") from exc


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    runs: dict[int, list[StepRecord]] = field(default_factory=dict)
    seed_paths: dict[int, Path] = field(default_factory=dict)
    aggregate_path: Path | None = None
    failed: dict[int, str] = field(default_factory=dict)


def run_experiment(cfg: ExperimentConfig) -> ExperimentResult:
    """Run every seed, write ``seed_XXX.csv`` per seed and ``aggregate.csv`` to ``cfg.out``.

    A seed that raises is logged and left out of the aggregate.
    """
    build_topology(cfg.env)  # fail fast on a bad topology
    out = Path(cfg.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create output directory {out}: {exc}") from exc
    result = ExperimentResult(cfg)
    if cfg.jobs > 1:
        with ProcessPoolExecutor(max_workers=cfg.jobs) as pool:
            futures = {i: pool.submit(run_seed, cfg, i) for i in range(cfg.seeds)}
            outcomes = {}
            for i, f in futures.items():
                try:
                    outcomes[i] = f.result()
                except Exception as exc:  # noqa: BLE001 - one bad seed must not sink the rest
                    outcomes[i] = exc
    else:
        outcomes = {}
        for i in range(cfg.seeds):
            try:
                outcomes[i] = run_seed(cfg, i)
            except Exception as exc:  # noqa: BLE001
                outcomes[i] = exc
    for i, res in outcomes.items():
        if isinstance(res, Exception):
            log.error("seed %d aborted: %s: %s", i, type(res).__name__, res)
            result.failed[i] = f"{type(res).__name__}: {res}"
            continue
        path = out / f"seed_{i:03d}.csv"
        write_seed_csv(path, res)
        result.runs[i] = res
        result.seed_paths[i] = path
    if result.runs:
        result.aggregate_path = out / "aggregate.csv"
        write_aggregate_csv(result.aggregate_path, aggregate(list(result.runs.values()), cfg.ma_window))
    return result
