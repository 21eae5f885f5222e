"""Multi-run training campaigns, result persistence and objective sweeps.

Output layout of :func:`run_experiment`::

    <output_dir>/run_000.csv     episode,reward,steps
    <output_dir>/run_000.model   final value network (ELM methods only)
    <output_dir>/run_000.gram.npy  accumulated Gram matrix (``save_gram``)
    <output_dir>/summary.json    SummaryStats plus the resolved configuration

Every file is a deterministic function of the configuration.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import logging
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Mapping, Sequence

import numpy as np
import yaml

from . import cartpole, elmnet, metrics, qagent, regcore
from .errors import ConfigError, InsufficientData
from .qagent import AgentConfig

log = logging.getLogger(__name__)

SUMMARY_SCHEMA = 1
RUN_CSV_HEADER = ("episode", "reward", "steps")
SWEEP_CSV_HEADER = ("strategy", "c", "mu_bar", "objective", "cond", "residual_norm")
METHODS = ("hr", "eqlm", "gradq")
ENVS = ("capped", "uncapped")
WINDOW = 50

# Human-readable hyperparameter names accepted as config keys (case-insensitive).
TABLE_KEYS = {
    "learning rate": "learning_rate",
    "regularization parameter": "reg_param",
    "hidden nodes": "hidden_nodes",
    "initial exploration probability": "eps_initial",
    "episodes to decrease exploration probability": "eps_episodes",
    "discount factor": "discount",
    "minibatch size": "minibatch",
    "target network update steps": "target_update_steps",
    "regularization order": "reg_order",
    "final exploration probability": "eps_final",
    "heuristic episodes": "heuristic_episodes",
    "memory window": "memory_window",
}
EXPERIMENT_KEYS = ("method", "env", "runs", "episodes", "output_dir", "base_seed", "workers",
                   "safety_cap", "save_gram")


@dataclass(frozen=True)
class ExperimentConfig:
    agent: AgentConfig = AgentConfig()
    env: str = "capped"
    runs: int = 1
    episodes: int = 600
    method: str = "hr"
    output_dir: str = "results"
    base_seed: int = 0
    workers: int | None = None
    safety_cap: int = cartpole.SAFETY_CAP
    save_gram: bool = False

    def __post_init__(self):
        if self.method not in METHODS:
            raise ConfigError(f"method must be one of {METHODS}, got {self.method!r}")
        if self.env not in ENVS:
            raise ConfigError(f"env must be one of {ENVS}, got {self.env!r}")
        if self.runs < 1 or self.episodes < 1:
            raise ConfigError("runs and episodes must be >= 1")
        if self.workers is not None and self.workers < 1:
            raise ConfigError("workers must be >= 1")
        if self.safety_cap < 1:
            raise ConfigError("safety_cap must be >= 1")

    @property
    def env_params(self) -> cartpole.CartPoleParams:
        if self.env == "capped":
            return cartpole.CartPoleParams.capped()
        return cartpole.CartPoleParams.uncapped(self.safety_cap)

    @property
    def agent_method(self) -> str:
        return "gradq" if self.method == "gradq" else "hr"

    def seed_for(self, run_index: int) -> int:
        return self.base_seed + run_index

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d.pop("output_dir")
        d.pop("workers")
        return d


def agent_config_for(method: str, overrides: Mapping[str, Any] | None = None) -> AgentConfig:
    """Method preset with ``overrides`` applied. ``eqlm`` forces order 0."""
    overrides = dict(overrides or {})
    if method == "gradq":
        return AgentConfig.qnetwork(**overrides)
    if method == "eqlm":
        if overrides.get("reg_order", 0) != 0:
            raise ConfigError("method eqlm implies reg_order 0")
        return AgentConfig.eqlm(**overrides)
    if method == "hr" and overrides.get("reg_order", 1) < 1:
        raise ConfigError("method hr needs reg_order >= 1; use eqlm for order 0")
    return AgentConfig.elm(**overrides)


def _normalize_key(key: str) -> str:
    k = str(key).strip()
    return TABLE_KEYS.get(k.lower(), k.lower().replace("-", "_").replace(" ", "_"))


def parse_config(mapping: Mapping[str, Any], **cli_overrides) -> ExperimentConfig:
    """Build an :class:`ExperimentConfig` from a flat mapping.

    Keys are either the descriptive hyperparameter names in ``TABLE_KEYS``
    or field names of :class:`AgentConfig` / :class:`ExperimentConfig`.
    ``cli_overrides`` with value ``None`` are ignored.
    """
    agent_fields = set(qagent.dataclass_fields())
    agent_kw, exp_kw = {}, {}
    for key, value in (mapping or {}).items():
        name = _normalize_key(key)
        if name in agent_fields:
            agent_kw[name] = value
        elif name in EXPERIMENT_KEYS:
            exp_kw[name] = value
        else:
            raise ConfigError(f"unknown config key {key!r}")
    exp_kw.update({k: v for k, v in cli_overrides.items() if v is not None})
    method = str(exp_kw.get("method", "hr")).lower()
    exp_kw["method"] = method
    for list_key in ("state_scale", "state_offset"):
        if agent_kw.get(list_key) is not None:
            agent_kw[list_key] = tuple(agent_kw[list_key])
    try:
        agent = agent_config_for(method, agent_kw)
        return ExperimentConfig(agent=agent, **exp_kw)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


def load_config(path, **cli_overrides) -> ExperimentConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        data = yaml.safe_load(text) or {}
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: expected a flat key-value mapping")
    return parse_config(data, **cli_overrides)


# Runs ------------------------------------------------------------------------------


@dataclass(frozen=True)
class RunRecord:
    run_index: int
    seed: int
    rewards: np.ndarray
    steps: np.ndarray
    error: str | None = None
    wall_time: float = 0.0
    model: elmnet.ElmModel | None = None
    gram: np.ndarray | None = None

    @property
    def completed(self) -> bool:
        return self.error is None


def run_one(config: ExperimentConfig, run_index: int) -> RunRecord:
    """Train one agent for ``config.episodes`` episodes.

    The run seed feeds a generator that is split into agent and environment
    streams, so runs are independent and reproducible in any order.
    """
    seed = config.seed_for(run_index)
    agent_rng, env_rng = np.random.default_rng(seed).spawn(2)
    agent = qagent.new_agent(dataclasses.replace(config.agent, seed=seed),
                             config.agent_method, agent_rng)
    env = cartpole.CartPoleEnv(config.env_params, env_rng)
    start = time.perf_counter()
    rewards, steps = [], []
    error = None
    for _ in range(config.episodes):
        env.reset()
        rec = qagent.run_episode(agent, env)
        rewards.append(rec.reward)
        steps.append(rec.steps)
        if rec.error:
            error = f"episode {len(rewards) - 1}: {rec.error}"
            log.warning("run %d aborted: %s", run_index, error)
            break
    model = agent.network if isinstance(agent.network, elmnet.ElmModel) else None
    gram = agent.train.gram if (config.save_gram and agent.train is not None) else None
    return RunRecord(run_index, seed, np.asarray(rewards, dtype=float), np.asarray(steps, dtype=int),
                     error, time.perf_counter() - start, model, gram)


def _run_one_star(args):
    return run_one(*args)


@dataclass(frozen=True)
class SummaryStats:
    runs: int
    completed_runs: int
    incomplete: bool
    mean_final50: float
    std_final50: float
    auc: float
    auc_std: float
    auc_of_mean_curve: float
    mean_first50: float
    improved_runs: int
    ci95: dict

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def _safe_ci(values, statistic="mean"):
    try:
        return list(metrics.ci95(values, statistic))
    except InsufficientData:
        return [None, None]


def summarize_records(rewards_per_run: Sequence[np.ndarray], total_runs: int | None = None) -> SummaryStats:
    """Aggregate per-run reward curves.

    Final-50 and AUC statistics are computed per run and then averaged over
    runs; ``auc_of_mean_curve`` is the AUC of the across-run mean curve over
    the episodes every run completed.
    """
    curves = [np.asarray(r, dtype=float) for r in rewards_per_run if len(r)]
    total = len(rewards_per_run) if total_runs is None else total_runs
    if not curves:
        raise InsufficientData("no run produced any episodes")
    final = np.array([metrics.window_mean(c, WINDOW) for c in curves])
    first = np.array([metrics.window_mean(c, WINDOW, final=False) for c in curves])
    aucs = np.array([metrics.auc(c) for c in curves])
    shortest = min(len(c) for c in curves)
    mean_curve = np.mean([c[:shortest] for c in curves], axis=0)
    return SummaryStats(
        runs=total,
        completed_runs=len(curves),
        incomplete=len(curves) < total,
        mean_final50=float(final.mean()),
        std_final50=float(final.std()),
        auc=float(aucs.mean()),
        auc_std=float(aucs.std()),
        auc_of_mean_curve=metrics.auc(mean_curve),
        mean_first50=float(first.mean()),
        improved_runs=int(np.sum(final > first)),
        ci95={
            "mean_final50": _safe_ci(final),
            "std_final50": _safe_ci(final, "std"),
            "auc": _safe_ci(aucs),
        },
    )


def write_run_csv(record: RunRecord, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(RUN_CSV_HEADER)
        for i, (r, s) in enumerate(zip(record.rewards, record.steps)):
            w.writerow((i, repr(float(r)), int(s)))


def read_run_csv(path) -> tuple[np.ndarray, np.ndarray]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return (np.array([float(r["reward"]) for r in rows]), np.array([int(r["steps"]) for r in rows]))


def _dump_json(obj, path) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True, allow_nan=True) + "\n")


def run_experiment(config: ExperimentConfig) -> tuple[list[RunRecord], SummaryStats]:
    """Execute all runs on a bounded process pool, persist them and summarize.

    ``config.workers=None`` uses every available core. Aborted runs are kept
    with their partial curves and error text; the summary then flags
    ``incomplete``.
    """
    out = Path(config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    workers = config.workers or os.cpu_count() or 1
    workers = min(workers, config.runs)
    jobs = [(config, i) for i in range(config.runs)]
    if workers == 1:
        records = [run_one(*job) for job in jobs]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            records = list(pool.map(_run_one_star, jobs))
    for rec in records:
        stem = out / f"run_{rec.run_index:03d}"
        write_run_csv(rec, stem.with_suffix(".csv"))
        if rec.model is not None:
            elmnet.save_model(rec.model, stem.with_suffix(".model"))
        if rec.gram is not None:
            np.save(stem.with_suffix(".gram.npy"), rec.gram)
    completed = [r.rewards for r in records if r.completed]
    summary = summarize_records(completed, total_runs=config.runs)
    _dump_json({
        "schema": SUMMARY_SCHEMA,
        "config": config.to_dict(),
        "errors": {str(r.run_index): r.error for r in records if r.error},
        "summary": summary.to_dict(),
    }, out / "summary.json")
    return records, summary


def summarize_dir(path) -> SummaryStats:
    """Recompute summary statistics from the per-run CSV files in ``path``."""
    files = sorted(Path(path).glob("run_*.csv"))
    if not files:
        raise InsufficientData(f"no run_*.csv files in {path}")
    return summarize_records([read_run_csv(f)[0] for f in files])


# Objective sweeps --------------------------------------------------------------------


def synthetic_problem(n: int = 10, seed: int = 0, samples_per_dim: int = 50) -> regcore.RegProblem:
    """Seeded Gram ``A^T A / m`` and cross term from Gaussian data, ``m = samples_per_dim * n``."""
    rng = np.random.default_rng(seed)
    m = samples_per_dim * n
    A = rng.standard_normal((m, n))
    y = A @ rng.standard_normal(n) + 0.1 * rng.standard_normal(m)
    return regcore.RegProblem(A.T @ A / m, A.T @ y / m)


def load_problem(source) -> regcore.RegProblem:
    """``RegProblem`` as is, an int seed for :func:`synthetic_problem`, or a ``.npy`` Gram path."""
    if isinstance(source, regcore.RegProblem):
        return source
    if isinstance(source, (int, np.integer)):
        return synthetic_problem(seed=int(source))
    path = Path(source)
    try:
        gram = np.load(path)
    except (OSError, ValueError) as exc:
        raise ConfigError(f"cannot load gram from {path}: {exc}") from exc
    return regcore.RegProblem(gram, np.zeros(gram.shape[0]))


def emit_sweep(problem_source, strategies: Sequence[str], orders: Sequence[int],
               grid: Sequence[float], out_path, mode=None) -> list[regcore.SweepRow]:
    """Write ``sweep_objective`` rows as CSV; infeasible combinations appear as ``nan``."""
    problem = load_problem(problem_source)
    rows = regcore.sweep_objective(problem, strategies, orders, grid, mode) if len(grid) else []
    try:
        with open(out_path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(SWEEP_CSV_HEADER)
            for r in rows:
                w.writerow((r.strategy, r.c, repr(r.mu_bar), repr(r.objective), repr(r.cond),
                            repr(r.residual_norm)))
    except OSError as exc:
        raise OSError(f"cannot write sweep to {out_path}: {exc}") from exc
    return rows
