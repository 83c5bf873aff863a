"""Experiment runner: seeded CMA-ES runs, learning curves and reward probes.

An experiment file looks like::

    name: viapoint-approx
    task: viapoint              # shipped task name, or a path
    chain: null                 # null = shipped 7-DOF arm, or a path
    space: cartesian            # joint | cartesian
    ik: approx                  # exact | approx; cartesian only
    sigma: {joint: 125, cartesian: 50}
    episodes: 1000
    runs: 30
    base_seed: 0
    metric: {w_pos: 1.0, w_rot: 0.01}
    ik_settings: {max_iterations: 100}   # optional solver overrides
    output: results/viapoint-approx

Relative ``task``/``chain`` paths are resolved against the experiment file;
``output`` is relative to the working directory.

Outputs are written with 17 significant digits so that reading the CSVs
back and re-aggregating them reproduces ``aggregate.csv`` exactly.
"""
from __future__ import annotations

import csv
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from . import cmaes, config, envs, ik
from .kinematics import ContractError, KinematicChain, MetricWeights, default_chain, load_chain

log = logging.getLogger(__name__)

FLOAT = "%.17g"


def fmt(x: float) -> str:
    return FLOAT % x


@dataclass(frozen=True)
class ExperimentConfig:
    task: str
    space: str
    ik: str | None = None
    chain: str | None = None
    sigma_joint: float = 125.0
    sigma_cartesian: float = 50.0
    episodes: int = 1000
    runs: int = 30
    base_seed: int = 0
    w_pos: float = 1.0
    w_rot: float = 1.0
    ik_overrides: tuple[tuple[str, float], ...] = ()
    output: str | None = None
    name: str = ""
    source: str = "<config>"
    base_dir: str = "."

    def __post_init__(self):
        if self.space not in ("joint", "cartesian"):
            raise ContractError(f"space must be 'joint' or 'cartesian', got {self.space!r}")
        if self.space == "joint" and self.ik is not None:
            raise ContractError("joint-space experiments take no 'ik' field")
        if self.space == "cartesian" and self.ik not in ("exact", "approx"):
            raise ContractError("cartesian experiments need ik: exact or approx")
        if self.runs < 1:
            raise ContractError("runs must be at least 1")
        if not self.sigma > 0:
            raise ContractError("sigma must be positive")
        MetricWeights(self.w_pos, self.w_rot)

    @property
    def sigma(self) -> float:
        return self.sigma_joint if self.space == "joint" else self.sigma_cartesian

    @property
    def label(self) -> str:
        return self.name or (self.space if self.space == "joint" else f"{self.space}-{self.ik}")

    def ik_settings(self) -> ik.IkSettings:
        data = dict(self.ik_overrides)
        data.update(w_pos=self.w_pos, w_rot=self.w_rot)
        return ik.IkSettings.from_dict(data)

    def resolve(self, path: str) -> Path:
        p = Path(path)
        return p if p.is_absolute() else Path(self.base_dir) / p

    def load_chain(self) -> KinematicChain:
        return default_chain() if self.chain is None else load_chain(self.resolve(self.chain))

    def load_task(self, chain: KinematicChain) -> envs.Task:
        if self.task in ("viapoint", "obstacle"):
            return envs.builtin_task(self.task, chain)
        return envs.load_task(self.resolve(self.task), chain)

    def objective(self) -> envs.EpisodeObjective:
        chain = self.load_chain()
        task = self.load_task(chain)
        if self.space == "joint":
            return envs.make_episode_objective(task, chain, space="joint")
        return envs.make_episode_objective(task, chain, space="cartesian", solver=self.ik,
                                           settings=self.ik_settings())

    def build(self) -> envs.EpisodeObjective:
        """Load every referenced file and check the budget; raises before any work starts."""
        objective = self.objective()
        lam = cmaes.Strategy.default(objective.genome_size).popsize
        if self.episodes < lam:
            raise ContractError(f"episodes ({self.episodes}) must be at least one generation ({lam})")
        return objective

    def to_dict(self) -> dict:
        out = {f.name: getattr(self, f.name) for f in fields(self) if f.name not in ("source", "base_dir")}
        out["ik_overrides"] = dict(self.ik_overrides)
        return out


_TOP_KEYS = {"name", "task", "chain", "space", "ik", "sigma", "episodes", "runs", "base_seed",
             "metric", "ik_settings", "output"}


def _integer(node, key, what, default):
    value = node.get(key, default)
    if isinstance(value, bool) or not isinstance(value, int):
        config.fail(node, f"'{key}' in {what} must be an integer")
    return value


def config_from_dict(data: dict, base_dir: str | Path = ".", overrides: dict | None = None) -> ExperimentConfig:
    """Build an experiment from a parsed file; ``overrides`` (explicit flags) win."""
    for key in data:
        if key not in _TOP_KEYS:
            config.fail(data, f"unknown experiment field '{key}'")
    kw = {"name": str(data.get("name", "")), "base_dir": str(base_dir),
          "source": getattr(data, "source", "<config>")}
    kw["task"] = str(config.require(data, "task", "experiment"))
    kw["space"] = config.require(data, "space", "experiment")
    if data.get("chain") is not None:
        kw["chain"] = str(data["chain"])
    if data.get("ik") is not None:
        kw["ik"] = data["ik"]
    sigma = data.get("sigma", {})
    if not isinstance(sigma, dict):
        config.fail(data, "'sigma' must be a mapping with 'joint' and/or 'cartesian'")
    for key in sigma:
        if key not in ("joint", "cartesian"):
            config.fail(sigma, f"unknown sigma entry '{key}'")
    if "joint" in sigma:
        kw["sigma_joint"] = config.number(sigma, "joint", "sigma")
    if "cartesian" in sigma:
        kw["sigma_cartesian"] = config.number(sigma, "cartesian", "sigma")
    kw["episodes"] = _integer(data, "episodes", "experiment", 1000)
    kw["runs"] = _integer(data, "runs", "experiment", 30)
    kw["base_seed"] = _integer(data, "base_seed", "experiment", 0)
    metric = data.get("metric", {})
    if not isinstance(metric, dict):
        config.fail(data, "'metric' must be a mapping")
    for key in metric:
        if key not in ("w_pos", "w_rot"):
            config.fail(metric, f"unknown metric weight '{key}'")
    kw["w_pos"] = config.number(metric, "w_pos", "metric", default=1.0)
    kw["w_rot"] = config.number(metric, "w_rot", "metric", default=1.0)
    ik_node = data.get("ik_settings", {})
    if not isinstance(ik_node, dict):
        config.fail(data, "'ik_settings' must be a mapping")
    allowed = set(ik.IkSettings.__dataclass_fields__) - {"weights"}
    for key in ik_node:
        if key not in allowed:
            config.fail(ik_node, f"unknown IK setting '{key}'")
    kw["ik_overrides"] = tuple(sorted((k, ik_node[k]) for k in ik_node))
    if data.get("output") is not None:
        kw["output"] = str(data["output"])
    kw.update({k: v for k, v in (overrides or {}).items() if v is not None})
    try:
        cfg = ExperimentConfig(**kw)
        cfg.ik_settings()
    except (ContractError, TypeError) as exc:
        config.fail(data, str(exc))
    return cfg


def load_config(path: str | Path, overrides: dict | None = None, check: bool = True) -> ExperimentConfig:
    """Parse an experiment file. With ``check`` the chain and task files are loaded too."""
    path = Path(path)
    data = config.load_file(path)
    cfg = config_from_dict(data, path.parent, overrides)
    if check:
        try:
            cfg.build()
        except ContractError as exc:
            config.fail(data, str(exc))
    return cfg


# ---------------------------------------------------------------- learning curves


@dataclass
class LearningCurve:
    mean: np.ndarray
    stderr: np.ndarray
    histories: np.ndarray  # (runs, episodes) best-so-far
    rewards: np.ndarray = field(repr=False, default=None)  # (runs, episodes) raw rewards
    label: str = ""

    @property
    def runs(self) -> int:
        return self.histories.shape[0]

    @property
    def episodes(self) -> int:
        return self.histories.shape[1]

    def band(self, episode: int | None = None) -> tuple[float, float]:
        """``(mean - stderr, mean + stderr)`` at a 1-based episode (default: last)."""
        k = (episode or self.episodes) - 1
        return float(self.mean[k] - self.stderr[k]), float(self.mean[k] + self.stderr[k])


def aggregate(histories) -> tuple[np.ndarray, np.ndarray]:
    """Mean and standard error (``std(ddof=1) / sqrt(runs)``, zero for one run)."""
    H = np.asarray(histories, dtype=float)
    mean = H.mean(axis=0)
    if H.shape[0] < 2:
        return mean, np.zeros_like(mean)
    return mean, H.std(axis=0, ddof=1) / np.sqrt(H.shape[0])


def bands_separated(better: LearningCurve, worse: LearningCurve, episode: int | None = None) -> bool:
    """True when the lower edge of ``better`` lies strictly above the upper edge of ``worse``."""
    return better.band(episode)[0] > worse.band(episode)[1]


def _single_run(cfg: ExperimentConfig, objective: envs.EpisodeObjective, run: int) -> cmaes.SearchResult:
    seed = cfg.base_seed + run
    log.info("%s: run %d (seed %d)", cfg.label, run, seed)
    return cmaes.search(objective, np.zeros(objective.genome_size), cfg.sigma, cfg.episodes, seed)


def write_run_csv(path: Path, rewards, history):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["episode", "reward", "best_so_far"])
        for k, (r, b) in enumerate(zip(rewards, history), start=1):
            w.writerow([k, fmt(r), fmt(b)])


def write_aggregate_csv(path: Path, mean, stderr):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["episode", "mean", "stderr"])
        for k, (m, s) in enumerate(zip(mean, stderr), start=1):
            w.writerow([k, fmt(m), fmt(s)])


def read_column(path: Path, column: str) -> np.ndarray:
    with open(path, newline="") as fh:
        return np.array([float(row[column]) for row in csv.DictReader(fh)])


def run_experiment(cfg: ExperimentConfig, output: str | Path | None = None, workers: int = 1) -> LearningCurve:
    """All runs of one configuration, seeded ``base_seed + i``.

    With ``output`` (or ``cfg.output``) writes ``run_XXX.csv`` per run and
    ``aggregate.csv``. ``workers > 1`` spreads runs over threads; every run
    owns its objective and RNG, so results do not depend on scheduling.
    """
    cfg.build()
    out = output if output is not None else cfg.output
    out = Path(out) if out is not None else None

    def one(run):
        return _single_run(cfg, cfg.objective(), run)

    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            results = list(pool.map(one, range(cfg.runs)))
    else:
        results = [one(i) for i in range(cfg.runs)]

    histories = np.array([r.history for r in results])
    rewards = np.array([r.fitnesses for r in results])
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        for i, r in enumerate(results):
            write_run_csv(out / f"run_{i:03d}.csv", r.fitnesses, r.history)
        # aggregate from the written files so the two can never disagree
        histories = np.array([read_column(out / f"run_{i:03d}.csv", "best_so_far") for i in range(cfg.runs)])
        mean, stderr = aggregate(histories)
        write_aggregate_csv(out / "aggregate.csv", mean, stderr)
    else:
        mean, stderr = aggregate(histories)
    return LearningCurve(mean, stderr, histories, rewards, cfg.label)


def load_curve(directory: str | Path, label: str = "") -> LearningCurve:
    directory = Path(directory)
    files = sorted(directory.glob("run_*.csv"))
    if not files:
        raise ContractError(f"no run_*.csv files in {directory}")
    histories = np.array([read_column(f, "best_so_far") for f in files])
    rewards = np.array([read_column(f, "reward") for f in files])
    mean, stderr = aggregate(histories)
    return LearningCurve(mean, stderr, histories, rewards, label or directory.name)


# ---------------------------------------------------------------- probes


@dataclass
class SurfaceProbe:
    offsets: np.ndarray
    rewards: np.ndarray
    best_genome: np.ndarray
    best_reward: float
    index: int


def reward_surface_projection(cfg: ExperimentConfig, offsets: Sequence[float], index: int = 49,
                              output: str | Path | None = None) -> SurfaceProbe:
    """Train one run, then shift genome entry ``index`` of the best policy by each offset."""
    objective = cfg.build()
    if not 0 <= index < objective.genome_size:
        raise ContractError(f"probe index {index} outside genome of size {objective.genome_size}")
    trained = _single_run(cfg, objective, 0)
    rewards = []
    for off in offsets:
        genome = trained.best_x.copy()
        genome[index] += off
        rewards.append(objective(genome))
    probe = SurfaceProbe(np.asarray(offsets, dtype=float), np.array(rewards), trained.best_x,
                         trained.best_fitness, index)
    if output is not None:
        output = Path(output)
        output.parent.mkdir(parents=True, exist_ok=True)
        with open(output, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["offset", "reward"])
            for o, r in zip(probe.offsets, probe.rewards):
                w.writerow([fmt(o), fmt(r)])
    return probe


def weight_reward_map(cfg: ExperimentConfig, samples: int, seed: int,
                      output: str | Path | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Rewards of genomes drawn from the initial search distribution ``N(0, sigma^2 I)``.

    Row 0 is the distribution mean (the zero genome); the other
    ``samples - 1`` rows are random draws.
    """
    if samples < 1:
        raise ContractError("samples must be at least 1")
    objective = cfg.build()
    rng = np.random.default_rng(seed)
    genomes = np.zeros((samples, objective.genome_size))
    genomes[1:] = cfg.sigma * rng.standard_normal((samples - 1, objective.genome_size))
    rewards = np.array([objective(g) for g in genomes])
    if output is not None:
        output = Path(output)
        output.parent.mkdir(parents=True, exist_ok=True)
        with open(output, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["sample", "reward"] + [f"w{i}" for i in range(objective.genome_size)])
            for k, (g, r) in enumerate(zip(genomes, rewards)):
                w.writerow([k, fmt(r)] + [fmt(v) for v in g])
    return genomes, rewards


# ---------------------------------------------------------------- plotting


def plot_curves(curves: Sequence[LearningCurve], path: str | Path, title: str = "") -> Path:
    """Mean best-so-far reward with +-1 standard error bands, saved as SVG."""
    try:
        import matplotlib
        matplotlib.use("Agg")
        import matplotlib.pyplot as plt
    except ImportError as exc:  # optional dependency
        raise RuntimeError("plotting needs matplotlib (pip install 'artifact[plot]')") from exc
    fig, ax = plt.subplots(figsize=(6, 4))
    for c in curves:
        x = np.arange(1, c.episodes + 1)
        ax.plot(x, c.mean, label=c.label)
        ax.fill_between(x, c.mean - c.stderr, c.mean + c.stderr, alpha=0.25)
    ax.set_xlabel("episode")
    ax.set_ylabel("best reward so far")
    if title:
        ax.set_title(title)
    ax.legend()
    fig.tight_layout()
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    # fixed metadata keeps the file byte-stable across runs
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
    return path


def with_overrides(cfg: ExperimentConfig, **kw) -> ExperimentConfig:
    return replace(cfg, **{k: v for k, v in kw.items() if v is not None})
