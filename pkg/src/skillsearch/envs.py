"""Episodic benchmark tasks scored on executed joint trajectories.

Both rewards are non-positive. Velocity and acceleration penalties are L1
sums over every step ``t = 1..T`` and every joint. Only the end-effector
point is used for distances and collisions.

Task files are YAML::

    kind: viapoint            # or: obstacle
    start_joints: [...]       # DMP start, also the IK warm start
    goal_joints: [...]        # DMP goal (FK of it for Cartesian policies)
    viapoints:                # viapoint tasks
      - {step: 1, position: [x, y, z]}
    obstacles: [[x, y, z]]    # obstacle tasks
    goal: [x, y, z]           # obstacle tasks; defaults to FK(goal_joints)
    radius: 0.17
    weights: {c_dist: 10}     # any subset of the task's weights
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Union

import numpy as np

from . import config, dmp, ik
from .kinematics import ContractError, KinematicChain, fk_positions, forward_kinematics

log = logging.getLogger(__name__)

FAILURE_REWARD = -1e12
N_STEPS = 101


def _joint_vectors(start, goal):
    start = np.array(start, dtype=float)
    goal = np.array(goal, dtype=float)
    if start.ndim != 1 or start.shape != goal.shape:
        raise ContractError("start_joints and goal_joints must be vectors of equal length")
    start.setflags(write=False)
    goal.setflags(write=False)
    return start, goal


def _l1_terms(velocities, accelerations):
    if velocities is None or accelerations is None:
        raise ContractError("reward needs a trajectory with velocities and accelerations")
    return float(np.sum(np.abs(velocities))), float(np.sum(np.abs(accelerations)))


@dataclass(frozen=True)
class ViapointTask:
    """Pass through ``positions[k]`` at 1-based step ``steps[k]``."""

    steps: tuple[int, ...]
    positions: np.ndarray
    start_joints: np.ndarray
    goal_joints: np.ndarray
    c_dist: float = 10.0
    c_vel: float = 1e-3
    c_acc: float = 1e-5
    n_steps: int = N_STEPS
    name: str = "viapoint"

    def __post_init__(self):
        steps = tuple(int(s) for s in self.steps)
        positions = np.array(self.positions, dtype=float).reshape(-1, 3)
        if len(steps) != positions.shape[0] or not steps:
            raise ContractError("need one position per viapoint step")
        for s in steps:
            if not 1 <= s <= self.n_steps:
                raise ContractError(f"viapoint step {s} outside [1, {self.n_steps}]")
        start, goal = _joint_vectors(self.start_joints, self.goal_joints)
        positions.setflags(write=False)
        object.__setattr__(self, "steps", steps)
        object.__setattr__(self, "positions", positions)
        object.__setattr__(self, "start_joints", start)
        object.__setattr__(self, "goal_joints", goal)

    def score(self, ee_positions, velocities, accelerations) -> float:
        """Reward from end-effector positions ``(T, 3)`` and joint derivatives."""
        ee = np.asarray(ee_positions, dtype=float)
        if ee.shape[0] != self.n_steps:
            raise ContractError(f"trajectory has {ee.shape[0]} steps, task expects {self.n_steps}")
        idx = np.asarray(self.steps) - 1
        dist = float(np.sum(np.linalg.norm(ee[idx] - self.positions, axis=1)))
        vel, acc = _l1_terms(velocities, accelerations)
        return -self.c_dist * dist - self.c_vel * vel - self.c_acc * acc


def obstacle_penalty(d, radius: float = 0.17):
    """``max(0, 1 - d / radius)``: one on contact, zero from ``radius`` outward."""
    return np.maximum(0.0, 1.0 - np.asarray(d, dtype=float) / radius)


@dataclass(frozen=True)
class ObstacleTask:
    obstacles: np.ndarray
    goal: np.ndarray
    start_joints: np.ndarray
    goal_joints: np.ndarray
    radius: float = 0.17
    c_obs: float = 10.0
    c_goal: float = 100.0
    c_vel: float = 1e-2
    c_acc: float = 1e-5
    n_steps: int = N_STEPS
    name: str = "obstacle"

    def __post_init__(self):
        if not self.radius > 0:
            raise ContractError("obstacle radius must be positive")
        obstacles = np.array(self.obstacles, dtype=float).reshape(-1, 3)
        goal = np.array(self.goal, dtype=float)
        if goal.shape != (3,):
            raise ContractError("goal must be a 3-vector")
        start, goal_q = _joint_vectors(self.start_joints, self.goal_joints)
        for name, arr in (("obstacles", obstacles), ("goal", goal)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "start_joints", start)
        object.__setattr__(self, "goal_joints", goal_q)

    def closest_approach(self, ee_positions) -> np.ndarray:
        ee = np.asarray(ee_positions, dtype=float)
        return np.linalg.norm(ee[:, None, :] - self.obstacles[None, :, :], axis=2).min(axis=0)

    def score(self, ee_positions, velocities, accelerations) -> float:
        ee = np.asarray(ee_positions, dtype=float)
        if ee.shape[0] != self.n_steps:
            raise ContractError(f"trajectory has {ee.shape[0]} steps, task expects {self.n_steps}")
        obs = float(np.sum(obstacle_penalty(self.closest_approach(ee), self.radius)))
        miss = float(np.linalg.norm(ee[-1] - self.goal))
        vel, acc = _l1_terms(velocities, accelerations)
        return -self.c_obs * obs - self.c_goal * miss - self.c_vel * vel - self.c_acc * acc


Task = Union[ViapointTask, ObstacleTask]


def viapoint_reward(task: ViapointTask, trajectory: dmp.Trajectory, chain: KinematicChain) -> float:
    if not isinstance(task, ViapointTask):
        raise ContractError("viapoint_reward needs a ViapointTask")
    return task.score(fk_positions(chain, trajectory.positions), trajectory.velocities, trajectory.accelerations)


def obstacle_reward(task: ObstacleTask, trajectory: dmp.Trajectory, chain: KinematicChain) -> float:
    if not isinstance(task, ObstacleTask):
        raise ContractError("obstacle_reward needs an ObstacleTask")
    return task.score(fk_positions(chain, trajectory.positions), trajectory.velocities, trajectory.accelerations)


def reward(task: Task, trajectory: dmp.Trajectory, chain: KinematicChain) -> float:
    return task.score(fk_positions(chain, trajectory.positions), trajectory.velocities, trajectory.accelerations)


# ---------------------------------------------------------------- policies and objectives


def policy_template(task: Task, chain: KinematicChain, space: dmp.Space,
                    canonical: dmp.CanonicalSystem | None = None) -> dmp.DmpPolicy:
    """Zero-weight DMP from the task's start to its goal configuration."""
    if task.start_joints.shape != (chain.n_joints,):
        raise ContractError(f"task has {task.start_joints.size} joints, chain has {chain.n_joints}")
    canonical = canonical or dmp.CanonicalSystem(n_steps=task.n_steps)
    if canonical.n_steps != task.n_steps:
        raise ContractError("canonical system and task disagree on the number of steps")
    if space == "joint":
        return dmp.DmpPolicy.joint(task.start_joints, task.goal_joints, canonical)
    if space == "cartesian":
        return dmp.DmpPolicy.cartesian(forward_kinematics(chain, task.start_joints),
                                       forward_kinematics(chain, task.goal_joints), canonical)
    raise ContractError(f"unknown space {space!r}")


@dataclass
class EpisodeObjective:
    """Genome -> reward for one (task, chain, space, solver) setup.

    Pure: the same genome always gives the same reward. ``evaluations``
    counts calls and is the only mutable state.
    """

    task: Task
    chain: KinematicChain
    template: dmp.DmpPolicy
    solver: ik.Solver = "approx"
    settings: ik.IkSettings = field(default_factory=ik.IkSettings)
    evaluations: int = 0

    @property
    def space(self) -> str:
        return self.template.space

    @property
    def genome_size(self) -> int:
        return self.template.genome_size

    def execute(self, genome) -> dmp.Trajectory:
        policy = self.template.with_genome(genome)
        return dmp.execute_policy(policy, self.chain, self.settings, self.solver, q0=self.task.start_joints)

    def __call__(self, genome) -> float:
        genome = np.asarray(genome, dtype=float)
        if genome.shape != (self.genome_size,):
            raise ContractError(f"genome must have {self.genome_size} entries, got {genome.shape}")
        self.evaluations += 1
        if not np.all(np.isfinite(genome)):
            log.warning("non-finite genome, reward %g", FAILURE_REWARD)
            return FAILURE_REWARD
        traj = self.execute(genome)
        arrays = (traj.positions, traj.velocities, traj.accelerations)
        if not all(np.all(np.isfinite(a)) for a in arrays):
            log.warning("non-finite trajectory, reward %g", FAILURE_REWARD)
            return FAILURE_REWARD
        value = reward(self.task, traj, self.chain)
        if not math.isfinite(value):
            log.warning("non-finite reward, replaced by %g", FAILURE_REWARD)
            return FAILURE_REWARD
        return value


def make_episode_objective(task: Task, chain: KinematicChain, template: dmp.DmpPolicy | None = None,
                           space: dmp.Space | None = None, solver: ik.Solver | None = None,
                           settings: ik.IkSettings | None = None) -> EpisodeObjective:
    """Build the reward function CMA-ES maximizes.

    ``template`` defaults to :func:`policy_template` for ``space``. Joint
    templates must match the chain; ``solver`` only applies to Cartesian
    policies and defaults to ``"approx"`` there.
    """
    if template is None:
        if space is None:
            raise ContractError("need a policy template or a space")
        template = policy_template(task, chain, space)
    if space is not None and template.space != space:
        raise ContractError(f"template is a {template.space} policy, requested space is {space}")
    if template.canonical.n_steps != task.n_steps:
        raise ContractError("policy and task disagree on the number of steps")
    if template.space == "joint":
        if solver is not None:
            raise ContractError("joint-space objectives do not use an IK solver")
        if template.n_dims != chain.n_joints:
            raise ContractError(f"joint template has {template.n_dims} dims, chain has {chain.n_joints}")
    elif solver not in (None, "approx", "exact"):
        raise ContractError(f"unknown IK solver {solver!r}")
    if task.start_joints.shape != (chain.n_joints,):
        raise ContractError(f"task has {task.start_joints.size} joints, chain has {chain.n_joints}")
    return EpisodeObjective(task, chain, template, solver or "approx", settings or ik.IkSettings())


# ---------------------------------------------------------------- files


_WEIGHTS = {"viapoint": ("c_dist", "c_vel", "c_acc"), "obstacle": ("c_obs", "c_goal", "c_vel", "c_acc")}


def task_from_dict(data: dict, chain: KinematicChain | None = None) -> Task:
    kind = config.require(data, "kind", "task")
    if kind not in _WEIGHTS:
        config.fail(data, f"task kind must be 'viapoint' or 'obstacle', got {kind!r}")
    n_steps = int(config.number(data, "n_steps", "task", default=N_STEPS))
    start_node = config.require(data, "start_joints", "task")
    n = len(start_node) if isinstance(start_node, list) else 0
    start = config.vector(data, "start_joints", n, "task")
    goal_joints = config.vector(data, "goal_joints", n, "task")
    if chain is not None and n != chain.n_joints:
        config.fail(start_node, f"start_joints has {n} entries, chain has {chain.n_joints} joints")
    weights_node = data.get("weights", {})
    if not isinstance(weights_node, dict):
        config.fail(data, "'weights' must be a mapping")
    for key in weights_node:
        if key not in _WEIGHTS[kind]:
            config.fail(weights_node, f"unknown weight '{key}' for a {kind} task (allowed: {', '.join(_WEIGHTS[kind])})")
    weights = {k: config.number(weights_node, k, "weights") for k in weights_node}
    name = str(data.get("name", kind))
    try:
        if kind == "viapoint":
            points = config.require(data, "viapoints", "viapoint task")
            if not isinstance(points, list) or not points:
                config.fail(data, "'viapoints' must be a non-empty list")
            steps, positions = [], []
            for k, node in enumerate(points):
                step = config.number(node, "step", f"viapoint {k}")
                if step != int(step) or not 1 <= step <= n_steps:
                    config.fail(node, f"viapoint {k}: step must be an integer in [1, {n_steps}], got {step:g}")
                steps.append(int(step))
                positions.append(config.vector(node, "position", 3, f"viapoint {k}"))
            return ViapointTask(tuple(steps), np.array(positions), start, goal_joints,
                                n_steps=n_steps, name=name, **weights)
        obstacles_node = config.require(data, "obstacles", "obstacle task")
        if not isinstance(obstacles_node, list) or not obstacles_node:
            config.fail(data, "'obstacles' must be a non-empty list")
        centers = [_located_vector(c, obstacles_node, f"obstacle {k}") for k, c in enumerate(obstacles_node)]
        if "goal" in data:
            goal = config.vector(data, "goal", 3, "task")
        elif chain is not None:
            goal = forward_kinematics(chain, goal_joints).position
        else:
            config.fail(data, "obstacle task without 'goal' needs a chain to place the goal")
        radius = config.number(data, "radius", "task", default=0.17)
        return ObstacleTask(np.array(centers), goal, start, goal_joints, radius=radius,
                            n_steps=n_steps, name=name, **weights)
    except ContractError as exc:
        config.fail(data, str(exc))


def _located_vector(node, parent, what: str) -> np.ndarray:
    wrapper = config.LocatedDict(center=node)
    wrapper.line = getattr(node, "line", parent.line)
    wrapper.source = parent.source
    return config.vector(wrapper, "center", 3, what)


def load_task(path: str | Path, chain: KinematicChain | None = None) -> Task:
    return task_from_dict(config.load_file(path), chain)


def builtin_task_path(name: str) -> Path:
    """Path of a shipped task file: ``"viapoint"`` or ``"obstacle"``."""
    return Path(str(resources.files("skillsearch").joinpath(f"data/{name}.yaml")))


def builtin_task(name: str, chain: KinematicChain | None = None) -> Task:
    return load_task(builtin_task_path(name), chain)
