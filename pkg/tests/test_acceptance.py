"""Acceptance criteria 1-8, each checked at its stated tolerance.

Every test records one PASS/FAIL line that is printed in the pytest terminal
summary. Criteria 6-8 run the shipped experiment configurations at desk
scale (10 runs x 1000 episodes per setup) and take several minutes.
"""
import math
import time
from pathlib import Path

import numpy as np
import pytest

from skillsearch import cmaes, dmp, harness, ik
from skillsearch import quaternion as quat
from skillsearch.kinematics import (
    MetricWeights,
    Pose,
    default_chain,
    forward_kinematics,
    geometric_jacobian,
    planar_chain,
    pose_distance,
)

from conftest import ACCEPTANCE_LINES, random_chain

CONFIGS = Path(__file__).resolve().parent.parent / "configs"


def record(number: int, ok: bool, detail: str):
    ACCEPTANCE_LINES.append(f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}")


@pytest.fixture(scope="module", autouse=True)
def warm_kernels():
    # compile or load every kernel once so the timings below measure the checks only
    chain = default_chain()
    forward_kinematics(chain, np.zeros(7))
    geometric_jacobian(chain, np.zeros(7))
    pose_distance(Pose([0, 0, 0]), Pose([1, 0, 0]))
    q = quat.from_axis_angle([0, 0, 1], 0.3)
    quat.quaternion_log(quat.normalize(quat.multiply(q, quat.conjugate(q))))
    quat.angle_between(q, q)
    ik.solve_exact(chain, forward_kinematics(chain, np.zeros(7)), np.zeros(7))
    ik.solve_approx(chain, forward_kinematics(chain, np.zeros(7)), np.zeros(7))
    dmp.rollout(dmp.DmpPolicy.cartesian(Pose([0, 0, 0]), Pose([1, 0, 0])))


def fd_jacobian(chain, q, h=1e-6):
    J = np.zeros((6, chain.n_joints))
    for i in range(chain.n_joints):
        e = np.zeros(chain.n_joints)
        e[i] = h
        plus, minus = forward_kinematics(chain, q + e), forward_kinematics(chain, q - e)
        J[:3, i] = (plus.position - minus.position) / (2 * h)
        rel = quat.normalize(quat.multiply(plus.orientation, quat.conjugate(minus.orientation)))
        J[3:, i] = 2 * quat.quaternion_log(rel) / (2 * h)
    return J


# ---------------------------------------------------------------- 1


def test_criterion_1_kinematics():
    start = time.perf_counter()
    rng = np.random.default_rng(1)
    planar = planar_chain((1.0, 1.0))
    fk_err = 0.0
    for q in rng.uniform(-math.pi, math.pi, size=(1000, 2)):
        analytic = np.array([math.cos(q[0]) + math.cos(q[0] + q[1]), math.sin(q[0]) + math.sin(q[0] + q[1]), 0])
        fk_err = max(fk_err, float(np.max(np.abs(forward_kinematics(planar, q).position - analytic))))
    chain = random_chain(rng)
    jac_err = 0.0
    for q in rng.uniform(-2.9, 2.9, size=(100, 7)):
        jac_err = max(jac_err, float(np.max(np.abs(geometric_jacobian(chain, q) - fd_jacobian(chain, q)))))
    elapsed = time.perf_counter() - start
    ok = fk_err < 1e-10 and jac_err < 1e-5 and elapsed < 5
    record(1, ok, f"planar FK err {fk_err:.1e} (<1e-10), Jacobian vs FD {jac_err:.1e} (<1e-5), {elapsed:.2f}s (<5s)")
    assert ok


# ---------------------------------------------------------------- 2


def test_criterion_2_metric():
    start = time.perf_counter()
    rng = np.random.default_rng(2)
    w = MetricWeights(0.7, 1.3)
    worst = {"symmetry": 0.0, "sign flip": 0.0, "w_rot=0": 0.0}
    for _ in range(200):
        a = Pose(rng.normal(size=3), quat.normalize(rng.normal(size=4)))
        b = Pose(rng.normal(size=3), quat.normalize(rng.normal(size=4)))
        d = pose_distance(a, b, w)
        worst["symmetry"] = max(worst["symmetry"], abs(pose_distance(b, a, w) - d))
        worst["sign flip"] = max(worst["sign flip"], abs(pose_distance(a.flipped(), b, w) - d),
                                 abs(pose_distance(a, b.flipped(), w) - d))
        worst["w_rot=0"] = max(worst["w_rot=0"], abs(pose_distance(a, b, MetricWeights(1, 0))
                                                     - float(np.sum((a.position - b.position) ** 2))))
    half = abs(pose_distance(Pose([0, 0, 0]), Pose([0, 0, 0], quat.from_axis_angle([0, 0, 1], math.pi)),
                             MetricWeights(0, 1)) - (math.pi / 2) ** 2)
    elapsed = time.perf_counter() - start
    ok = max(worst.values()) < 1e-12 and half < 1e-12 and elapsed < 1
    record(2, ok, ", ".join(f"{k} {v:.1e}" for k, v in worst.items())
           + f", half-turn {half:.1e} (all <1e-12), {elapsed:.2f}s (<1s)")
    assert ok


# ---------------------------------------------------------------- 3


def test_criterion_3_ik():
    start = time.perf_counter()
    rng = np.random.default_rng(3)
    chain = default_chain()
    standalone = ik.IkSettings(restarts=20)
    worst_round_trip = 0.0
    in_limits = True
    for _ in range(100):
        q_star, q_start = rng.uniform(chain.lower, chain.upper), rng.uniform(chain.lower, chain.upper)
        res = ik.solve_approx(chain, forward_kinematics(chain, q_star), q_start, standalone)
        worst_round_trip = max(worst_round_trip, res.residual)
        in_limits &= chain.within_limits(res.q)

    # random starts can settle in the folded corner (q2 at its limit), a genuine
    # local minimum of the box-constrained problem, so restarts are enabled here too
    planar = planar_chain((1.0, 1.0))
    position_only = ik.IkSettings(weights=MetricWeights(1.0, 0.0), restarts=20)
    projection = 0.0
    for _ in range(50):
        direction = rng.normal(size=2)
        direction /= np.linalg.norm(direction)
        target = np.r_[direction * rng.uniform(2.1, 4.0), 0.0]
        res = ik.solve_approx(planar, Pose(target), rng.uniform(-3, 3, 2), position_only)
        closest = np.r_[2.0 * direction, 0.0]
        projection = max(projection, float(np.linalg.norm(res.achieved.position - closest)))
        in_limits &= planar.within_limits(res.q)

    immobile = True
    for _ in range(30):
        q_prev = rng.uniform(chain.lower, chain.upper)
        direction = rng.normal(size=3)
        res = ik.solve_exact(chain, Pose(2.0 * direction / np.linalg.norm(direction),
                                         quat.normalize(rng.normal(size=4))), q_prev)
        immobile &= (not res.converged) and res.q.tobytes() == q_prev.tobytes()
        in_limits &= chain.within_limits(res.q)

    grad_err = 0.0
    settings = ik.IkSettings(weights=MetricWeights(1.0, 0.7), smoothness=0.3)
    for _ in range(30):
        q, q_prev = rng.uniform(-2.5, 2.5, 7), rng.uniform(-2.5, 2.5, 7)
        target = Pose(rng.normal(size=3) * 0.5, quat.normalize(rng.normal(size=4)))
        _, g = ik.approx_objective(chain, q, target, q_prev, settings)
        fd = np.zeros(7)
        for i in range(7):
            e = np.zeros(7)
            e[i] = 1e-7
            fd[i] = (ik.approx_objective(chain, q + e, target, q_prev, settings)[0]
                     - ik.approx_objective(chain, q - e, target, q_prev, settings)[0]) / 2e-7
        grad_err = max(grad_err, float(np.linalg.norm(g - fd) / np.linalg.norm(fd)))
    elapsed = time.perf_counter() - start
    ok = (worst_round_trip < 1e-6 and projection < 1e-3 and immobile and in_limits
          and grad_err < 1e-4 and elapsed < 30)
    record(3, ok, f"round trip max residual {worst_round_trip:.1e} (<1e-6), projection err {projection:.1e} "
                  f"(<1e-3), exact immobile {immobile}, within limits {in_limits}, gradient rel err "
                  f"{grad_err:.1e} (<1e-4), {elapsed:.1f}s (<30s)")
    assert ok


# ---------------------------------------------------------------- 4


def test_criterion_4_dmp():
    start = time.perf_counter()
    rng = np.random.default_rng(4)
    pos_ratio = 0.0
    for _ in range(20):
        y0, g = rng.uniform(-2, 2, 7), rng.uniform(-2, 2, 7)
        tr = dmp.rollout(dmp.DmpPolicy.joint(y0, g))
        pos_ratio = max(pos_ratio, float(np.max(np.abs(tr.positions[-1] - g) / np.abs(g - y0))))
    q0 = quat.normalize(rng.normal(size=4))
    goal = quat.multiply(quat.from_axis_angle([0, 0, 1], math.pi / 2), q0)
    zero = dmp.rollout(dmp.DmpPolicy.cartesian(Pose([0, 0, 0], q0), Pose([0, 0, 0], goal)))
    rot_final = quat.angle_between(zero.orientations[-1], goal)

    norm_err = 0.0
    for _ in range(20):
        p = dmp.DmpPolicy.cartesian(Pose([0, 0, 0], quat.normalize(rng.normal(size=4))),
                                    Pose([0, 0, 0], quat.normalize(rng.normal(size=4))))
        tr = dmp.rollout(p.with_genome(rng.normal(size=300) * 200))
        norm_err = max(norm_err, float(np.max(np.abs(np.linalg.norm(tr.orientations, axis=1) - 1))))

    t = np.linspace(0, 1, 101)
    imitation = 0.0
    for cycles in (1, 2, 3):
        y = 10 * t ** 3 - 15 * t ** 4 + 6 * t ** 5 + 0.2 * np.sin(2 * np.pi * cycles * t) * np.sin(np.pi * t)
        rec = dmp.rollout(dmp.imitate(dmp.Trajectory(y[:, None], None, None, 0.01))).positions[:, 0]
        imitation = max(imitation, float(np.sqrt(np.mean((rec - y) ** 2)) / np.ptp(y)))

    base = dmp.DmpPolicy.joint(np.zeros(2), np.ones(2)).with_genome(rng.normal(size=100) * 20)
    ref = dmp.rollout(base)
    psi = dmp.basis_activations(base.canonical)
    local = True
    for i in range(50):
        w = np.array(base.weights)
        w[0, i] += 25.0
        tr = dmp.rollout(dmp.DmpPolicy("joint", base.start, base.goal, w))
        first = int(np.flatnonzero(psi[:, i] > 1e-10)[0])
        local &= tr.positions[:first + 1].tobytes() == ref.positions[:first + 1].tobytes()
        local &= tr.accelerations[:first].tobytes() == ref.accelerations[:first].tobytes()
    elapsed = time.perf_counter() - start
    ok = pos_ratio < 0.01 and rot_final < 0.02 and norm_err < 1e-9 and imitation < 0.02 and local and elapsed < 10
    record(4, ok, f"goal err/span {pos_ratio:.1e} (<1e-2), orientation {rot_final:.1e} rad (<0.02), unit norm "
                  f"{norm_err:.1e} (<1e-9), imitation RMSE/range {imitation:.1e} (<0.02), locality {local}, "
                  f"{elapsed:.2f}s (<10s)")
    assert ok


# ---------------------------------------------------------------- 5


def test_criterion_5_cmaes():
    start = time.perf_counter()
    finals = [cmaes.optimize(lambda x: -float(x @ x), np.ones(10), 0.5, 5000, seed)[1] for seed in range(20)]
    median = float(np.median(finals))

    def rosenbrock(x):
        return -float(np.sum(100 * (x[1:] - x[:-1] ** 2) ** 2 + (1 - x[:-1]) ** 2)) - 1.0

    a = cmaes.search(rosenbrock, np.zeros(5), 0.3, 600, 8, keep_states=True)
    b = cmaes.search(lambda x: -math.exp(-rosenbrock(x)), np.zeros(5), 0.3, 600, 8, keep_states=True)
    invariant = all(s.mean.tobytes() == t.mean.tobytes() and s.C.tobytes() == t.C.tobytes() and s.sigma == t.sigma
                    for s, t in zip(a.states, b.states)) and len(a.states) == len(b.states)
    c = cmaes.search(rosenbrock, np.zeros(5), 0.3, 600, 8)
    deterministic = c.history.tobytes() == a.history.tobytes() and c.state.C.tobytes() == a.state.C.tobytes()
    elapsed = time.perf_counter() - start
    ok = median > -1e-10 and invariant and deterministic and elapsed < 60
    record(5, ok, f"sphere-10 median best {median:.1e} (>-1e-10), rank invariance {invariant}, "
                  f"determinism {deterministic}, {elapsed:.1f}s (<60s)")
    assert ok


# ---------------------------------------------------------------- 6-8


SETUPS = ("joint", "approx", "exact")


def run_task(task: str, root: Path) -> tuple[dict, float]:
    start = time.perf_counter()
    curves = {}
    for setup in SETUPS:
        cfg = harness.load_config(CONFIGS / f"{task}-{setup}.yaml")
        assert (cfg.runs, cfg.episodes) == (10, 1000)
        curves[setup] = harness.run_experiment(cfg, root / f"{task}-{setup}")
    return curves, time.perf_counter() - start


@pytest.fixture(scope="module")
def experiment_root(tmp_path_factory):
    return tmp_path_factory.mktemp("acceptance")


@pytest.fixture(scope="module")
def viapoint_curves(experiment_root):
    return run_task("viapoint", experiment_root / "first")


@pytest.fixture(scope="module")
def obstacle_curves(experiment_root):
    return run_task("obstacle", experiment_root / "first")


def describe(curves):
    return ", ".join(f"{k} {c.mean[-1]:.4f}+-{c.stderr[-1]:.4f}" for k, c in curves.items())


@pytest.mark.slow
def test_criterion_6_viapoint_ordering(viapoint_curves):
    curves, elapsed = viapoint_curves
    approx_vs_exact = harness.bands_separated(curves["approx"], curves["exact"])
    approx_vs_joint = curves["approx"].mean[-1] >= curves["joint"].mean[-1]
    joint_bands = harness.bands_separated(curves["approx"], curves["joint"])
    ok = approx_vs_exact and approx_vs_joint
    record(6, ok, f"viapoint final best-so-far ({describe(curves)}); approx>exact bands separated "
                  f"{approx_vs_exact}, approx>=joint {approx_vs_joint} (bands separated {joint_bands}); "
                  f"{elapsed / 60:.1f} min (target <15)")
    assert ok


@pytest.mark.slow
def test_criterion_7_obstacle_ordering(obstacle_curves):
    curves, elapsed = obstacle_curves
    ok = harness.bands_separated(curves["approx"], curves["exact"])
    record(7, ok, f"obstacle final best-so-far ({describe(curves)}); approx>exact bands separated {ok}; "
                  f"{elapsed / 60:.1f} min (target <15)")
    assert ok


@pytest.mark.slow
def test_criterion_8_reproducible(viapoint_curves, obstacle_curves, experiment_root):
    first = experiment_root / "first"
    second = experiment_root / "second"
    for task in ("viapoint", "obstacle"):
        run_task(task, second)
    files = sorted(p.relative_to(first) for p in first.rglob("*.csv"))
    mismatched = [str(f) for f in files if (first / f).read_bytes() != (second / f).read_bytes()]
    ok = bool(files) and not mismatched and len(files) == len(list(second.rglob("*.csv")))
    record(8, ok, f"{len(files)} CSV files compared byte for byte, {len(mismatched)} differ")
    assert ok
