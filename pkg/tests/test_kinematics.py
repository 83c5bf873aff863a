import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from skillsearch import config, quaternion as quat
from skillsearch.kinematics import (
    ContractError,
    JointDescriptor,
    KinematicChain,
    MetricWeights,
    Pose,
    chain_from_dict,
    fk_positions,
    forward_kinematics,
    geometric_jacobian,
    load_chain,
    pose_distance,
)

from conftest import one_joint_chain, random_chain, rot_z


def planar_fk(q, l1=1.0, l2=1.0):
    return np.array([l1 * math.cos(q[0]) + l2 * math.cos(q[0] + q[1]),
                     l1 * math.sin(q[0]) + l2 * math.sin(q[0] + q[1]), 0.0])


def fd_jacobian(chain, q, h=1e-6):
    J = np.zeros((6, chain.n_joints))
    for i in range(chain.n_joints):
        e = np.zeros(chain.n_joints)
        e[i] = h
        plus = forward_kinematics(chain, q + e)
        minus = forward_kinematics(chain, q - e)
        J[:3, i] = (plus.position - minus.position) / (2 * h)
        rel = quat.multiply(plus.orientation, quat.conjugate(minus.orientation))
        J[3:, i] = 2 * quat.quaternion_log(quat.normalize(rel)) / (2 * h)
    return J


# ---------------------------------------------------------------- FK


def test_fk_one_joint_zero():
    pose = forward_kinematics(one_joint_chain(), [0.0])
    np.testing.assert_array_equal(pose.position, [1, 0, 0])
    np.testing.assert_array_equal(pose.orientation, [1, 0, 0, 0])


def test_fk_one_joint_quarter_turn():
    pose = forward_kinematics(one_joint_chain(), [math.pi / 2])
    np.testing.assert_allclose(pose.position, [0, 1, 0], atol=1e-15)
    assert quat.angle_between(pose.orientation, rot_z(math.pi / 2)) < 1e-12


def test_fk_planar_example(planar):
    pose = forward_kinematics(planar, [math.pi / 2, -math.pi / 2])
    np.testing.assert_allclose(pose.position, [1, 1, 0], atol=1e-15)


def test_fk_planar_matches_analytic(planar, rng):
    for q in rng.uniform(-math.pi, math.pi, size=(200, 2)):
        np.testing.assert_allclose(forward_kinematics(planar, q).position, planar_fk(q), atol=1e-10)


def test_fk_dimension_mismatch(iiwa):
    with pytest.raises(ContractError):
        forward_kinematics(iiwa, np.zeros(6))
    with pytest.raises(ContractError):
        forward_kinematics(iiwa, np.full(7, np.nan))


def test_fk_deterministic(iiwa, rng):
    q = rng.uniform(-2, 2, 7)
    a, b = forward_kinematics(iiwa, q), forward_kinematics(iiwa, q.copy())
    assert a.position.tobytes() == b.position.tobytes()
    assert a.orientation.tobytes() == b.orientation.tobytes()


def test_fk_positions_batch(iiwa, rng):
    qs = rng.uniform(-2, 2, size=(20, 7))
    batch = fk_positions(iiwa, qs)
    for q, p in zip(qs, batch):
        np.testing.assert_array_equal(p, forward_kinematics(iiwa, q).position)


def test_fk_limits_not_enforced(planar):
    forward_kinematics(planar, [10.0, -10.0])


def test_orientation_unit(iiwa, rng):
    for q in rng.uniform(-2.9, 2.9, size=(50, 7)):
        assert abs(np.linalg.norm(forward_kinematics(iiwa, q).orientation) - 1) < 1e-12


# ---------------------------------------------------------------- Jacobian


def test_jacobian_one_joint():
    J = geometric_jacobian(one_joint_chain(), [0.0])
    np.testing.assert_allclose(J[:, 0], [0, 1, 0, 0, 0, 1], atol=1e-15)


def test_jacobian_zero_lever_arm(rng):
    joints = tuple(JointDescriptor([0, 0, 0], quat.normalize(rng.normal(size=4)),
                                   a / np.linalg.norm(a), -3, 3)
                   for a in rng.normal(size=(4, 3)))
    chain = KinematicChain(joints, np.zeros(3))
    J = geometric_jacobian(chain, rng.uniform(-2, 2, 4))
    np.testing.assert_array_equal(J[:3], 0.0)


def test_jacobian_matches_finite_differences(rng):
    chain = random_chain(rng)
    for q in rng.uniform(-2.9, 2.9, size=(100, 7)):
        assert np.max(np.abs(geometric_jacobian(chain, q) - fd_jacobian(chain, q))) < 1e-5


def test_jacobian_default_chain(iiwa, rng):
    for q in rng.uniform(-2.9, 2.9, size=(20, 7)):
        assert np.max(np.abs(geometric_jacobian(iiwa, q) - fd_jacobian(iiwa, q))) < 1e-5


# ---------------------------------------------------------------- quaternion log/exp


def test_log_identity():
    np.testing.assert_array_equal(quat.quaternion_log([1, 0, 0, 0]), [0, 0, 0])


def test_log_quarter_turn():
    v = quat.quaternion_log([math.cos(math.pi / 4), 0, 0, math.sin(math.pi / 4)])
    np.testing.assert_allclose(v, [0, 0, math.pi / 4], atol=1e-15)


def test_log_antipodal():
    v = quat.quaternion_log([-1.0, 0, 0, 0])
    assert np.linalg.norm(v) == pytest.approx(math.pi)
    np.testing.assert_allclose(quat.quaternion_exp(v), [-1, 0, 0, 0], atol=1e-15)


def test_log_near_identity_stable():
    v = np.array([3e-10, -1e-10, 2e-10])
    q = quat.quaternion_exp(v)
    np.testing.assert_allclose(quat.quaternion_log(q), v, rtol=1e-12, atol=1e-24)


def test_log_rejects_non_unit():
    with pytest.raises(ValueError):
        quat.quaternion_log([1.0, 0.1, 0, 0])


@given(st.lists(st.floats(-1, 1), min_size=3, max_size=3), st.floats(0, 0.999999))
@settings(max_examples=300, deadline=None)
def test_log_exp_roundtrip(direction, fraction):
    d = np.array(direction)
    if np.linalg.norm(d) < 1e-6:
        d = np.array([1.0, 0, 0])
    v = d / np.linalg.norm(d) * fraction * math.pi
    back = quat.quaternion_log(quat.quaternion_exp(v))
    assert np.max(np.abs(back - v)) < 1e-9


# ---------------------------------------------------------------- pose distance


def random_pose(rng):
    return Pose(rng.normal(size=3), quat.normalize(rng.normal(size=4)))


def test_distance_self_zero(rng):
    for _ in range(20):
        p = random_pose(rng)
        assert pose_distance(p, p) < 1e-12
        assert pose_distance(p, p.flipped()) < 1e-12


def test_distance_position_only():
    a = Pose([0, 0, 0])
    b = Pose([1, 0, 0])
    assert pose_distance(a, b, MetricWeights(1, 1)) == 1.0


def test_distance_half_turn():
    a = Pose([0, 0, 0])
    b = Pose([0, 0, 0], rot_z(math.pi))
    assert abs(pose_distance(a, b, MetricWeights(0, 1)) - (math.pi / 2) ** 2) < 1e-12


def test_distance_symmetric_and_sign_invariant(rng):
    w = MetricWeights(0.7, 1.3)
    for _ in range(200):
        a, b = random_pose(rng), random_pose(rng)
        d = pose_distance(a, b, w)
        assert d >= 0
        assert abs(pose_distance(b, a, w) - d) < 1e-12
        assert abs(pose_distance(a.flipped(), b, w) - d) < 1e-12
        assert abs(pose_distance(a, b.flipped(), w) - d) < 1e-12


def test_distance_without_rotation_weight_is_squared_euclidean(rng):
    for _ in range(100):
        a, b = random_pose(rng), random_pose(rng)
        assert pose_distance(a, b, MetricWeights(1, 0)) == pytest.approx(
            float(np.sum((a.position - b.position) ** 2)), abs=1e-12)


def test_distance_rotation_term_is_half_angle_squared(rng):
    for angle in rng.uniform(0, math.pi, 20):
        axis = rng.normal(size=3)
        b = Pose([0, 0, 0], quat.from_axis_angle(axis, angle))
        assert pose_distance(Pose([0, 0, 0]), b, MetricWeights(0, 1)) == pytest.approx((angle / 2) ** 2)


def test_metric_weights_validation():
    with pytest.raises(ContractError):
        MetricWeights(0, 0)
    with pytest.raises(ContractError):
        MetricWeights(-1, 1)


def test_pose_validation():
    with pytest.raises(ContractError):
        Pose([0, 0, 0], [1, 1, 0, 0])
    with pytest.raises(ContractError):
        Pose([0, 0], [1, 0, 0, 0])


# ---------------------------------------------------------------- chain types / files


def test_joint_validation():
    with pytest.raises(ContractError):
        JointDescriptor([0, 0, 0], [1, 0, 0, 0], [0, 0, 1], 1.0, -1.0)
    with pytest.raises(ContractError):
        JointDescriptor([0, 0, 0], [1, 0, 0, 0], [0, 0, 1.1], -1.0, 1.0)
    with pytest.raises(ContractError):
        KinematicChain(())


def test_default_chain(iiwa):
    assert iiwa.n_joints == 7
    assert iiwa.name == "iiwa-like"
    np.testing.assert_array_equal(iiwa.lower, -2.9)
    np.testing.assert_allclose(forward_kinematics(iiwa, np.zeros(7)).position, [0, 0, 1.2])


def test_chain_file_roundtrip(tmp_path):
    path = tmp_path / "chain.yaml"
    path.write_text(
        "joints:\n"
        "  - translation: [0, 0, 0]\n"
        "    axis: [0, 0, 1]\n"
        "    limits: [-3, 3]\n"
        "  - translation: [1, 0, 0]\n"
        "    rotation: [1, 0, 0, 0]\n"
        "    axis: [0, 0, 1]\n"
        "    limits: [-3, 3]\n"
        "end_effector:\n"
        "  translation: [1, 0, 0]\n"
    )
    chain = load_chain(path)
    np.testing.assert_allclose(forward_kinematics(chain, [math.pi / 2, -math.pi / 2]).position, [1, 1, 0],
                               atol=1e-15)


def test_chain_file_missing_field_is_located(tmp_path):
    path = tmp_path / "bad.yaml"
    path.write_text(
        "joints:\n"
        "  - translation: [0, 0, 0]\n"
        "    axis: [0, 0, 1]\n"
        "    limits: [-3, 3]\n"
        "  - translation: [1, 0, 0]\n"
        "    limits: [-3, 3]\n"
        "end_effector:\n"
        "  translation: [1, 0, 0]\n"
    )
    with pytest.raises(config.ConfigError) as err:
        load_chain(path)
    assert err.value.line == 5
    assert "axis" in str(err.value)
    assert str(err.value).startswith(f"{path}:5:")


def test_chain_file_bad_vector_and_syntax():
    with pytest.raises(config.ConfigError, match="3 numbers"):
        chain_from_dict(config.load_text(
            "joints:\n  - {translation: [0, 0], axis: [0, 0, 1], limits: [-1, 1]}\n"
            "end_effector: {translation: [0, 0, 0]}\n"))
    with pytest.raises(config.ConfigError) as err:
        config.load_text("joints: [\n  - a\n", "x.yaml")
    assert err.value.line is not None
    with pytest.raises(config.ConfigError, match="end_effector"):
        chain_from_dict(config.load_text("joints:\n  - {translation: [0, 0, 0], axis: [0, 0, 1], limits: [-1, 1]}\n"))
    with pytest.raises(config.ConfigError, match="lower < upper"):
        chain_from_dict(config.load_text(
            "joints:\n  - {translation: [0, 0, 0], axis: [0, 0, 1], limits: [1, -1]}\n"
            "end_effector: {translation: [0, 0, 0]}\n"))
