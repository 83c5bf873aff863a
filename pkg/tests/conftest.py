import math

import numpy as np
import pytest

from skillsearch import kinematics as kin
from skillsearch.quaternion import from_axis_angle, normalize


def random_chain(rng, n=7, limit=2.9):
    joints = []
    for i in range(n):
        axis = rng.normal(size=3)
        joints.append(kin.JointDescriptor(
            translation=rng.uniform(-0.3, 0.3, size=3),
            rotation=normalize(rng.normal(size=4)),
            axis=axis / np.linalg.norm(axis),
            lower=-limit,
            upper=limit,
            name=f"j{i}",
        ))
    return kin.KinematicChain(tuple(joints), rng.uniform(-0.2, 0.2, size=3), normalize(rng.normal(size=4)))


def one_joint_chain():
    joint = kin.JointDescriptor([0, 0, 0], [1, 0, 0, 0], [0, 0, 1], -math.pi, math.pi)
    return kin.KinematicChain((joint,), np.array([1.0, 0.0, 0.0]))


def rot_z(angle):
    return from_axis_angle([0, 0, 1], angle)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def iiwa():
    return kin.default_chain()


@pytest.fixture(scope="session")
def planar():
    return kin.planar_chain((1.0, 1.0))


# one line per acceptance criterion, printed after the test session
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
