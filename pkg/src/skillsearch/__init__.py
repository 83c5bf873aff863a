"""Policy search for movement primitives in joint space and Cartesian space.

Modules: ``kinematics`` (chains, FK, Jacobian, pose metric), ``ik`` (exact
and approximate inverse kinematics), ``dmp`` (movement primitives),
``cmaes`` (optimizer), ``envs`` (benchmark tasks) and ``harness``
(experiments and probes).
"""

__version__ = "0.1.0"
