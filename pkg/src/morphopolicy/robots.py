"""Built-in example embodiments used by tests, scripts and the synthetic benchmark."""

from __future__ import annotations

from .morphology import JointDescriptor, RobotMorphology, make_morphology

# Published example descriptor row (Franka Panda, joint 1).
PANDA_JOINT1 = JointDescriptor(
    type_pris=0, type_rev=1, ax=0, ay=0, az=1,
    hard_lower=-2.9671, hard_upper=2.9671, damping_log=6.90776,
    friction_anchor=1, lateral_friction=1, spinning_friction=0.1, stiffness_log=10.30895,
)


def revolute(axis, lower, upper, damping_log=6.90776, stiffness_log=10.30895, anchor=1):
    ax, ay, az = axis
    return JointDescriptor(0, 1, ax, ay, az, lower, upper, damping_log, anchor, 1.0, 0.1, stiffness_log)


def prismatic(axis, lower, upper, damping_log=4.60517, stiffness_log=9.21034):
    ax, ay, az = axis
    return JointDescriptor(1, 0, ax, ay, az, lower, upper, damping_log, 0, 1.0, 0.1, stiffness_log)


def chain(num_joints: int, name: str | None = None) -> RobotMorphology:
    """Serial chain 0-1-...-(J-1) with alternating z/y revolute axes."""
    axes = [(0, 0, 1), (0, 1, 0)]
    descriptors = [revolute(axes[j % 2], -2.9 + 0.1 * j, 2.9 - 0.1 * j) for j in range(num_joints)]
    edges = [(j, j + 1) for j in range(num_joints - 1)]
    return make_morphology(name or f"chain{num_joints}", num_joints, edges, descriptors)


def star(num_leaves: int) -> RobotMorphology:
    J = num_leaves + 1
    descriptors = [revolute((0, 0, 1), -1.0, 1.0)] + [revolute((1, 0, 0), -0.5, 0.5) for _ in range(num_leaves)]
    return make_morphology(f"star{num_leaves}", J, [(0, j) for j in range(1, J)], descriptors)


def panda_like() -> RobotMorphology:
    """8-DoF arm: seven revolute joints and a prismatic gripper, serial chain."""
    z, y = (0, 0, 1), (0, 1, 0)
    limits = [(-2.9671, 2.9671), (-2.9671, 2.9671), (-1.8326, 1.8326), (-3.1416, 0.0),
              (-2.9671, 2.9671), (-0.0873, 3.8223), (-2.9671, 2.9671)]
    axes = [z, z, y, y, z, y, z]
    descriptors = [revolute(a, lo, hi) for a, (lo, hi) in zip(axes, limits)]
    # joints 0 and 1 both carry the published example row
    descriptors[0] = descriptors[1] = PANDA_JOINT1
    descriptors.append(prismatic((1, 0, 0), 0.0, 0.04))
    return make_morphology("panda_like", 8, [(j, j + 1) for j in range(7)], descriptors)


def so101_like() -> RobotMorphology:
    """6-DoF low-cost arm: five revolute joints and a revolute gripper."""
    z, y, x = (0, 0, 1), (0, 1, 0), (1, 0, 0)
    spec = [(z, -1.92, 1.92), (y, -1.75, 1.75), (y, -1.69, 1.69), (y, -1.66, 1.66), (x, -2.74, 2.84), (y, -0.17, 1.75)]
    descriptors = [revolute(a, lo, hi, damping_log=2.30259, stiffness_log=6.90776) for a, lo, hi in spec]
    return make_morphology("so101_like", 6, [(j, j + 1) for j in range(5)], descriptors)


BUILTIN = {
    "panda_like": panda_like,
    "so101_like": so101_like,
}
