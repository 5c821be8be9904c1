"""Embodiment-aware transformer policy components at desk scale.

Kinematic tokens, topology-aware attention biases, FiLM joint conditioning,
a trainable toy flow-matching policy and success-rate statistics.
"""

from .morphology import (
    JointDescriptor,
    MorphologyError,
    RobotMorphology,
    adjacency_indicator,
    descriptor_vector,
    normalize_descriptors,
    parse_robot_spec,
    shortest_path_distances,
)
from .policy import PolicyConfig, PolicyModel, flow_loss, sample_actions
from .evaluation import macro_sr, wilson_interval

__version__ = "0.1.0"
