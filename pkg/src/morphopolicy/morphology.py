"""Kinematic graphs and per-joint descriptors for robot embodiments."""

from __future__ import annotations

import json
import math
from collections import deque
from dataclasses import asdict, dataclass, fields
from typing import Sequence

import numpy as np

DESCRIPTOR_FIELDS = (
    "type_pris",
    "type_rev",
    "ax",
    "ay",
    "az",
    "hard_lower",
    "hard_upper",
    "damping_log",
    "friction_anchor",
    "lateral_friction",
    "spinning_friction",
    "stiffness_log",
)
DESCRIPTOR_DIM = len(DESCRIPTOR_FIELDS)
# type_pris, type_rev, friction_anchor
BINARY_FEATURES = (0, 1, 8)


class MorphologyError(ValueError):
    """Raised for invalid robot-description documents or morphologies."""


@dataclass(frozen=True)
class JointDescriptor:
    type_pris: float = 0.0
    type_rev: float = 0.0
    ax: float = 0.0
    ay: float = 0.0
    az: float = 0.0
    hard_lower: float = 0.0
    hard_upper: float = 0.0
    damping_log: float = 0.0
    friction_anchor: float = 0.0
    lateral_friction: float = 0.0
    spinning_friction: float = 0.0
    stiffness_log: float = 0.0

    def validate(self, where: str = "descriptor") -> None:
        for name in ("type_pris", "type_rev", "friction_anchor"):
            if getattr(self, name) not in (0, 1):
                raise MorphologyError(f"{where}: {name} must be 0 or 1, got {getattr(self, name)}")
        for f in fields(self):
            if not math.isfinite(getattr(self, f.name)):
                raise MorphologyError(f"{where}: {f.name} is not finite")
        if self.type_pris + self.type_rev > 1:
            raise MorphologyError(f"{where}: joint cannot be both prismatic and revolute")
        if self.type_pris or self.type_rev:
            norm = math.sqrt(self.ax**2 + self.ay**2 + self.az**2)
            if abs(norm - 1.0) > 1e-6:
                raise MorphologyError(f"{where}: axis must be a unit vector for actuated joints, |axis|={norm:.6g}")
        if self.hard_lower > self.hard_upper:
            raise MorphologyError(f"{where}: hard_lower {self.hard_lower} > hard_upper {self.hard_upper}")


@dataclass(frozen=True)
class RobotMorphology:
    """Undirected kinematic graph over ``num_joints`` joints plus descriptors.

    Edges are stored as sorted ``(i, j)`` pairs with ``i < j``.
    """

    name: str
    num_joints: int
    edges: frozenset[tuple[int, int]]
    descriptors: tuple[JointDescriptor, ...]

    def __post_init__(self):
        J = self.num_joints
        if J < 1:
            raise MorphologyError(f"{self.name}: num_joints must be positive, got {J}")
        if len(self.descriptors) != J:
            raise MorphologyError(
                f"{self.name}: descriptor count {len(self.descriptors)} does not match num_joints {J}"
            )
        for i, j in self.edges:
            if not (0 <= i < J and 0 <= j < J):
                raise MorphologyError(f"{self.name}: edge ({i}, {j}) has index out of range [0, {J})")
            if i == j:
                raise MorphologyError(f"{self.name}: self-loop edge ({i}, {j})")
            if i > j:
                raise MorphologyError(f"{self.name}: edge ({i}, {j}) not normalized; use make_morphology")
        for idx, d in enumerate(self.descriptors):
            d.validate(f"{self.name}: joint {idx}")
        unreachable = _unreachable(J, self.edges)
        if unreachable:
            raise MorphologyError(f"{self.name}: joint {unreachable[0]} unreachable from joint 0 (graph is disconnected)")

    @property
    def J(self) -> int:
        return self.num_joints

    def neighbors(self) -> list[list[int]]:
        adj: list[list[int]] = [[] for _ in range(self.num_joints)]
        for i, j in sorted(self.edges):
            adj[i].append(j)
            adj[j].append(i)
        return adj

    def permuted(self, perm: Sequence[int]) -> "RobotMorphology":
        """Relabel joints so that old joint ``i`` becomes new joint ``perm[i]``."""
        perm = list(perm)
        if sorted(perm) != list(range(self.num_joints)):
            raise MorphologyError("perm must be a permutation of joint indices")
        descriptors = [None] * self.num_joints
        for old, new in enumerate(perm):
            descriptors[new] = self.descriptors[old]
        edges = [(perm[i], perm[j]) for i, j in self.edges]
        return make_morphology(self.name, self.num_joints, edges, descriptors)


def make_morphology(name, num_joints, edges, descriptors) -> RobotMorphology:
    """Build a RobotMorphology, normalizing edge orientation and removing duplicates."""
    norm = set()
    for e in edges:
        if len(e) != 2:
            raise MorphologyError(f"{name}: edge {list(e)} must have exactly two endpoints")
        i, j = int(e[0]), int(e[1])
        norm.add((min(i, j), max(i, j)))
    return RobotMorphology(name, int(num_joints), frozenset(norm), tuple(descriptors))


def _unreachable(J: int, edges) -> list[int]:
    adj: list[list[int]] = [[] for _ in range(J)]
    for i, j in edges:
        adj[i].append(j)
        adj[j].append(i)
    seen = [False] * J
    seen[0] = True
    queue = deque([0])
    while queue:
        u = queue.popleft()
        for v in adj[u]:
            if not seen[v]:
                seen[v] = True
                queue.append(v)
    return [j for j in range(J) if not seen[j]]


# -- document format ----------------------------------------------------------


def parse_robot_spec(text: str) -> RobotMorphology:
    """Parse a JSON robot-description document into a validated morphology."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise MorphologyError(f"malformed document: {exc.msg} at line {exc.lineno} column {exc.colno}") from exc
    return morphology_from_dict(doc)


def morphology_from_dict(doc: dict) -> RobotMorphology:
    if not isinstance(doc, dict):
        raise MorphologyError("malformed document: top level must be an object")
    for key in ("name", "joints", "edges"):
        if key not in doc:
            raise MorphologyError(f"malformed document: missing field '{key}'")
    name = str(doc["name"])
    joints = doc["joints"]
    if not isinstance(joints, list) or not joints:
        raise MorphologyError(f"{name}: 'joints' must be a nonempty list")
    J = len(joints)
    by_index: dict[int, JointDescriptor] = {}
    for pos, joint in enumerate(joints):
        if not isinstance(joint, dict) or "index" not in joint or "descriptor" not in joint:
            raise MorphologyError(f"{name}: joints[{pos}] must have 'index' and 'descriptor'")
        idx = joint["index"]
        if not isinstance(idx, int) or not 0 <= idx < J:
            raise MorphologyError(f"{name}: joints[{pos}] index {idx} out of range [0, {J})")
        if idx in by_index:
            raise MorphologyError(f"{name}: joints[{pos}] duplicates index {idx}")
        desc = joint["descriptor"]
        if not isinstance(desc, dict):
            raise MorphologyError(f"{name}: joint {idx} descriptor must be an object")
        unknown = set(desc) - set(DESCRIPTOR_FIELDS)
        missing = set(DESCRIPTOR_FIELDS) - set(desc)
        if unknown:
            raise MorphologyError(f"{name}: joint {idx} has unknown descriptor fields {sorted(unknown)}")
        if missing:
            raise MorphologyError(f"{name}: joint {idx} is missing descriptor fields {sorted(missing)}")
        try:
            values = {k: float(desc[k]) for k in DESCRIPTOR_FIELDS}
        except (TypeError, ValueError) as exc:
            raise MorphologyError(f"{name}: joint {idx} descriptor has a non-numeric value") from exc
        by_index[idx] = JointDescriptor(**values)
    edges = doc["edges"]
    if not isinstance(edges, list):
        raise MorphologyError(f"{name}: 'edges' must be a list")
    for pos, e in enumerate(edges):
        if not isinstance(e, (list, tuple)) or len(e) != 2 or not all(isinstance(v, int) for v in e):
            raise MorphologyError(f"{name}: edges[{pos}] must be a pair of integers, got {e!r}")
        if not all(0 <= v < J for v in e):
            raise MorphologyError(f"{name}: edges[{pos}] {list(e)} index out of range [0, {J})")
        if e[0] == e[1]:
            raise MorphologyError(f"{name}: edges[{pos}] {list(e)} is a self-loop")
    descriptors = [by_index[i] for i in range(J)]
    return make_morphology(name, J, edges, descriptors)


def morphology_to_dict(m: RobotMorphology) -> dict:
    return {
        "name": m.name,
        "joints": [{"index": i, "descriptor": asdict(d)} for i, d in enumerate(m.descriptors)],
        "edges": [list(e) for e in sorted(m.edges)],
    }


def serialize_robot_spec(m: RobotMorphology) -> str:
    return json.dumps(morphology_to_dict(m), indent=2) + "\n"


def load_robot_spec(path) -> RobotMorphology:
    with open(path, encoding="utf-8") as fh:
        return parse_robot_spec(fh.read())


# -- graph quantities ---------------------------------------------------------


def adjacency_indicator(m: RobotMorphology) -> np.ndarray:
    """1-hop neighborhood indicator: 1 on the diagonal and on edges, else 0."""
    M = np.eye(m.num_joints, dtype=np.int64)
    for i, j in m.edges:
        M[i, j] = 1
        M[j, i] = 1
    return M


@dataclass(frozen=True)
class SpdTable:
    matrix: np.ndarray
    d_max: int


def shortest_path_distances(m: RobotMorphology) -> SpdTable:
    """All-pairs hop distances via one BFS per source joint."""
    J = m.num_joints
    adj = m.neighbors()
    D = np.full((J, J), -1, dtype=np.int64)
    for src in range(J):
        D[src, src] = 0
        queue = deque([src])
        while queue:
            u = queue.popleft()
            for v in adj[u]:
                if D[src, v] < 0:
                    D[src, v] = D[src, u] + 1
                    queue.append(v)
    return SpdTable(D, int(D.max()))


def bfs_parents(m: RobotMorphology, root: int = 0) -> list[int]:
    """Parent of each joint in the BFS tree from ``root`` (root maps to -1).

    Neighbors are visited in ascending index order so the tree is deterministic.
    """
    adj = m.neighbors()
    parent = [-2] * m.num_joints
    parent[root] = -1
    queue = deque([root])
    while queue:
        u = queue.popleft()
        for v in sorted(adj[u]):
            if parent[v] == -2:
                parent[v] = u
                queue.append(v)
    return parent


# -- descriptors --------------------------------------------------------------


def descriptor_vector(d: JointDescriptor) -> np.ndarray:
    return np.array([getattr(d, k) for k in DESCRIPTOR_FIELDS], dtype=np.float64)


def descriptor_matrix(m: RobotMorphology) -> np.ndarray:
    return np.stack([descriptor_vector(d) for d in m.descriptors])


@dataclass(frozen=True)
class DescriptorStats:
    mean: np.ndarray
    scale: np.ndarray
    # indices of continuous features whose variance was zero and got scale 1
    clamped: tuple[int, ...] = ()

    def to_dict(self) -> dict:
        return {"mean": self.mean.tolist(), "scale": self.scale.tolist(), "clamped": list(self.clamped)}

    @classmethod
    def from_dict(cls, d: dict) -> "DescriptorStats":
        return cls(np.asarray(d["mean"], dtype=np.float64), np.asarray(d["scale"], dtype=np.float64),
                   tuple(d.get("clamped", ())))

    @classmethod
    def identity(cls) -> "DescriptorStats":
        return cls(np.zeros(DESCRIPTOR_DIM), np.ones(DESCRIPTOR_DIM))


def fit_descriptor_stats(vectors) -> DescriptorStats:
    X = np.atleast_2d(np.asarray(vectors, dtype=np.float64))
    if X.shape[0] == 0:
        raise MorphologyError("cannot fit descriptor statistics on an empty population")
    mean = X.mean(axis=0)
    scale = X.std(axis=0)
    clamped = []
    for k in range(X.shape[1]):
        if k in BINARY_FEATURES:
            mean[k], scale[k] = 0.0, 1.0
        elif scale[k] <= 1e-12:
            scale[k] = 1.0
            clamped.append(k)
    return DescriptorStats(mean, scale, tuple(clamped))


def normalize_descriptors(vectors, stats: DescriptorStats | None = None):
    """Standardize continuous features; binary flags pass through unchanged.

    Returns ``(normalized, stats)``; pass ``stats`` back in at evaluation time.
    """
    X = np.atleast_2d(np.asarray(vectors, dtype=np.float64))
    if X.shape[0] == 0:
        raise MorphologyError("normalize_descriptors needs a nonempty list")
    if stats is None:
        stats = fit_descriptor_stats(X)
    elif stats.mean.shape != (DESCRIPTOR_DIM,) or stats.scale.shape != (DESCRIPTOR_DIM,) or np.any(stats.scale <= 0):
        raise MorphologyError("stats must carry length-12 mean and positive scale")
    return (X - stats.mean) / stats.scale, stats
