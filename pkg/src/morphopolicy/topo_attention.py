"""Topology-aware attention biases and the sequence-level additive mask.

Blocked pairs are encoded as ``-inf`` in every bias and mask tensor. Attention
never adds a finite bias to a blocked entry: :func:`biased_attention` selects
``-inf`` for blocked keys before the softmax, so their weight is exactly zero.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
from torch.nn import functional as F

NEG_INF = float("-inf")

MASK_MODES = ("no_mask", "full_mask", "mix_mask", "spd_softmask",
              "adj_softmask_v10", "adj_softmask_v11", "adj_softmask_v20")
HARD_MODES = ("no_mask", "full_mask", "mix_mask")
SPD_INITS = ("zero", "hard", "mix", "linear")
ADJ_VARIANTS = {"adj_softmask_v10": "v1.0", "adj_softmask_v11": "v1.1", "adj_softmask_v20": "v2.0"}


class MaskError(ValueError):
    pass


def _as_tensor(x, dtype=torch.float64) -> torch.Tensor:
    if isinstance(x, torch.Tensor):
        return x
    return torch.as_tensor(np.asarray(x), dtype=dtype)


# -- hard masking -------------------------------------------------------------


def hard_bias(M, dtype=torch.float64) -> torch.Tensor:
    """0 where the adjacency indicator is 1, ``-inf`` elsewhere."""
    M = _as_tensor(M)
    out = torch.zeros(M.shape, dtype=dtype)
    out[M == 0] = NEG_INF
    return out


def layer_schedule(mode: str, L: int) -> list[str]:
    """Per-layer selector: ``"masked"`` layers use the hard bias, ``"free"`` layers use none."""
    if L < 1:
        raise MaskError(f"L must be >= 1, got {L}")
    if mode == "full_mask":
        return ["masked"] * L
    if mode == "mix_mask":
        return ["masked" if layer % 2 == 0 else "free" for layer in range(L)]
    if mode == "no_mask":
        return ["free"] * L
    raise MaskError(f"layer_schedule has no hard schedule for mode {mode!r}")


# -- SPD soft mask ------------------------------------------------------------


def init_spd_table(mode: str, L: int, D_max: int, strength: float = 3.0, dtype=torch.float64) -> torch.Tensor:
    """Initial ``L x (D_max + 1)`` distance-indexed bias table."""
    if L < 1 or D_max < 1:
        raise MaskError(f"need L >= 1 and D_max >= 1, got L={L}, D_max={D_max}")
    theta = torch.zeros(L, D_max + 1, dtype=dtype)
    if mode == "zero":
        return theta
    hard_row = torch.zeros(D_max + 1, dtype=dtype)
    hard_row[2:] = -strength
    if mode == "hard":
        theta[:] = hard_row
    elif mode == "mix":
        theta[0::2] = hard_row
    elif mode == "linear":
        if D_max > 1:
            for dist in range(2, D_max + 1):
                theta[:, dist] = -strength * (dist - 1) / (D_max - 1)
    else:
        raise MaskError(f"unknown SPD init {mode!r}; expected one of {SPD_INITS}")
    return theta


def spd_bias(table: torch.Tensor, spd, layer: int) -> torch.Tensor:
    """``B[i, j] = table[layer, d(i, j)]``; differentiable in ``table``."""
    D = torch.as_tensor(np.asarray(spd.matrix if hasattr(spd, "matrix") else spd), dtype=torch.long)
    if int(D.max()) >= table.shape[-1]:
        raise MaskError(f"distance {int(D.max())} exceeds bias table width {table.shape[-1]}")
    return table[layer][D]


# -- adjacency soft mask ------------------------------------------------------


@dataclass
class AdjSoftParams:
    """Strength parameters for one Adj-SoftMask variant.

    ``theta`` is ``L x J x J`` for v1.0 and shape ``(L,)`` for v1.1 / v2.0.
    """

    variant: str
    theta: torch.Tensor
    theta_max: float = 5.0


def adj_soft_strength(params: AdjSoftParams, layer: int, J: int) -> torch.Tensor:
    theta = params.theta
    if params.variant == "v1.0":
        if theta.dim() != 3 or theta.shape[1] < J or theta.shape[2] < J:
            raise MaskError(f"v1.0 expects an L x J x J theta, got shape {tuple(theta.shape)}")
        t = theta[layer, :J, :J]
        return torch.exp(torch.clamp(t, max=params.theta_max))
    if params.variant in ("v1.1", "v2.0"):
        if theta.dim() != 1:
            raise MaskError(f"{params.variant} expects a per-layer scalar theta, got shape {tuple(theta.shape)}")
        t = theta[layer]
        s = torch.exp(torch.clamp(t, max=params.theta_max)) if params.variant == "v1.1" else t
        return s.expand(J, J)
    raise MaskError(f"unknown Adj-SoftMask variant {params.variant!r}")


def adj_soft_bias(params: AdjSoftParams, M, layer: int) -> torch.Tensor:
    """``B = (M - 1) * s`` with the variant's strength ``s``; zero on neighbors."""
    M = _as_tensor(M, dtype=params.theta.dtype).to(params.theta.dtype)
    s = adj_soft_strength(params, layer, M.shape[0])
    return (M - 1) * s


def init_adj_theta(variant: str, L: int, J: int, init: str = "zero", theta_max: float = 5.0,
                   strength: float = 3.0, dtype=torch.float64) -> torch.Tensor:
    """Zero init gives a weak effect, Hard init a strong one (bias of ``-strength``).

    For v1.x the strength is ``exp(theta)``, so "zero" uses ``theta = -theta_max``
    (strength ``exp(-theta_max)``) and "hard" uses ``log(strength)``.
    """
    if init not in ("zero", "hard"):
        raise MaskError(f"Adj-SoftMask supports zero/hard init, got {init!r}")
    if variant == "v2.0":
        value = 0.0 if init == "zero" else strength
    elif variant in ("v1.0", "v1.1"):
        value = -theta_max if init == "zero" else math.log(strength)
    else:
        raise MaskError(f"unknown Adj-SoftMask variant {variant!r}")
    shape = (L, J, J) if variant == "v1.0" else (L,)
    return torch.full(shape, value, dtype=dtype)


# -- permutation helper -------------------------------------------------------


def permute_matrix(B, perm) -> torch.Tensor:
    """Apply ``P B P^T`` where old index ``i`` maps to ``perm[i]``."""
    B = _as_tensor(B)
    inv = [0] * len(perm)
    for old, new in enumerate(perm):
        inv[new] = old
    idx = torch.as_tensor(inv)
    return B[idx][:, idx]


# -- sequence mask ------------------------------------------------------------


@dataclass(frozen=True)
class SequenceLayout:
    """Token groups in order: observation, action, kinematic.

    Kinematic tokens are ordered by auxiliary index, then joint, then chunk.
    """

    n_obs: int
    n_action: int
    J: int = 0
    G: int = 1
    M: int = 0
    kin_attends_action: bool = False

    @property
    def n_kin(self) -> int:
        return self.J * self.G * (1 + self.M)

    @property
    def size(self) -> int:
        return self.n_obs + self.n_action + self.n_kin

    def kin_joint_index(self) -> np.ndarray:
        """Joint id of each kinematic token."""
        return np.tile(np.repeat(np.arange(self.J), self.G), 1 + self.M)

    def slices(self) -> tuple[slice, slice, slice]:
        o, a = self.n_obs, self.n_obs + self.n_action
        return slice(0, o), slice(o, a), slice(a, self.size)


def expand_joint_bias(B_joint: torch.Tensor, layout: SequenceLayout) -> torch.Tensor:
    """Replicate a ``J x J`` bias over every (aux, chunk) pair of the joints involved."""
    idx = torch.as_tensor(layout.kin_joint_index())
    return B_joint[idx][:, idx]


def block_layout(layout: SequenceLayout, dtype=torch.float64) -> torch.Tensor:
    """Additive mask with only the fixed block structure (kinematic block all free).

    obs -> obs free; obs -> {action, kin} blocked; action -> everything free;
    kin -> obs free; kin -> kin free; kin -> action blocked unless toggled.
    """
    N = layout.size
    mask = torch.zeros(N, N, dtype=dtype)
    o, a, k = layout.slices()
    mask[o, a] = NEG_INF
    mask[o, k] = NEG_INF
    if not layout.kin_attends_action:
        mask[k, a] = NEG_INF
    return mask


def compose_sequence_mask(layout: SequenceLayout, joint_bias: torch.Tensor | None, base: torch.Tensor | None = None):
    """Full ``N x N`` additive mask for one layer.

    ``joint_bias`` is the layer's ``J x J`` topology bias (``None`` means free).
    ``base`` may be a precomputed :func:`block_layout` to skip rebuilding it.
    """
    mask = block_layout(layout) if base is None else base
    if joint_bias is not None and layout.n_kin:
        if tuple(joint_bias.shape) != (layout.J, layout.J):
            raise MaskError(f"joint bias shape {tuple(joint_bias.shape)} does not match J={layout.J}")
        _, _, k = layout.slices()
        mask = mask.to(joint_bias.dtype).clone()
        mask[k, k] = expand_joint_bias(joint_bias, layout)
    check_rows(mask)
    return mask


def check_rows(mask: torch.Tensor) -> None:
    blocked = torch.isneginf(mask).all(dim=-1)
    if bool(blocked.any()):
        row = int(torch.nonzero(blocked.reshape(-1))[0])
        raise MaskError(f"query row {row} has every key blocked")


def biased_attention(q: torch.Tensor, k: torch.Tensor, v: torch.Tensor, mask: torch.Tensor | None = None):
    """Scaled dot-product attention with an additive bias.

    ``q, k, v``: ``(..., N, d_head)``; ``mask`` broadcasts against ``(..., N, N)``.
    Returns ``(outputs, weights)``.
    """
    logits = q @ k.transpose(-1, -2) / math.sqrt(q.shape[-1])
    if mask is not None:
        blocked = torch.isneginf(mask)
        if bool(blocked.all(dim=-1).any()):
            raise MaskError("attention row has every key blocked")
        finite = torch.where(blocked, torch.zeros_like(mask), mask)
        logits = torch.where(blocked, torch.full_like(logits, NEG_INF), logits + finite)
    weights = F.softmax(logits, dim=-1)
    return weights @ v, weights


def to_jsonable(matrix) -> list:
    """Dense nested lists with ``-inf`` encoded as the string ``"-inf"``."""
    arr = matrix.detach().cpu().numpy() if isinstance(matrix, torch.Tensor) else np.asarray(matrix)
    return [["-inf" if np.isneginf(x) else float(x) for x in row] for row in arr]


def from_jsonable(rows) -> np.ndarray:
    return np.array([[NEG_INF if x == "-inf" else float(x) for x in row] for row in rows], dtype=np.float64)
