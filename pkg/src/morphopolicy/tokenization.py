"""Per-joint temporal chunking of action trajectories and kinematic-token encoders."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
from torch import nn
from torch.nn import functional as F


class TokenizationError(ValueError):
    pass


@dataclass(frozen=True)
class ChunkSpec:
    """Split a horizon of length ``H`` into ``G`` contiguous chunks of length ``g``."""

    H: int
    G: int

    def __post_init__(self):
        if self.G < 1 or self.H < 1:
            raise TokenizationError(f"H and G must be positive, got H={self.H}, G={self.G}")
        if self.H % self.G:
            raise TokenizationError(f"G={self.G} does not divide H={self.H}")

    @property
    def g(self) -> int:
        return self.H // self.G

    def chunk_indices(self, k: int) -> range:
        return range(k * self.g, (k + 1) * self.g)


def chunk_actions(traj, spec: ChunkSpec):
    """Reshape ``(..., H, J)`` actions into ``(..., J, G, g)`` kinematic tokens.

    ``tokens[..., j, k, :]`` is the contiguous slice of joint ``j`` over chunk ``k``.
    Works for numpy arrays and torch tensors alike.
    """
    H, J = traj.shape[-2], traj.shape[-1]
    if H != spec.H:
        raise TokenizationError(f"G={spec.G} incompatible with trajectory: horizon H={H}, spec expects H={spec.H}")
    lead = tuple(traj.shape[:-2])
    return traj.swapaxes(-1, -2).reshape(lead + (J, spec.G, spec.g))


def unchunk_actions(tokens, spec: ChunkSpec):
    """Exact inverse of :func:`chunk_actions`."""
    if tuple(tokens.shape[-2:]) != (spec.G, spec.g):
        raise TokenizationError(f"token grid {tuple(tokens.shape[-2:])} does not match (G, g)=({spec.G}, {spec.g})")
    lead = tuple(tokens.shape[:-3])
    J = tokens.shape[-3]
    return tokens.reshape(lead + (J, spec.H)).swapaxes(-1, -2)


def token_count(J: int, G: int, M: int = 0) -> int:
    return J * G * (1 + M)


class TokenEncoder(nn.Module):
    """Maps a length-``g`` kinematic token to a ``d``-dimensional embedding.

    ``shape="linear"`` is a single affine map; ``"linear-swiglu-linear"`` is
    ``W_out(silu(W_gate x) * (W_up x))`` with an input projection folded into the
    gate/up maps. The final layer is zeroed when ``final_layer_zero_init``.
    """

    SHAPES = ("linear", "linear-swiglu-linear")

    def __init__(self, g: int, d: int, shape: str = "linear-swiglu-linear", hidden: int | None = None,
                 final_layer_zero_init: bool = True):
        super().__init__()
        if shape not in self.SHAPES:
            raise TokenizationError(f"unknown encoder shape {shape!r}; expected one of {self.SHAPES}")
        self.g, self.d, self.shape = g, d, shape
        self.final_layer_zero_init = final_layer_zero_init
        if shape == "linear":
            self.out = nn.Linear(g, d)
        else:
            hidden = hidden or 4 * d
            self.inp = nn.Linear(g, d)
            self.gate = nn.Linear(d, hidden)
            self.up = nn.Linear(d, hidden)
            self.out = nn.Linear(hidden, d)
        if final_layer_zero_init:
            nn.init.zeros_(self.out.weight)
            nn.init.zeros_(self.out.bias)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.shape[-1] != self.g:
            raise TokenizationError(f"token width {x.shape[-1]} does not match encoder input width {self.g}")
        if self.shape == "linear":
            return self.out(x)
        h = self.inp(x)
        return self.out(F.silu(self.gate(h)) * self.up(h))


def encode_tokens(tokens: torch.Tensor, enc: TokenEncoder) -> torch.Tensor:
    """``(..., J, G, g) -> (..., J, G, d)``."""
    return enc(tokens)


def encode_auxiliary(tokens: torch.Tensor, encoders) -> torch.Tensor:
    """Stack auxiliary embeddings as ``(..., M, J, G, d)``; ``M`` may be zero."""
    encoders = list(encoders)
    if not encoders:
        shape = tuple(tokens.shape[:-3]) + (0,) + tuple(tokens.shape[-3:-1]) + (0,)
        return tokens.new_zeros(shape)
    g, d = encoders[0].g, encoders[0].d
    for m, enc in enumerate(encoders):
        if (enc.g, enc.d) != (g, d):
            raise TokenizationError(f"auxiliary encoder {m} has (g, d)=({enc.g}, {enc.d}), expected ({g}, {d})")
    return torch.stack([enc(tokens) for enc in encoders], dim=-4)


def as_trajectory(values) -> np.ndarray:
    A = np.asarray(values, dtype=np.float64)
    if A.ndim != 2 or min(A.shape) < 1:
        raise TokenizationError(f"trajectory must be a nonempty H x J matrix, got shape {A.shape}")
    if not np.all(np.isfinite(A)):
        raise TokenizationError("trajectory has non-finite entries")
    return A
