"""FiLM conditioning of kinematic-token embeddings on per-joint descriptors."""

from __future__ import annotations

from dataclasses import dataclass

import torch
from torch import nn

from .morphology import DESCRIPTOR_DIM


class ConditioningError(ValueError):
    pass


@dataclass
class FilmParams:
    gamma: torch.Tensor
    beta: torch.Tensor


class FilmGenerator(nn.Module):
    """Linear map from a 12-feature descriptor to ``(gamma, beta)`` of width ``d`` each."""

    def __init__(self, d: int, in_dim: int = DESCRIPTOR_DIM, final_layer_zero_init: bool = True):
        super().__init__()
        self.d = d
        self.in_dim = in_dim
        self.proj = nn.Linear(in_dim, 2 * d)
        if final_layer_zero_init:
            nn.init.zeros_(self.proj.weight)
            nn.init.zeros_(self.proj.bias)

    def forward(self, s: torch.Tensor) -> FilmParams:
        return generate(self, s)


def generate(gen: FilmGenerator, s: torch.Tensor) -> FilmParams:
    if s.shape[-1] != gen.in_dim:
        raise ConditioningError(f"descriptor length {s.shape[-1]} does not match generator input {gen.in_dim}")
    out = gen.proj(s)
    return FilmParams(out[..., : gen.d], out[..., gen.d :])


def modulate(z: torch.Tensor, p: FilmParams) -> torch.Tensor:
    """``(1 + gamma) * z + beta``, broadcasting params over leading token axes."""
    if z.shape[-1] != p.gamma.shape[-1] or z.shape[-1] != p.beta.shape[-1]:
        raise ConditioningError(
            f"embedding width {z.shape[-1]} does not match FiLM width {p.gamma.shape[-1]}"
        )
    return (1 + p.gamma) * z + p.beta
