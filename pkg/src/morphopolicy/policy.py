"""Toy transformer action expert with kinematic tokens, topology-aware attention and FiLM.

Token sequence: ``[observation | action (one per timestep) | kinematic]``.
Velocities are predicted from the action tokens under a rectified-flow
convention ``x_tau = tau * A + (1 - tau) * E`` with target ``A - E``.
"""

from __future__ import annotations

import json
import math
import os
import tempfile
from dataclasses import asdict, dataclass, fields, replace

import numpy as np
import torch
from torch import nn
from torch.nn import functional as F

from . import topo_attention as ta
from .conditioning import FilmGenerator, FilmParams, modulate
from .morphology import (
    DescriptorStats,
    RobotMorphology,
    adjacency_indicator,
    descriptor_matrix,
    normalize_descriptors,
    shortest_path_distances,
)
from .tokenization import ChunkSpec, TokenEncoder, chunk_actions

CHECKPOINT_FORMAT = "morphopolicy-checkpoint"
CHECKPOINT_VERSION = 1


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class PolicyConfig:
    d: int = 32
    L: int = 2
    heads: int = 2
    H: int = 16
    J_max: int = 8
    G: int = 1
    M_aux: int = 0
    mask_mode: str = "no_mask"
    film_enabled: bool = False
    kt_enabled: bool = False
    encoder_shape: str = "linear-swiglu-linear"
    encoder_hidden: int | None = None
    spd_init: str = "zero"
    spd_strength: float = 3.0
    D_max: int | None = None
    adj_init: str = "zero"
    theta_max: float = 5.0
    obs_dim: int = 8
    n_obs_tokens: int = 2
    mlp_ratio: int = 4
    kin_pos_embedding: bool = True
    film_aux: bool = True
    kin_attends_action: bool = False
    descriptor_norm: str = "standardize"
    seed: int = 0

    def errors(self) -> list[str]:
        errs = []
        for name in ("d", "L", "heads", "H", "J_max", "G", "obs_dim", "n_obs_tokens", "mlp_ratio"):
            if getattr(self, name) < 1:
                errs.append(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.M_aux < 0:
            errs.append(f"M_aux must be >= 0, got {self.M_aux}")
        if self.heads >= 1 and self.d % self.heads:
            errs.append(f"d={self.d} is not divisible by heads={self.heads}")
        if self.G >= 1 and self.H % self.G:
            errs.append(f"G={self.G} does not divide H={self.H}")
        if self.mask_mode not in ta.MASK_MODES:
            errs.append(f"mask_mode {self.mask_mode!r} not in {ta.MASK_MODES}")
        if self.spd_init not in ta.SPD_INITS:
            errs.append(f"spd_init {self.spd_init!r} not in {ta.SPD_INITS}")
        if self.adj_init not in ("zero", "hard"):
            errs.append(f"adj_init {self.adj_init!r} not in ('zero', 'hard')")
        if self.encoder_shape not in TokenEncoder.SHAPES:
            errs.append(f"encoder_shape {self.encoder_shape!r} not in {TokenEncoder.SHAPES}")
        if self.descriptor_norm not in ("standardize", "raw"):
            errs.append(f"descriptor_norm {self.descriptor_norm!r} not in ('standardize', 'raw')")
        if self.D_max is not None and self.D_max < 1:
            errs.append(f"D_max must be >= 1, got {self.D_max}")
        if not math.isfinite(self.theta_max):
            errs.append("theta_max must be finite")
        return errs

    def validate(self) -> "PolicyConfig":
        errs = self.errors()
        if errs:
            raise ConfigError("; ".join(errs))
        return self

    @property
    def spd_width(self) -> int:
        return (self.D_max if self.D_max is not None else max(self.J_max - 1, 1)) + 1

    @classmethod
    def from_dict(cls, d: dict) -> "PolicyConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown policy config fields {sorted(unknown)}")
        return cls(**d)


def sinusoidal_features(tau: torch.Tensor, dim: int, scale: float = 100.0) -> torch.Tensor:
    half = dim // 2
    freqs = torch.exp(-math.log(10000.0) * torch.arange(half, dtype=tau.dtype) / max(half, 1))
    angles = scale * tau[:, None] * freqs[None, :]
    feats = torch.cat([torch.sin(angles), torch.cos(angles)], dim=-1)
    if dim % 2:
        feats = F.pad(feats, (0, 1))
    return feats


class Block(nn.Module):
    def __init__(self, d: int, heads: int, mlp_ratio: int):
        super().__init__()
        self.heads = heads
        self.norm1 = nn.LayerNorm(d)
        self.qkv = nn.Linear(d, 3 * d)
        self.proj = nn.Linear(d, d)
        self.norm2 = nn.LayerNorm(d)
        self.gate = nn.Linear(d, mlp_ratio * d)
        self.up = nn.Linear(d, mlp_ratio * d)
        self.down = nn.Linear(mlp_ratio * d, d)

    def forward(self, x: torch.Tensor, mask: torch.Tensor | None):
        B, N, d = x.shape
        q, k, v = self.qkv(self.norm1(x)).split(d, dim=-1)
        q, k, v = (t.view(B, N, self.heads, d // self.heads).transpose(1, 2) for t in (q, k, v))
        out, weights = ta.biased_attention(q, k, v, mask)
        x = x + self.proj(out.transpose(1, 2).reshape(B, N, d))
        h = self.norm2(x)
        x = x + self.down(F.silu(self.gate(h)) * self.up(h))
        return x, weights


class _GraphCache:
    """Per-morphology constants: adjacency, distances, descriptors, base block mask."""

    def __init__(self, model: "PolicyModel", m: RobotMorphology):
        cfg = model.config
        self.J = m.num_joints
        self.adjacency = torch.as_tensor(adjacency_indicator(m), dtype=torch.float64)
        spd = shortest_path_distances(m)
        self.spd = spd
        if cfg.mask_mode == "spd_softmask" and spd.d_max >= cfg.spd_width:
            raise ConfigError(f"{m.name}: graph diameter {spd.d_max} exceeds SPD table width {cfg.spd_width}")
        desc = descriptor_matrix(m)
        if cfg.descriptor_norm == "standardize":
            desc, _ = normalize_descriptors(desc, model.descriptor_stats)
        self.descriptors = torch.as_tensor(desc, dtype=torch.float64)
        self.layout = ta.SequenceLayout(
            n_obs=cfg.n_obs_tokens,
            n_action=cfg.H,
            J=self.J if cfg.kt_enabled else 0,
            G=cfg.G,
            M=cfg.M_aux,
            kin_attends_action=cfg.kin_attends_action,
        )
        self.base = ta.block_layout(self.layout)
        hard = ta.hard_bias(self.adjacency)
        self.hard_mask = ta.compose_sequence_mask(self.layout, hard, self.base)


class PolicyModel(nn.Module):
    """Parameter store split into a ``backbone`` partition (observation encoder) and
    an ``action`` partition (everything else)."""

    BACKBONE_PREFIXES = ("obs_encoder.",)

    def __init__(self, config: PolicyConfig, descriptor_stats: DescriptorStats | None = None):
        super().__init__()
        config.validate()
        self.config = config
        self.descriptor_stats = descriptor_stats or DescriptorStats.identity()
        cfg = config
        d = cfg.d
        with torch.random.fork_rng(devices=[]):
            torch.manual_seed(cfg.seed)
            self.obs_encoder = nn.Linear(cfg.obs_dim, cfg.n_obs_tokens * d)
            self.action_in = nn.Linear(cfg.J_max, d)
            self.action_pos = nn.Parameter(0.02 * torch.randn(cfg.H, d))
            self.time_in = nn.Linear(d, d)
            self.time_out = nn.Linear(d, d)
            self.blocks = nn.ModuleList(Block(d, cfg.heads, cfg.mlp_ratio) for _ in range(cfg.L))
            self.final_norm = nn.LayerNorm(d)
            self.action_out = nn.Linear(d, cfg.J_max)
            nn.init.zeros_(self.action_out.weight)
            nn.init.zeros_(self.action_out.bias)
            if cfg.kt_enabled:
                g = cfg.H // cfg.G
                self.kin_encoders = nn.ModuleList(
                    TokenEncoder(g, d, cfg.encoder_shape, cfg.encoder_hidden, final_layer_zero_init=True)
                    for _ in range(1 + cfg.M_aux)
                )
                if cfg.kin_pos_embedding:
                    self.kin_pos = nn.Parameter(0.02 * torch.randn(1 + cfg.M_aux, cfg.J_max, cfg.G, d))
            if cfg.film_enabled:
                self.film = FilmGenerator(d, final_layer_zero_init=True)
            if cfg.mask_mode == "spd_softmask":
                self.spd_table = nn.Parameter(init_spd_for(cfg))
            elif cfg.mask_mode in ta.ADJ_VARIANTS:
                variant = ta.ADJ_VARIANTS[cfg.mask_mode]
                self.adj_theta = nn.Parameter(
                    ta.init_adj_theta(variant, cfg.L, cfg.J_max, cfg.adj_init, cfg.theta_max, cfg.spd_strength)
                )
        self.double()
        self._graphs: dict[RobotMorphology, _GraphCache] = {}

    # -- partitions ------------------------------------------------------

    def partition_of(self, name: str) -> str:
        return "backbone" if name.startswith(self.BACKBONE_PREFIXES) else "action"

    def partition(self, which: str) -> dict[str, nn.Parameter]:
        return {n: p for n, p in self.named_parameters() if self.partition_of(n) == which}

    def set_finetune_mode(self, mode: str) -> None:
        if mode not in ("AP-FT", "Full-FT"):
            raise ConfigError(f"finetune_mode must be AP-FT or Full-FT, got {mode!r}")
        for name, p in self.named_parameters():
            p.requires_grad_(mode == "Full-FT" or self.partition_of(name) == "action")

    def trainable(self) -> dict[str, nn.Parameter]:
        return {n: p for n, p in self.named_parameters() if p.requires_grad}

    # -- topology --------------------------------------------------------

    def graph(self, m: RobotMorphology) -> _GraphCache:
        if m.num_joints > self.config.J_max:
            raise ConfigError(f"{m.name} has {m.num_joints} joints but J_max={self.config.J_max}")
        cache = self._graphs.get(m)
        if cache is None:
            cache = self._graphs[m] = _GraphCache(self, m)
        return cache

    def joint_bias(self, m: RobotMorphology, layer: int) -> torch.Tensor | None:
        """The layer's J x J topology bias, or ``None`` when the layer is unbiased."""
        cfg = self.config
        gc = self.graph(m)
        mode = cfg.mask_mode
        if mode in ta.HARD_MODES:
            if ta.layer_schedule(mode, cfg.L)[layer] == "masked":
                return ta.hard_bias(gc.adjacency)
            return None
        if mode == "spd_softmask":
            return ta.spd_bias(self.spd_table, gc.spd, layer)
        params = ta.AdjSoftParams(ta.ADJ_VARIANTS[mode], self.adj_theta, cfg.theta_max)
        return ta.adj_soft_bias(params, gc.adjacency, layer)

    def layer_mask(self, m: RobotMorphology, layer: int) -> torch.Tensor:
        cfg = self.config
        gc = self.graph(m)
        if not cfg.kt_enabled:
            return gc.base
        if cfg.mask_mode in ta.HARD_MODES:
            masked = ta.layer_schedule(cfg.mask_mode, cfg.L)[layer] == "masked"
            return gc.hard_mask if masked else gc.base
        return ta.compose_sequence_mask(gc.layout, self.joint_bias(m, layer), gc.base)

    # -- forward ---------------------------------------------------------

    def film_params(self, m: RobotMorphology) -> FilmParams:
        return self.film(self.graph(m).descriptors)

    def kinematic_tokens(self, x: torch.Tensor, m: RobotMorphology) -> torch.Tensor:
        """Embeddings ``(B, (1+M) * J * G, d)`` ordered by aux index, joint, chunk."""
        cfg = self.config
        B, J = x.shape[0], m.num_joints
        tokens = chunk_actions(x, ChunkSpec(cfg.H, cfg.G))
        z = torch.stack([enc(tokens) for enc in self.kin_encoders], dim=1)  # (B, 1+M, J, G, d)
        if cfg.film_enabled:
            p = self.film_params(m)
            gamma, beta = p.gamma[None, None, :, None, :], p.beta[None, None, :, None, :]
            fp = FilmParams(gamma, beta)
            if cfg.film_aux:
                z = modulate(z, fp)
            else:
                z = torch.cat([modulate(z[:, :1], fp), z[:, 1:]], dim=1)
        if cfg.kin_pos_embedding:
            z = z + self.kin_pos[None, :, :J]
        return z.reshape(B, -1, cfg.d)

    def forward(self, obs: torch.Tensor, x: torch.Tensor, tau: torch.Tensor, m: RobotMorphology,
                return_attention: bool = False):
        """Predict velocity ``(B, H, J)`` for interpolants ``x`` at flow times ``tau``."""
        cfg = self.config
        if x.dim() != 3 or x.shape[1] != cfg.H or x.shape[2] != m.num_joints:
            raise ConfigError(f"x must be (B, {cfg.H}, {m.num_joints}), got {tuple(x.shape)}")
        if obs.shape != (x.shape[0], cfg.obs_dim):
            raise ConfigError(f"obs must be (B, {cfg.obs_dim}), got {tuple(obs.shape)}")
        B, J = x.shape[0], m.num_joints
        self.graph(m)
        obs_tok = self.obs_encoder(obs).view(B, cfg.n_obs_tokens, cfg.d)
        x_pad = F.pad(x, (0, cfg.J_max - J))
        t_emb = self.time_out(F.silu(self.time_in(sinusoidal_features(tau, cfg.d))))
        act_tok = self.action_in(x_pad) + self.action_pos[None] + t_emb[:, None, :]
        parts = [obs_tok, act_tok]
        if cfg.kt_enabled:
            parts.append(self.kinematic_tokens(x, m))
        h = torch.cat(parts, dim=1)
        attn = []
        for layer, block in enumerate(self.blocks):
            h, w = block(h, self.layer_mask(m, layer))
            if return_attention:
                attn.append(w)
        a0 = cfg.n_obs_tokens
        v = self.action_out(self.final_norm(h[:, a0 : a0 + cfg.H]))[..., :J]
        if return_attention:
            return v, {"attention": attn}
        return v


def init_spd_for(cfg: PolicyConfig) -> torch.Tensor:
    return ta.init_spd_table(cfg.spd_init, cfg.L, cfg.spd_width - 1, cfg.spd_strength)


# -- flow matching ------------------------------------------------------------


def _t(x) -> torch.Tensor:
    return x if isinstance(x, torch.Tensor) else torch.as_tensor(np.asarray(x), dtype=torch.float64)


def flow_sample(actions, rng: np.random.Generator):
    """Draw ``(noise, tau)`` for a batch of clean actions ``(B, H, J)``."""
    B, H, J = actions.shape
    noise = rng.standard_normal((B, H, J))
    tau = rng.random(B)
    return noise, tau


def flow_loss(model: PolicyModel, obs, actions, m: RobotMorphology, rng: np.random.Generator | None = None,
              noise=None, tau=None, compute_grads: bool = True):
    """Flow-matching MSE for one single-embodiment batch.

    Returns ``(loss, grads)`` where ``grads`` maps trainable parameter names to
    gradient tensors (empty when ``compute_grads`` is false).
    """
    A = _t(actions)
    if A.shape[0] == 0:
        raise ValueError("flow_loss needs a nonempty batch")
    if noise is None or tau is None:
        if rng is None:
            raise ValueError("flow_loss needs an rng or explicit (noise, tau)")
        noise, tau = flow_sample(A, rng)
    E, tau = _t(noise), _t(tau)
    x = tau[:, None, None] * A + (1 - tau[:, None, None]) * E
    target = A - E
    pred = model(_t(obs), x, tau, m)
    loss = ((pred - target) ** 2).mean()
    grads = {}
    params = model.trainable() if compute_grads else {}
    if params:
        values = torch.autograd.grad(loss, list(params.values()), allow_unused=True)
        grads = {n: (torch.zeros_like(p) if g is None else g) for (n, p), g in zip(params.items(), values)}
    return loss, grads


def sample_actions(model, obs, m: RobotMorphology, steps: int, rng: np.random.Generator | None = None,
                   noise=None, velocity_fn=None):
    """Euler-integrate the velocity field from noise at ``tau=0`` to ``tau=1``.

    ``velocity_fn(x, tau)`` overrides the model (used for oracle checks).
    """
    if steps < 1:
        raise ValueError("steps must be >= 1")
    obs = _t(obs)
    if noise is None:
        noise = rng.standard_normal((obs.shape[0], model.config.H, m.num_joints))
    x = _t(noise).clone()
    dt = 1.0 / steps
    with torch.no_grad():
        for k in range(steps):
            tau = torch.full((x.shape[0],), k * dt, dtype=x.dtype)
            v = velocity_fn(x, tau) if velocity_fn is not None else model(obs, x, tau, m)
            x = x + dt * v
    return x


# -- checkpoints --------------------------------------------------------------


def _atomic_write_text(path, text: str) -> None:
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def checkpoint_dict(model: PolicyModel, extra: dict | None = None) -> dict:
    return {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "config": asdict(model.config),
        "descriptor_stats": model.descriptor_stats.to_dict(),
        "params": {
            name: {"shape": list(p.shape), "data": p.detach().reshape(-1).tolist()}
            for name, p in model.state_dict().items()
        },
        "extra": extra or {},
    }


def save_checkpoint(model: PolicyModel, path, extra: dict | None = None) -> None:
    _atomic_write_text(path, json.dumps(checkpoint_dict(model, extra)) + "\n")


# fields a warm start may change besides mask_mode
_WARM_START_FREE = {"mask_mode", "spd_init", "spd_strength", "D_max", "seed"}


def model_from_checkpoint(ckpt: dict, config: PolicyConfig | None = None) -> PolicyModel:
    """Rebuild a model from a checkpoint dictionary.

    With ``config`` given, every field except ``seed`` must match the stored
    config, unless this is a warm start: a checkpoint trained under
    ``no_mask``/``full_mask``/``mix_mask`` loaded into ``spd_softmask``. Then all
    shared tensors are copied and the new bias table keeps ``config``'s init.
    """
    if ckpt.get("format") != CHECKPOINT_FORMAT:
        raise ConfigError(f"not a {CHECKPOINT_FORMAT} file")
    if ckpt.get("version") != CHECKPOINT_VERSION:
        raise ConfigError(f"unsupported checkpoint version {ckpt.get('version')}, expected {CHECKPOINT_VERSION}")
    stored = PolicyConfig.from_dict(ckpt["config"])
    stats = DescriptorStats.from_dict(ckpt["descriptor_stats"])
    if config is None:
        config = stored
    warm = stored.mask_mode in ta.HARD_MODES and config.mask_mode == "spd_softmask"
    free = _WARM_START_FREE if warm else {"seed"}
    diffs = [f.name for f in fields(PolicyConfig)
             if f.name not in free and getattr(stored, f.name) != getattr(config, f.name)]
    if diffs:
        detail = ", ".join(f"{n}: {getattr(stored, n)!r} != {getattr(config, n)!r}" for n in diffs)
        raise ConfigError(f"checkpoint config mismatch ({detail})")
    model = PolicyModel(config, stats)
    state = model.state_dict()
    params = ckpt["params"]
    for name, target in state.items():
        if name not in params:
            if warm and name == "spd_table":
                continue
            raise ConfigError(f"checkpoint is missing tensor {name!r}")
        entry = params[name]
        if list(target.shape) != entry["shape"]:
            raise ConfigError(f"tensor {name!r} has shape {entry['shape']}, model expects {list(target.shape)}")
        with torch.no_grad():
            target.copy_(torch.tensor(entry["data"], dtype=target.dtype).reshape(target.shape))
    extra = set(params) - set(state)
    if extra:
        raise ConfigError(f"checkpoint has tensors unknown to this config: {sorted(extra)}")
    return model


def load_checkpoint(path, config: PolicyConfig | None = None) -> PolicyModel:
    with open(path, encoding="utf-8") as fh:
        return model_from_checkpoint(json.loads(fh.read()), config)


def warm_start(ckpt_path, spd_init: str = "mix", **overrides) -> PolicyModel:
    """Load a hard-mask checkpoint and switch it to ``spd_softmask`` with ``spd_init``."""
    with open(ckpt_path, encoding="utf-8") as fh:
        ckpt = json.loads(fh.read())
    stored = PolicyConfig.from_dict(ckpt["config"])
    config = replace(stored, mask_mode="spd_softmask", spd_init=spd_init, **overrides)
    return model_from_checkpoint(ckpt, config)
