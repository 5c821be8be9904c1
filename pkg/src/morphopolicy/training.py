"""Synthetic multi-embodiment benchmark, batch sampling and the training loop."""

from __future__ import annotations

import csv
import io
import itertools
import json
import math
import os
import time
from dataclasses import asdict, dataclass, field, fields, replace
from typing import Sequence

import numpy as np
import torch

from .morphology import (
    DescriptorStats,
    RobotMorphology,
    bfs_parents,
    descriptor_matrix,
    fit_descriptor_stats,
    load_robot_spec,
)
from .policy import ConfigError, PolicyConfig, PolicyModel, flow_loss, load_checkpoint
from . import robots

REPORT_SCHEMA_VERSION = 1

# weights on (type_pris, type_rev, ax, ay, az, hard_lower, hard_upper, ...)
DEFAULT_GAIN_WEIGHTS = (0.2, 0.0, 0.5, 0.3, -0.4, 0.1, 0.1, 0.0, 0.0, 0.0, 0.0, 0.0)


class TrainingError(RuntimeError):
    pass


# -- synthetic data -----------------------------------------------------------


@dataclass(frozen=True)
class SyntheticTask:
    """Joint ``j`` tracks its BFS parent delayed by ``lag`` steps, scaled by ``alpha``,
    plus a descriptor-dependent gain times a shared drive signal and noise."""

    morphology: RobotMorphology
    alpha: float = 0.8
    lag: int = 1
    sigma: float = 0.1
    obs_dim: int = 8
    H: int = 16
    seed: int = 0
    gain_weights: tuple[float, ...] = DEFAULT_GAIN_WEIGHTS

    def __post_init__(self):
        errs = []
        if not 0 < self.alpha <= 1:
            errs.append(f"alpha must be in (0, 1], got {self.alpha}")
        if self.lag < 1:
            errs.append(f"lag must be >= 1, got {self.lag}")
        if self.sigma < 0:
            errs.append(f"sigma must be >= 0, got {self.sigma}")
        if self.obs_dim < 4 or self.obs_dim % 4:
            errs.append(f"obs_dim must be a positive multiple of 4, got {self.obs_dim}")
        if len(self.gain_weights) != 12:
            errs.append(f"gain_weights must have 12 entries, got {len(self.gain_weights)}")
        if errs:
            raise ConfigError("; ".join(errs))

    def gains(self) -> np.ndarray:
        return descriptor_matrix(self.morphology) @ np.asarray(self.gain_weights, dtype=np.float64)


def _harmonics(obs: np.ndarray, t: np.ndarray, H: int, fn) -> np.ndarray:
    """Sum over (amplitude, phase) pairs in ``obs``: ``amp * fn(2 pi (p+1) t / H + pi phase)``."""
    out = np.zeros((obs.shape[0], t.shape[0]))
    for p in range(obs.shape[1] // 2):
        amp, phase = obs[:, 2 * p, None], obs[:, 2 * p + 1, None]
        out += amp * fn(2 * np.pi * (p + 1) * t[None, :] / H + np.pi * phase)
    return out


def generate_trajectories(task: SyntheticTask, count: int, stream: int = 0):
    """Return ``(obs, actions)`` arrays of shape ``(count, obs_dim)`` and ``(count, H, J)``.

    Joint 0 follows a smooth signal fixed by the first half of ``obs``; the drive
    signal ``u`` comes from the second half. ``stream`` selects an independent
    random stream (e.g. train vs. validation) for the same task seed.
    """
    m = task.morphology
    J, H, lag = m.num_joints, task.H, task.lag
    rng = np.random.default_rng([task.seed, stream])
    obs = rng.uniform(-1.0, 1.0, size=(count, task.obs_dim))
    parents = bfs_parents(m)
    depth = [0] * J
    order = _bfs_order(parents)
    for j in order[1:]:
        depth[j] = depth[parents[j]] + 1
    T0 = lag * max(depth)
    t = np.arange(-T0, H, dtype=np.float64)
    half = task.obs_dim // 2
    root = _harmonics(obs[:, :half], t, H, np.sin)
    drive = _harmonics(obs[:, half:], t, H, np.cos)
    gains = task.gains()
    noise = rng.standard_normal((count, t.shape[0], J))
    a = np.zeros((count, t.shape[0], J))
    a[:, :, 0] = root
    for j in order[1:]:
        p = parents[j]
        a[:, lag:, j] = task.alpha * a[:, :-lag, p] + gains[j] * drive[:, lag:] + task.sigma * noise[:, lag:, j]
    return obs, a[:, T0:, :]


def _bfs_order(parents: list[int]) -> list[int]:
    children: dict[int, list[int]] = {}
    for j, p in enumerate(parents):
        children.setdefault(p, []).append(j)
    order, frontier = [], [0]
    while frontier:
        order.extend(frontier)
        frontier = [c for u in frontier for c in sorted(children.get(u, []))]
    return order


@dataclass
class EmbodimentData:
    name: str
    morphology: RobotMorphology
    train_obs: np.ndarray
    train_actions: np.ndarray
    val_obs: np.ndarray
    val_actions: np.ndarray


def build_dataset(task: SyntheticTask, n_train: int, n_val: int) -> EmbodimentData:
    tr_obs, tr_act = generate_trajectories(task, n_train, stream=0)
    va_obs, va_act = generate_trajectories(task, n_val, stream=1)
    return EmbodimentData(task.morphology.name, task.morphology, tr_obs, tr_act, va_obs, va_act)


# -- batch sampling -----------------------------------------------------------


def check_weights(weights: Sequence[float]) -> np.ndarray:
    w = np.asarray(weights, dtype=np.float64)
    if w.ndim != 1 or w.size == 0 or np.any(w <= 0):
        raise ConfigError(f"mixture weights must be positive, got {list(weights)}")
    if abs(w.sum() - 1.0) > 1e-9:
        raise ConfigError(f"mixture weights must sum to 1, got {w.sum()}")
    return w


def sample_batch(weights: Sequence[float], datasets: Sequence[EmbodimentData], batch_size: int,
                 rng: np.random.Generator):
    """Pick one embodiment by weight, then a batch drawn only from it.

    Returns ``(embodiment_id, obs, actions)``.
    """
    w = check_weights(weights)
    if len(w) != len(datasets):
        raise ConfigError(f"{len(w)} weights for {len(datasets)} embodiments")
    e = int(rng.choice(len(w), p=w))
    data = datasets[e]
    idx = rng.integers(0, data.train_obs.shape[0], size=batch_size)
    return e, data.train_obs[idx], data.train_actions[idx]


# -- optimization -------------------------------------------------------------


@dataclass(frozen=True)
class TrainConfig:
    steps: int = 2000
    lr_max: float = 1e-3
    lr_min: float = 1e-5
    schedule: str = "cosine"
    betas: tuple[float, float] = (0.9, 0.95)
    weight_decay: float = 0.01
    finetune_mode: str = "AP-FT"
    batch_size: int = 16
    val_every: int = 0
    val_repeats: int = 4
    val_seed: int = 12345
    seed: int = 0

    def errors(self) -> list[str]:
        errs = []
        if self.steps < 0:
            errs.append(f"steps must be >= 0, got {self.steps}")
        if not self.lr_max >= self.lr_min > 0:
            errs.append(f"need lr_max >= lr_min > 0, got lr_max={self.lr_max}, lr_min={self.lr_min}")
        if self.schedule != "cosine":
            errs.append(f"schedule must be 'cosine', got {self.schedule!r}")
        if self.finetune_mode not in ("AP-FT", "Full-FT"):
            errs.append(f"finetune_mode must be AP-FT or Full-FT, got {self.finetune_mode!r}")
        if self.batch_size < 1:
            errs.append(f"batch_size must be >= 1, got {self.batch_size}")
        if self.val_every < 0 or self.val_repeats < 1:
            errs.append("val_every must be >= 0 and val_repeats >= 1")
        return errs

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown train config fields {sorted(unknown)}")
        d = dict(d)
        if "betas" in d:
            d["betas"] = tuple(d["betas"])
        return cls(**d)


def cosine_lr(step: int, cfg: TrainConfig) -> float:
    if not 0 <= step <= max(cfg.steps, 0):
        raise ValueError(f"step {step} outside [0, {cfg.steps}]")
    if cfg.steps == 0:
        return cfg.lr_max
    return cfg.lr_min + 0.5 * (cfg.lr_max - cfg.lr_min) * (1 + math.cos(math.pi * step / cfg.steps))


def validation_loss(model: PolicyModel, data: EmbodimentData, repeats: int = 4, seed: int = 12345) -> float:
    """Flow-matching MSE on held-out trajectories under fixed noise and time draws."""
    rng = np.random.default_rng(seed)
    total = 0.0
    with torch.no_grad():
        for _ in range(repeats):
            loss, _ = flow_loss(model, data.val_obs, data.val_actions, data.morphology, rng, compute_grads=False)
            total += float(loss)
    return total / repeats


@dataclass
class TrainLog:
    rows: list[tuple[int, float, float, int]] = field(default_factory=list)
    validation: list[dict] = field(default_factory=list)

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["step", "lr", "loss", "embodiment_id"])
        for step, lr, loss, emb in self.rows:
            writer.writerow([step, repr(lr), repr(loss), emb])
        return buf.getvalue()


def train(model: PolicyModel, datasets: Sequence[EmbodimentData], weights: Sequence[float], cfg: TrainConfig,
          progress=None) -> tuple[PolicyModel, TrainLog]:
    """Optimize the trainable partition with AdamW under a cosine schedule."""
    errs = cfg.errors()
    if errs:
        raise ConfigError("; ".join(errs))
    check_weights(weights)
    model.set_finetune_mode(cfg.finetune_mode)
    params = model.trainable()
    log = TrainLog()
    if cfg.steps == 0:
        _validate(model, datasets, cfg, 0, log)
        return model, log
    opt = torch.optim.AdamW(list(params.values()), lr=cfg.lr_max, betas=cfg.betas, weight_decay=cfg.weight_decay)
    rng = np.random.default_rng(cfg.seed)
    for step in range(cfg.steps):
        lr = cosine_lr(step, cfg)
        for group in opt.param_groups:
            group["lr"] = lr
        e, obs, actions = sample_batch(weights, datasets, cfg.batch_size, rng)
        loss, grads = flow_loss(model, obs, actions, datasets[e].morphology, rng)
        value = float(loss.detach())
        if not math.isfinite(value):
            raise TrainingError(f"non-finite loss {value} at step {step}")
        for name, p in params.items():
            p.grad = grads[name]
        opt.step()
        log.rows.append((step, lr, value, e))
        if cfg.val_every and (step + 1) % cfg.val_every == 0 and step + 1 < cfg.steps:
            _validate(model, datasets, cfg, step + 1, log)
        if progress is not None:
            progress(step, value)
    _validate(model, datasets, cfg, cfg.steps, log)
    return model, log


def _validate(model, datasets, cfg: TrainConfig, step: int, log: TrainLog) -> None:
    for e, data in enumerate(datasets):
        v = validation_loss(model, data, cfg.val_repeats, cfg.val_seed)
        log.validation.append({"step": step, "embodiment_id": e, "embodiment": data.name, "val_loss": v})


# -- experiments --------------------------------------------------------------


@dataclass(frozen=True)
class EmbodimentSpec:
    robot: str
    weight: float = 1.0
    alpha: float = 0.8
    lag: int = 1
    sigma: float = 0.1
    n_train: int = 512
    n_val: int = 128
    seed: int = 0

    @classmethod
    def from_dict(cls, d: dict) -> "EmbodimentSpec":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown embodiment fields {sorted(unknown)}")
        return cls(**d)


def resolve_robot(ref: str, base_dir: str | None = None) -> RobotMorphology:
    """``chain:N``, ``star:N``, a built-in name, or a path to a robot-description file."""
    if ref.startswith("chain:"):
        return robots.chain(int(ref.split(":", 1)[1]))
    if ref.startswith("star:"):
        return robots.star(int(ref.split(":", 1)[1]))
    if ref in robots.BUILTIN:
        return robots.BUILTIN[ref]()
    path = ref if base_dir is None or os.path.isabs(ref) else os.path.join(base_dir, ref)
    if not os.path.exists(path):
        raise ConfigError(f"robot {ref!r} is not built in and spec not found at {path}")
    return load_robot_spec(path)


@dataclass(frozen=True)
class ExperimentConfig:
    name: str = "run"
    policy: PolicyConfig = PolicyConfig()
    train: TrainConfig = TrainConfig()
    embodiments: tuple[EmbodimentSpec, ...] = (EmbodimentSpec("chain:6"),)
    init_checkpoint: str | None = None
    base_dir: str | None = None

    def errors(self) -> list[str]:
        errs = [f"policy: {e}" for e in self.policy.errors()]
        errs += [f"train: {e}" for e in self.train.errors()]
        if not self.embodiments:
            errs.append("embodiments: at least one embodiment is required")
        else:
            w = [e.weight for e in self.embodiments]
            if any(x <= 0 for x in w):
                errs.append(f"embodiments: weights must be positive, got {w}")
            elif abs(sum(w) - 1.0) > 1e-9:
                errs.append(f"embodiments: weights must sum to 1, got {sum(w)}")
        for i, e in enumerate(self.embodiments):
            try:
                m = resolve_robot(e.robot, self.base_dir)
            except (ConfigError, ValueError) as exc:
                errs.append(f"embodiments[{i}]: {exc}")
                continue
            if m.num_joints > self.policy.J_max:
                errs.append(f"embodiments[{i}]: {m.name} has {m.num_joints} joints > J_max={self.policy.J_max}")
            try:
                SyntheticTask(m, e.alpha, e.lag, e.sigma, self.policy.obs_dim, self.policy.H, e.seed)
            except ConfigError as exc:
                errs.append(f"embodiments[{i}]: {exc}")
            if e.n_train < 1 or e.n_val < 1:
                errs.append(f"embodiments[{i}]: n_train and n_val must be >= 1")
        return errs

    def validate(self) -> "ExperimentConfig":
        errs = self.errors()
        if errs:
            raise ConfigError("invalid experiment config:\n  " + "\n  ".join(errs))
        return self

    def to_dict(self) -> dict:
        d = asdict(self)
        d["train"]["betas"] = list(self.train.betas)
        d["embodiments"] = [asdict(e) for e in self.embodiments]
        d.pop("base_dir")
        return d

    @classmethod
    def from_dict(cls, d: dict, base_dir: str | None = None) -> "ExperimentConfig":
        known = {f.name for f in fields(cls)} - {"base_dir"}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown experiment config fields {sorted(unknown)}")
        return cls(
            name=d.get("name", "run"),
            policy=PolicyConfig.from_dict(d.get("policy", {})),
            train=TrainConfig.from_dict(d.get("train", {})),
            embodiments=tuple(EmbodimentSpec.from_dict(e) for e in d.get("embodiments", [{"robot": "chain:6"}])),
            init_checkpoint=d.get("init_checkpoint"),
            base_dir=base_dir,
        )


def load_experiment(path) -> ExperimentConfig:
    with open(path, encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: malformed JSON at line {exc.lineno}: {exc.msg}") from exc
    return ExperimentConfig.from_dict(doc, base_dir=os.path.dirname(os.path.abspath(path)))


def build_tasks(exp: ExperimentConfig) -> list[SyntheticTask]:
    return [
        SyntheticTask(resolve_robot(e.robot, exp.base_dir), e.alpha, e.lag, e.sigma, exp.policy.obs_dim,
                      exp.policy.H, e.seed)
        for e in exp.embodiments
    ]


def build_datasets(exp: ExperimentConfig) -> list[EmbodimentData]:
    return [build_dataset(t, e.n_train, e.n_val) for t, e in zip(build_tasks(exp), exp.embodiments)]


def population_stats(datasets: Sequence[EmbodimentData]) -> DescriptorStats:
    return fit_descriptor_stats(np.concatenate([descriptor_matrix(d.morphology) for d in datasets]))


def build_model(exp: ExperimentConfig, datasets: Sequence[EmbodimentData]) -> PolicyModel:
    if exp.init_checkpoint:
        path = exp.init_checkpoint
        if exp.base_dir and not os.path.isabs(path):
            path = os.path.join(exp.base_dir, path)
        return load_checkpoint(path, exp.policy)
    return PolicyModel(exp.policy, population_stats(datasets))


@dataclass
class RunReport:
    name: str
    config: dict
    seed: int
    final_val_loss: dict[str, float]
    mean_val_loss: float
    final_train_loss: float | None
    validation: list[dict]
    metrics_csv: str
    runtime_s: float
    schema_version: int = REPORT_SCHEMA_VERSION

    def to_dict(self, include_metrics: bool = False) -> dict:
        d = asdict(self)
        if not include_metrics:
            d.pop("metrics_csv")
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "RunReport":
        d = dict(d)
        d.setdefault("metrics_csv", "")
        return cls(**d)


def run_experiment(exp: ExperimentConfig, progress=None) -> tuple[RunReport, PolicyModel]:
    exp.validate()
    torch.set_num_threads(1)
    start = time.perf_counter()
    datasets = build_datasets(exp)
    model = build_model(exp, datasets)
    weights = [e.weight for e in exp.embodiments]
    model, log = train(model, datasets, weights, exp.train, progress)
    final = [v for v in log.validation if v["step"] == exp.train.steps]
    per_emb = {v["embodiment"]: v["val_loss"] for v in final}
    report = RunReport(
        name=exp.name,
        config=exp.to_dict(),
        seed=exp.train.seed,
        final_val_loss=per_emb,
        mean_val_loss=float(np.mean([v["val_loss"] for v in final])),
        final_train_loss=log.rows[-1][2] if log.rows else None,
        validation=log.validation,
        metrics_csv=log.to_csv(),
        runtime_s=time.perf_counter() - start,
    )
    return report, model


def set_path(exp: ExperimentConfig, path: str, value) -> ExperimentConfig:
    """Return a copy with a dotted field (``policy.G``, ``train.seed``, ``name``) replaced."""
    head, _, rest = path.partition(".")
    if not rest:
        if head not in {f.name for f in fields(ExperimentConfig)}:
            raise ConfigError(f"unknown experiment field {head!r}")
        return replace(exp, **{head: value})
    sub = getattr(exp, head, None)
    if head not in ("policy", "train") or rest not in {f.name for f in fields(sub)}:
        raise ConfigError(f"unknown sweep axis {path!r}")
    if head == "train" and rest == "betas":
        value = tuple(value)
    return replace(exp, **{head: replace(sub, **{rest: value})})


def expand_grid(base: ExperimentConfig, axes: dict[str, list]) -> list[ExperimentConfig]:
    """Cartesian product over dotted-path axes; each cell is named after its overrides."""
    keys = list(axes)
    cells = []
    for values in itertools.product(*(axes[k] for k in keys)):
        exp = base
        parts = []
        for k, v in zip(keys, values):
            exp = set_path(exp, k, v)
            parts.append(f"{k.split('.')[-1]}={v}")
        cells.append(replace(exp, name="__".join([base.name] + parts) if parts else base.name))
    return cells


def run_ablation(grid: Sequence[ExperimentConfig], progress=None) -> list[RunReport]:
    """Train and evaluate every cell; all cells share the seeds their configs carry."""
    for exp in grid:
        exp.validate()
    return [run_experiment(exp, progress)[0] for exp in grid]
