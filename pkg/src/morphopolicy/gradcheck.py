"""Central finite-difference checks for analytic gradients."""

from __future__ import annotations

import numpy as np
import torch


def randomize_parameters(model: torch.nn.Module, scale: float = 0.3, seed: int = 0,
                         skip: tuple[str, ...] = ()) -> None:
    """Add Gaussian noise to every parameter so zero-initialized layers carry signal."""
    g = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        for name, p in model.named_parameters():
            if name in skip:
                continue
            p.add_(scale * torch.randn(p.shape, generator=g, dtype=p.dtype))


def finite_difference_check(loss_fn, params: dict[str, torch.Tensor], analytic: dict[str, torch.Tensor],
                            eps: float = 1e-4, samples_per_tensor: int | None = 6, seed: int = 0,
                            ) -> dict[str, float]:
    """Compare ``analytic`` gradients with central differences of ``loss_fn()``.

    For each tensor, up to ``samples_per_tensor`` entries are probed (all when
    ``None``). The error reported per tensor is
    ``max|a - n| / max(max|a|, max|n|)`` over the probed entries, or 0 when both
    vanish.
    """
    rng = np.random.default_rng(seed)
    errors = {}
    with torch.no_grad():
        for name, p in params.items():
            flat = p.view(-1)
            n = flat.numel()
            if samples_per_tensor is None or samples_per_tensor >= n:
                idx = np.arange(n)
            else:
                idx = rng.choice(n, size=samples_per_tensor, replace=False)
            a = analytic[name].reshape(-1)[idx].detach().cpu().numpy()
            num = np.empty(len(idx))
            for out, i in enumerate(idx):
                orig = flat[i].item()
                flat[i] = orig + eps
                up = float(loss_fn())
                flat[i] = orig - eps
                down = float(loss_fn())
                flat[i] = orig
                num[out] = (up - down) / (2 * eps)
            scale = max(np.abs(a).max(), np.abs(num).max())
            errors[name] = 0.0 if scale == 0 else float(np.abs(a - num).max() / scale)
    return errors


def check_model_gradients(model, morphology, batch: int = 2, seed: int = 0, eps: float = 1e-4,
                          samples_per_tensor: int | None = 6) -> dict[str, float]:
    """Randomize ``model`` and finite-difference its flow loss on a fixed random batch."""
    from .policy import flow_loss

    cfg = model.config
    randomize_parameters(model, seed=seed)
    rng = np.random.default_rng(seed)
    obs = rng.standard_normal((batch, cfg.obs_dim))
    actions = rng.standard_normal((batch, cfg.H, morphology.num_joints))
    noise = rng.standard_normal(actions.shape)
    tau = rng.random(batch)

    def loss_fn():
        return flow_loss(model, obs, actions, morphology, noise=noise, tau=tau, compute_grads=False)[0]

    _, grads = flow_loss(model, obs, actions, morphology, noise=noise, tau=tau)
    return finite_difference_check(loss_fn, model.trainable(), grads, eps, samples_per_tensor, seed)
