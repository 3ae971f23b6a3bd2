"""Flow-matching preference optimization against a frozen reference model."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F

from .models import NonFiniteError, grad
from .preference import PreferencePair

OMEGAS = {
    "constant": lambda tau: torch.ones_like(tau),
    "one_minus_tau": lambda tau: 1.0 - tau,
    "tau": lambda tau: tau,
}


@dataclass
class DpoConfig:
    beta: float = 2500.0
    omega: str = "constant"
    shared_noise: bool = True
    learning_rate: float = 1e-8
    warmup_steps: int = 2500

    def __post_init__(self):
        if not self.beta > 0:
            raise ValueError("beta must be positive")
        if self.omega not in OMEGAS:
            raise ValueError(f"unknown omega {self.omega!r}; choose from {sorted(OMEGAS)}")


@dataclass
class DpoBatchItem:
    """One or more preference items; tensors carry a leading batch axis."""

    x0_w: torch.Tensor
    x0_l: torch.Tensor
    tau: torch.Tensor
    eps_w: torch.Tensor
    eps_l: torch.Tensor | None = None
    conditions: dict | None = None
    pairs: list | None = None

    @property
    def batch(self) -> int:
        return self.x0_w.shape[0]


def draw_item(x0_w, x0_l, conditions, seed: int, shared_noise: bool = True, pairs=None) -> DpoBatchItem:
    """Sample tau ~ U(0, 1) and the noise for a batch of (winner, loser) latents."""
    rng = np.random.default_rng(seed)
    dtype = x0_w.dtype
    b = x0_w.shape[0]
    tau = torch.as_tensor(rng.uniform(0.0, 1.0, size=b), dtype=dtype)
    eps_w = torch.as_tensor(rng.standard_normal(tuple(x0_w.shape)), dtype=dtype)
    eps_l = None if shared_noise else torch.as_tensor(rng.standard_normal(tuple(x0_l.shape)), dtype=dtype)
    return DpoBatchItem(x0_w, x0_l, tau, eps_w, eps_l, conditions, pairs)


def _per_sample_mse(a, b):
    return ((a - b) ** 2).reshape(a.shape[0], -1).mean(dim=1)


def _bcast(tau, x):
    return tau.reshape((-1,) + (1,) * (x.ndim - 1))


def _double(conditions):
    if not conditions:
        return conditions
    return {m: torch.cat([torch.as_tensor(c), torch.as_tensor(c)], dim=0) for m, c in conditions.items()}


def dpo_terms(theta_model, ref_model, item: DpoBatchItem, cfg: DpoConfig) -> dict:
    """Per-sample squared-error gaps of theta versus the reference on both branches."""
    if item.x0_w.shape != item.x0_l.shape:
        raise ValueError("winner and loser latents differ in shape")
    eps_l = item.eps_w if cfg.shared_noise or item.eps_l is None else item.eps_l
    tau = item.tau
    w = _bcast(tau, item.x0_w)
    x_w = (1 - w) * item.x0_w + w * item.eps_w
    x_l = (1 - w) * item.x0_l + w * eps_l
    v_w = item.eps_w - item.x0_w
    v_l = eps_l - item.x0_l

    x = torch.cat([x_w, x_l], dim=0)
    taus = torch.cat([tau, tau], dim=0)
    conds = _double(item.conditions)
    pred = theta_model(x, taus, conds)
    with torch.no_grad():
        ref = ref_model(x, taus, conds)
    if not (torch.all(torch.isfinite(pred)) and torch.all(torch.isfinite(ref))):
        raise NonFiniteError("model output is non-finite")
    b = item.batch
    err_theta_w = _per_sample_mse(v_w, pred[:b])
    err_theta_l = _per_sample_mse(v_l, pred[b:])
    err_ref_w = _per_sample_mse(v_w, ref[:b])
    err_ref_l = _per_sample_mse(v_l, ref[b:])
    delta_w = err_theta_w - err_ref_w
    delta_l = err_theta_l - err_ref_l
    logits = -cfg.beta * OMEGAS[cfg.omega](tau) * (delta_w - delta_l)
    return {"delta_w": delta_w, "delta_l": delta_l, "logits": logits}


def dpo_fm_loss(theta_model, ref_model, item: DpoBatchItem, cfg: DpoConfig):
    """Mean of -log sigmoid(-beta * omega(tau) * (delta_w - delta_l)) over the batch."""
    terms = dpo_terms(theta_model, ref_model, item, cfg)
    return -F.logsigmoid(terms["logits"]).mean()


def lr_factor(step: int, warmup_steps: int, total_steps: int | None, schedule: str) -> float:
    """Linear warm-up, then constant or cosine decay to zero at ``total_steps``."""
    if warmup_steps > 0 and step < warmup_steps:
        return (step + 1) / warmup_steps
    if schedule == "constant" or not total_steps:
        return 1.0
    if schedule == "cosine":
        span = max(total_steps - warmup_steps, 1)
        progress = min(max(step - warmup_steps, 0) / span, 1.0)
        return 0.5 * (1.0 + math.cos(math.pi * progress))
    raise ValueError(f"unknown schedule {schedule!r}")


class Trainer:
    """AdamW over the named trainable subset of a parameter dict.

    Parameters outside ``trainable`` are never touched.
    """

    def __init__(self, params: dict, trainable, learning_rate: float, warmup_steps: int = 0,
                 weight_decay: float = 0.0, grad_clip: float | None = 1.0, total_steps: int | None = None,
                 schedule: str = "constant"):
        self.params = params
        self.trainable = [k for k in params if k in set(trainable)]
        self.grad_clip = grad_clip
        self.learning_rate = learning_rate
        self.opt = torch.optim.AdamW(
            [params[k] for k in self.trainable], lr=learning_rate, weight_decay=weight_decay, foreach=False
        )
        warm = max(int(warmup_steps), 0)
        lr_factor(0, warm, total_steps, schedule)
        self.sched = torch.optim.lr_scheduler.LambdaLR(
            self.opt, lambda s: lr_factor(s, warm, total_steps, schedule)
        )
        self.steps = 0

    def step(self, grads: dict) -> None:
        for k in self.trainable:
            g = grads[k]
            if not torch.all(torch.isfinite(g)):
                raise NonFiniteError(f"non-finite gradient for parameter {k!r}", name=k)
        gs = [grads[k].to(self.params[k].dtype) for k in self.trainable]
        if self.grad_clip is not None:
            total = torch.sqrt(sum((g * g).sum() for g in gs))
            if total > self.grad_clip:
                gs = [g * (self.grad_clip / total) for g in gs]
        for k, g in zip(self.trainable, gs):
            self.params[k].grad = g
        self.opt.step()
        self.opt.zero_grad(set_to_none=True)
        self.sched.step()
        self.steps += 1


def dpo_step(theta_model, ref_model, batch: DpoBatchItem, cfg: DpoConfig, trainer: Trainer):
    """One optimizer update on the batch-mean preference loss; returns (params, loss)."""
    if batch.batch < 1:
        raise ValueError("empty batch")

    def loss_fn(p):
        return dpo_fm_loss(theta_model.with_params(p), ref_model, batch, cfg)

    loss, grads = grad(theta_model.params, loss_fn)
    trainer.step(grads)
    return theta_model.params, float(loss)


@torch.no_grad()
def implicit_reward_proxy(theta_model, ref_model, y, conditions, cfg: DpoConfig, n_draws: int = 16,
                          seed: int = 0, return_draws: bool = False):
    """Monte-Carlo surrogate for beta * log(pi_theta(y) / pi_ref(y)).

    Averages -beta * (||v - v_theta||^2 - ||v - v_ref||^2) over random (tau, eps)
    with v = eps - y. Positive values mean theta fits ``y`` better than the
    reference does. This is a proxy, not the exact likelihood ratio.
    """
    if n_draws < 1:
        raise ValueError("n_draws must be >= 1")
    rng = np.random.default_rng(seed)
    y = torch.as_tensor(y)
    draws = []
    for _ in range(n_draws):
        tau = torch.as_tensor(rng.uniform(0.0, 1.0, size=y.shape[0]), dtype=y.dtype)
        eps = torch.as_tensor(rng.standard_normal(tuple(y.shape)), dtype=y.dtype)
        w = _bcast(tau, y)
        x = (1 - w) * y + w * eps
        v = eps - y
        gap = _per_sample_mse(v, theta_model(x, tau, conditions)) - _per_sample_mse(v, ref_model(x, tau, conditions))
        draws.append(-cfg.beta * gap)
    draws = torch.stack(draws).reshape(-1).numpy()
    if return_draws:
        return draws
    return float(draws.mean())
