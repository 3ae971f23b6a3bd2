"""Two-Gaussian mixture in 2-D: flow matching plus preference tuning toward one mode."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from .diffusion import fm_interpolate, fm_loss, sample_ode
from .dpo import DpoConfig, Trainer, dpo_fm_loss, draw_item
from .models import Denoiser, ModelConfig, grad, init_params

MEANS = np.array([[-2.0, 0.0], [2.0, 0.0]])  # mode A, mode B
STD = 0.5
WEIGHT_A = 0.4


@dataclass
class ToyRun:
    mass_true: float
    mass_base: float
    mass_dpo: float
    fm_curve: list
    dpo_curve: list


def sample_mixture(n: int, seed: int, weight_a: float = WEIGHT_A) -> tuple:
    """Points and their component labels (0 = A, 1 = B)."""
    rng = np.random.default_rng(seed)
    labels = (rng.uniform(size=n) >= weight_a).astype(int)
    x = MEANS[labels] + STD * rng.standard_normal((n, 2))
    return x, labels


def mode_a_mass(x) -> float:
    """Fraction of points nearer mode A; the modes are split by the x = 0 line."""
    return float((np.asarray(x)[:, 0] < 0).mean())


def mlp_config() -> ModelConfig:
    return ModelConfig(architecture="mlp", n_blocks=3, d=64, n_heads=1, d_ff=64, latent_dim=2, time_dim=16)


def train_flow(model: Denoiser, steps: int = 3000, batch: int = 256, lr: float = 3e-3, seed: int = 0) -> list:
    trainer = Trainer(model.params, list(model.params), lr, warmup_steps=100, total_steps=steps, schedule="cosine")
    rng = np.random.default_rng(seed)
    dtype = next(iter(model.params.values())).dtype
    curve = []
    for _ in range(steps):
        x0, _ = sample_mixture(batch, int(rng.integers(2**31)))
        x0 = torch.as_tensor(x0, dtype=dtype)
        eps = torch.as_tensor(rng.standard_normal((batch, 2)), dtype=dtype)
        tau = torch.as_tensor(rng.uniform(size=batch), dtype=dtype)
        sample = fm_interpolate(x0, eps, tau)
        loss, grads = grad(model.params, lambda p: fm_loss(model.with_params(p), sample))
        trainer.step(grads)
        curve.append(float(loss))
    return curve


def generate(model: Denoiser, n: int = 2000, steps: int = 50, seed: int = 0) -> np.ndarray:
    dtype = next(iter(model.params.values())).dtype
    return sample_ode(model, (n, 2), steps=steps, seed=seed, dtype=dtype).numpy()


def tune_toward_a(model: Denoiser, cfg: DpoConfig, steps: int = 300, batch: int = 128, lr: float = 3e-3,
                  seed: int = 1, pool: int = 4000) -> list:
    """Preference tuning on pairs whose winner is a model sample in mode A and loser in mode B."""
    ref = model.frozen_copy()
    cand = generate(ref, pool, seed=seed)
    side = cand[:, 0] < 0
    wins, losses = cand[side], cand[~side]
    trainer = Trainer(model.params, list(model.params), lr, warmup_steps=20)
    rng = np.random.default_rng(seed)
    dtype = next(iter(model.params.values())).dtype
    curve = []
    for _ in range(steps):
        xw = torch.as_tensor(wins[rng.integers(0, len(wins), batch)], dtype=dtype)
        xl = torch.as_tensor(losses[rng.integers(0, len(losses), batch)], dtype=dtype)
        item = draw_item(xw, xl, None, int(rng.integers(2**31)), cfg.shared_noise)
        loss, grads = grad(model.params, lambda p: dpo_fm_loss(model.with_params(p), ref, item, cfg))
        trainer.step(grads)
        curve.append(float(loss))
    return curve


def run(seed: int = 0, fm_steps: int = 3000, dpo_steps: int = 300, beta: float = 5.0, n_eval: int = 2000) -> ToyRun:
    torch.manual_seed(seed)
    cfg = mlp_config()
    model = Denoiser(cfg, init_params(cfg, seed))
    fm_curve = train_flow(model, fm_steps, seed=seed)
    base = mode_a_mass(generate(model, n_eval, seed=seed + 100))
    dpo_curve = tune_toward_a(model, DpoConfig(beta=beta), dpo_steps, seed=seed + 1)
    tuned = mode_a_mass(generate(model, n_eval, seed=seed + 100))
    return ToyRun(WEIGHT_A, base, tuned, fm_curve, dpo_curve)
