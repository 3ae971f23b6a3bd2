"""Forward noising, DDPM and flow-matching objectives, and samplers.

Two time conventions live here and are kept apart: integer DDPM steps
``t in [1, T_steps]`` and continuous flow time ``tau in [0, 1]``, with clean data
at tau = 0 and pure noise at tau = 1.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch


@dataclass(frozen=True)
class NoiseSchedule:
    betas: np.ndarray
    alphabars: np.ndarray

    @property
    def steps(self) -> int:
        return len(self.betas)

    def alphabar(self, t):
        t = np.asarray(t)
        if np.any(t < 1) or np.any(t > self.steps):
            raise IndexError(f"timestep {t} outside [1, {self.steps}]")
        return self.alphabars[t - 1]


def make_schedule(betas) -> NoiseSchedule:
    betas = np.asarray(betas, dtype=np.float64)
    if betas.ndim != 1 or betas.size < 1 or np.any(betas <= 0) or np.any(betas >= 1):
        raise ValueError("betas must be a non-empty sequence strictly inside (0, 1)")
    return NoiseSchedule(betas=betas, alphabars=np.cumprod(1.0 - betas))


def linear_schedule(steps: int = 1000, beta_start: float = 1e-4, beta_end: float = 2e-2) -> NoiseSchedule:
    return make_schedule(np.linspace(beta_start, beta_end, steps))


def _broadcast(coef, like):
    """Shape per-sample coefficients (B,) to broadcast against a (B, ...) batch."""
    if isinstance(like, torch.Tensor):
        coef = torch.as_tensor(coef, dtype=like.dtype)
    else:
        coef = np.asarray(coef, dtype=np.float64)
    if coef.ndim == 0:
        return coef
    return coef.reshape(coef.shape + (1,) * (like.ndim - coef.ndim))


def forward_marginal(x0, t, eps, sched: NoiseSchedule):
    """Sample x_t = sqrt(abar_t) x0 + sqrt(1 - abar_t) eps for step(s) ``t``."""
    if tuple(x0.shape) != tuple(eps.shape):
        raise ValueError(f"x0 {tuple(x0.shape)} and eps {tuple(eps.shape)} differ in shape")
    ab = sched.alphabar(t)
    return _broadcast(np.sqrt(ab), x0) * x0 + _broadcast(np.sqrt(1.0 - ab), eps) * eps


def ddpm_loss(model, x0, t, eps, sched: NoiseSchedule):
    x_t = forward_marginal(x0, t, eps, sched)
    pred = model(x_t, t)
    if tuple(pred.shape) != tuple(eps.shape):
        raise ValueError(f"model output {tuple(pred.shape)} does not match noise {tuple(eps.shape)}")
    return ((eps - pred) ** 2).mean()


@dataclass
class FlowSample:
    x0: object
    eps: object
    tau: object
    x_tau: object
    v_target: object


def fm_interpolate(x0, eps, tau) -> FlowSample:
    tau_arr = np.asarray(tau.detach().cpu() if isinstance(tau, torch.Tensor) else tau, dtype=np.float64)
    if np.any(tau_arr < 0) or np.any(tau_arr > 1):
        raise ValueError(f"tau {tau_arr} outside [0, 1]")
    if tuple(x0.shape) != tuple(eps.shape):
        raise ValueError("x0 and eps differ in shape")
    w = _broadcast(tau, x0)
    return FlowSample(x0=x0, eps=eps, tau=tau, x_tau=(1 - w) * x0 + w * eps, v_target=eps - x0)


def fm_loss(model, sample: FlowSample, conditions=None):
    """Mean squared velocity error over all elements of the batch."""
    pred = model(sample.x_tau, sample.tau, conditions)
    if tuple(pred.shape) != tuple(sample.v_target.shape):
        raise ValueError(f"model output {tuple(pred.shape)} != target {tuple(sample.v_target.shape)}")
    return ((sample.v_target - pred) ** 2).mean()


def initial_noise(shape, seed: int, dtype=torch.float64) -> torch.Tensor:
    rng = np.random.default_rng(seed)
    return torch.as_tensor(rng.standard_normal(tuple(shape)), dtype=dtype)


@torch.no_grad()
def sample_ode(model, shape, conditions=None, steps: int = 20, seed: int = 0, noise=None, dtype=torch.float64):
    """Euler integration of dx/dtau = v(x, tau) from tau = 1 down to tau = 0."""
    if steps < 1:
        raise ValueError("steps must be >= 1")
    x = initial_noise(shape, seed, dtype) if noise is None else torch.as_tensor(noise, dtype=dtype).clone()
    dt = 1.0 / steps
    batch = shape[0]
    for i in range(steps):
        tau = torch.full((batch,), 1.0 - i * dt, dtype=dtype)
        x = x - dt * model(x, tau, conditions)
    return x


@torch.no_grad()
def sample_ddpm(model, shape, sched: NoiseSchedule, seed: int = 0, dtype=torch.float64):
    """Ancestral sampling with the posterior variance beta_tilde.

    ``model(x_t, t)`` predicts the noise; t is passed as a (B,) integer tensor.
    """
    rng = np.random.default_rng(seed)
    x = torch.as_tensor(rng.standard_normal(tuple(shape)), dtype=dtype)
    batch = shape[0]
    for t in range(sched.steps, 0, -1):
        beta = sched.betas[t - 1]
        ab = sched.alphabars[t - 1]
        ab_prev = sched.alphabars[t - 2] if t > 1 else 1.0
        eps_hat = model(x, torch.full((batch,), t, dtype=torch.long))
        mean = (x - beta / np.sqrt(1.0 - ab) * eps_hat) / np.sqrt(1.0 - beta)
        if t > 1:
            var = beta * (1.0 - ab_prev) / (1.0 - ab)
            x = mean + np.sqrt(var) * torch.as_tensor(rng.standard_normal(tuple(shape)), dtype=dtype)
        else:
            x = mean
    return x
