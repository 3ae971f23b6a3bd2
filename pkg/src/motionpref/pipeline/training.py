"""Phased training: audio cross-attention, skeleton cross-attention, then preference tuning."""

from __future__ import annotations

import fnmatch
import logging
from dataclasses import dataclass, field

import numpy as np
import torch

from .. import codec as codec_mod
from ..conditioning import align_condition, tokens_per_step
from ..diffusion import fm_interpolate, fm_loss
from ..dpo import DpoConfig, Trainer, dpo_fm_loss, draw_item
from ..models import Denoiser, ModelConfig, grad
from . import bench

log = logging.getLogger(__name__)

PHASES = ("audio", "skeleton", "dpo", "sft")
RHO = codec_mod.TIME_STRIDE


class PatternMismatch(ValueError):
    pass


@dataclass
class PhasePlan:
    phase: str
    trainable: list = field(default_factory=list)
    frozen: list = field(default_factory=list)
    steps: int = 2000
    learning_rate: float = 1e-5
    warmup_steps: int = 2000
    batch_size: int = 8
    seed: int = 0
    grad_clip: float | None = 1.0
    schedule: str = "constant"

    def __post_init__(self):
        if self.phase not in PHASES:
            raise ValueError(f"unknown phase {self.phase!r}")


# The desk-scale backbone is not pretrained, so the audio phase also fits it;
# only the skeleton branch stays frozen.
DEFAULT_PATTERNS = {
    "audio": (["embed.*", "pos", "time.*", "blocks.*", "out_norm.*", "unembed.*", "motion.audio.*"],
              ["motion.skeleton.*"]),
    "skeleton": (["motion.skeleton.*"],
                 ["embed.*", "pos", "time.*", "blocks.*", "out_norm.*", "unembed.*", "motion.audio.*"]),
    "dpo": (["*"], []),
    "sft": (["*"], []),
}


def default_plan(phase: str, **overrides) -> PhasePlan:
    trainable, frozen = DEFAULT_PATTERNS[phase]
    kwargs = {"trainable": list(trainable), "frozen": list(frozen)}
    kwargs.update(overrides)
    return PhasePlan(phase=phase, **kwargs)


def resolve_plan(plan: PhasePlan, names) -> list:
    """Trainable parameter names; every name must match exactly one side of the plan."""
    trainable = []
    problems = []
    for name in names:
        t = any(fnmatch.fnmatchcase(name, p) for p in plan.trainable)
        f = any(fnmatch.fnmatchcase(name, p) for p in plan.frozen)
        if t and f:
            problems.append(f"{name} matches both trainable and frozen patterns")
        elif not (t or f):
            problems.append(f"{name} matches no pattern")
        elif t:
            trainable.append(name)
    if problems:
        raise PatternMismatch("; ".join(problems))
    return trainable


def phase_modalities(phase: str, available) -> list:
    if phase == "audio":
        return [m for m in available if m == "audio"]
    return list(available)


# -- data -------------------------------------------------------------------


@dataclass
class FlowData:
    """Clean latents (N, T', H', W', d) with aligned conditions (N, T', tokens, d_m)."""

    latents: torch.Tensor
    conditions: dict
    ids: list

    def __len__(self) -> int:
        return self.latents.shape[0]

    def subset(self, idx) -> "FlowData":
        idx = torch.as_tensor(np.asarray(idx), dtype=torch.long)
        return FlowData(self.latents[idx], {m: c[idx] for m, c in self.conditions.items()},
                        [self.ids[i] for i in idx.tolist()])

    def conditions_for(self, idx, modalities) -> dict:
        return {m: self.conditions[m][idx] for m in modalities if m in self.conditions}


def task_condition_arrays(task, strategy: str, grid_hw) -> dict:
    conds = bench.task_conditions(task, grid_hw)
    return {m: align_condition(c, strategy, RHO) for m, c in conds.items()}


def prepare_data(tasks, basis, strategy: str = "full", latent_scale: float = 1.0, dtype=torch.float32) -> FlowData:
    """Encode tasks to latents (multiplied by ``latent_scale``) and align their conditions."""
    lat = np.stack([codec_mod.encode(t.video, basis) for t in tasks]) * latent_scale
    grid_hw = lat.shape[2:4]
    conds = [task_condition_arrays(t, strategy, grid_hw) for t in tasks]
    cond_t = {m: torch.as_tensor(np.stack([c[m] for c in conds]), dtype=dtype) for m in conds[0]}
    return FlowData(torch.as_tensor(lat, dtype=dtype), cond_t, [t.task_id for t in tasks])


def bench_model_config(model_cfg: dict, strategy: str, grid, latent_dim: int) -> ModelConfig:
    """Model config whose motion rows match a conditioning strategy."""
    motion = {
        "audio": (tokens_per_step(bench.AUDIO_TOKENS, strategy, RHO), bench.AUDIO_DIM),
        "skeleton": (tokens_per_step(grid[1] * grid[2], strategy, RHO), bench.SKELETON_DIM),
    }
    kwargs = dict(model_cfg)
    kwargs.update(grid=tuple(grid), motion=motion, latent_dim=latent_dim)
    return ModelConfig(**kwargs)


@dataclass
class PreferenceData:
    """Cached winner/loser latents per preference pair."""

    x0_w: torch.Tensor
    x0_l: torch.Tensor
    conditions: dict
    pairs: list

    def __len__(self) -> int:
        return self.x0_w.shape[0]


# -- loops ------------------------------------------------------------------


def _flow_batch(data: FlowData, rng, batch_size: int, modalities):
    idx = torch.as_tensor(rng.integers(0, len(data), size=batch_size), dtype=torch.long)
    x0 = data.latents[idx]
    tau = torch.as_tensor(rng.uniform(0.0, 1.0, size=batch_size), dtype=x0.dtype)
    eps = torch.as_tensor(rng.standard_normal(tuple(x0.shape)), dtype=x0.dtype)
    return fm_interpolate(x0, eps, tau), data.conditions_for(idx, modalities)


@torch.no_grad()
def probe_loss(model: Denoiser, data: FlowData, modalities, n: int = 64, seed: int = 12345) -> float:
    """Flow-matching loss on a fixed, seeded probe batch."""
    rng = np.random.default_rng(seed)
    sample, conds = _flow_batch(data, rng, n, modalities)
    return float(fm_loss(model, sample, conds))


def train_phase(plan: PhasePlan, model: Denoiser, data, dpo_cfg: DpoConfig | None = None,
                reference: Denoiser | None = None, log_every: int = 0):
    """Run one training phase in place on ``model.params``.

    ``data`` is FlowData for the audio, skeleton and sft phases and PreferenceData
    for the dpo phase. Returns the list of per-step losses.
    """
    trainable = resolve_plan(plan, list(model.params))
    trainer = Trainer(model.params, trainable, plan.learning_rate, plan.warmup_steps, grad_clip=plan.grad_clip,
                      total_steps=plan.steps, schedule=plan.schedule)
    rng = np.random.default_rng(plan.seed)
    curve = []
    if plan.phase == "dpo":
        if dpo_cfg is None:
            raise ValueError("dpo phase needs a DpoConfig")
        ref = reference if reference is not None else model.frozen_copy()
        modalities = list(data.conditions)
        for step in range(plan.steps):
            idx = torch.as_tensor(rng.integers(0, len(data), size=plan.batch_size), dtype=torch.long)
            conds = {m: data.conditions[m][idx] for m in modalities}
            item = draw_item(data.x0_w[idx], data.x0_l[idx], conds, int(rng.integers(2**31)), dpo_cfg.shared_noise)
            loss, grads = grad(model.params, lambda p: dpo_fm_loss(model.with_params(p), ref, item, dpo_cfg))
            trainer.step(grads)
            curve.append(float(loss))
            if log_every and step % log_every == 0:
                log.info("dpo step %d loss %.5f", step, curve[-1])
        return curve

    modalities = phase_modalities(plan.phase, data.conditions)
    for step in range(plan.steps):
        sample, conds = _flow_batch(data, rng, plan.batch_size, modalities)
        loss, grads = grad(model.params, lambda p: fm_loss(model.with_params(p), sample, conds))
        trainer.step(grads)
        curve.append(float(loss))
        if log_every and step % log_every == 0:
            log.info("%s step %d loss %.5f", plan.phase, step, curve[-1])
    return curve
