"""Oracle annotator and desk-scale metrics for generated videos."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np
import torch

from .. import codec as codec_mod
from ..diffusion import initial_noise, sample_ode
from ..preference import CandidateScore
from . import bench

# Correlations at or below ALIGN_FLOOR map to the lowest alignment score.
ALIGN_FLOOR = 0.4
MSE_SCALE = 0.25
ROUGHNESS_SCALE = 0.5


def _likert(x: float) -> float:
    return float(np.clip(1.0 + 4.0 * x, 1.0, 5.0))


def align_score(corr: float) -> float:
    return _likert((corr - ALIGN_FLOOR) / (1.0 - ALIGN_FLOOR))


def synthetic_annotator(task: bench.SynthTask, generated: np.ndarray, sample_id: str = "") -> CandidateScore:
    """Score a generated video on alignment and fidelity, both on [1, 5].

    Alignment is an affine map of the mouth/aperture correlation. Fidelity starts
    at 5 and loses up to 2 points for reconstruction error and up to 2 for
    roughness in excess of the ground truth.
    """
    generated = np.asarray(generated, dtype=np.float64)
    if generated.shape != task.video.shape:
        raise ValueError(f"generated shape {generated.shape} != task video {task.video.shape}")
    corr = bench.pearson(bench.mouth_intensity(generated), task.aperture)
    mse = float(((generated - task.video) ** 2).mean())
    excess = max(0.0, bench.roughness(generated) - bench.roughness(task.video))
    fidelity = 1.0 - 0.5 * min(1.0, mse / MSE_SCALE) - 0.5 * min(1.0, excess / ROUGHNESS_SCALE)
    return CandidateScore(sample_id or task.task_id, align_score(corr), _likert(fidelity))


@dataclass
class EvalReport:
    sync_corr: float
    motion_var: float
    recon_mse: float
    psnr: float
    r_align: float
    sync_corr_se: float = 0.0
    r_align_se: float = 0.0
    per_task: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)


def video_metrics(task: bench.SynthTask, video: np.ndarray) -> dict:
    mse = float(((video - task.video) ** 2).mean())
    corr = bench.pearson(bench.mouth_intensity(video), task.aperture)
    return {
        "task_id": task.task_id,
        "sync_corr": corr,
        "motion_var": bench.motion_variance(video),
        "recon_mse": mse,
        "psnr": bench.psnr(mse),
        "r_align": align_score(corr),
    }


def summarize(per_task: list) -> EvalReport:
    if not per_task:
        raise ValueError("no tasks to summarize")
    per_task = sorted(per_task, key=lambda r: r["task_id"])

    def mean(key):
        return float(np.mean([r[key] for r in per_task]))

    def se(key):
        vals = np.array([r[key] for r in per_task])
        return float(vals.std(ddof=1) / np.sqrt(len(vals))) if len(vals) > 1 else 0.0

    return EvalReport(
        sync_corr=mean("sync_corr"), motion_var=mean("motion_var"), recon_mse=mean("recon_mse"),
        psnr=mean("psnr"), r_align=mean("r_align"), sync_corr_se=se("sync_corr"), r_align_se=se("r_align"),
        per_task=per_task,
    )


def task_seed(task: bench.SynthTask, seed: int) -> int:
    return int(np.random.default_rng([seed, task.seed]).integers(2**31 - 1))


def generate_latents(model, tasks, conditions: dict, latent_shape, steps: int = 20, seed: int = 0,
                     chunk: int = 64) -> np.ndarray:
    """ODE samples for each task; the noise of each task depends only on (seed, task)."""
    dtype = next(iter(model.params.values())).dtype
    out = []
    for start in range(0, len(tasks), chunk):
        part = tasks[start : start + chunk]
        noise = torch.cat([initial_noise((1, *latent_shape), task_seed(t, seed), dtype) for t in part])
        conds = {m: c[start : start + chunk] for m, c in conditions.items()} if conditions else None
        out.append(sample_ode(model, noise.shape, conds, steps=steps, noise=noise, dtype=dtype).numpy())
    return np.concatenate(out).astype(np.float64)


def evaluate_videos(tasks, videos) -> EvalReport:
    return summarize([video_metrics(t, v) for t, v in zip(tasks, videos)])


def evaluate(model, tasks, data, basis, steps: int = 20, seed: int = 0, modalities=None,
             latent_scale: float = 1.0) -> EvalReport:
    """Sample, decode and score every task.

    ``data`` is the FlowData prepared for ``tasks`` with the model's conditioning
    strategy; ``modalities`` restricts which conditions the model sees.
    """
    if not tasks:
        raise ValueError("tasks must be non-empty")
    modalities = list(data.conditions) if modalities is None else modalities
    conds = {m: data.conditions[m] for m in modalities}
    latent_shape = tuple(data.latents.shape[1:])
    lat = generate_latents(model, tasks, conds, latent_shape, steps, seed)
    videos = [codec_mod.decode(z / latent_scale, basis) for z in lat]
    return evaluate_videos(tasks, videos)
