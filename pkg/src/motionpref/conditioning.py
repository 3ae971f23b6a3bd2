"""Motion condition encoders and temporal motion modulation.

Per-frame motion conditions of shape (T, D_m, d_m) are aligned with a latent of
temporal length T' = T / rho in one of three ways:

* ``reshape_temporal`` moves the rho frames of each latent step into the token
  axis, giving (T', rho * D_m, d_m) with no value dropped or averaged;
* ``partial_expand`` averages pairs (or groups) of frames first and then reshapes;
* ``subsample_baseline`` averages all rho frames of a step.

``project`` and ``fuse`` lift aligned conditions to the latent width and inject
them into latent tokens with residual cross-attention.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from . import tensorio

MODALITIES = ("audio", "skeleton")
STRATEGIES = ("full", "partial_k2", "subsample")


class WaveTooShort(ValueError):
    pass


class IndivisibleError(ValueError):
    pass


class TemporalMismatch(ValueError):
    pass


@dataclass(frozen=True)
class AudioWaveform:
    samples: np.ndarray
    sample_rate: float
    frame_rate: float

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim != 1 or samples.size < 1:
            raise ValueError("waveform must be a non-empty 1-D sequence")
        if self.sample_rate <= 0 or self.frame_rate <= 0:
            raise ValueError("sample_rate and frame_rate must be positive")
        if not np.all(np.isfinite(samples)):
            raise ValueError("waveform contains non-finite samples")
        object.__setattr__(self, "samples", samples)

    @property
    def samples_per_frame(self) -> float:
        return self.sample_rate / self.frame_rate

    @property
    def n_frames(self) -> int:
        return int(math.floor(len(self.samples) / self.samples_per_frame + 1e-9))


@dataclass(frozen=True)
class SkeletonSequence:
    """Keypoints of shape (T, J, 3): normalized x, y and a confidence per joint."""

    keypoints: np.ndarray

    def __post_init__(self):
        kp = np.asarray(self.keypoints, dtype=np.float64)
        if kp.ndim != 3 or kp.shape[2] != 3 or kp.shape[1] < 1:
            raise ValueError(f"keypoints must have shape (T, J, 3), got {kp.shape}")
        if not np.all(np.isfinite(kp)) or kp.min() < 0.0 or kp.max() > 1.0:
            raise ValueError("keypoint coordinates and confidences must lie in [0, 1]")
        object.__setattr__(self, "keypoints", kp)


@dataclass(frozen=True)
class MotionCondition:
    modality: str
    data: np.ndarray  # (T, D_m, d_m)
    frame_rate: float = 25.0

    def __post_init__(self):
        if self.modality not in MODALITIES:
            raise ValueError(f"unknown modality {self.modality!r}")
        if np.asarray(self.data).ndim != 3:
            raise ValueError("condition data must have shape (T, D_m, d_m)")

    @property
    def n_frames(self) -> int:
        return self.data.shape[0]


@dataclass(frozen=True)
class ReshapedCondition:
    modality: str
    data: np.ndarray  # (T', rho * D_m, d_m)
    rho: int


@dataclass
class FusionParams:
    """Cross-attention maps of width d plus per-modality projections (W_m, b_m)."""

    W_Q: torch.Tensor
    W_K: torch.Tensor
    W_V: torch.Tensor
    projections: dict = field(default_factory=dict)

    @classmethod
    def random(cls, d: int, dims: dict, seed: int = 0, dtype=torch.float64) -> "FusionParams":
        g = torch.Generator().manual_seed(seed)

        def rand(*shape):
            return torch.randn(*shape, generator=g, dtype=dtype) / math.sqrt(shape[0])

        projections = {m: (rand(dm, d), torch.zeros(d, dtype=dtype)) for m, dm in dims.items()}
        return cls(rand(d, d), rand(d, d), rand(d, d), projections)


# -- encoders ---------------------------------------------------------------


def encode_audio(wave: AudioWaveform, n_tokens: int, dim: int, n_frames: int | None = None) -> MotionCondition:
    """Frame-aligned acoustic descriptors of shape (T, n_tokens, dim).

    For each frame, ``n_tokens`` windows of one frame length are centred at evenly
    spaced sub-frame offsets. Each window yields its RMS envelope, the first
    difference of the envelope along the sub-frame sequence, and ``dim - 2`` band
    energies from equal-width FFT bands. Samples outside the waveform count as zero.
    """
    if dim < 2 or n_tokens < 1:
        raise ValueError("need dim >= 2 and n_tokens >= 1")
    spf = wave.samples_per_frame
    available = wave.n_frames
    t_frames = available if n_frames is None else int(n_frames)
    if t_frames < 1 or t_frames > available:
        raise WaveTooShort(
            f"waveform of {len(wave.samples)} samples covers {available} frames, need {max(t_frames, 1)}"
        )
    win = max(int(round(spf)), 2)
    centers = (np.arange(t_frames)[:, None] + (np.arange(n_tokens)[None, :] + 0.5) / n_tokens) * spf
    starts = np.floor(centers - win / 2.0).astype(np.int64)
    idx = starts[..., None] + np.arange(win)
    padded = np.concatenate([wave.samples, [0.0]])
    idx = np.where((idx >= 0) & (idx < len(wave.samples)), idx, len(wave.samples))
    windows = padded[idx]  # (T, N_a, win)

    rms = np.sqrt(np.mean(windows**2, axis=-1))
    flat = rms.reshape(-1)
    delta = np.concatenate([[0.0], np.diff(flat)]).reshape(rms.shape)
    feats = [rms, delta]
    n_bands = dim - 2
    if n_bands:
        power = np.abs(np.fft.rfft(windows, axis=-1)) ** 2 / win**2
        edges = np.linspace(1, power.shape[-1], n_bands + 1).round().astype(int)
        for lo, hi in zip(edges[:-1], edges[1:]):
            feats.append(power[..., lo : max(hi, lo + 1)].sum(axis=-1))
    return MotionCondition("audio", np.stack(feats, axis=-1), wave.frame_rate)


def splat_joints(keypoints: np.ndarray, grid_h: int, grid_w: int, sigma: float = 1.0) -> np.ndarray:
    """Confidence-weighted isotropic Gaussians on a grid; returns (T, J, grid_h, grid_w)."""
    x = keypoints[..., 0] * grid_w - 0.5
    y = keypoints[..., 1] * grid_h - 0.5
    conf = keypoints[..., 2]
    rows = np.arange(grid_h)[:, None]
    cols = np.arange(grid_w)[None, :]
    d2 = (rows - y[..., None, None]) ** 2 + (cols - x[..., None, None]) ** 2
    return conf[..., None, None] * np.exp(-d2 / (2.0 * sigma**2))


def encode_skeleton(
    skel: SkeletonSequence,
    grid_h: int,
    grid_w: int,
    dim: int,
    groups: list | None = None,
    weights: np.ndarray | None = None,
    frame_rate: float = 25.0,
) -> MotionCondition:
    """Rasterize keypoints into per-group heat maps and project them to ``dim`` channels.

    ``weights`` has shape (n_groups, dim). When omitted, an identity map is used if
    the group count equals ``dim``, otherwise a fixed seeded matrix.
    """
    kp = skel.keypoints
    n_joints = kp.shape[1]
    groups = [[j] for j in range(n_joints)] if groups is None else groups
    maps = splat_joints(kp, grid_h, grid_w)
    group_maps = np.stack([maps[:, list(g)].sum(axis=1) for g in groups], axis=-1)
    group_maps = group_maps.reshape(kp.shape[0], grid_h * grid_w, len(groups))
    if weights is None:
        if len(groups) == dim:
            weights = np.eye(dim)
        else:
            weights = np.random.default_rng(0).standard_normal((len(groups), dim)) / math.sqrt(len(groups))
    weights = np.asarray(weights, dtype=np.float64)
    if weights.shape != (len(groups), dim):
        raise ValueError(f"weights must have shape {(len(groups), dim)}, got {weights.shape}")
    return MotionCondition("skeleton", group_maps @ weights, frame_rate)


# -- temporal alignment -----------------------------------------------------


def reshape_temporal(cond: MotionCondition, rho: int) -> ReshapedCondition:
    """Fold each run of ``rho`` frames into the token axis.

    Element (t, u, v) lands at (t // rho, (t % rho) * D_m + u, v).
    """
    data = np.asarray(cond.data)
    t, dm_tokens, dm = data.shape
    if rho < 1 or t % rho:
        raise IndivisibleError(f"T={t} is not divisible by rho={rho}")
    return ReshapedCondition(cond.modality, data.reshape(t // rho, rho * dm_tokens, dm), rho)


def inverse_reshape(cond: ReshapedCondition, rho: int, frame_rate: float = 25.0) -> MotionCondition:
    data = np.asarray(cond.data)
    tl, channels, dm = data.shape
    if rho < 1 or channels % rho:
        raise IndivisibleError(f"{channels} token rows are not divisible by rho={rho}")
    return MotionCondition(cond.modality, data.reshape(tl * rho, channels // rho, dm), frame_rate)


def subsample_baseline(cond: MotionCondition, rho: int) -> MotionCondition:
    data = np.asarray(cond.data)
    t = data.shape[0]
    if rho < 1 or t % rho:
        raise IndivisibleError(f"T={t} is not divisible by rho={rho}")
    pooled = data.reshape(t // rho, rho, *data.shape[1:]).mean(axis=1)
    return MotionCondition(cond.modality, pooled, cond.frame_rate * 1.0 / rho)


def partial_expand(cond: MotionCondition, rho: int, k: int) -> ReshapedCondition:
    """Average frames in groups of ``rho // k``, then fold the remaining ``k`` per step."""
    t = cond.data.shape[0]
    if rho < 1 or k < 1 or t % rho or rho % k:
        raise IndivisibleError(f"need T % rho == 0 and rho % k == 0 (T={t}, rho={rho}, k={k})")
    pooled = subsample_baseline(cond, rho // k)
    return reshape_temporal(pooled, k)


def align_condition(cond: MotionCondition, strategy: str, rho: int) -> np.ndarray:
    """Condition rows at latent temporal resolution, shape (T', tokens, d_m)."""
    if strategy == "full":
        return reshape_temporal(cond, rho).data
    if strategy == "partial_k2":
        return partial_expand(cond, rho, 2).data
    if strategy == "subsample":
        return subsample_baseline(cond, rho).data
    raise ValueError(f"unknown conditioning strategy {strategy!r}")


def tokens_per_step(n_rows: int, strategy: str, rho: int) -> int:
    return {"full": rho, "partial_k2": 2, "subsample": 1}[strategy] * n_rows


# -- projection and fusion --------------------------------------------------


def _as_tensor(x, like: torch.Tensor | None = None) -> torch.Tensor:
    dtype = like.dtype if like is not None else torch.float64
    if isinstance(x, torch.Tensor):
        return x if like is None else x.to(dtype)
    return torch.as_tensor(np.asarray(x), dtype=dtype)


def project(cond, W_m: torch.Tensor, b_m: torch.Tensor) -> torch.Tensor:
    """Per-token affine lift to the latent width: ``cond @ W_m + b_m``."""
    data = cond.data if isinstance(cond, (ReshapedCondition, MotionCondition)) else cond
    data = _as_tensor(data, W_m)
    if W_m.ndim != 2 or data.shape[-1] != W_m.shape[0] or b_m.shape != (W_m.shape[1],):
        raise ValueError(
            f"shape mismatch: condition {tuple(data.shape)}, W_m {tuple(W_m.shape)}, b_m {tuple(b_m.shape)}"
        )
    return data @ W_m + b_m


def cross_attention(tokens, context, W_Q, W_K, W_V, W_O=None, n_heads: int = 1, mask=None):
    """Multi-head attention of ``tokens`` (..., N, d) over ``context`` (..., M, d).

    ``mask`` is an optional boolean (..., M) marking valid context rows.
    Returns the attention output (without residual) and the weights (..., heads, N, M).
    """
    d = W_Q.shape[1]
    if d % n_heads:
        raise ValueError(f"width {d} not divisible by {n_heads} heads")
    dh = d // n_heads

    def split(x):
        return x.reshape(*x.shape[:-1], n_heads, dh).transpose(-3, -2)

    q = split(tokens @ W_Q)
    k = split(context @ W_K)
    v = split(context @ W_V)
    scores = q @ k.transpose(-1, -2) / math.sqrt(dh)
    if mask is not None:
        scores = scores.masked_fill(~mask[..., None, None, :], float("-inf"))
    attn = torch.softmax(scores, dim=-1)
    out = (attn @ v).transpose(-3, -2)
    out = out.reshape(*out.shape[:-2], d)
    if W_O is not None:
        out = out @ W_O
    return out, attn


def fuse(Z, embeddings: list, params: FusionParams, return_attention: bool = False):
    """Residual cross-attention of latent tokens onto motion embeddings.

    Each latent step t' attends only to the embedding rows of the same step; the
    rows of all modalities are concatenated along the token axis.
    """
    Z = _as_tensor(Z, params.W_Q)
    if not embeddings:
        return (Z, None) if return_attention else Z
    tl = Z.shape[-4]
    for emb in embeddings:
        if emb.shape[-3] != tl:
            raise TemporalMismatch(f"embedding has T'={emb.shape[-3]}, latent has T'={tl}")
        if emb.shape[-1] != Z.shape[-1]:
            raise ValueError("embedding width differs from latent width")
    H = torch.cat([_as_tensor(e, params.W_Q) for e in embeddings], dim=-2)
    tokens = Z.reshape(*Z.shape[:-3], Z.shape[-3] * Z.shape[-2], Z.shape[-1])
    out, attn = cross_attention(tokens, H, params.W_Q, params.W_K, params.W_V)
    fused = out.reshape(Z.shape) + Z
    if return_attention:
        return fused, attn[..., 0, :, :]
    return fused


# -- serialization ----------------------------------------------------------


def save_condition(stem, data: np.ndarray, modality: str, frame_rate: float) -> None:
    """Write ``<stem>.ten`` plus a ``<stem>.json`` manifest."""
    stem = Path(stem)
    tensorio.save(stem.with_suffix(".ten"), data)
    manifest = {"modality": modality, "frame_rate": frame_rate, "shape": list(np.shape(data))}
    stem.with_suffix(".json").write_text(json.dumps(manifest, sort_keys=True, indent=2) + "\n")


def load_condition(stem) -> tuple[np.ndarray, dict]:
    stem = Path(stem)
    manifest = json.loads(stem.with_suffix(".json").read_text())
    data = tensorio.load(stem.with_suffix(".ten"))
    if list(data.shape) != manifest["shape"]:
        raise ValueError(f"{stem}: manifest shape {manifest['shape']} != payload {list(data.shape)}")
    return data, manifest
