"""Desk-scale denoisers: a small transformer with motion cross-attention and an MLP.

Parameters are plain ``dict[str, torch.Tensor]`` so that phase freezing, gradient
checks and checkpoints can address them by name.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np
import torch
import torch.nn.functional as F

from .conditioning import cross_attention, project


class NonFiniteError(FloatingPointError):
    def __init__(self, message: str, name: str | None = None):
        super().__init__(message)
        self.name = name


@dataclass
class ModelConfig:
    architecture: str = "transformer"
    n_blocks: int = 2
    d: int = 16
    n_heads: int = 4
    d_ff: int = 64
    latent_dim: int | None = None  # defaults to d
    grid: tuple = (4, 4, 4)  # (T', H', W') for positional embeddings
    pos_emb: bool = True
    time_dim: int = 16
    # modality -> (tokens per latent step, feature width d_m)
    motion: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.architecture not in ("transformer", "mlp"):
            raise ValueError(f"unknown architecture {self.architecture!r}")
        for name in ("n_blocks", "d", "n_heads", "d_ff", "time_dim"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.architecture == "transformer" and self.d % self.n_heads:
            raise ValueError(f"d={self.d} not divisible by n_heads={self.n_heads}")
        if self.time_dim % 2:
            raise ValueError("time_dim must be even")
        if self.latent_dim is None:
            self.latent_dim = self.d
        self.grid = tuple(int(g) for g in self.grid)
        self.motion = {m: tuple(int(v) for v in shape) for m, shape in self.motion.items()}

    @property
    def n_tokens(self) -> int:
        return int(np.prod(self.grid))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["grid"] = list(self.grid)
        d["motion"] = {m: list(v) for m, v in self.motion.items()}
        return d


def param_shapes(cfg: ModelConfig) -> dict:
    """Ordered parameter names and shapes for a config."""
    d, dl, tf = cfg.d, cfg.latent_dim, cfg.time_dim
    shapes: dict = {}
    if cfg.architecture == "mlp":
        width = cfg.d_ff
        shapes["in.W"] = (dl + tf, width)
        shapes["in.b"] = (width,)
        for i in range(cfg.n_blocks - 1):
            shapes[f"hidden.{i}.W"] = (width, width)
            shapes[f"hidden.{i}.b"] = (width,)
        shapes["unembed.W"] = (width, dl)
        return shapes
    shapes["embed.W"] = (dl, d)
    shapes["embed.b"] = (d,)
    if cfg.pos_emb:
        shapes["pos"] = (cfg.n_tokens, d)
    shapes["time.W1"] = (tf, d)
    shapes["time.b1"] = (d,)
    shapes["time.W2"] = (d, d)
    shapes["time.b2"] = (d,)
    for i in range(cfg.n_blocks):
        p = f"blocks.{i}."
        shapes[p + "sa_norm.g"] = (d,)
        for m in "qkvo":
            shapes[p + f"sa.{m}"] = (d, d)
        if cfg.motion:
            shapes[p + "xa_norm.g"] = (d,)
            for m in "qkvo":
                shapes[p + f"xa.{m}"] = (d, d)
        shapes[p + "ff_norm.g"] = (d,)
        shapes[p + "ff.W1"] = (d, cfg.d_ff)
        shapes[p + "ff.b1"] = (cfg.d_ff,)
        shapes[p + "ff.W2"] = (cfg.d_ff, d)
        shapes[p + "ff.b2"] = (d,)
    shapes["out_norm.g"] = (d,)
    shapes["unembed.W"] = (d, dl)
    for m, (n_tok, dm) in sorted(cfg.motion.items()):
        shapes[f"motion.{m}.W"] = (dm, d)
        shapes[f"motion.{m}.b"] = (d,)
        if cfg.pos_emb:
            shapes[f"motion.{m}.pos"] = (n_tok, d)
    return shapes


def param_count(params: dict) -> int:
    return sum(int(p.numel()) for p in params.values())


def init_params(cfg: ModelConfig, seed: int = 0, dtype=torch.float32, zero_unembed: bool = True) -> dict:
    """Fan-in scaled normal weights, unit norm gains, zero biases.

    The unembedding starts at zero so a fresh model predicts zero velocity.
    Condition position embeddings start at unit scale so tokens from the same
    latent step are distinguishable from the first update.
    """
    rng = np.random.default_rng(seed)
    params = {}
    for name, shape in param_shapes(cfg).items():
        leaf = name.rsplit(".", 1)[-1]
        if name == "unembed.W" and zero_unembed:
            value = np.zeros(shape)
        elif leaf == "g":
            value = np.ones(shape)
        elif leaf.startswith("b"):
            value = np.zeros(shape)
        elif leaf == "pos":
            scale = 1.0 if name.startswith("motion.") else 0.1
            value = scale * rng.standard_normal(shape)
        else:
            value = rng.standard_normal(shape) / math.sqrt(shape[0])
        params[name] = torch.as_tensor(value, dtype=dtype)
    return params


def time_features(tau, n: int) -> torch.Tensor:
    """Sinusoidal features of a (B,) time tensor, shape (B, n)."""
    freqs = torch.pi * 2.0 ** torch.arange(n // 2, dtype=tau.dtype)
    ang = tau[:, None] * freqs
    return torch.cat([torch.sin(ang), torch.cos(ang)], dim=-1)


def rms_norm(x, g, eps: float = 1e-6):
    return x * torch.rsqrt((x * x).mean(dim=-1, keepdim=True) + eps) * g


def unembed(params: dict, h):
    return h @ params["unembed.W"]


def _as_time(tau, batch: int, dtype) -> torch.Tensor:
    tau = torch.as_tensor(tau, dtype=dtype)
    if tau.ndim == 0:
        tau = tau.expand(batch)
    return tau


def forward(params: dict, cfg: ModelConfig, x, tau, motion: list | None = None):
    """Velocity (or noise) prediction with the same shape as ``x``.

    Transformer input is (B, T', H', W', latent_dim); every latent position is one
    token. ``motion`` holds projected embeddings of shape (B, T', n_m, d); latent
    tokens of step t' attend only to the rows of step t'.
    """
    dtype = next(iter(params.values())).dtype
    x = torch.as_tensor(x, dtype=dtype)
    tau = _as_time(tau, x.shape[0], dtype)
    if cfg.architecture == "mlp":
        return _forward_mlp(params, cfg, x, tau)

    if tuple(x.shape[1:]) != (*cfg.grid, cfg.latent_dim):
        raise ValueError(f"input shape {tuple(x.shape)} does not match grid {cfg.grid} x {cfg.latent_dim}")
    b, tl, hl, wl, _ = x.shape
    n_heads = cfg.n_heads
    h = x.reshape(b, tl * hl * wl, cfg.latent_dim) @ params["embed.W"] + params["embed.b"]
    if cfg.pos_emb:
        h = h + params["pos"]
    temb = F.silu(time_features(tau, cfg.time_dim) @ params["time.W1"] + params["time.b1"])
    h = h + (temb @ params["time.W2"] + params["time.b2"])[:, None, :]
    context = torch.cat(motion, dim=-2) if motion else None

    for i in range(cfg.n_blocks):
        p = f"blocks.{i}."
        a = rms_norm(h, params[p + "sa_norm.g"])
        out, _ = cross_attention(a, a, params[p + "sa.q"], params[p + "sa.k"], params[p + "sa.v"], params[p + "sa.o"], n_heads)
        h = h + out
        if context is not None:
            a = rms_norm(h, params[p + "xa_norm.g"]).reshape(b, tl, hl * wl, cfg.d)
            out, _ = cross_attention(
                a, context, params[p + "xa.q"], params[p + "xa.k"], params[p + "xa.v"], params[p + "xa.o"], n_heads
            )
            h = h + out.reshape(b, tl * hl * wl, cfg.d)
        a = rms_norm(h, params[p + "ff_norm.g"])
        h = h + F.silu(a @ params[p + "ff.W1"] + params[p + "ff.b1"]) @ params[p + "ff.W2"] + params[p + "ff.b2"]

    out = unembed(params, rms_norm(h, params["out_norm.g"]))
    return out.reshape(x.shape)


def _forward_mlp(params, cfg, x, tau):
    flat = x.reshape(x.shape[0], -1)
    if flat.shape[1] != cfg.latent_dim:
        raise ValueError(f"mlp expects {cfg.latent_dim} input features, got {flat.shape[1]}")
    h = F.silu(torch.cat([flat, time_features(tau, cfg.time_dim)], dim=-1) @ params["in.W"] + params["in.b"])
    for i in range(cfg.n_blocks - 1):
        h = h + F.silu(h @ params[f"hidden.{i}.W"] + params[f"hidden.{i}.b"])
    return unembed(params, h).reshape(x.shape)


def embed_motion(params: dict, cfg: ModelConfig, conditions: dict | None) -> list:
    """Project aligned conditions (B, T', n_m, d_m) per modality and add row embeddings."""
    if not conditions:
        return []
    dtype = next(iter(params.values())).dtype
    out = []
    for m in sorted(conditions):
        if m not in cfg.motion:
            raise ValueError(f"model has no projection for modality {m!r}")
        c = torch.as_tensor(conditions[m], dtype=dtype)
        n_tok, dm = cfg.motion[m]
        if tuple(c.shape[-2:]) != (n_tok, dm):
            raise ValueError(f"{m} condition rows {tuple(c.shape[-2:])} != configured {(n_tok, dm)}")
        emb = project(c, params[f"motion.{m}.W"], params[f"motion.{m}.b"])
        if cfg.pos_emb:
            emb = emb + params[f"motion.{m}.pos"]
        out.append(emb)
    return out


class Denoiser:
    """Callable ``model(x, tau, conditions)`` bound to a parameter dict.

    ``time_scale`` divides integer DDPM steps into [0, 1] before embedding.
    """

    def __init__(self, cfg: ModelConfig, params: dict, time_scale: float = 1.0):
        self.cfg = cfg
        self.params = params
        self.time_scale = time_scale

    def __call__(self, x, tau, conditions=None):
        dtype = next(iter(self.params.values())).dtype
        tau = torch.as_tensor(tau).to(dtype) / self.time_scale
        return forward(self.params, self.cfg, x, tau, embed_motion(self.params, self.cfg, conditions))

    def with_params(self, params: dict) -> "Denoiser":
        return Denoiser(self.cfg, params, self.time_scale)

    def frozen_copy(self) -> "Denoiser":
        return self.with_params({k: v.detach().clone() for k, v in self.params.items()})


def grad(params: dict, loss_fn, inputs=()):
    """Reverse-mode gradient of ``loss_fn(params, *inputs)`` for every parameter.

    Returns ``(loss, grads)``. Raises NonFiniteError naming the first offending
    parameter when the loss or any gradient is not finite.
    """
    leaves = {k: v.detach().clone().requires_grad_(True) for k, v in params.items()}
    loss = loss_fn(leaves, *inputs)
    if not torch.isfinite(loss):
        raise NonFiniteError(f"loss is non-finite ({loss.item()})")
    names = list(leaves)
    if loss.requires_grad:
        gs = torch.autograd.grad(loss, [leaves[k] for k in names], allow_unused=True)
    else:
        gs = [None] * len(names)
    out = {}
    for k, g in zip(names, gs):
        g = torch.zeros_like(params[k]) if g is None else g.detach()
        if not torch.all(torch.isfinite(g)):
            raise NonFiniteError(f"non-finite gradient for parameter {k!r}", name=k)
        out[k] = g
    return loss.detach(), out
