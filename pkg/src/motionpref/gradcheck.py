"""Central finite-difference checks of the training losses in double precision."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
import torch

from .diffusion import fm_interpolate, fm_loss
from .dpo import DpoConfig, dpo_fm_loss, draw_item
from .models import Denoiser, ModelConfig, grad, init_params

STEP = 1e-5
# Relative error uses max(|analytic|, |numeric|, FLOOR) as denominator so that
# coordinates with vanishing gradient are judged by absolute error.
FLOOR = 1e-6
REL_TOL = 1e-4
FRACTION = 0.99
MAX_TOL = 1e-3


@dataclass
class GradcheckResult:
    name: str
    n_coords: int
    frac_ok: float
    max_rel: float
    passed: bool

    def to_dict(self) -> dict:
        return asdict(self)


def numeric_grad(params: dict, loss_fn, h: float = STEP) -> dict:
    out = {}
    with torch.no_grad():
        for name, p in params.items():
            flat = p.view(-1)
            g = torch.zeros_like(flat)
            for i in range(flat.numel()):
                orig = flat[i].item()
                flat[i] = orig + h
                up = float(loss_fn(params))
                flat[i] = orig - h
                down = float(loss_fn(params))
                flat[i] = orig
                g[i] = (up - down) / (2 * h)
            out[name] = g.view(p.shape)
    return out


def relative_errors(analytic: dict, numeric: dict) -> np.ndarray:
    a = torch.cat([analytic[k].reshape(-1) for k in analytic]).numpy()
    n = torch.cat([numeric[k].reshape(-1) for k in analytic]).numpy()
    return np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), FLOOR)


def check(name: str, params: dict, loss_fn, h: float = STEP) -> GradcheckResult:
    _, analytic = grad(params, loss_fn)
    numeric = numeric_grad({k: v.clone() for k, v in params.items()}, loss_fn, h)
    rel = relative_errors(analytic, numeric)
    frac = float((rel < REL_TOL).mean())
    worst = float(rel.max())
    return GradcheckResult(name, int(rel.size), frac, worst, frac >= FRACTION and worst < MAX_TOL)


def _mlp_case(seed: int):
    cfg = ModelConfig(architecture="mlp", n_blocks=2, d=8, n_heads=1, d_ff=8, latent_dim=3, time_dim=4)
    x_shape = (4, 3)
    return cfg, x_shape, None


def _transformer_case(seed: int):
    cfg = ModelConfig(n_blocks=1, d=8, n_heads=2, d_ff=8, latent_dim=3, grid=(2, 2, 2), time_dim=4,
                      motion={"audio": (2, 3)})
    rng = np.random.default_rng(seed + 7)
    conds = {"audio": torch.as_tensor(rng.standard_normal((2, 2, 2, 3)), dtype=torch.float64)}
    return cfg, (2, 2, 2, 2, 3), conds


CASES = {"mlp": _mlp_case, "transformer": _transformer_case}


def _model(cfg, seed):
    return Denoiser(cfg, init_params(cfg, seed, dtype=torch.float64, zero_unembed=False))


def fm_suite(arch: str, seed: int = 0) -> GradcheckResult:
    cfg, shape, conds = CASES[arch](seed)
    model = _model(cfg, seed)
    rng = np.random.default_rng(seed)
    x0 = torch.as_tensor(rng.standard_normal(shape))
    eps = torch.as_tensor(rng.standard_normal(shape))
    tau = torch.as_tensor(rng.uniform(0.05, 0.95, size=shape[0]))
    sample = fm_interpolate(x0, eps, tau)
    return check(f"fm_loss/{arch}", model.params, lambda p: fm_loss(model.with_params(p), sample, conds))


def dpo_suite(arch: str, seed: int = 0, beta: float = 5.0) -> GradcheckResult:
    cfg, shape, conds = CASES[arch](seed)
    model = _model(cfg, seed)
    ref = _model(cfg, seed + 1)
    rng = np.random.default_rng(seed)
    x0_w = torch.as_tensor(rng.standard_normal(shape))
    x0_l = torch.as_tensor(rng.standard_normal(shape))
    item = draw_item(x0_w, x0_l, conds, seed)
    dcfg = DpoConfig(beta=beta)
    return check(f"dpo_fm_loss/{arch}", model.params, lambda p: dpo_fm_loss(model.with_params(p), ref, item, dcfg))


def run_all(seed: int = 0) -> list:
    return [suite(arch, seed) for suite in (fm_suite, dpo_suite) for arch in CASES]
