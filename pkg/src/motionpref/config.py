"""Run configuration: strict JSON with documented defaults.

Defaults follow the published full-scale recipe (AdamW, learning rate 1e-5 with
2,000 warm-up steps and batch size 8 for the motion phases; learning rate 1e-8,
2,500 warm-up steps and beta 2500 for preference tuning). ``configs/desk.json``
overrides them for CPU-sized runs.
"""

from __future__ import annotations

import copy
import json
from pathlib import Path

from .pipeline.training import DEFAULT_PATTERNS


class ConfigError(ValueError):
    def __init__(self, message: str, path: str = ""):
        super().__init__(message)
        self.path = path


def _plan(phase: str, steps: int, lr: float, warmup: int) -> dict:
    trainable, frozen = DEFAULT_PATTERNS[phase]
    return {
        "steps": steps,
        "learning_rate": lr,
        "warmup_steps": warmup,
        "batch_size": 8,
        "schedule": "constant",
        "grad_clip": 1.0,
        "seed": 0,
        "trainable": list(trainable),
        "frozen": list(frozen),
    }


DEFAULTS = {
    "codec": {"d": 16, "seed": 0, "latent_scale": 4.0},
    "model": {
        "architecture": "transformer",
        "n_blocks": 2,
        "d": 16,
        "n_heads": 4,
        "d_ff": 64,
        "pos_emb": True,
        "time_dim": 16,
        "seed": 0,
    },
    "train": {
        "audio": _plan("audio", 10000, 1e-5, 2000),
        "skeleton": _plan("skeleton", 10000, 1e-5, 2000),
        "sft": _plan("sft", 12000, 1e-5, 2000),
    },
    "dpo": {
        "beta": 2500.0,
        "omega": "constant",
        "min_margin": 0.5,
        "shared_noise": True,
        "learning_rate": 1e-8,
        "warmup_steps": 2500,
        "steps": 12000,
        "batch_size": 8,
        "schedule": "constant",
        "grad_clip": 1.0,
        "seed": 0,
        "strategy": "best_vs_worst",
    },
    "bench": {
        "T": 16,
        "H": 32,
        "W": 32,
        "n_tasks": 200,
        "n_eval_tasks": 50,
        "seed": 0,
        "eval_seed": 1,
        "conditioning": "full",
        "ode_steps": 20,
        "candidates_per_task": 3,
    },
}


def _merge(base, override, path: str):
    if not isinstance(override, dict):
        raise ConfigError(f"{path or 'config'} must be an object", path)
    out = copy.deepcopy(base)
    for key, value in override.items():
        where = f"{path}.{key}" if path else key
        if key not in base:
            raise ConfigError(f"unknown config key {where!r}", where)
        if isinstance(base[key], dict):
            out[key] = _merge(base[key], value, where)
        else:
            expected = type(base[key])
            if expected is float and isinstance(value, int) and not isinstance(value, bool):
                value = float(value)
            if expected is int and isinstance(value, bool) or not isinstance(value, expected):
                raise ConfigError(f"{where!r} must be of type {expected.__name__}", where)
            out[key] = value
    return out


def resolve(override: dict | None = None) -> dict:
    """Merge ``override`` into the defaults, rejecting unknown keys and wrong types."""
    cfg = _merge(DEFAULTS, override or {}, "")
    _validate(cfg)
    return cfg


def _validate(cfg: dict) -> None:
    from .conditioning import STRATEGIES as CONDITIONING
    from .dpo import OMEGAS
    from .preference import STRATEGIES as PAIRING

    checks = [
        ("bench.conditioning", cfg["bench"]["conditioning"] in CONDITIONING),
        ("dpo.omega", cfg["dpo"]["omega"] in OMEGAS),
        ("dpo.strategy", cfg["dpo"]["strategy"] in PAIRING),
        ("dpo.beta", cfg["dpo"]["beta"] > 0),
        ("model.architecture", cfg["model"]["architecture"] in ("transformer", "mlp")),
        ("bench.T", cfg["bench"]["T"] >= 4),
        ("bench.n_tasks", cfg["bench"]["n_tasks"] >= 1),
        ("codec.latent_scale", cfg["codec"]["latent_scale"] > 0),
    ]
    for where, ok in checks:
        if not ok:
            raise ConfigError(f"invalid value for {where!r}", where)


def load(path) -> dict:
    try:
        raw = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    return resolve(raw)


def dump(cfg: dict, path) -> None:
    Path(path).write_text(json.dumps(cfg, sort_keys=True, indent=2) + "\n")
