"""Checkpoints: ``manifest.json`` plus one ``.ten`` file per parameter."""

from __future__ import annotations

import json
from pathlib import Path

import torch

from . import tensorio
from .models import Denoiser, ModelConfig, param_shapes

MANIFEST = "manifest.json"


class CheckpointError(ValueError):
    pass


def save(path, model: Denoiser, phase: str, config: dict | None = None, extra: dict | None = None) -> Path:
    """Write ``model`` under directory ``path``; returns the manifest path."""
    root = Path(path)
    (root / "params").mkdir(parents=True, exist_ok=True)
    entries = []
    for name, value in model.params.items():
        fname = f"params/{name}.ten"
        tensorio.save(root / fname, value.detach().cpu().numpy())
        entries.append({"name": name, "shape": list(value.shape), "file": fname})
    manifest = {
        "phase": phase,
        "model": model.cfg.to_dict(),
        "time_scale": model.time_scale,
        "config": config or {},
        "params": entries,
        "extra": extra or {},
    }
    out = root / MANIFEST
    out.write_text(json.dumps(manifest, sort_keys=True, indent=2) + "\n")
    return out


def read_manifest(path) -> dict:
    f = Path(path) / MANIFEST
    if not f.is_file():
        raise CheckpointError(f"no checkpoint manifest at {f}")
    return json.loads(f.read_text())


def load(path, dtype=torch.float32) -> tuple:
    """Return ``(model, manifest)``; shapes are checked against the stored config."""
    root = Path(path)
    manifest = read_manifest(root)
    cfg = ModelConfig(**manifest["model"])
    expected = param_shapes(cfg)
    params = {}
    for entry in manifest["params"]:
        name = entry["name"]
        if name not in expected:
            raise CheckpointError(f"unexpected parameter {name!r}")
        arr = tensorio.load(root / entry["file"])
        if tuple(arr.shape) != tuple(expected[name]):
            raise CheckpointError(f"{name}: shape {arr.shape} != {expected[name]}")
        params[name] = torch.as_tensor(arr, dtype=dtype)
    missing = set(expected) - set(params)
    if missing:
        raise CheckpointError(f"missing parameters {sorted(missing)}")
    params = {k: params[k] for k in expected}
    return Denoiser(cfg, params, manifest.get("time_scale", 1.0)), manifest
