"""Candidate generation, oracle scoring and preference datasets.

Each task gets ``n_samples`` model samples (different seeds) plus fixed degraded
variants of the first sample:

* ``shuffle``: frames permuted inside each 4-frame latent block (seeded, never
  the identity), so coarse timing survives and fine timing is wrong;
* ``smooth``: centred 3-frame moving average (edge frames repeated);
* ``shift``: frames delayed by one (first frame repeated).
"""

from __future__ import annotations

import numpy as np
import torch

from .. import codec as codec_mod
from ..preference import PreferenceGroup, build_pairs
from . import evaluation
from .training import FlowData, PreferenceData

DEGRADATIONS = ("shuffle", "smooth", "shift")


def degrade(video: np.ndarray, recipe: str, seed: int = 0, block: int = codec_mod.TIME_STRIDE) -> np.ndarray:
    t = video.shape[0]
    if recipe == "shuffle":
        rng = np.random.default_rng(seed)
        order = np.arange(t)
        for start in range(0, t - block + 1, block):
            perm = np.arange(block)
            while np.array_equal(perm, np.arange(block)):
                perm = rng.permutation(block)
            order[start : start + block] = start + perm
        return video[order]
    if recipe == "smooth":
        padded = np.concatenate([video[:1], video, video[-1:]])
        return (padded[:-2] + padded[1:-1] + padded[2:]) / 3.0
    if recipe == "shift":
        return np.concatenate([video[:1], video[:-1]])
    raise ValueError(f"unknown degradation {recipe!r}")


def candidate_id(task_id: str, name: str) -> str:
    return f"{task_id}.{name}"


def task_of(sample_id: str) -> str:
    return sample_id.split(".", 1)[0]


def score_candidates(model, tasks, data: FlowData, basis, n_samples: int = 3, steps: int = 20,
                     seed: int = 0, latent_scale: float = 1.0):
    """Sample, degrade and oracle-score candidates for every task.

    Returns ``(groups, latents)`` where ``latents`` maps sample ids to scaled latents
    of the decoded (clamped) candidate videos.
    """
    latent_shape = tuple(data.latents.shape[1:])
    per_seed = [
        evaluation.generate_latents(model, tasks, data.conditions, latent_shape, steps, seed + k)
        for k in range(n_samples)
    ]
    groups, latents = [], {}
    for i, task in enumerate(tasks):
        videos = {f"sample{k}": codec_mod.decode(per_seed[k][i] / latent_scale, basis) for k in range(n_samples)}
        for recipe in DEGRADATIONS:
            videos[recipe] = degrade(videos["sample0"], recipe, seed=task.seed)
        scores = []
        for name, video in videos.items():
            sid = candidate_id(task.task_id, name)
            scores.append(evaluation.synthetic_annotator(task, video, sid))
            latents[sid] = codec_mod.encode(video, basis) * latent_scale
        groups.append(PreferenceGroup(task.task_id, scores))
    return groups, latents


def curate(groups, strategy: str = "best_vs_worst", min_margin: float = 0.5) -> list:
    pairs = []
    for g in groups:
        pairs.extend(build_pairs(g, strategy, min_margin))
    return pairs


def preference_data(pairs, latents: dict, data: FlowData, dtype=torch.float32) -> PreferenceData:
    """Stack cached winner/loser latents with the conditions of their tasks."""
    if not pairs:
        raise ValueError("no preference pairs")
    index = {tid: i for i, tid in enumerate(data.ids)}
    rows = [index[p.condition_id] for p in pairs]
    x0_w = torch.as_tensor(np.stack([latents[p.winner_id] for p in pairs]), dtype=dtype)
    x0_l = torch.as_tensor(np.stack([latents[p.loser_id] for p in pairs]), dtype=dtype)
    conds = {m: c[torch.as_tensor(rows)] for m, c in data.conditions.items()}
    return PreferenceData(x0_w, x0_l, conds, list(pairs))


def winners_data(pairs, latents: dict, data: FlowData, dtype=torch.float32) -> FlowData:
    """Winner latents only, for supervised fine-tuning."""
    seen, rows, lats, ids = set(), [], [], []
    index = {tid: i for i, tid in enumerate(data.ids)}
    for p in pairs:
        if p.winner_id in seen:
            continue
        seen.add(p.winner_id)
        rows.append(index[p.condition_id])
        lats.append(latents[p.winner_id])
        ids.append(p.winner_id)
    conds = {m: c[torch.as_tensor(rows)] for m, c in data.conditions.items()}
    return FlowData(torch.as_tensor(np.stack(lats), dtype=dtype), conds, ids)
