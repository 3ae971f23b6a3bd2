"""End-to-end desk experiments driven by a resolved run config."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .. import codec as codec_mod
from ..conditioning import STRATEGIES
from ..dpo import DpoConfig
from ..models import Denoiser, init_params
from ..preference import STRATEGIES as PAIRINGS
from . import bench, curation, evaluation
from . import training as tr

log = logging.getLogger(__name__)


@dataclass
class Bench:
    basis: codec_mod.CodecBasis
    train: list
    test: list
    latent_scale: float


def make_bench(cfg: dict, envelope: str = "random") -> Bench:
    b = cfg["bench"]
    basis = codec_mod.make_codec(cfg["codec"]["d"], 3, cfg["codec"]["seed"])
    shape = dict(T=b["T"], H=b["H"], W=b["W"], envelope=envelope)
    return Bench(basis, bench.gen_tasks(b["seed"], b["n_tasks"], **shape),
                 bench.gen_tasks(b["eval_seed"], b["n_eval_tasks"], **shape), cfg["codec"]["latent_scale"])


def model_kwargs(cfg: dict) -> dict:
    m = cfg["model"]
    return {k: m[k] for k in ("architecture", "n_blocks", "d", "n_heads", "d_ff", "pos_emb", "time_dim")}


def new_model(cfg: dict, strategy: str, data: tr.FlowData) -> Denoiser:
    latents = data.latents
    mcfg = tr.bench_model_config(model_kwargs(cfg), strategy, latents.shape[1:4], latents.shape[-1])
    return Denoiser(mcfg, init_params(mcfg, cfg["model"]["seed"]))


def plan_from(cfg: dict, phase: str) -> tr.PhasePlan:
    section = cfg["dpo"] if phase == "dpo" else cfg["train"][phase]
    trainable, frozen = tr.DEFAULT_PATTERNS[phase]
    return tr.PhasePlan(
        phase=phase,
        trainable=list(section.get("trainable", trainable)),
        frozen=list(section.get("frozen", frozen)),
        steps=section["steps"],
        learning_rate=section["learning_rate"],
        warmup_steps=section["warmup_steps"],
        batch_size=section["batch_size"],
        seed=section["seed"],
        grad_clip=section["grad_clip"],
        schedule=section["schedule"],
    )


def dpo_config(cfg: dict) -> DpoConfig:
    d = cfg["dpo"]
    return DpoConfig(beta=d["beta"], omega=d["omega"], shared_noise=d["shared_noise"],
                     learning_rate=d["learning_rate"], warmup_steps=d["warmup_steps"])


def train_base(cfg: dict, data: tr.FlowData, strategy: str, phases=("audio", "skeleton")):
    """Fresh model trained through the motion phases; returns ``(model, curves)``."""
    model = new_model(cfg, strategy, data)
    curves = {}
    for phase in phases:
        curves[phase] = tr.train_phase(plan_from(cfg, phase), model, data)
    return model, curves


def evaluate(cfg: dict, model: Denoiser, bench_: Bench, data: tr.FlowData, seed: int = 0):
    return evaluation.evaluate(model, bench_.test, data, bench_.basis, steps=cfg["bench"]["ode_steps"], seed=seed,
                               latent_scale=bench_.latent_scale)


def arm_summary(report: evaluation.EvalReport) -> dict:
    out = report.to_dict()
    out.pop("per_task")
    return out


def paired_lift(before: evaluation.EvalReport, after: evaluation.EvalReport, key: str = "r_align") -> tuple:
    """Mean per-task improvement and its standard error."""
    a = {r["task_id"]: r[key] for r in before.per_task}
    diffs = np.array([r[key] - a[r["task_id"]] for r in after.per_task])
    se = float(diffs.std(ddof=1) / np.sqrt(len(diffs))) if len(diffs) > 1 else 0.0
    return float(diffs.mean()), se


def ablate_conditioning(cfg: dict, strategies=STRATEGIES, envelope: str = "random") -> dict:
    """One model per conditioning strategy with identical seeds and budgets."""
    bench_ = make_bench(cfg, envelope)
    arms = {}
    for strategy in strategies:
        dtr = tr.prepare_data(bench_.train, bench_.basis, strategy, bench_.latent_scale)
        dte = tr.prepare_data(bench_.test, bench_.basis, strategy, bench_.latent_scale)
        model, curves = train_base(cfg, dtr, strategy)
        report = evaluate(cfg, model, bench_, dte)
        arms[strategy] = {**arm_summary(report), "final_loss": float(np.mean(curves["audio"][-50:])),
                          "per_task": report.per_task}
        log.info("conditioning %s sync %.4f", strategy, report.sync_corr)
    return arms


@dataclass
class PreferenceRound:
    bench: Bench
    train_data: tr.FlowData
    test_data: tr.FlowData
    base: Denoiser
    base_report: evaluation.EvalReport
    groups: list
    latents: dict


def preference_round(cfg: dict, base: Denoiser | None = None) -> PreferenceRound:
    """Train (or reuse) a base model, evaluate it and score candidate groups."""
    strategy = cfg["bench"]["conditioning"]
    bench_ = make_bench(cfg)
    dtr = tr.prepare_data(bench_.train, bench_.basis, strategy, bench_.latent_scale)
    dte = tr.prepare_data(bench_.test, bench_.basis, strategy, bench_.latent_scale)
    if base is None:
        base, _ = train_base(cfg, dtr, strategy)
    report = evaluate(cfg, base, bench_, dte)
    groups, latents = curation.score_candidates(base, bench_.train, dtr, bench_.basis,
                                                cfg["bench"]["candidates_per_task"], cfg["bench"]["ode_steps"],
                                                latent_scale=bench_.latent_scale)
    return PreferenceRound(bench_, dtr, dte, base, report, groups, latents)


def run_dpo(cfg: dict, rnd: PreferenceRound, strategy: str | None = None):
    pairs = curation.curate(rnd.groups, strategy or cfg["dpo"]["strategy"], cfg["dpo"]["min_margin"])
    model = rnd.base.frozen_copy()
    data = curation.preference_data(pairs, rnd.latents, rnd.train_data)
    curve = tr.train_phase(plan_from(cfg, "dpo"), model, data, dpo_cfg=dpo_config(cfg), reference=rnd.base)
    return model, curve, pairs


def run_sft(cfg: dict, rnd: PreferenceRound, strategy: str | None = None):
    """Winners-only fine-tuning with the same step budget as DPO."""
    pairs = curation.curate(rnd.groups, strategy or cfg["dpo"]["strategy"], cfg["dpo"]["min_margin"])
    model = rnd.base.frozen_copy()
    data = curation.winners_data(pairs, rnd.latents, rnd.train_data)
    plan = plan_from(cfg, "sft")
    plan.steps = cfg["dpo"]["steps"]
    curve = tr.train_phase(plan, model, data)
    return model, curve


def _arm(cfg, rnd, model, curve, n_pairs=None) -> dict:
    report = evaluate(cfg, model, rnd.bench, rnd.test_data)
    lift, se = paired_lift(rnd.base_report, report)
    out = {**arm_summary(report), "lift": lift, "lift_se": se,
           "loss_start": float(np.mean(curve[:20])), "loss_end": float(np.mean(curve[-50:]))}
    if n_pairs is not None:
        out["n_pairs"] = n_pairs
    return out


def compare_dpo_sft(cfg: dict, rnd: PreferenceRound | None = None) -> dict:
    rnd = rnd or preference_round(cfg)
    dpo_model, dpo_curve, pairs = run_dpo(cfg, rnd)
    sft_model, sft_curve = run_sft(cfg, rnd)
    return {
        "base": arm_summary(rnd.base_report),
        "dpo": _arm(cfg, rnd, dpo_model, dpo_curve, len(pairs)),
        "sft": _arm(cfg, rnd, sft_model, sft_curve),
    }


def ablate_pairing(cfg: dict, rnd: PreferenceRound | None = None, strategies=PAIRINGS) -> dict:
    """DPO under each pairing strategy with identical budgets."""
    rnd = rnd or preference_round(cfg)
    arms = {"base": arm_summary(rnd.base_report)}
    for strategy in strategies:
        model, curve, pairs = run_dpo(cfg, rnd, strategy)
        arms[strategy] = _arm(cfg, rnd, model, curve, len(pairs))
        log.info("pairing %s lift %.4f", strategy, arms[strategy]["lift"])
    return arms
