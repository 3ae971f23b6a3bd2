"""Command-line entry point: ``motionpref <command> [options]``.

Exit codes: 0 success, 1 validation error (JSON object on stderr), 2 non-finite
values (JSON object naming the parameter on stderr).
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path


from . import checkpoint, codec as codec_mod, config as config_mod, gradcheck, tensorio
from .models import NonFiniteError
from .pipeline import bench, curation, evaluation, experiments as ex
from .pipeline import training as tr
from .preference import STRATEGIES as PAIRINGS, build_pairs, read_groups, read_pairs, write_jsonl

log = logging.getLogger("motionpref")

SOURCE = "source.json"


class UsageError(ValueError):
    pass


def _write_json(path, obj) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(json.dumps(obj, sort_keys=True, indent=2) + "\n")


def _echo_config(out_dir, cfg: dict) -> None:
    Path(out_dir).mkdir(parents=True, exist_ok=True)
    config_mod.dump(cfg, Path(out_dir) / "config.resolved.json")


def _load_config(path) -> dict:
    return config_mod.load(path) if path else config_mod.resolve({})


def _write_curve(path, curve) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["step", "loss"])
        for i, v in enumerate(curve):
            w.writerow([i, repr(float(v))])


def _load_tasks(data_dir) -> list:
    return [bench.load_task(d) for d in bench.list_tasks(data_dir)]


def _ckpt_context(ckpt_dir):
    """Model, run config and codec basis stored with a checkpoint."""
    model, manifest = checkpoint.load(ckpt_dir)
    cfg = config_mod.resolve(manifest["config"])
    basis = codec_mod.make_codec(cfg["codec"]["d"], 3, cfg["codec"]["seed"])
    return model, cfg, basis


def _flow_data(tasks, basis, cfg) -> tr.FlowData:
    return tr.prepare_data(tasks, basis, cfg["bench"]["conditioning"], cfg["codec"]["latent_scale"])


# -- commands ----------------------------------------------------------------


def cmd_gen_data(args) -> dict:
    cfg = _load_config(args.config)
    b = cfg["bench"]
    seed, n = (b["eval_seed"], b["n_eval_tasks"]) if args.split == "eval" else (b["seed"], b["n_tasks"])
    out = Path(args.out)
    for task in bench.gen_tasks(seed, n, b["T"], b["H"], b["W"]):
        bench.save_task(out, task)
    _echo_config(out, cfg)
    return {"tasks": n, "out": str(out)}


def cmd_train_base(args) -> dict:
    cfg = _load_config(args.config)
    tasks = _load_tasks(args.data)
    basis = codec_mod.make_codec(cfg["codec"]["d"], 3, cfg["codec"]["seed"])
    data = _flow_data(tasks, basis, cfg)
    if args.init:
        model, _, _ = _ckpt_context(args.init)
    elif args.phase == "audio":
        model = ex.new_model(cfg, cfg["bench"]["conditioning"], data)
    else:
        raise UsageError("phase 'skeleton' needs --init pointing at an audio-phase checkpoint")
    plan = ex.plan_from(cfg, args.phase)
    if args.steps is not None:
        plan.steps = args.steps
    curve = tr.train_phase(plan, model, data)
    out = Path(args.out)
    checkpoint.save(out, model, args.phase, cfg)
    _write_curve(out / "loss.csv", curve)
    _echo_config(out, cfg)
    return {"phase": args.phase, "steps": plan.steps, "final_loss": curve[-1] if curve else None}


def cmd_score(args) -> dict:
    model, cfg, basis = _ckpt_context(args.ckpt)
    tasks = _load_tasks(args.data)
    data = _flow_data(tasks, basis, cfg)
    n = args.candidates_per_task or cfg["bench"]["candidates_per_task"]
    groups, latents = curation.score_candidates(model, tasks, data, basis, n, cfg["bench"]["ode_steps"],
                                                seed=args.seed, latent_scale=cfg["codec"]["latent_scale"])
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_jsonl(out, groups)
    store = Path(str(out) + ".candidates")
    (store / "latents").mkdir(parents=True, exist_ok=True)
    for sid, z in sorted(latents.items()):
        tensorio.save(store / "latents" / f"{sid}.ten", z)
    _write_json(store / SOURCE, {"data": str(Path(args.data).resolve())})
    return {"groups": len(groups), "candidates": len(latents)}


def cmd_build_pairs(args) -> dict:
    groups = read_groups(args.inp)
    pairs = []
    for g in groups:
        pairs.extend(build_pairs(g, args.strategy, args.min_margin))
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_jsonl(out, pairs)
    store = Path(str(args.inp) + ".candidates")
    if store.is_dir():
        _write_json(Path(str(out) + "." + SOURCE), {"candidates": str(store.resolve())})
    return {"pairs": len(pairs)}


def cmd_train_dpo(args) -> dict:
    base, ckpt_cfg, basis = _ckpt_context(args.ckpt)
    cfg = _load_config(args.config) if args.config else ckpt_cfg
    pairs = read_pairs(args.pairs)
    if not pairs:
        raise UsageError(f"{args.pairs}: no preference pairs")
    store = Path(args.candidates) if args.candidates else None
    if store is None:
        src = Path(str(args.pairs) + "." + SOURCE)
        if not src.is_file():
            raise UsageError("cannot locate candidate latents; pass --candidates")
        store = Path(json.loads(src.read_text())["candidates"])
    data_dir = args.data or json.loads((store / SOURCE).read_text())["data"]
    tasks = _load_tasks(data_dir)
    data = _flow_data(tasks, basis, cfg)
    needed = sorted({p.winner_id for p in pairs} | {p.loser_id for p in pairs})
    latents = {sid: tensorio.load(store / "latents" / f"{sid}.ten") for sid in needed}
    pref = curation.preference_data(pairs, latents, data)
    out = Path(args.out)
    reference = base.frozen_copy()
    checkpoint.save(out / "reference", reference, "reference", cfg)
    model = base.frozen_copy()
    plan = ex.plan_from(cfg, "dpo")
    if args.steps is not None:
        plan.steps = args.steps
    curve = tr.train_phase(plan, model, pref, dpo_cfg=ex.dpo_config(cfg), reference=reference)
    checkpoint.save(out, model, "dpo", cfg, extra={"reference": "reference"})
    _write_curve(out / "loss.csv", curve)
    _echo_config(out, cfg)
    return {"pairs": len(pairs), "steps": plan.steps, "final_loss": curve[-1] if curve else None}


def _find_task(tasks, task_id):
    for t in tasks:
        if t.task_id == task_id:
            return t
    raise UsageError(f"task {task_id!r} not found")


def cmd_sample(args) -> dict:
    model, cfg, basis = _ckpt_context(args.ckpt)
    task = _find_task(_load_tasks(args.data), args.task_id)
    data = _flow_data([task], basis, cfg)
    steps = args.steps or cfg["bench"]["ode_steps"]
    lat = evaluation.generate_latents(model, [task], data.conditions, tuple(data.latents.shape[1:]), steps, args.seed)
    video = codec_mod.decode(lat[0] / cfg["codec"]["latent_scale"], basis)
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    tensorio.save(args.out, video)
    return {"task_id": task.task_id, "shape": list(video.shape)}


def cmd_eval(args) -> dict:
    model, cfg, basis = _ckpt_context(args.ckpt)
    tasks = _load_tasks(args.data)
    data = _flow_data(tasks, basis, cfg)
    steps = args.steps or cfg["bench"]["ode_steps"]
    report = evaluation.evaluate(model, tasks, data, basis, steps, args.seed,
                                 latent_scale=cfg["codec"]["latent_scale"])
    _write_json(args.out, {"report": report.to_dict(), "config": cfg})
    return {"sync_corr": report.sync_corr, "r_align": report.r_align}


def cmd_ablate(args) -> dict:
    cfg = _load_config(args.config)
    if args.what == "conditioning":
        arms = ex.ablate_conditioning(cfg)
        for arm in arms.values():
            arm.pop("per_task")
    else:
        arms = ex.ablate_pairing(cfg)
    _write_json(args.out, {"what": args.what, "arms": arms, "config": cfg})
    return {k: v.get("sync_corr") for k, v in arms.items()}


def cmd_gradcheck(args) -> dict:
    cfg = _load_config(args.config)
    results = gradcheck.run_all(cfg["model"]["seed"])
    for r in results:
        print(f"{'PASS' if r.passed else 'FAIL'} {r.name} coords={r.n_coords} "
              f"frac_ok={r.frac_ok:.4f} max_rel={r.max_rel:.2e}")
    if not all(r.passed for r in results):
        raise GradcheckFailed([r.to_dict() for r in results if not r.passed])
    return {"suites": len(results)}


class GradcheckFailed(RuntimeError):
    def __init__(self, failures):
        super().__init__("gradient check failed")
        self.failures = failures


# -- parser ------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="motionpref", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("gen-data", help="write synthetic tasks")
    s.add_argument("--config")
    s.add_argument("--out", required=True)
    s.add_argument("--split", choices=("train", "eval"), default="train")
    s.set_defaults(func=cmd_gen_data)

    s = sub.add_parser("train-base", help="run the audio or skeleton training phase")
    s.add_argument("--config")
    s.add_argument("--data", required=True)
    s.add_argument("--phase", choices=("audio", "skeleton"), required=True)
    s.add_argument("--init", help="checkpoint to continue from")
    s.add_argument("--steps", type=int, help="override the configured step count")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_train_base)

    s = sub.add_parser("score", help="sample, degrade and oracle-score candidates")
    s.add_argument("--ckpt", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--candidates-per-task", type=int)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_score)

    s = sub.add_parser("build-pairs", help="turn scored groups into preference pairs")
    s.add_argument("--in", dest="inp", required=True)
    s.add_argument("--strategy", choices=PAIRINGS, default="best_vs_worst")
    s.add_argument("--min-margin", type=float, default=0.5)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_build_pairs)

    s = sub.add_parser("train-dpo", help="preference tuning against a frozen reference")
    s.add_argument("--ckpt", required=True)
    s.add_argument("--pairs", required=True)
    s.add_argument("--config")
    s.add_argument("--candidates", help="candidate store written by score")
    s.add_argument("--data", help="task directory (defaults to the one recorded by score)")
    s.add_argument("--steps", type=int)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_train_dpo)

    s = sub.add_parser("sample", help="generate one video")
    s.add_argument("--ckpt", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--task-id", required=True)
    s.add_argument("--steps", type=int)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_sample)

    s = sub.add_parser("eval", help="evaluate a checkpoint on a task directory")
    s.add_argument("--ckpt", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--steps", type=int)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("ablate", help="conditioning or pairing ablation")
    s.add_argument("--what", choices=("conditioning", "pairing"), required=True)
    s.add_argument("--config")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_ablate)

    s = sub.add_parser("gradcheck", help="finite-difference gradient suites")
    s.add_argument("--config")
    s.set_defaults(func=cmd_gradcheck)
    return p


def _fail(code: int, payload: dict) -> int:
    sys.stderr.write(json.dumps(payload, sort_keys=True) + "\n")
    return code


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        result = args.func(args)
    except NonFiniteError as exc:
        return _fail(2, {"error": "non_finite", "message": str(exc), "parameter": exc.name})
    except GradcheckFailed as exc:
        return _fail(1, {"error": "gradcheck_failed", "failures": exc.failures})
    except config_mod.ConfigError as exc:
        return _fail(1, {"error": "config", "message": str(exc), "key": exc.path})
    except (ValueError, FileNotFoundError, KeyError) as exc:
        return _fail(1, {"error": type(exc).__name__, "message": str(exc)})
    print(json.dumps(result, sort_keys=True))
    return 0


if __name__ == "__main__":
    sys.exit(main())
