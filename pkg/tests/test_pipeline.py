import json

import numpy as np
import pytest
import torch

from motionpref import checkpoint, codec, config
from motionpref.dpo import DpoConfig
from motionpref.pipeline import bench, curation, evaluation, experiments
from motionpref.pipeline import training as tr


@pytest.fixture(scope="module")
def tasks():
    return bench.gen_tasks(11, 100)


def test_zero_envelope_gives_static_mouth():
    task = bench.gen_task(3, envelope="zero")
    assert bench.mouth_intensity(task.video).var() < 1e-8


def test_same_seed_identical():
    a, b = bench.gen_task(42), bench.gen_task(42)
    assert a.video.tobytes() == b.video.tobytes()
    assert a.audio.samples.tobytes() == b.audio.samples.tobytes()
    assert a.skeleton.keypoints.tobytes() == b.skeleton.keypoints.tobytes()


def test_mouth_tracks_aperture(tasks):
    corrs = [bench.pearson(bench.mouth_intensity(t.video), t.aperture) for t in tasks]
    assert min(corrs) > 0.99


def test_hand_blob_follows_wrist(tasks):
    for t in tasks[:20]:
        centres = bench.hand_centers(t.video)
        wrist = np.stack([t.skeleton.keypoints[:, 2, 1] * t.H - 0.5, t.skeleton.keypoints[:, 2, 0] * t.W - 0.5], 1)
        assert np.abs(centres - wrist).max() < 1.0


def test_task_disk_round_trip(tmp_path):
    task = bench.gen_task(5)
    bench.save_task(tmp_path, task)
    (loaded,) = [bench.load_task(d) for d in bench.list_tasks(tmp_path)]
    assert loaded.task_id == task.task_id
    assert np.allclose(loaded.video, task.video, atol=1e-6)
    assert np.allclose(loaded.aperture, task.aperture, atol=1e-7)


def test_annotator_ground_truth():
    task = bench.gen_task(1)
    s = evaluation.synthetic_annotator(task, task.video)
    assert abs(s.r_align - 5.0) <= 0.05
    assert s.r_fidelity == 5.0


def test_annotator_shuffled_video(tasks):
    rng = np.random.default_rng(0)
    scores = [evaluation.synthetic_annotator(t, t.video[rng.permutation(t.T)]).r_align for t in tasks]
    assert np.mean(np.array(scores) <= 2.0) >= 0.95


def test_annotator_white_noise():
    task = bench.gen_task(2)
    noise = np.random.default_rng(0).uniform(-1, 1, task.video.shape)
    assert evaluation.synthetic_annotator(task, noise).r_fidelity <= 2.0


def test_annotator_shape_check():
    task = bench.gen_task(2)
    with pytest.raises(ValueError):
        evaluation.synthetic_annotator(task, task.video[:8])


def test_metrics_on_references(tasks):
    report = evaluation.evaluate_videos(tasks, [t.video for t in tasks])
    assert report.sync_corr > 0.99
    assert report.sync_corr == pytest.approx(np.mean([r["sync_corr"] for r in report.per_task]))
    static = [np.repeat(t.video[:1], t.T, axis=0) for t in tasks[:5]]
    assert evaluation.evaluate_videos(tasks[:5], static).motion_var < 1e-20


def small_cfg(**bench_over):
    b = {"n_tasks": 50, "n_eval_tasks": 50, "ode_steps": 10}
    b.update(bench_over)
    return config.resolve({"bench": b})


def test_untrained_model_has_null_sync():
    cfg = small_cfg()
    b = experiments.make_bench(cfg)
    dte = tr.prepare_data(b.test, b.basis, "full", b.latent_scale)
    model = experiments.new_model(cfg, "full", dte)
    report = experiments.evaluate(cfg, model, b, dte)
    assert abs(report.sync_corr) < 3 * report.sync_corr_se


def test_plan_resolution():
    names = ["embed.W", "motion.audio.W", "motion.skeleton.W"]
    plan = tr.default_plan("skeleton")
    assert tr.resolve_plan(plan, names) == ["motion.skeleton.W"]
    with pytest.raises(tr.PatternMismatch):
        tr.resolve_plan(tr.PhasePlan("audio", trainable=["embed.*"], frozen=[]), names)
    with pytest.raises(tr.PatternMismatch):
        tr.resolve_plan(tr.PhasePlan("audio", trainable=["*"], frozen=["embed.*"]), names)


@pytest.fixture(scope="module")
def audio_run():
    cfg = config.load(experiments.__file__.rsplit("/src/", 1)[0] + "/configs/desk.json")
    b = experiments.make_bench(cfg)
    data = tr.prepare_data(b.train, b.basis, "full", b.latent_scale)
    model = experiments.new_model(cfg, "full", data)
    initial = tr.probe_loss(model, data, ["audio"])
    plan = experiments.plan_from(cfg, "audio")
    plan.steps = 2000
    tr.train_phase(plan, model, data)
    return cfg, b, data, model, initial


def test_audio_phase_halves_loss(audio_run):
    _, _, data, model, initial = audio_run
    assert len(data) == 200
    assert tr.probe_loss(model, data, ["audio"]) < 0.5 * initial


def test_audio_phase_leaves_skeleton_branch_untouched(audio_run):
    cfg, _, data, model, _ = audio_run
    fresh = experiments.new_model(cfg, "full", data)
    for k in model.params:
        if k.startswith("motion.skeleton."):
            assert torch.equal(model.params[k], fresh.params[k])


def test_skeleton_phase_freeze_contract(audio_run):
    cfg, _, data, base, _ = audio_run
    model = base.frozen_copy()
    plan = experiments.plan_from(cfg, "skeleton")
    plan.steps = 20
    tr.train_phase(plan, model, data)
    changed = {k for k in model.params if not torch.equal(model.params[k], base.params[k])}
    assert changed and all(k.startswith("motion.skeleton.") for k in changed)


def test_dpo_zero_learning_rate_keeps_checkpoint(audio_run, tmp_path):
    cfg, b, data, base, _ = audio_run
    model = base.frozen_copy()
    pref = tr.PreferenceData(data.latents[:8], data.latents[8:16], {m: c[:8] for m, c in data.conditions.items()}, [])
    plan = tr.default_plan("dpo", steps=5, learning_rate=0.0, warmup_steps=0, batch_size=4)
    tr.train_phase(plan, model, pref, dpo_cfg=DpoConfig())
    checkpoint.save(tmp_path / "a", base, "audio")
    checkpoint.save(tmp_path / "b", model, "audio")
    for f in sorted((tmp_path / "a" / "params").iterdir()):
        assert f.read_bytes() == (tmp_path / "b" / "params" / f.name).read_bytes()


def test_checkpoint_round_trip(audio_run, tmp_path):
    cfg, _, _, model, _ = audio_run
    checkpoint.save(tmp_path, model, "audio", cfg)
    loaded, manifest = checkpoint.load(tmp_path)
    assert manifest["phase"] == "audio" and manifest["config"] == cfg
    assert all(torch.equal(loaded.params[k], model.params[k]) for k in model.params)
    assert [e["name"] for e in manifest["params"]] == list(model.params)


def test_checkpoint_rejects_bad_shape(audio_run, tmp_path):
    _, _, _, model, _ = audio_run
    checkpoint.save(tmp_path, model, "audio")
    m = json.loads((tmp_path / "manifest.json").read_text())
    m["model"]["d"] = 8
    m["model"]["n_heads"] = 2
    (tmp_path / "manifest.json").write_text(json.dumps(m))
    with pytest.raises(checkpoint.CheckpointError):
        checkpoint.load(tmp_path)


def test_degradations():
    video = np.arange(16, dtype=float)[:, None, None, None] * np.ones((16, 2, 2, 3))
    shuffled = curation.degrade(video, "shuffle", seed=1)
    frames = shuffled[:, 0, 0, 0]
    for s in range(0, 16, 4):
        block = frames[s : s + 4]
        assert sorted(block) == list(range(s, s + 4)) and list(block) != list(range(s, s + 4))
    smooth = curation.degrade(video, "smooth")[:, 0, 0, 0]
    assert smooth[5] == 5.0 and smooth[0] == pytest.approx(1 / 3)
    shift = curation.degrade(video, "shift")[:, 0, 0, 0]
    assert list(shift[:3]) == [0.0, 0.0, 1.0]
    with pytest.raises(ValueError):
        curation.degrade(video, "blur")


def test_constant_envelope_arms_tie():
    cfg = config.resolve({
        "bench": {"n_tasks": 40, "n_eval_tasks": 20, "ode_steps": 5},
        "train": {"audio": {"steps": 30, "learning_rate": 0.01, "warmup_steps": 5},
                  "skeleton": {"steps": 10, "learning_rate": 0.01, "warmup_steps": 5}},
    })
    arms = experiments.ablate_conditioning(cfg, envelope="constant")
    syncs = {k: v["sync_corr"] for k, v in arms.items()}
    ses = {k: v["sync_corr_se"] for k, v in arms.items()}
    for a in arms:
        for b in arms:
            assert abs(syncs[a] - syncs[b]) <= 2 * max(ses[a], ses[b], 1e-12) or syncs[a] == syncs[b]
