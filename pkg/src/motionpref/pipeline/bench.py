"""Synthetic talking-figure videos with matching audio and skeleton tracks.

Layout on a 32 x 32 canvas (other sizes scale): a static head ellipse, a mouth
patch filling exactly one 8 x 8 codec cell whose brightness equals the mouth
aperture, and a bright Gaussian hand blob moving in the lower-right quadrant.
The aperture is the amplitude envelope of the audio; the hand centre is the
wrist joint of the skeleton.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .. import tensorio
from ..conditioning import AudioWaveform, SkeletonSequence, encode_audio, encode_skeleton

SAMPLE_RATE = 1600.0
FRAME_RATE = 25.0
CARRIER_HZ = 200.0
HEAD_VALUE = np.array([0.5, 0.3, 0.2])
HAND_SIGMA = 2.0
SKELETON_GROUPS = [[0], [1, 2]]  # head; arm (elbow + wrist)


@dataclass
class SynthTask:
    seed: int
    T: int
    H: int
    W: int
    audio: AudioWaveform
    skeleton: SkeletonSequence
    video: np.ndarray  # (T, H, W, 3)
    aperture: np.ndarray  # (T,)
    hand: np.ndarray  # (T, 2) as (row, col) in pixels

    @property
    def task_id(self) -> str:
        return f"task{self.seed:06d}"


def mouth_box(H: int, W: int) -> tuple:
    """Pixel slices (rows, cols) of the mouth: the codec cell just below the head centre."""
    r0 = 8 * int(0.45 * H // 8) + 8
    c0 = 8 * int(0.375 * W // 8)
    return slice(r0, r0 + 8), slice(c0, c0 + 8)


def hand_region(H: int, W: int) -> tuple:
    return slice(H // 2, H), slice(W // 2, W)


def band_limited(rng, times: np.ndarray, n_components: int, f_lo: float, f_hi: float) -> np.ndarray:
    freqs = rng.uniform(f_lo, f_hi, n_components)
    amps = rng.uniform(0.5, 1.0, n_components)
    phases = rng.uniform(0.0, 2 * np.pi, n_components)
    return (amps[:, None] * np.sin(2 * np.pi * freqs[:, None] * times[None, :] + phases[:, None])).sum(axis=0)


def gen_task(seed: int, T: int = 16, H: int = 32, W: int = 32, envelope: str = "random") -> SynthTask:
    """Render one deterministic task.

    ``envelope`` is ``"random"`` (band-limited, up to 10 Hz), ``"constant"`` (fixed
    half-open mouth) or ``"zero"`` (silence, closed mouth).
    """
    if H < 16 or W < 16:
        raise ValueError("canvas must be at least 16 x 16")
    rng = np.random.default_rng(seed)
    spf = SAMPLE_RATE / FRAME_RATE
    n_samples = int(round(T * spf))
    t_audio = np.arange(n_samples) / SAMPLE_RATE
    t_frames = (np.arange(T) + 0.5) / FRAME_RATE

    if envelope == "random":
        raw_audio = band_limited(rng, t_audio, 6, 0.5, 10.0)
        lo, hi = raw_audio.min(), raw_audio.max()
        env_audio = (raw_audio - lo) / (hi - lo)
        # frame aperture is the envelope sampled at frame centres
        aperture = np.interp(t_frames, t_audio, env_audio)
    elif envelope == "constant":
        rng.uniform(size=18)
        env_audio = np.full(n_samples, 0.5)
        aperture = np.full(T, 0.5)
    elif envelope == "zero":
        rng.uniform(size=18)
        env_audio = np.zeros(n_samples)
        aperture = np.zeros(T)
    else:
        raise ValueError(f"unknown envelope {envelope!r}")
    carrier_phase = rng.uniform(0.0, 2 * np.pi)
    samples = env_audio * np.sin(2 * np.pi * CARRIER_HZ * t_audio + carrier_phase)

    # hand trajectory: smooth, inside the lower-right quadrant, clear of the mouth cell
    rows_lo, rows_hi = H * 0.5 + 3, H - 4
    cols_lo, cols_hi = W * 0.5 + 6, W - 4
    traj = []
    for lo, hi in ((rows_lo, rows_hi), (cols_lo, cols_hi)):
        wave = band_limited(rng, t_frames, 3, 0.3, 2.5)
        wave = (wave - wave.min()) / max(wave.max() - wave.min(), 1e-9)
        traj.append(lo + (hi - lo) * wave)
    hand = np.stack(traj, axis=1)

    video = np.zeros((T, H, W, 3))
    rr, cc = np.mgrid[0:H, 0:W]
    head_r, head_c = H * 0.45, W * 0.375
    head = ((rr - head_r) / (H * 0.38)) ** 2 + ((cc - head_c) / (W * 0.3)) ** 2 <= 1.0
    video[:, head] = HEAD_VALUE
    for t in range(T):
        blob = np.exp(-((rr - hand[t, 0]) ** 2 + (cc - hand[t, 1]) ** 2) / (2 * HAND_SIGMA**2))
        video[t] = np.maximum(video[t], blob[..., None])
    mr, mc = mouth_box(H, W)
    video[:, mr, mc, :] = aperture[:, None, None, None]

    head_xy = ((head_c + 0.5) / W, (head_r + 0.5) / H)
    keypoints = np.zeros((T, 3, 3))
    keypoints[:, 0] = [head_xy[0], head_xy[1], 1.0]
    keypoints[:, 2, 0] = (hand[:, 1] + 0.5) / W
    keypoints[:, 2, 1] = (hand[:, 0] + 0.5) / H
    keypoints[:, 2, 2] = 1.0
    keypoints[:, 1, 0] = np.clip(keypoints[:, 2, 0] - 0.12, 0, 1)
    keypoints[:, 1, 1] = np.clip(keypoints[:, 2, 1] + 0.08, 0, 1)
    keypoints[:, 1, 2] = 1.0
    return SynthTask(
        seed=seed, T=T, H=H, W=W,
        audio=AudioWaveform(samples, SAMPLE_RATE, FRAME_RATE),
        skeleton=SkeletonSequence(keypoints),
        video=video, aperture=aperture, hand=hand,
    )


def gen_tasks(seed: int, n: int, T: int = 16, H: int = 32, W: int = 32, envelope: str = "random") -> list:
    base = np.random.default_rng(seed).integers(0, 2**31 - 1, size=n)
    return [gen_task(int(s), T, H, W, envelope) for s in base]


# -- measurements -----------------------------------------------------------


def pearson(a, b) -> float:
    """Pearson correlation; 0.0 when either series is (numerically) constant."""
    a = np.asarray(a, dtype=np.float64) - np.mean(a)
    b = np.asarray(b, dtype=np.float64) - np.mean(b)
    na, nb = np.sqrt((a * a).sum()), np.sqrt((b * b).sum())
    if na < 1e-9 or nb < 1e-9:
        return 0.0
    return float(np.clip((a * b).sum() / (na * nb), -1.0, 1.0))


def mouth_intensity(video: np.ndarray) -> np.ndarray:
    mr, mc = mouth_box(video.shape[1], video.shape[2])
    return video[:, mr, mc, :].mean(axis=(1, 2, 3))


def hand_centers(video: np.ndarray) -> np.ndarray:
    """Intensity-weighted centroid of the brightest blob in the hand region, per frame."""
    hr, hc = hand_region(video.shape[1], video.shape[2])
    region = video[:, hr, hc, :].mean(axis=-1)
    out = np.zeros((video.shape[0], 2))
    rows = np.arange(region.shape[1]) + hr.start
    cols = np.arange(region.shape[2]) + hc.start
    for t, frame in enumerate(region):
        peak = frame.max()
        weight = np.clip(frame - 0.5 * peak, 0.0, None) if peak > 0 else np.zeros_like(frame)
        total = weight.sum()
        if total <= 0:
            out[t] = [rows.mean(), cols.mean()]
            continue
        out[t] = [(weight.sum(axis=1) * rows).sum() / total, (weight.sum(axis=0) * cols).sum() / total]
    return out


def motion_variance(video: np.ndarray) -> float:
    centers = hand_centers(video)
    return float(centers.var(axis=0).sum())


def roughness(video: np.ndarray) -> float:
    """Mean absolute temporal plus spatial differences."""
    return float(
        np.abs(np.diff(video, axis=0)).mean()
        + np.abs(np.diff(video, axis=1)).mean()
        + np.abs(np.diff(video, axis=2)).mean()
    )


def psnr(mse: float, peak_to_peak: float = 2.0) -> float:
    return float(10 * np.log10(peak_to_peak**2 / max(mse, 1e-12)))


# -- conditioning -----------------------------------------------------------


AUDIO_TOKENS = 2
AUDIO_DIM = 4
SKELETON_DIM = 2


def task_conditions(task: SynthTask, grid_hw: tuple) -> dict:
    """Per-frame motion conditions (T, D_m, d_m) for both modalities."""
    audio = encode_audio(task.audio, AUDIO_TOKENS, AUDIO_DIM, n_frames=task.T)
    skel = encode_skeleton(task.skeleton, grid_hw[0], grid_hw[1], SKELETON_DIM, groups=SKELETON_GROUPS)
    return {"audio": audio, "skeleton": skel}


# -- on-disk layout: tasks/<id>/{video.ten, audio.ten, skeleton.ten, meta.json} --


def save_task(root, task: SynthTask) -> Path:
    d = Path(root) / "tasks" / task.task_id
    d.mkdir(parents=True, exist_ok=True)
    tensorio.save(d / "video.ten", task.video)
    tensorio.save(d / "audio.ten", task.audio.samples)
    tensorio.save(d / "skeleton.ten", task.skeleton.keypoints)
    meta = {
        "task_id": task.task_id,
        "seed": task.seed,
        "T": task.T, "H": task.H, "W": task.W,
        "sample_rate": task.audio.sample_rate,
        "frame_rate": task.audio.frame_rate,
        "aperture": [round(float(a), 8) for a in task.aperture],
        "hand": [[round(float(v), 8) for v in row] for row in task.hand],
    }
    (d / "meta.json").write_text(json.dumps(meta, sort_keys=True, indent=1) + "\n")
    return d


def load_task(task_dir) -> SynthTask:
    d = Path(task_dir)
    meta = json.loads((d / "meta.json").read_text())
    return SynthTask(
        seed=meta["seed"], T=meta["T"], H=meta["H"], W=meta["W"],
        audio=AudioWaveform(tensorio.load(d / "audio.ten"), meta["sample_rate"], meta["frame_rate"]),
        skeleton=SkeletonSequence(np.clip(tensorio.load(d / "skeleton.ten"), 0.0, 1.0)),
        video=tensorio.load(d / "video.ten").astype(np.float64),
        aperture=np.asarray(meta["aperture"]),
        hand=np.asarray(meta["hand"]),
    )


def list_tasks(root) -> list:
    base = Path(root) / "tasks"
    if not base.is_dir():
        raise FileNotFoundError(f"no tasks directory under {root}")
    return sorted(p for p in base.iterdir() if (p / "meta.json").exists())
