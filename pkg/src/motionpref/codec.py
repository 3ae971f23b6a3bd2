"""Fixed linear patch codec standing in for a pretrained video VAE.

Video of shape (T, H, W, C) is cut into non-overlapping (4, 8, 8, C) blocks; each
flattened block is multiplied by a seeded matrix with orthonormal rows, giving a
latent of shape (T/4, H/8, W/8, d).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

TIME_STRIDE = 4
SPACE_STRIDE = 8


class ShapeMismatch(ValueError):
    pass


class DimensionTooLarge(ValueError):
    pass


@dataclass(frozen=True)
class CodecBasis:
    projection: np.ndarray  # (d, 4 * 8 * 8 * C)
    seed: int
    channels: int

    @property
    def d(self) -> int:
        return self.projection.shape[0]

    @property
    def patch_size(self) -> int:
        return self.projection.shape[1]


def patch_size(channels: int) -> int:
    return TIME_STRIDE * SPACE_STRIDE * SPACE_STRIDE * channels


def make_codec(d: int, channels: int = 3, seed: int = 0) -> CodecBasis:
    n = patch_size(channels)
    if d < 1 or channels < 1:
        raise ValueError("d and channels must be positive")
    if d > n:
        raise DimensionTooLarge(f"d={d} exceeds patch size {n}")
    rng = np.random.default_rng(seed)
    q, r = np.linalg.qr(rng.standard_normal((n, d)))
    # sign-fix so the factorization is unique
    q = q * np.where(np.diag(r) < 0, -1.0, 1.0)
    projection = np.ascontiguousarray(q.T)
    projection.setflags(write=False)
    return CodecBasis(projection=projection, seed=seed, channels=channels)


def check_contract(shape) -> None:
    if len(shape) != 4:
        raise ShapeMismatch(f"expected (T, H, W, C), got {tuple(shape)}")
    t, h, w, _ = shape
    if t < TIME_STRIDE or t % TIME_STRIDE or h % SPACE_STRIDE or w % SPACE_STRIDE or h == 0 or w == 0:
        raise ShapeMismatch(
            f"video shape {tuple(shape)} violates T % 4 == 0, H % 8 == 0, W % 8 == 0"
        )


def pad_to_contract(video: np.ndarray) -> tuple[np.ndarray, tuple[int, ...]]:
    """Pad a video so the codec accepts it.

    The last frame is repeated until T is a multiple of 4 (and at least 4), and the
    bottom/right edges are reflect-padded until H and W are multiples of 8.

    Returns:
        The padded video and the original shape.
    """
    video = np.asarray(video)
    original = tuple(video.shape)
    t, h, w, _ = original
    pad_t = max(TIME_STRIDE, -(-t // TIME_STRIDE) * TIME_STRIDE) - t
    pad_h = -h % SPACE_STRIDE
    pad_w = -w % SPACE_STRIDE
    if pad_t == pad_h == pad_w == 0:
        return video, original
    out = video
    if pad_t:
        out = np.concatenate([out, np.repeat(out[-1:], pad_t, axis=0)], axis=0)
    if pad_h or pad_w:
        mode = "reflect" if min(h, w) > 1 else "edge"
        out = np.pad(out, ((0, 0), (0, pad_h), (0, pad_w), (0, 0)), mode=mode)
    return out, original


def to_blocks(video: np.ndarray) -> np.ndarray:
    t, h, w, c = video.shape
    blocks = video.reshape(
        t // TIME_STRIDE, TIME_STRIDE, h // SPACE_STRIDE, SPACE_STRIDE, w // SPACE_STRIDE, SPACE_STRIDE, c
    )
    # frame-major, then row, column, channel inside each block
    blocks = blocks.transpose(0, 2, 4, 1, 3, 5, 6)
    return blocks.reshape(t // TIME_STRIDE, h // SPACE_STRIDE, w // SPACE_STRIDE, -1)


def from_blocks(blocks: np.ndarray, channels: int) -> np.ndarray:
    tl, hl, wl, _ = blocks.shape
    video = blocks.reshape(tl, hl, wl, TIME_STRIDE, SPACE_STRIDE, SPACE_STRIDE, channels)
    video = video.transpose(0, 3, 1, 4, 2, 5, 6)
    return video.reshape(tl * TIME_STRIDE, hl * SPACE_STRIDE, wl * SPACE_STRIDE, channels)


def encode(video: np.ndarray, basis: CodecBasis, pad: bool = False) -> np.ndarray:
    """Compress a video to a latent of shape (T/4, H/8, W/8, d)."""
    video = np.asarray(video, dtype=np.float64)
    if pad:
        video, _ = pad_to_contract(video)
    check_contract(video.shape)
    if video.shape[-1] != basis.channels:
        raise ShapeMismatch(f"video has {video.shape[-1]} channels, codec expects {basis.channels}")
    if not np.all(np.isfinite(video)):
        raise ValueError("video contains non-finite values")
    return to_blocks(video) @ basis.projection.T


def decode(latent: np.ndarray, basis: CodecBasis, clamp: bool = True) -> np.ndarray:
    latent = np.asarray(latent, dtype=np.float64)
    if latent.ndim != 4 or latent.shape[-1] != basis.d:
        raise ShapeMismatch(f"latent shape {latent.shape} incompatible with codec rank {basis.d}")
    video = from_blocks(latent @ basis.projection, basis.channels)
    if clamp:
        video = np.clip(video, -1.0, 1.0)
    return video
