"""Deterministic two-class synthetic video corpora.

Positive frames are dominated by blocky binary noise (high spatial
frequency); negative frames by a smooth linear gradient with a few
quadratic blobs (low frequency).  ``class_gap`` sets the mixing weight of
the noise component: ``0.5 + gap / 2`` for positives and ``0.5 - gap / 2``
for negatives, so ``gap -> 0`` makes the classes indistinguishable.

Pixel synthesis uses only IEEE-exact arithmetic and ``sqrt`` on values from
:func:`~vidbossa.prng.uniform_stream`, so generated bytes do not depend on
the platform's libm.
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .exceptions import ConfigurationError
from .imaging import GrayImage, write_image
from .prng import XorShift64Star, derive_seed, uniform_stream
from .video import VideoManifestEntry, write_manifest


@dataclass(frozen=True)
class CorpusSpec:
    seed: int = 7
    n_videos_per_class: int = 20
    frames_per_video: tuple[int, int] = (5, 12)
    image_size: int = 128
    n_folds: int = 5
    class_gap: float = 1.0

    def __post_init__(self):
        lo, hi = self.frames_per_video
        if lo < 1 or hi < lo:
            raise ConfigurationError(f"frames_per_video must satisfy 1 <= min <= max, got {(lo, hi)}")
        if self.n_folds < 2:
            raise ConfigurationError("n_folds must be >= 2")
        if self.n_videos_per_class < self.n_folds:
            raise ConfigurationError("each fold needs at least one video per class: "
                                     "n_videos_per_class must be >= n_folds")
        if not 0 < self.class_gap <= 1:
            raise ConfigurationError("class_gap must lie in (0, 1]")
        if self.image_size < 16:
            raise ConfigurationError("image_size must be >= 16")


@dataclass(frozen=True)
class VideoStyle:
    """Per-video texture parameters; frames jitter around them."""

    cell: int
    direction: tuple[float, float]
    brightness: float
    contrast: float


def _video_style(rng: XorShift64Star) -> VideoStyle:
    dx, dy = rng.random() * 2 - 1, rng.random() * 2 - 1
    norm = float(np.sqrt(dx * dx + dy * dy)) or 1.0
    return VideoStyle(cell=3 + rng.randbelow(3), direction=(dx / norm, dy / norm),
                      brightness=0.35 + 0.3 * rng.random(), contrast=0.6 + 0.3 * rng.random())


def _noise(size: int, cell: int, seed: int) -> np.ndarray:
    n = -(-size // cell)
    cells = (uniform_stream(seed, n * n) < 0.5).astype(np.float64).reshape(n, n)
    return np.kron(cells, np.ones((cell, cell)))[:size, :size]


def _smooth(size: int, direction, rng: XorShift64Star) -> np.ndarray:
    coords = np.arange(size, dtype=np.float64) / (size - 1)
    yy, xx = np.meshgrid(coords, coords, indexing="ij")
    dx, dy = direction
    # jitter the gradient direction a little per frame
    dx += 0.2 * (rng.random() - 0.5)
    dy += 0.2 * (rng.random() - 0.5)
    g = dx * (xx - 0.5) + dy * (yy - 0.5)
    img = (g - g.min()) / ((g.max() - g.min()) or 1.0)
    for _ in range(2 + rng.randbelow(3)):
        cx, cy = rng.random(), rng.random()
        r2 = (0.1 + 0.2 * rng.random()) ** 2
        amp = 0.6 * rng.random() - 0.3
        bump = np.maximum(0.0, 1.0 - ((xx - cx) ** 2 + (yy - cy) ** 2) / r2)
        img = img + amp * bump * bump
    lo, hi = img.min(), img.max()
    return (img - lo) / ((hi - lo) or 1.0)


def make_frame(label: int, style: VideoStyle, size: int, class_gap: float, seed: int) -> GrayImage:
    """One keyframe of class ``label`` (+1 noisy, -1 smooth)."""
    rng = XorShift64Star(seed)
    w = 0.5 + 0.5 * class_gap if label > 0 else 0.5 - 0.5 * class_gap
    noise = _noise(size, style.cell, derive_seed(seed, "noise"))
    smooth = _smooth(size, style.direction, rng)
    mix = w * noise + (1.0 - w) * smooth
    bright = style.brightness + 0.1 * (rng.random() - 0.5)
    val = 255.0 * (bright + style.contrast * (mix - 0.5))
    return GrayImage(np.clip(np.floor(val + 0.5), 0, 255).astype(np.uint8))


def frame_generator(label: int, size: int, class_gap: float, seed: int) -> Callable[[int], GrayImage]:
    """Callable producing frames of one class, indexed by an integer."""
    style = _video_style(XorShift64Star(derive_seed(seed, "style", label)))

    def gen(i: int) -> GrayImage:
        return make_frame(label, style, size, class_gap, derive_seed(seed, "frame", label, i))

    return gen


def generate_video(label: int, n_frames: int, size: int, class_gap: float, seed: int) -> list[GrayImage]:
    gen = frame_generator(label, size, class_gap, seed)
    return [gen(i) for i in range(n_frames)]


def inject_minority_frames(frames, k: int, other: Callable[[int], GrayImage], seed: int = 0):
    """Replace ``k`` frames (chosen by ``seed``) with frames from ``other``.

    Returns the new frame list and the sorted replaced indices.
    """
    frames = list(frames)
    if k < 0 or k >= len(frames):
        raise ConfigurationError(f"k must satisfy 0 <= k < {len(frames)}, got {k}")
    idx = sorted(XorShift64Star(seed).sample_without_replacement(len(frames), k))
    for n, i in enumerate(idx):
        frames[i] = other(n)
    return frames, idx


def generate(spec: CorpusSpec, out_dir) -> str:
    """Write PGM keyframes and ``manifest.jsonl`` under ``out_dir``.

    Videos are generated in interleaved class order and assigned to folds
    round-robin within each class.  Returns the manifest path.
    """
    os.makedirs(out_dir, exist_ok=True)
    lo, hi = spec.frames_per_video
    entries = []
    for i in range(spec.n_videos_per_class):
        for label, prefix in ((1, "pos"), (-1, "neg")):
            vid = f"{prefix}_{i:03d}"
            vseed = derive_seed(spec.seed, "video", vid)
            n_frames = lo + XorShift64Star(derive_seed(vseed, "count")).randbelow(hi - lo + 1)
            rel_dir = os.path.join("frames", vid)
            os.makedirs(os.path.join(out_dir, rel_dir), exist_ok=True)
            keyframes = []
            for k, img in enumerate(generate_video(label, n_frames, spec.image_size, spec.class_gap, vseed)):
                rel = os.path.join(rel_dir, f"{k:03d}.pgm")
                write_image(img, os.path.join(out_dir, rel))
                keyframes.append(rel)
            entries.append(VideoManifestEntry(vid, label, i % spec.n_folds, tuple(keyframes)))
    path = os.path.join(out_dir, "manifest.jsonl")
    write_manifest(entries, path)
    return path
