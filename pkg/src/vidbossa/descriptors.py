"""Binary local descriptors: native BRIEF on a dense grid, and BDSC files.

Descriptors are packed into ``uint8`` rows: bit ``i`` lives in byte
``i // 8`` at position ``i % 8`` counting from the least-significant bit.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from .exceptions import ConfigurationError, ContractViolation, FormatError, TruncatedFileError
from .imaging import GrayImage, box_smooth, dense_grid
from .prng import XorShift64Star

SUPPORTED_BITS = (128, 256, 512)
BDSC_MAGIC = b"BDSC"
BDSC_VERSION = 1
_BDSC_HEADER = struct.Struct("<4sBII")


@dataclass(frozen=True)
class SamplingPattern:
    """Point-pair offsets relative to the patch center.

    ``pairs`` has shape ``(n_pairs, 4)`` with columns ``dx1, dy1, dx2, dy2``.
    """

    n_pairs: int
    patch_size: int
    seed: int
    pairs: np.ndarray = field(repr=False)

    def __eq__(self, other):
        if not isinstance(other, SamplingPattern):
            return NotImplemented
        return (self.n_pairs, self.patch_size, self.seed) == (
            other.n_pairs, other.patch_size, other.seed
        ) and np.array_equal(self.pairs, other.pairs)


def gen_pattern(seed: int, n_pairs: int = 256, patch_size: int = 16) -> SamplingPattern:
    """Draw BRIEF test locations from an isotropic Gaussian.

    Each coordinate is ``round(N(0, patch_size / 5))`` drawn from
    :class:`~vidbossa.prng.XorShift64Star`; draws with ``|d| > patch_size // 2 - 1``
    are rejected and redrawn, so every sample point lies inside the patch.
    """
    if n_pairs not in SUPPORTED_BITS:
        raise ConfigurationError(f"n_pairs must be one of {SUPPORTED_BITS}, got {n_pairs}")
    if patch_size < 4:
        raise ConfigurationError(f"patch_size must be >= 4, got {patch_size}")
    rng = XorShift64Star(seed)
    sigma = patch_size / 5.0
    bound = patch_size // 2 - 1
    out = np.empty((n_pairs, 4), dtype=np.int32)
    for i in range(n_pairs):
        for k in range(4):
            while True:
                d = int(round(rng.gauss(sigma)))
                if -bound <= d <= bound:
                    break
            out[i, k] = d
    out.setflags(write=False)
    return SamplingPattern(n_pairs, patch_size, int(seed), out)


@dataclass(eq=False)
class DescriptorSet:
    """The unordered set of binary descriptors of one keyframe."""

    D: int
    bits: np.ndarray
    source_id: str = ""

    def __post_init__(self):
        if self.D <= 0 or self.D % 8:
            raise FormatError(f"D must be a positive multiple of 8, got {self.D}")
        bits = np.asarray(self.bits, dtype=np.uint8)
        if bits.ndim == 1 and bits.size == 0:
            bits = bits.reshape(0, self.D // 8)
        if bits.ndim != 2 or bits.shape[1] != self.D // 8:
            raise ContractViolation(
                f"packed descriptors must have shape (N, {self.D // 8}), got {bits.shape}")
        self.bits = np.ascontiguousarray(bits)

    @property
    def N(self) -> int:
        return self.bits.shape[0]

    def __len__(self):
        return self.N

    def __eq__(self, other):
        if not isinstance(other, DescriptorSet):
            return NotImplemented
        return self.D == other.D and np.array_equal(self.bits, other.bits)

    @classmethod
    def concatenate(cls, sets, source_id: str = "") -> "DescriptorSet":
        sets = list(sets)
        if not sets:
            raise ContractViolation("need at least one descriptor set")
        D = sets[0].D
        if any(s.D != D for s in sets):
            raise ContractViolation("descriptor sets have different D")
        return cls(D, np.concatenate([s.bits for s in sets], axis=0), source_id)


def pack_bits(bool_bits: np.ndarray) -> np.ndarray:
    """Pack a ``(N, D)`` boolean array LSB-first into ``(N, D // 8)`` bytes."""
    return np.packbits(np.asarray(bool_bits, dtype=bool), axis=-1, bitorder="little")


def unpack_bits(packed: np.ndarray, D: int | None = None) -> np.ndarray:
    out = np.unpackbits(np.asarray(packed, dtype=np.uint8), axis=-1, bitorder="little")
    return out if D is None else out[..., :D]


def _check_center(img: GrayImage, x: int, y: int, patch_size: int):
    half = patch_size // 2
    if x - half < 0 or y - half < 0 or x + (patch_size + 1) // 2 - 1 >= img.width \
            or y + (patch_size + 1) // 2 - 1 >= img.height:
        raise ContractViolation(
            f"patch of size {patch_size} at center ({x}, {y}) leaves the "
            f"{img.width}x{img.height} image")


def brief_bits(data: np.ndarray, xs: np.ndarray, ys: np.ndarray,
               pattern: SamplingPattern) -> np.ndarray:
    """Packed BRIEF descriptors for many centers on an already-smoothed array."""
    p = pattern.pairs
    data = np.asarray(data)
    xs = np.asarray(xs, dtype=np.intp)[:, None]
    ys = np.asarray(ys, dtype=np.intp)[:, None]
    first = data[ys + p[None, :, 1], xs + p[None, :, 0]]
    second = data[ys + p[None, :, 3], xs + p[None, :, 2]]
    return pack_bits(first > second)


def extract_brief(img: GrayImage, center: tuple[int, int], pattern: SamplingPattern) -> np.ndarray:
    """One packed descriptor; bit ``i`` is set iff the first point is strictly brighter."""
    x, y = center
    _check_center(img, x, y, pattern.patch_size)
    return brief_bits(img.data, np.array([x]), np.array([y]), pattern)[0]


@dataclass(frozen=True)
class DescriptorConfig:
    bits: int = 256
    patch: int = 16
    step: int = 6
    seed: int = 42
    smooth_radius: int = 2

    def __post_init__(self):
        if self.bits not in SUPPORTED_BITS:
            raise ConfigurationError(f"bits must be one of {SUPPORTED_BITS}, got {self.bits}")
        if self.step < 1:
            raise ConfigurationError("step must be >= 1")
        if self.smooth_radius < 0:
            raise ConfigurationError("smooth_radius must be >= 0")

    def pattern(self) -> SamplingPattern:
        return _cached_pattern(self.seed, self.bits, self.patch)


_PATTERNS: dict[tuple[int, int, int], SamplingPattern] = {}


def _cached_pattern(seed, bits, patch):
    key = (seed, bits, patch)
    if key not in _PATTERNS:
        _PATTERNS[key] = gen_pattern(seed, bits, patch)
    return _PATTERNS[key]


def extract_frame(img: GrayImage, cfg: DescriptorConfig = DescriptorConfig(),
                  source_id: str = "") -> DescriptorSet:
    """Smooth ``img`` and compute one BRIEF descriptor per dense-grid center."""
    pattern = cfg.pattern()
    grid = dense_grid(img, cfg.patch, cfg.step)
    if len(grid) == 0:
        return DescriptorSet(cfg.bits, np.zeros((0, cfg.bits // 8), np.uint8), source_id)
    smooth = box_smooth(img, cfg.smooth_radius)
    xs, ys = grid.as_arrays()
    return DescriptorSet(cfg.bits, brief_bits(smooth.data, xs, ys, pattern), source_id)


def descriptor_bytes(ds: DescriptorSet) -> bytes:
    return _BDSC_HEADER.pack(BDSC_MAGIC, BDSC_VERSION, ds.D, ds.N) + ds.bits.tobytes()


def parse_descriptors(buf: bytes, source_id: str = "") -> DescriptorSet:
    if len(buf) < _BDSC_HEADER.size:
        if buf[:4] != BDSC_MAGIC[:len(buf[:4])]:
            raise FormatError(f"magic: expected {BDSC_MAGIC!r}, got {bytes(buf[:4])!r}")
        raise TruncatedFileError("BDSC header truncated", len(buf))
    magic, version, D, N = _BDSC_HEADER.unpack_from(buf)
    if magic != BDSC_MAGIC:
        raise FormatError(f"magic: expected {BDSC_MAGIC!r}, got {magic!r}")
    if version != BDSC_VERSION:
        raise FormatError(f"version: unsupported BDSC version {version}")
    if D == 0 or D % 8:
        raise FormatError(f"D: must be a positive multiple of 8, got {D}")
    need = N * (D // 8)
    payload = buf[_BDSC_HEADER.size:_BDSC_HEADER.size + need]
    if len(payload) < need:
        raise TruncatedFileError(
            f"BDSC payload truncated: expected {need} bytes, found {len(payload)}",
            _BDSC_HEADER.size + len(payload))
    bits = np.frombuffer(payload, dtype=np.uint8).reshape(N, D // 8).copy()
    return DescriptorSet(D, bits, source_id)


def write_descriptor_file(ds: DescriptorSet, path) -> None:
    with open(path, "wb") as fh:
        fh.write(descriptor_bytes(ds))


def read_descriptor_file(path) -> DescriptorSet:
    with open(path, "rb") as fh:
        return parse_descriptors(fh.read(), source_id=str(path))


class BriefExtractor(TransformerMixin, BaseEstimator):
    """Dense BRIEF extraction as a stateless transformer.

    ``transform`` maps a sequence of :class:`GrayImage` to a list of
    :class:`DescriptorSet`, one per image.
    """

    def __init__(self, bits=256, patch=16, step=6, seed=42, smooth_radius=2):
        self.bits = bits
        self.patch = patch
        self.step = step
        self.seed = seed
        self.smooth_radius = smooth_radius

    def _config(self):
        return DescriptorConfig(self.bits, self.patch, self.step, self.seed, self.smooth_radius)

    def fit(self, X=None, y=None):
        self.pattern_ = self._config().pattern()
        return self

    def transform(self, X):
        cfg = self._config()
        return [extract_frame(img, cfg) for img in X]

    def __sklearn_tags__(self):
        tags = super().__sklearn_tags__()
        tags.requires_fit = False
        return tags
