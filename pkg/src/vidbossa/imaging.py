"""Grayscale images, PGM (P5) I/O, box smoothing and dense patch grids."""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from .exceptions import FormatError


@dataclass(frozen=True, eq=False)
class GrayImage:
    """8-bit grayscale image stored row-major as a ``(height, width)`` array."""

    data: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.data)
        if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ValueError(f"image must be a non-empty 2-D array, got shape {arr.shape}")
        if arr.dtype != np.uint8:
            if arr.size and (arr.min() < 0 or arr.max() > 255):
                raise ValueError("intensities must lie in [0, 255]")
            arr = arr.astype(np.uint8)
        arr = np.ascontiguousarray(arr)
        arr.setflags(write=False)
        object.__setattr__(self, "data", arr)

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def height(self) -> int:
        return self.data.shape[0]

    def __eq__(self, other):
        if not isinstance(other, GrayImage):
            return NotImplemented
        return self.data.shape == other.data.shape and bool(np.array_equal(self.data, other.data))

    @classmethod
    def from_bytes(cls, width: int, height: int, raw: bytes) -> "GrayImage":
        if len(raw) != width * height:
            raise ValueError(f"expected {width * height} bytes, got {len(raw)}")
        return cls(np.frombuffer(raw, dtype=np.uint8).reshape(height, width))


@dataclass(frozen=True)
class PatchGrid:
    patch_size: int
    step: int
    centers: tuple[tuple[int, int], ...]

    def __len__(self):
        return len(self.centers)

    def as_arrays(self) -> tuple[np.ndarray, np.ndarray]:
        """Center x and y coordinates as two int arrays."""
        if not self.centers:
            return np.zeros(0, dtype=np.intp), np.zeros(0, dtype=np.intp)
        xy = np.asarray(self.centers, dtype=np.intp)
        return xy[:, 0], xy[:, 1]


def _read_token(buf: bytes, pos: int) -> tuple[bytes, int]:
    """Next whitespace-delimited header token, skipping ``#`` comments."""
    n = len(buf)
    while pos < n:
        c = buf[pos:pos + 1]
        if c == b"#":
            while pos < n and buf[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
        elif c.isspace():
            pos += 1
        else:
            break
    start = pos
    while pos < n and not buf[pos:pos + 1].isspace() and buf[pos:pos + 1] != b"#":
        pos += 1
    return buf[start:pos], pos


def parse_pgm(buf: bytes) -> GrayImage:
    magic, pos = _read_token(buf, 0)
    if magic != b"P5":
        raise FormatError(f"magic: expected P5, got {magic[:8]!r}")
    fields = {}
    for name in ("width", "height", "maxval"):
        tok, pos = _read_token(buf, pos)
        try:
            fields[name] = int(tok)
        except ValueError:
            raise FormatError(f"{name}: not an integer ({tok[:16]!r})") from None
        if fields[name] < 1:
            raise FormatError(f"{name}: must be positive, got {fields[name]}")
    if fields["maxval"] != 255:
        raise FormatError(f"maxval: only 8-bit (255) supported, got {fields['maxval']}")
    # exactly one whitespace byte separates the header from the raster
    pos += 1
    w, h = fields["width"], fields["height"]
    raster = buf[pos:pos + w * h]
    if len(raster) != w * h:
        raise FormatError(f"raster: expected {w * h} bytes, found {len(raster)}")
    return GrayImage.from_bytes(w, h, raster)


def load_image(path) -> GrayImage:
    """Read a binary 8-bit PGM file.  Pixel values are copied verbatim."""
    if not os.path.exists(path):
        raise FileNotFoundError(path)
    with open(path, "rb") as fh:
        return parse_pgm(fh.read())


def pgm_bytes(img: GrayImage) -> bytes:
    header = f"P5\n{img.width} {img.height}\n255\n".encode("ascii")
    return header + img.data.tobytes()


def write_image(img: GrayImage, path) -> None:
    with open(path, "wb") as fh:
        fh.write(pgm_bytes(img))


def box_smooth(img: GrayImage, radius: int = 2) -> GrayImage:
    """Mean filter over a ``(2r+1)**2`` window clamped at the borders.

    The mean is rounded half up to an integer.  Window sums come from an
    integral image, so the cost per pixel does not depend on ``radius``.
    """
    if radius < 0:
        raise ValueError("radius must be >= 0")
    if radius == 0:
        return img
    h, w = img.height, img.width
    ii = np.zeros((h + 1, w + 1), dtype=np.int64)
    ii[1:, 1:] = img.data.astype(np.int64).cumsum(0).cumsum(1)

    y0 = np.clip(np.arange(h) - radius, 0, h)
    y1 = np.clip(np.arange(h) + radius + 1, 0, h)
    x0 = np.clip(np.arange(w) - radius, 0, w)
    x1 = np.clip(np.arange(w) + radius + 1, 0, w)

    total = (ii[y1][:, x1] - ii[y0][:, x1] - ii[y1][:, x0] + ii[y0][:, x0])
    count = (y1 - y0)[:, None] * (x1 - x0)[None, :]
    out = (2 * total + count) // (2 * count)
    return GrayImage(out.astype(np.uint8))


def dense_grid(img: GrayImage, patch_size: int = 16, step: int = 6) -> PatchGrid:
    """Centers of every square patch that fits in ``img`` on a regular grid."""
    if patch_size < 1 or step < 1:
        raise ValueError("patch_size and step must be >= 1")
    half = patch_size // 2
    if patch_size > img.width or patch_size > img.height:
        return PatchGrid(patch_size, step, ())
    nx = (img.width - patch_size) // step + 1
    ny = (img.height - patch_size) // step + 1
    xs = [half + i * step for i in range(nx)]
    ys = [half + j * step for j in range(ny)]
    return PatchGrid(patch_size, step, tuple((x, y) for y in ys for x in xs))
