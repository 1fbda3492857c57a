"""RGB images: binary PPM I/O, bilinear resize and top-left padding."""

from __future__ import annotations

import re
from dataclasses import dataclass

import numpy as np

from .numcore import ContractError, round_half_away

PAD_FILL = (127, 127, 127)


class ImageError(ValueError):
    pass


class PPMFormatError(ImageError):
    pass


class PPMUnsupportedError(ImageError):
    pass


class PPMTruncatedError(ImageError):
    pass


@dataclass(frozen=True, eq=False)
class Image:
    """8-bit RGB raster; ``pixels`` has shape (height, width, 3)."""

    pixels: np.ndarray

    def __post_init__(self):
        px = np.asarray(self.pixels)
        if px.ndim != 3 or px.shape[2] != 3 or px.shape[0] < 1 or px.shape[1] < 1:
            raise ContractError(f"expected (h, w, 3) pixels, got {px.shape}")
        px = px.astype(np.uint8, copy=True)
        px.setflags(write=False)
        object.__setattr__(self, "pixels", px)

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @classmethod
    def filled(cls, height: int, width: int, color) -> "Image":
        px = np.empty((height, width, 3), dtype=np.uint8)
        px[:] = np.asarray(color, dtype=np.uint8)
        return cls(px)

    def __eq__(self, other):
        if not isinstance(other, Image):
            return NotImplemented
        return self.pixels.shape == other.pixels.shape and bool(
            np.array_equal(self.pixels, other.pixels)
        )

    def __hash__(self):
        return hash((self.pixels.shape, self.pixels.tobytes()))

    def __repr__(self):
        return f"Image(height={self.height}, width={self.width})"


# header fields: magic, width, height, maxval; '#' comments run to end of line
_HEADER_TOKEN = re.compile(rb"(?:\s|#[^\n]*\n?)*([^\s#]+)")


def load_ppm(data: bytes) -> Image:
    """Parse a binary (P6) PPM with maxval 255."""
    pos = 0
    fields = []
    for _ in range(4):
        m = _HEADER_TOKEN.match(data, pos)
        if m is None:
            if not fields:
                raise PPMFormatError("empty input")
            raise PPMTruncatedError("header ends early")
        fields.append(m.group(1))
        pos = m.end()
        if fields[0] != b"P6":
            raise PPMFormatError(f"bad magic {fields[0][:8]!r}, expected b'P6'")
    try:
        width, height, maxval = (int(f) for f in fields[1:])
    except ValueError:
        raise PPMFormatError("non-numeric header field") from None
    if width < 1 or height < 1:
        raise PPMFormatError(f"bad dimensions {width}x{height}")
    if maxval != 255:
        raise PPMUnsupportedError(f"maxval {maxval} not supported (only 255)")
    # exactly one whitespace byte separates the header from the raster
    if pos >= len(data) or not data[pos : pos + 1].isspace():
        raise PPMTruncatedError("missing raster data")
    pos += 1
    need = width * height * 3
    raster = data[pos : pos + need]
    if len(raster) < need:
        raise PPMTruncatedError(f"expected {need} pixel bytes, found {len(raster)}")
    px = np.frombuffer(raster, dtype=np.uint8).reshape(height, width, 3)
    return Image(px)


def save_ppm(img: Image) -> bytes:
    header = f"P6\n{img.width} {img.height}\n255\n".encode("ascii")
    return header + img.pixels.tobytes()


def _axis_weights(n_in: int, n_out: int):
    # half-pixel centres: src = (dst + 0.5) * n_in / n_out - 0.5, clamped to the edge
    src = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
    src = np.clip(src, 0.0, n_in - 1)
    lo = np.floor(src).astype(np.int64)
    hi = np.minimum(lo + 1, n_in - 1)
    frac = src - lo
    return lo, hi, frac


def resize_bilinear(img: Image, out_h: int, out_w: int) -> Image:
    if out_h < 1 or out_w < 1:
        raise ContractError(f"target size must be positive, got {out_h}x{out_w}")
    if (out_h, out_w) == (img.height, img.width):
        return img
    src = img.pixels.astype(np.float64)
    y0, y1, fy = _axis_weights(img.height, out_h)
    x0, x1, fx = _axis_weights(img.width, out_w)
    fy = fy[:, None, None]
    fx = fx[None, :, None]
    top = src[y0][:, x0] * (1 - fx) + src[y0][:, x1] * fx
    bot = src[y1][:, x0] * (1 - fx) + src[y1][:, x1] * fx
    out = top * (1 - fy) + bot * fy
    out = np.clip(round_half_away(out), 0, 255)
    return Image(out.astype(np.uint8))


def pad_to(img: Image, target_h: int, target_w: int, fill=PAD_FILL) -> Image:
    """Place ``img`` at the top-left of a ``target_h`` x ``target_w`` canvas."""
    if target_h < img.height or target_w < img.width:
        raise ContractError(
            f"cannot pad {img.height}x{img.width} into smaller {target_h}x{target_w}"
        )
    out = np.empty((target_h, target_w, 3), dtype=np.uint8)
    out[:] = np.asarray(fill, dtype=np.uint8)
    out[: img.height, : img.width] = img.pixels
    return Image(out)
