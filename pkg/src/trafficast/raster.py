"""Binary column-per-sample images of normalised sub-series."""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

WHITE = 255


class RasterError(ValueError):
    pass


@dataclass(frozen=True)
class RasterImage:
    """R x R image with one white pixel per column.

    ``pixels[row, col]`` uses row 0 for the lowest value (position 1), so
    ``pixels[p_i - 1, i] == 255``.
    """

    pixels: np.ndarray
    column_positions: np.ndarray

    @property
    def resolution(self) -> int:
        return self.pixels.shape[0]


def resample(x, n: int) -> np.ndarray:
    """Linear interpolation of ``x`` onto ``n`` evenly spaced points (identity if len == n)."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] == n:
        return x.copy()
    if x.shape[-1] == 1:
        return np.repeat(x, n, axis=-1)
    src = np.linspace(0.0, x.shape[-1] - 1.0, n)
    lo = np.minimum(np.floor(src).astype(int), x.shape[-1] - 2)
    frac = src - lo
    return x[..., lo] * (1.0 - frac) + x[..., lo + 1] * frac


def normalize_rows(rows) -> np.ndarray:
    """Per-row min-max scaling to [0, 1]; constant rows become 0.5."""
    rows = np.atleast_2d(np.asarray(rows, dtype=np.float64))
    lo = rows.min(axis=1, keepdims=True)
    span = rows.max(axis=1, keepdims=True) - lo
    flat = span[:, 0] == 0
    out = (rows - lo) / np.where(span == 0, 1.0, span)
    out[flat] = 0.5
    return out


def positions(values, resolution: int) -> np.ndarray:
    """p_i = max(1, ceil(R * x_i)) after resampling to R columns."""
    x = resample(values, resolution)
    if np.any(x < 0) or np.any(x > 1) or np.isnan(x).any():
        raise RasterError("values must lie in [0, 1]")
    return np.maximum(1, np.ceil(resolution * x)).astype(np.int64)


def rasterize(sub, resolution: int = 64) -> RasterImage:
    sub = np.asarray(sub, dtype=np.float64)
    if sub.ndim != 1 or sub.size < 1:
        raise RasterError("expected a non-empty 1-D sub-series")
    p = positions(sub, resolution)
    pixels = np.zeros((resolution, resolution), dtype=np.uint8)
    pixels[p - 1, np.arange(resolution)] = WHITE
    return RasterImage(pixels, p)


def rasterize_batch(rows, resolution: int = 64) -> np.ndarray:
    """Rasterize each row of an already normalised (n, L) array into (n, R, R) uint8."""
    p = positions(rows, resolution)
    n = p.shape[0]
    out = np.zeros((n, resolution, resolution), dtype=np.uint8)
    out[np.arange(n)[:, None], p - 1, np.arange(resolution)[None, :]] = WHITE
    return out


def grid_images(rows, resolution: int = 64) -> np.ndarray:
    """Normalise each day separately, then rasterize."""
    return rasterize_batch(normalize_rows(rows), resolution)


def derasterize(img: RasterImage | np.ndarray) -> np.ndarray:
    """Column centres (p_i - 0.5) / R of the white pixels."""
    pixels = img.pixels if isinstance(img, RasterImage) else np.asarray(img)
    if pixels.ndim != 2 or pixels.shape[0] != pixels.shape[1]:
        raise RasterError("expected a square image")
    white = pixels == WHITE
    if np.any((pixels != 0) & ~white) or np.any(white.sum(axis=0) != 1):
        raise RasterError("every column must hold exactly one white pixel")
    p = white.argmax(axis=0) + 1
    return (p - 0.5) / pixels.shape[0]


def write_pgm(img: RasterImage | np.ndarray, path) -> Path:
    """Binary P5 greymap, top row = highest value."""
    pixels = img.pixels if isinstance(img, RasterImage) else np.asarray(img, dtype=np.uint8)
    h, w = pixels.shape
    path = Path(path)
    path.write_bytes(b"P5\n%d %d\n255\n" % (w, h) + np.ascontiguousarray(pixels[::-1]).tobytes())
    return path


def read_pgm(path) -> np.ndarray:
    """Inverse of :func:`write_pgm`, returning pixels with row 0 at the bottom."""
    data = Path(path).read_bytes()
    fields, pos = [], 0
    while len(fields) < 4:
        while data[pos:pos + 1].isspace():
            pos += 1
        end = pos
        while end < len(data) and not data[end:end + 1].isspace():
            end += 1
        fields.append(data[pos:end])
        pos = end
    if fields[0] != b"P5" or int(fields[3]) != 255:
        raise RasterError("not an 8-bit P5 greymap")
    w, h = int(fields[1]), int(fields[2])
    payload = data[pos + 1:]
    if len(payload) != w * h:
        raise RasterError("payload size does not match header")
    return np.frombuffer(payload, dtype=np.uint8).reshape(h, w)[::-1].copy()
