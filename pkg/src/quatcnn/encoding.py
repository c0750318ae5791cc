"""Image ingestion and the four network input constructions.

Real models consume channel-concatenated RGB or HSV tensors; quaternion
models consume one of two single-channel quaternion encodings:

* rgb: q = 0 + R i + G j + B k (real plane identically zero)
* hsv: q = S cos(H) + S sin(H) i + V cos(H) j + V sin(H) k

Hue lives in radians [0, 2pi); saturation and value in [0, 1]. RGB
values are unit-interval. 8-bit rasters are normalized by /255 on load.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .quat import QTensor

__all__ = [
    "LabeledSample",
    "rgb_to_hsv",
    "encode_rgb_quaternion",
    "encode_hsv_quaternion",
    "concat_channels",
    "resize",
    "flip_horizontal",
    "flip_vertical",
    "augment_flips",
    "read_ppm",
    "write_ppm",
    "load_image",
]

TWO_PI = 2.0 * np.pi


@dataclass(frozen=True)
class LabeledSample:
    """An image with its binary label (0 healthy, 1 lymphoblast)."""

    image: np.ndarray
    label: int
    source_id: str


def _check_rgb(img: np.ndarray) -> np.ndarray:
    img = np.asarray(img)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ValueError(f"expected (H, W, 3) image, got shape {img.shape}")
    if img.min() < 0.0 or img.max() > 1.0:
        raise ValueError("RGB values must lie in [0, 1]")
    return img


def _check_hsv(img: np.ndarray) -> np.ndarray:
    img = np.asarray(img)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ValueError(f"expected (H, W, 3) image, got shape {img.shape}")
    h, s, v = img[..., 0], img[..., 1], img[..., 2]
    if h.min() < 0.0 or h.max() >= TWO_PI:
        raise ValueError("hue must lie in [0, 2pi)")
    if s.min() < 0.0 or s.max() > 1.0 or v.min() < 0.0 or v.max() > 1.0:
        raise ValueError("saturation and value must lie in [0, 1]")
    return img


def rgb_to_hsv(img: np.ndarray) -> np.ndarray:
    """Hexcone RGB -> HSV with hue in radians [0, 2pi).

    Achromatic pixels (zero chroma) take H = 0 by convention; black
    pixels additionally take S = 0.
    """
    img = _check_rgb(img)
    r, g, b = img[..., 0], img[..., 1], img[..., 2]
    v = img.max(axis=2)
    c = v - img.min(axis=2)
    with np.errstate(invalid="ignore", divide="ignore"):
        hp = np.select(
            [c == 0, v == r, v == g],
            [0.0, ((g - b) / c) % 6.0, (b - r) / c + 2.0],
            default=(r - g) / c + 4.0,
        )
        s = np.where(v > 0, c / np.where(v > 0, v, 1.0), 0.0)
    h = (hp * (np.pi / 3.0)) % TWO_PI
    return np.stack([h, s, v], axis=2)


def encode_rgb_quaternion(img: np.ndarray, dtype=np.float64) -> QTensor:
    """Pure-imaginary encoding: planes (0, R, G, B), one quaternion channel."""
    img = _check_rgb(img)
    h, w = img.shape[:2]
    data = np.zeros((4, 1, h, w), dtype=dtype)
    data[1, 0] = img[..., 0]
    data[2, 0] = img[..., 1]
    data[3, 0] = img[..., 2]
    return QTensor(data)


def encode_hsv_quaternion(img: np.ndarray, dtype=np.float64) -> QTensor:
    """Hue-angle encoding: planes (S cosH, S sinH, V cosH, V sinH)."""
    img = _check_hsv(img)
    h, s, v = img[..., 0], img[..., 1], img[..., 2]
    cos_h, sin_h = np.cos(h), np.sin(h)
    data = np.stack([s * cos_h, s * sin_h, v * cos_h, v * sin_h])
    return QTensor(data[:, None, :, :].astype(dtype))


def concat_channels(img: np.ndarray, dtype=np.float64) -> np.ndarray:
    """(H, W, 3) -> (3, H, W) channel-major stack, values untouched
    (HSV hue stays in radians)."""
    img = np.asarray(img)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ValueError(f"expected (H, W, 3) image, got shape {img.shape}")
    return np.ascontiguousarray(img.transpose(2, 0, 1), dtype=dtype)


def resize(img: np.ndarray, target: tuple[int, int] = (100, 100)) -> np.ndarray:
    """Bilinear resize of an (H, W) or (H, W, C) image.

    Pixel centers are aligned via src = (dst + 0.5) * scale - 0.5, so a
    same-size resize is the identity. Output is clipped to the source
    value range, which bilinear interpolation cannot exceed anyway.
    """
    img = np.asarray(img)
    th, tw = target
    sh, sw = img.shape[:2]
    if sh < 2 or sw < 2:
        raise ValueError(f"source too small to resize: {sh}x{sw}")
    if th < 1 or tw < 1:
        raise ValueError(f"bad target size {target}")
    if (sh, sw) == (th, tw):
        return img.copy()

    def axis_coords(src_n, dst_n):
        x = (np.arange(dst_n) + 0.5) * (src_n / dst_n) - 0.5
        x = np.clip(x, 0.0, src_n - 1.0)
        lo = np.floor(x).astype(np.intp)
        lo = np.minimum(lo, src_n - 2)
        return lo, x - lo

    ylo, yfrac = axis_coords(sh, th)
    xlo, xfrac = axis_coords(sw, tw)
    yfrac = yfrac[:, None] if img.ndim == 2 else yfrac[:, None, None]
    xfrac = xfrac[None, :] if img.ndim == 2 else xfrac[None, :, None]
    top = img[ylo][:, xlo] * (1 - xfrac) + img[ylo][:, xlo + 1] * xfrac
    bot = img[ylo + 1][:, xlo] * (1 - xfrac) + img[ylo + 1][:, xlo + 1] * xfrac
    out = top * (1 - yfrac) + bot * yfrac
    return np.clip(out, img.min(), img.max())


def flip_horizontal(img: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(img[:, ::-1])


def flip_vertical(img: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(img[::-1])


def augment_flips(sample: LabeledSample) -> list[LabeledSample]:
    """Deterministic x4 expansion: original, horizontal, vertical, both.
    Labels and source ids carry over."""
    img = sample.image
    variants = [img, flip_horizontal(img), flip_vertical(img),
                flip_vertical(flip_horizontal(img))]
    return [LabeledSample(v, sample.label, sample.source_id) for v in variants]


# ---------------------------------------------------------------------------
# raster IO: portable pixmap built in, anything else through Pillow


def read_ppm(path) -> np.ndarray:
    """Read a binary (P6) or ascii (P3) portable pixmap as uint8 (H, W, 3)."""
    raw = Path(path).read_bytes()
    tokens = []
    pos = 0
    while len(tokens) < 4 and pos < len(raw):
        m = re.compile(rb"\s*(?:#[^\n]*\n\s*)*(\S+)").match(raw, pos)
        if not m:
            break
        tokens.append(m.group(1))
        pos = m.end()
    if len(tokens) < 4 or tokens[0] not in (b"P3", b"P6"):
        raise ValueError(f"{path}: not a P3/P6 portable pixmap")
    width, height, maxval = int(tokens[1]), int(tokens[2]), int(tokens[3])
    if maxval != 255:
        raise ValueError(f"{path}: only maxval 255 is supported, got {maxval}")
    n = width * height * 3
    if tokens[0] == b"P6":
        data = raw[pos + 1:pos + 1 + n]  # single whitespace byte after maxval
        if len(data) != n:
            raise ValueError(f"{path}: truncated pixel data")
        flat = np.frombuffer(data, dtype=np.uint8)
    else:
        values = raw[pos:].split()
        if len(values) != n:
            raise ValueError(f"{path}: expected {n} ascii samples, got {len(values)}")
        flat = np.array([int(v) for v in values], dtype=np.uint8)
    return flat.reshape(height, width, 3)


def write_ppm(path, img: np.ndarray) -> None:
    """Write (H, W, 3) data as binary P6. Float input must be unit-interval
    and is rounded to 8 bits; uint8 passes through."""
    img = np.asarray(img)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ValueError(f"expected (H, W, 3) image, got shape {img.shape}")
    if img.dtype != np.uint8:
        if img.min() < 0.0 or img.max() > 1.0:
            raise ValueError("float image must lie in [0, 1]")
        img = np.round(img * 255.0).astype(np.uint8)
    h, w = img.shape[:2]
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(np.ascontiguousarray(img).tobytes())


def load_image(path) -> np.ndarray:
    """Decode any supported raster to float64 RGB in [0, 1].

    Portable pixmaps are decoded natively; other formats (for example
    the .tif files ALL-IDB2 ships) go through the Pillow adapter and
    need the optional ``images`` extra installed.
    """
    path = Path(path)
    if path.suffix.lower() in (".ppm", ".pnm"):
        return read_ppm(path).astype(np.float64) / 255.0
    try:
        from PIL import Image
    except ImportError as exc:
        raise ValueError(
            f"{path}: decoding {path.suffix} files requires Pillow "
            "(pip install quatcnn[images])"
        ) from exc
    with Image.open(path) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.float64)
    return arr / 255.0
