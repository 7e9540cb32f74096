"""Binary PPM (P6) / PGM (P5) writers and a matching reader."""

from __future__ import annotations

from pathlib import Path

import numpy as np


def quantize(values) -> np.ndarray:
    """Map [0, 1] to 0..255, rounding half up."""
    v = np.asarray(values, dtype=np.float64)
    if not np.isfinite(v).all() or v.min(initial=0.0) < 0.0 or v.max(initial=0.0) > 1.0:
        raise ValueError("pixel values must be finite and lie in [0, 1]")
    return np.floor(v * 255.0 + 0.5).astype(np.uint8)


def encode(image, fmt: str | None = None) -> bytes:
    img = np.asarray(image)
    if fmt is None:
        fmt = "ppm" if img.ndim == 3 else "pgm"
    if fmt == "ppm":
        if img.ndim != 3 or img.shape[2] != 3:
            raise ValueError(f"PPM needs an (H, W, 3) image, got {img.shape}")
        magic = b"P6"
    elif fmt == "pgm":
        if img.ndim != 2:
            raise ValueError(f"PGM needs an (H, W) image, got {img.shape}")
        magic = b"P5"
    else:
        raise ValueError(f"unknown image format {fmt!r}")
    h, w = img.shape[:2]
    return magic + f"\n{w} {h}\n255\n".encode() + quantize(img).tobytes()


def write_image(image, path, fmt: str | None = None) -> Path:
    path = Path(path)
    data = encode(image, fmt)
    try:
        path.write_bytes(data)
    except OSError as exc:
        raise OSError(f"cannot write image {path}: {exc}") from exc
    return path


def write_heatmap(values, height: int, width: int, path) -> Path:
    """Grayscale map scaled so its maximum becomes 255."""
    v = np.asarray(values, dtype=np.float64).reshape(height, width)
    peak = v.max()
    v = np.clip(v / peak, 0.0, 1.0) if peak > 0 else np.zeros_like(v)
    return write_image(v, path, "pgm")


def read_image(path) -> np.ndarray:
    """Read a binary P5/P6 file with maxval 255 into uint8 (H, W[, 3])."""
    buf = Path(path).read_bytes()
    fields, pos = [], 0
    while len(fields) < 4:
        while buf[pos:pos + 1].isspace():
            pos += 1
        if buf[pos:pos + 1] == b"#":
            pos = buf.index(b"\n", pos) + 1
            continue
        end = pos
        while not buf[end:end + 1].isspace():
            end += 1
        fields.append(buf[pos:end])
        pos = end
    pos += 1  # single whitespace after maxval
    magic, w, h, maxval = fields[0], int(fields[1]), int(fields[2]), int(fields[3])
    if maxval != 255:
        raise ValueError(f"unsupported maxval {maxval}")
    ch = {b"P6": 3, b"P5": 1}.get(magic)
    if ch is None:
        raise ValueError(f"unsupported magic {magic!r}")
    data = np.frombuffer(buf, dtype=np.uint8, count=w * h * ch, offset=pos)
    return data.reshape(h, w, 3) if ch == 3 else data.reshape(h, w)
