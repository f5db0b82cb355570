"""Minimal binary PPM (P6) and PGM (P5) readers and writers."""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .errors import ShapeMismatch


def _to_u8(values: np.ndarray) -> np.ndarray:
    return np.round(np.clip(np.asarray(values, dtype=np.float64), 0.0, 1.0) * 255.0).astype(np.uint8)


def write_ppm(path, rgb: np.ndarray) -> None:
    """Write an (H, W, 3) image with values in [0, 1] as 8-bit P6."""
    img = _to_u8(rgb)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ShapeMismatch(f"expected (H, W, 3), got {img.shape}")
    h, w, _ = img.shape
    Path(path).write_bytes(f"P6\n{w} {h}\n255\n".encode() + img.tobytes())


def _read_header(buf: bytes, magic: bytes) -> tuple[int, int, int, int]:
    if buf[:2] != magic:
        raise ValueError(f"not a {magic.decode()} file")
    fields, pos = [], 2
    while len(fields) < 3:
        while buf[pos:pos + 1].isspace():
            pos += 1
        if buf[pos:pos + 1] == b"#":
            while buf[pos:pos + 1] not in (b"\n", b""):
                pos += 1
            continue
        start = pos
        while not buf[pos:pos + 1].isspace():
            pos += 1
        fields.append(int(buf[start:pos]))
    w, h, maxval = fields
    if maxval != 255:
        raise ValueError("only 8-bit images are supported")
    return w, h, maxval, pos + 1


def read_ppm(path) -> np.ndarray:
    """(H, W, 3) float32 image in [0, 1]."""
    buf = Path(path).read_bytes()
    w, h, maxval, pos = _read_header(buf, b"P6")
    data = np.frombuffer(buf, np.uint8, count=w * h * 3, offset=pos)
    return (data.reshape(h, w, 3).astype(np.float32) / maxval).astype(np.float32)


def write_pgm(path, values: np.ndarray) -> None:
    """Write an (H, W) array as 8-bit P5, scaled so the maximum maps to 255."""
    v = np.asarray(values, dtype=np.float64)
    v = v - min(v.min(), 0.0)
    peak = v.max()
    img = np.zeros(v.shape, np.uint8) if peak <= 0 else np.round(255.0 * v / peak).astype(np.uint8)
    h, w = img.shape
    Path(path).write_bytes(f"P5\n{w} {h}\n255\n".encode() + img.tobytes())


def read_pgm(path) -> np.ndarray:
    """(H, W) float32 array in [0, 1]."""
    buf = Path(path).read_bytes()
    w, h, maxval, pos = _read_header(buf, b"P5")
    data = np.frombuffer(buf, np.uint8, count=w * h, offset=pos)
    return data.reshape(h, w).astype(np.float32) / maxval
