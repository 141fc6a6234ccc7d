"""PFM (HDR exchange) and PNG (preview) image files.

PFM files are written little-endian with scanlines stored bottom-to-top, as
the format prescribes; arrays in memory are (H, W, 3) top row first.
"""
from __future__ import annotations

import struct
import zlib
from pathlib import Path

import numpy as np


class ImageFormatError(ValueError):
    pass


def write_pfm(path, rgb: np.ndarray) -> None:
    rgb = np.asarray(rgb, dtype=np.float64)
    if rgb.ndim == 2:
        rgb = np.repeat(rgb[..., None], 3, axis=2)
    if rgb.ndim != 3 or rgb.shape[2] != 3:
        raise ValueError("expected an (H, W, 3) or (H, W) array")
    H, W, _ = rgb.shape
    data = np.ascontiguousarray(rgb[::-1].astype("<f4"))
    with open(path, "wb") as fh:
        fh.write(b"PF\n")
        fh.write(f"{W} {H}\n".encode("ascii"))
        fh.write(b"-1.0\n")
        fh.write(data.tobytes())


def read_pfm(path) -> np.ndarray:
    with open(path, "rb") as fh:
        raw = fh.read()
    tokens = []
    pos = 0
    while len(tokens) < 4:
        while pos < len(raw) and raw[pos : pos + 1].isspace():
            pos += 1
        end = pos
        while end < len(raw) and not raw[end : end + 1].isspace():
            end += 1
        if end == pos:
            raise ImageFormatError(f"{path}: truncated PFM header")
        tokens.append(raw[pos:end].decode("ascii", errors="replace"))
        pos = end
    pos += 1  # the single whitespace byte that ends the header
    kind = tokens[0]
    if kind not in ("PF", "Pf"):
        raise ImageFormatError(f"{path}: not a PFM file")
    try:
        W, H, scale = int(tokens[1]), int(tokens[2]), float(tokens[3])
    except ValueError:
        raise ImageFormatError(f"{path}: malformed PFM header") from None
    ch = 3 if kind == "PF" else 1
    dtype = "<f4" if scale < 0 else ">f4"
    n = W * H * ch
    body = raw[pos:]
    if len(body) < 4 * n:
        raise ImageFormatError(f"{path}: truncated PFM data")
    a = np.frombuffer(body[: 4 * n], dtype=dtype).astype(np.float64).reshape(H, W, ch)[::-1]
    if ch == 1:
        a = np.repeat(a, 3, axis=2)
    return np.ascontiguousarray(a)


def _png_chunk(tag: bytes, data: bytes) -> bytes:
    return struct.pack(">I", len(data)) + tag + data + struct.pack(">I", zlib.crc32(tag + data) & 0xFFFFFFFF)


def write_png(path, rgb8: np.ndarray) -> None:
    a = np.asarray(rgb8, dtype=np.uint8)
    H, W, _ = a.shape
    raw = b"".join(b"\x00" + a[y].tobytes() for y in range(H))
    with open(path, "wb") as fh:
        fh.write(b"\x89PNG\r\n\x1a\n")
        fh.write(_png_chunk(b"IHDR", struct.pack(">IIBBBBB", W, H, 8, 2, 0, 0, 0)))
        fh.write(_png_chunk(b"IDAT", zlib.compress(raw, 9)))
        fh.write(_png_chunk(b"IEND", b""))


def tonemap(rgb: np.ndarray, gamma: float = 2.2) -> np.ndarray:
    """Clamp to [0, 1], apply 1/gamma, quantize to 8 bits."""
    x = np.clip(np.asarray(rgb, dtype=np.float64), 0.0, 1.0) ** (1.0 / gamma)
    return np.round(x * 255.0).astype(np.uint8)


def signed_preview(values: np.ndarray) -> np.ndarray:
    """Red for positive, blue for negative, scaled by the largest magnitude."""
    v = np.asarray(values, dtype=np.float64)
    if v.ndim == 3:
        v = v.mean(axis=2)
    m = float(np.max(np.abs(v))) if v.size else 0.0
    s = v / m if m > 0 else v
    out = np.zeros(v.shape + (3,))
    out[..., 0] = np.clip(s, 0, 1)
    out[..., 2] = np.clip(-s, 0, 1)
    return tonemap(out)


def save_image(path, rgb: np.ndarray) -> None:
    """Write PFM or PNG according to the file suffix."""
    p = Path(path)
    if p.suffix.lower() == ".png":
        write_png(p, tonemap(rgb))
    else:
        write_pfm(p, rgb)
