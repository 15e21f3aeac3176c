"""Frame and map I/O: binary PNM (P5/P6, 8 or 16 bit) and 8-bit PNG.

Frames are (3, H, W) float32 in [0, 1]; single-channel maps are (H, W).
"""
from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image

from .tensor_core import DTYPE, ContractError

FRAME_SUFFIXES = (".ppm", ".pnm", ".png", ".pgm")


def _read_pnm(path: Path) -> np.ndarray:
    raw = path.read_bytes()
    tokens, pos = [], 0
    while len(tokens) < 4:
        while raw[pos : pos + 1].isspace():
            pos += 1
        if raw[pos : pos + 1] == b"#":
            pos = raw.index(b"\n", pos) + 1
            continue
        end = pos
        while not raw[end : end + 1].isspace():
            end += 1
        tokens.append(raw[pos:end])
        pos = end
    pos += 1  # single whitespace before the raster
    magic, w, h, maxval = tokens[0], int(tokens[1]), int(tokens[2]), int(tokens[3])
    if magic not in (b"P5", b"P6"):
        raise ContractError(f"{path}: unsupported PNM type {magic!r}")
    chans = 3 if magic == b"P6" else 1
    dtype = ">u2" if maxval > 255 else "u1"
    data = np.frombuffer(raw, dtype=dtype, count=w * h * chans, offset=pos).astype(np.float64) / maxval
    return data.reshape(h, w, chans)


def read_frame(path) -> np.ndarray:
    path = Path(path)
    if path.suffix.lower() in (".ppm", ".pnm", ".pgm"):
        img = _read_pnm(path)
    else:
        with Image.open(path) as im:
            if im.mode in ("I;16", "I;16B", "I"):
                img = np.asarray(im, dtype=np.float64)[..., None] / 65535.0
            else:
                img = np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0
    if img.shape[2] == 1:
        img = np.repeat(img, 3, axis=2)
    return np.ascontiguousarray(img.transpose(2, 0, 1), dtype=DTYPE)


def _quantize(x: np.ndarray, bits: int) -> np.ndarray:
    maxval = (1 << bits) - 1
    q = np.floor(np.clip(np.asarray(x, dtype=np.float64), 0.0, 1.0) * maxval + 0.5)
    return q.astype(">u2" if bits == 16 else "u1")


def write_frame(path, frame, bits: int = 8) -> None:
    """Write a (3, H, W) frame; ``.png`` is always 8-bit, PNM honours ``bits``."""
    path = Path(path)
    frame = np.asarray(frame)
    if frame.ndim != 3 or frame.shape[0] != 3:
        raise ContractError(f"expected (3, H, W) frame, got {frame.shape}")
    hwc = frame.transpose(1, 2, 0)
    if path.suffix.lower() == ".png":
        Image.fromarray(_quantize(hwc, 8), "RGB").save(path)
        return
    h, w = hwc.shape[:2]
    header = f"P6\n{w} {h}\n{(1 << bits) - 1}\n".encode()
    path.write_bytes(header + _quantize(hwc, bits).tobytes())


def write_pgm(path, image, bits: int = 8) -> None:
    """Write an (H, W) map in [0, 1] as a binary graymap."""
    image = np.asarray(image)
    h, w = image.shape
    header = f"P5\n{w} {h}\n{(1 << bits) - 1}\n".encode()
    Path(path).write_bytes(header + _quantize(image, bits).tobytes())


def mask_to_gray(pathway: np.ndarray, N: int) -> np.ndarray:
    """Spread pathway indices 0..N-1 over distinct gray levels in [0, 1]."""
    return pathway.astype(np.float64) / max(N - 1, 1)


def list_frames(directory) -> list[Path]:
    files = sorted(p for p in Path(directory).iterdir() if p.suffix.lower() in FRAME_SUFFIXES)
    if not files:
        raise ContractError(f"no frames found in {directory}")
    return files
