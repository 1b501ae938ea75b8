"""Binary PGM (P5) / PPM (P6) reading and writing, 8-bit only."""
from __future__ import annotations

import os
from pathlib import Path

import numpy as np


class PNMError(ValueError):
    pass


def _tokens(data: bytes, count: int) -> tuple[list[bytes], int]:
    # header fields separated by whitespace, '#' comments run to end of line
    out: list[bytes] = []
    pos = 0
    n = len(data)
    while len(out) < count:
        while pos < n and data[pos:pos + 1].isspace():
            pos += 1
        if pos < n and data[pos:pos + 1] == b"#":
            while pos < n and data[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < n and not data[pos:pos + 1].isspace() and data[pos:pos + 1] != b"#":
            pos += 1
        if start == pos:
            raise PNMError("truncated header")
        out.append(data[start:pos])
    # exactly one whitespace byte separates maxval from the raster
    return out, pos + 1


def decode_pnm(data: bytes) -> np.ndarray:
    """Decode P5/P6 bytes to uint8 ``(h, w)`` or ``(h, w, 3)``."""
    fields, offset = _tokens(data, 4)
    magic = fields[0]
    if magic not in (b"P5", b"P6"):
        raise PNMError(f"unsupported magic {magic!r}")
    try:
        w, h, maxval = (int(f) for f in fields[1:])
    except ValueError as exc:
        raise PNMError("non-integer header field") from exc
    if w <= 0 or h <= 0:
        raise PNMError(f"bad dimensions {w}x{h}")
    if maxval != 255:
        raise PNMError(f"only maxval 255 is supported, got {maxval}")
    c = 1 if magic == b"P5" else 3
    need = w * h * c
    raster = data[offset:offset + need]
    if len(raster) != need:
        raise PNMError(f"raster truncated: {len(raster)} of {need} bytes")
    arr = np.frombuffer(raster, dtype=np.uint8).copy()
    return arr.reshape(h, w) if c == 1 else arr.reshape(h, w, 3)


def encode_pnm(arr: np.ndarray) -> bytes:
    arr = np.asarray(arr)
    if arr.dtype != np.uint8:
        raise PNMError(f"expected uint8 pixels, got {arr.dtype}")
    if arr.ndim == 3 and arr.shape[2] == 1:
        arr = arr[:, :, 0]
    if arr.ndim == 2:
        magic = b"P5"
    elif arr.ndim == 3 and arr.shape[2] == 3:
        magic = b"P6"
    else:
        raise PNMError(f"cannot store shape {arr.shape} as PGM/PPM")
    h, w = arr.shape[:2]
    return magic + f"\n{w} {h}\n255\n".encode() + np.ascontiguousarray(arr).tobytes()


def read_pnm(path: str | os.PathLike) -> np.ndarray:
    try:
        return decode_pnm(Path(path).read_bytes())
    except PNMError as exc:
        raise PNMError(f"{path}: {exc}") from None


def write_pnm(path: str | os.PathLike, arr: np.ndarray) -> None:
    Path(path).write_bytes(encode_pnm(arr))


def to_uint8(img: np.ndarray) -> np.ndarray:
    return np.round(np.clip(img, 0.0, 1.0) * 255.0).astype(np.uint8)


def read_image(path: str | os.PathLike) -> np.ndarray:
    """Float32 ``(h, w, c)`` image in [0, 1]."""
    arr = read_pnm(path)
    if arr.ndim == 2:
        arr = arr[:, :, None]
    return arr.astype(np.float32) / np.float32(255.0)


def write_image(path: str | os.PathLike, img: np.ndarray) -> None:
    write_pnm(path, to_uint8(img))


def read_mask(path: str | os.PathLike) -> np.ndarray:
    """P5 mask: 255 -> 1 (preserved), 0 -> 0 (edit). Other values are rejected."""
    arr = read_pnm(path)
    if arr.ndim != 2:
        raise PNMError(f"{path}: mask must be a P5 greyscale image")
    bad = (arr != 0) & (arr != 255)
    if bad.any():
        y, x = np.argwhere(bad)[0]
        raise PNMError(f"{path}: mask value {arr[y, x]} at ({y}, {x}) is neither 0 nor 255")
    return (arr == 255).astype(np.uint8)


def write_mask(path: str | os.PathLike, mask: np.ndarray) -> None:
    write_pnm(path, np.where(np.asarray(mask) > 0, 255, 0).astype(np.uint8))
