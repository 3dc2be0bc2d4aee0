"""PNG textures and the named-tensor container used for checkpoints.

Container layout (all little-endian)::

    magic   b"TDNT"
    version u32 (= 1)
    count   u32
    count x entry:
        name_len u16, name utf-8
        dtype    u8   (0 float32, 1 float64, 2 int64)
        ndim     u8,  shape u64 * ndim
        nbytes   u64, raw data
"""
from __future__ import annotations

import logging
import struct
from pathlib import Path

import numpy as np
import torch
from PIL import Image

from .exceptions import FormatError

logger = logging.getLogger(__name__)

MAGIC = b"TDNT"
VERSION = 1
_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8"), 2: np.dtype("<i8")}
_CODES = {np.dtype("float32"): 0, np.dtype("float64"): 1, np.dtype("int64"): 2}


def write_tensors(tensors, path) -> None:
    out = bytearray(MAGIC)
    out += struct.pack("<II", VERSION, len(tensors))
    for name, t in tensors.items():
        arr = t.detach().cpu().numpy() if isinstance(t, torch.Tensor) else np.asarray(t)
        code = _CODES.get(arr.dtype)
        if code is None:
            raise TypeError(f"unsupported dtype {arr.dtype} for {name!r}")
        raw = np.ascontiguousarray(arr, dtype=_DTYPES[code]).tobytes()
        bname = name.encode("utf-8")
        out += struct.pack("<H", len(bname)) + bname
        out += struct.pack("<BB", code, arr.ndim)
        out += struct.pack(f"<{arr.ndim}Q", *arr.shape)
        out += struct.pack("<Q", len(raw)) + raw
    Path(path).write_bytes(bytes(out))


def read_tensors(path) -> dict:
    data = Path(path).read_bytes()
    if data[:4] != MAGIC:
        raise FormatError(f"{path}: not a tensor container")
    try:
        version, count = struct.unpack_from("<II", data, 4)
        if version != VERSION:
            raise FormatError(f"{path}: unsupported container version {version}")
        pos = 12
        out = {}
        for _ in range(count):
            (n,) = struct.unpack_from("<H", data, pos)
            pos += 2
            name = data[pos:pos + n].decode("utf-8")
            pos += n
            code, ndim = struct.unpack_from("<BB", data, pos)
            pos += 2
            shape = struct.unpack_from(f"<{ndim}Q", data, pos)
            pos += 8 * ndim
            (nbytes,) = struct.unpack_from("<Q", data, pos)
            pos += 8
            if pos + nbytes > len(data):
                raise FormatError(f"{path}: truncated entry {name!r}")
            arr = np.frombuffer(data[pos:pos + nbytes], dtype=_DTYPES[code]).reshape(shape)
            pos += nbytes
            out[name] = torch.from_numpy(arr.copy())
    except (struct.error, KeyError, ValueError) as exc:
        raise FormatError(f"{path}: corrupt tensor container ({exc})") from None
    return out


def read_texture(path) -> np.ndarray:
    """Load a PNG as an H x W x 3 float64 array in [0, 1]."""
    path = Path(path)
    try:
        img = Image.open(path)
        img.load()
    except (OSError, ValueError) as exc:
        raise FormatError(f"{path}: cannot read image ({exc})") from None
    if img.format != "PNG":
        raise FormatError(f"{path}: only PNG textures are supported (got {img.format})")
    if img.mode in ("I;16", "I;16B", "I;16L", "I"):
        logger.warning("%s: 16-bit image downconverted to 8-bit", path)
        arr = np.asarray(img, dtype=np.float64) / 65535.0
        arr = np.round(arr * 255) / 255
        return np.repeat(arr[:, :, None], 3, axis=2)
    arr = np.asarray(img.convert("RGB"), dtype=np.float64) / 255.0
    return arr


def to_uint8(img) -> np.ndarray:
    """Round-to-nearest 8-bit conversion of an HWC or CHW [0, 1] image."""
    if isinstance(img, torch.Tensor):
        img = img.detach().cpu().numpy()
    img = np.asarray(img, dtype=np.float64)
    if img.ndim == 3 and img.shape[0] == 3 and img.shape[2] != 3:
        img = img.transpose(1, 2, 0)
    return np.clip(np.round(img * 255.0), 0, 255).astype(np.uint8)


def write_png(img, path) -> None:
    Image.fromarray(to_uint8(img)).save(path, format="PNG")
