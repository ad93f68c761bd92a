"""Binary tensor files, checkpoint containers and scene manifests.

Tensor file layout (all integers little-endian)::

    "NSRT" | version u16 | dtype u8 (0=f32, 1=f64) | rank u8 | rank x u32 extents | payload

The payload is row-major with the last axis fastest. A spectral image
appends ``"WAVL"`` followed by ``extents[0]`` float64 wavelengths.
"""
from __future__ import annotations

import json
import os
import struct
from pathlib import Path
from typing import Optional, Union

import numpy as np

from nesr.core.tensor import Tensor
from nesr.data.scene import SpectralImage
from nesr.errors import FormatError

MAGIC = b"NSRT"
WAVL = b"WAVL"
CKPT_MAGIC = b"NSRK"
VERSION = 1
MAX_RANK = 8
_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}
_CODES = {np.dtype(np.float32): 0, np.dtype(np.float64): 1}

PathLike = Union[str, os.PathLike]


def header_size(rank: int) -> int:
    return 8 + 4 * rank


def encode_tensor(array, wavelengths=None) -> bytes:
    arr = np.asarray(array.data if isinstance(array, Tensor) else array)
    if arr.dtype not in _CODES:
        arr = arr.astype(np.float64)
    if arr.ndim > MAX_RANK:
        raise FormatError(f"rank {arr.ndim} exceeds the maximum of {MAX_RANK}", 7)
    if any(s < 1 or s >= 2 ** 32 for s in arr.shape):
        raise FormatError(f"extents {arr.shape} must be in [1, 2^32)", 8)
    head = MAGIC + struct.pack("<HBB", VERSION, _CODES[arr.dtype], arr.ndim)
    head += struct.pack(f"<{arr.ndim}I", *arr.shape)
    body = np.ascontiguousarray(arr, dtype=arr.dtype.newbyteorder("<")).tobytes()
    out = head + body
    if wavelengths is not None:
        wl = np.asarray(wavelengths, dtype="<f8")
        if arr.ndim == 0 or wl.size != arr.shape[0]:
            raise FormatError("wavelength block length must equal extent[0]", len(out))
        out += WAVL + wl.tobytes()
    return out


def decode_tensor(buf: bytes, offset: int = 0, allow_trailing: bool = False):
    """Decode one tensor from ``buf`` at ``offset``.

    Returns ``(array, wavelengths_or_None, end_offset)``.
    """
    view = memoryview(buf)
    n = len(view)
    if n - offset < 8:
        raise FormatError("truncated header", offset)
    if bytes(view[offset:offset + 4]) != MAGIC:
        raise FormatError("bad magic (expected b'NSRT')", offset)
    version, code, rank = struct.unpack_from("<HBB", view, offset + 4)
    if version != VERSION:
        raise FormatError(f"unsupported version {version}", offset + 4)
    if code not in _DTYPES:
        raise FormatError(f"unknown dtype code {code}", offset + 6)
    if rank > MAX_RANK:
        raise FormatError(f"rank {rank} exceeds the maximum of {MAX_RANK}", offset + 7)
    pos = offset + 8
    if n - pos < 4 * rank:
        raise FormatError("truncated extents", pos)
    shape = struct.unpack_from(f"<{rank}I", view, pos)
    if any(s == 0 for s in shape):
        raise FormatError(f"zero extent in {shape}", pos)
    pos += 4 * rank
    dtype = _DTYPES[code]
    nbytes = int(np.prod(shape, dtype=object)) * dtype.itemsize
    if n - pos < nbytes:
        raise FormatError(f"truncated payload: need {nbytes} bytes, have {n - pos}", pos)
    arr = np.frombuffer(view, dtype=dtype, count=nbytes // dtype.itemsize, offset=pos)
    arr = arr.reshape(shape).astype(dtype.newbyteorder("="), copy=True)
    pos += nbytes
    wavelengths = None
    if n - pos >= 4 and bytes(view[pos:pos + 4]) == WAVL:
        count = shape[0] if rank else 0
        if n - pos - 4 < 8 * count:
            raise FormatError("truncated wavelength block", pos + 4)
        wavelengths = np.frombuffer(view, dtype="<f8", count=count, offset=pos + 4).astype(np.float64)
        pos += 4 + 8 * count
    if not allow_trailing and pos != n:
        raise FormatError(f"{n - pos} unexpected trailing bytes", pos)
    return arr, wavelengths, pos


def _write_atomic(path: PathLike, data: bytes) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(data)
    os.replace(tmp, path)


def write_tensor(path: PathLike, array, dtype=None) -> None:
    arr = np.asarray(array.data if isinstance(array, Tensor) else array)
    if dtype is not None:
        arr = arr.astype(dtype)
    _write_atomic(path, encode_tensor(arr))


def read_tensor(path: PathLike) -> np.ndarray:
    arr, _, _ = decode_tensor(Path(path).read_bytes())
    return arr


def write_spectral_image(path: PathLike, img: SpectralImage, dtype=None) -> None:
    vol = img.volume if dtype is None else img.volume.astype(dtype)
    _write_atomic(path, encode_tensor(vol, img.wavelengths))


def read_spectral_image(path: PathLike) -> SpectralImage:
    arr, wl, _ = decode_tensor(Path(path).read_bytes())
    if wl is None:
        raise FormatError("file has no WAVL block; not a spectral image", len(arr.tobytes()))
    return SpectralImage(wl, arr)


# --- checkpoint container -------------------------------------------------------
#
#   "NSRK" | version u16 | u32 json length | json (UTF-8) | u32 count |
#   count x (u16 name length | name | u64 blob length | NSRT blob)

def write_container(path: PathLike, meta: dict, tensors: dict) -> None:
    js = json.dumps(meta, sort_keys=True).encode("utf-8")
    parts = [CKPT_MAGIC, struct.pack("<HI", VERSION, len(js)), js, struct.pack("<I", len(tensors))]
    for name in sorted(tensors):
        blob = encode_tensor(tensors[name])
        raw = name.encode("utf-8")
        parts += [struct.pack("<H", len(raw)), raw, struct.pack("<Q", len(blob)), blob]
    _write_atomic(path, b"".join(parts))


def read_container(path: PathLike) -> tuple[dict, dict]:
    buf = Path(path).read_bytes()
    n = len(buf)
    if buf[:4] != CKPT_MAGIC:
        raise FormatError("bad magic (expected b'NSRK')", 0)
    if n < 10:
        raise FormatError("truncated container header", 4)
    version, jlen = struct.unpack_from("<HI", buf, 4)
    if version != VERSION:
        raise FormatError(f"unsupported container version {version}", 4)
    pos = 10
    if n - pos < jlen + 4:
        raise FormatError("truncated metadata", pos)
    try:
        meta = json.loads(buf[pos:pos + jlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"metadata is not valid JSON: {exc}", pos) from exc
    pos += jlen
    (count,) = struct.unpack_from("<I", buf, pos)
    pos += 4
    tensors = {}
    for _ in range(count):
        if n - pos < 2:
            raise FormatError("truncated entry name", pos)
        (nlen,) = struct.unpack_from("<H", buf, pos)
        pos += 2
        name = buf[pos:pos + nlen].decode("utf-8")
        pos += nlen
        if n - pos < 8:
            raise FormatError("truncated entry length", pos)
        (blen,) = struct.unpack_from("<Q", buf, pos)
        pos += 8
        if n - pos < blen:
            raise FormatError(f"truncated tensor {name!r}", pos)
        arr, _, _ = decode_tensor(buf[pos:pos + blen])
        tensors[name] = arr
        pos += blen
    if pos != n:
        raise FormatError(f"{n - pos} unexpected trailing bytes", pos)
    return meta, tensors


# --- manifests ------------------------------------------------------------------

def write_manifest(path: PathLike, manifest: dict) -> None:
    scenes = sorted(manifest.get("scenes", []), key=lambda s: s["id"])
    doc = dict(manifest, scenes=scenes)
    _write_atomic(path, (json.dumps(doc, indent=2, sort_keys=True) + "\n").encode("utf-8"))


def read_manifest(path: PathLike) -> dict:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    for key in ("dataset", "split", "scenes"):
        if key not in doc:
            raise FormatError(f"manifest missing field {key!r}", 0)
    return doc


def resolve(manifest_path: PathLike, rel: str) -> Path:
    p = Path(rel)
    return p if p.is_absolute() else Path(manifest_path).parent / p


def write_json(path: PathLike, doc: dict) -> None:
    _write_atomic(path, (json.dumps(doc, indent=2, sort_keys=True) + "\n").encode("utf-8"))

