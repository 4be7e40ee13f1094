"""Named-array checkpoint archive.

Layout (all integers little-endian)::

    magic   8 bytes  b"REINEAD\\0"
    version u32
    meta    u32 length + UTF-8 JSON (sorted keys)
    count   u32
    count x { name: u16 length + UTF-8 bytes
              dtype: u8 (0 = float32, 1 = int32)
              ndim: u8, dims: ndim x u32
              payload: prod(dims) little-endian elements }
    crc32   u32 over every preceding byte

Arrays are written in sorted-name order so identical content always yields
identical bytes.
"""
from __future__ import annotations

import io
import json
import struct
import zlib
from pathlib import Path

import numpy as np

MAGIC = b"REINEAD\0"
VERSION = 1
_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<i4")}
_CODES = {np.dtype("<f4"): 0, np.dtype("<i4"): 1}


class ArchiveError(ValueError):
    pass


class UnsupportedVersion(ArchiveError):
    pass


def _coerce(name: str, arr) -> np.ndarray:
    arr = np.asarray(arr)
    if np.issubdtype(arr.dtype, np.floating):
        return arr.astype("<f4")
    if np.issubdtype(arr.dtype, np.integer) or arr.dtype == bool:
        if arr.size and (arr.min() < -(2**31) or arr.max() >= 2**31):
            raise ArchiveError(f"{name}: integer values exceed int32")
        return arr.astype("<i4")
    raise ArchiveError(f"{name}: unsupported dtype {arr.dtype}")


def dumps(arrays: dict[str, np.ndarray], meta: dict | None = None) -> bytes:
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<I", VERSION))
    meta_bytes = json.dumps(meta or {}, sort_keys=True).encode()
    buf.write(struct.pack("<I", len(meta_bytes)))
    buf.write(meta_bytes)
    buf.write(struct.pack("<I", len(arrays)))
    for name in sorted(arrays):
        arr = _coerce(name, arrays[name])
        nb = name.encode()
        buf.write(struct.pack("<H", len(nb)))
        buf.write(nb)
        buf.write(struct.pack("<BB", _CODES[arr.dtype], arr.ndim))
        buf.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        buf.write(np.ascontiguousarray(arr).tobytes())
    body = buf.getvalue()
    return body + struct.pack("<I", zlib.crc32(body) & 0xFFFFFFFF)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.data):
            raise ArchiveError(f"truncated archive: need {n} bytes for {what} at offset {self.pos}, "
                               f"only {len(self.data) - self.pos} left")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str, what: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))


def loads(data: bytes) -> tuple[dict[str, np.ndarray], dict]:
    body = data[:-4] if len(data) >= 4 else b""
    r = _Reader(body)
    magic = r.take(len(MAGIC), "magic")
    if magic != MAGIC:
        raise ArchiveError(f"bad magic {magic!r} at offset 0")
    (version,) = r.unpack("<I", "version")
    if version > VERSION:
        raise UnsupportedVersion(f"archive version {version} is newer than supported version {VERSION}")
    if version < 1:
        raise UnsupportedVersion(f"archive version {version} is not supported")
    (mlen,) = r.unpack("<I", "metadata length")
    start = r.pos
    try:
        meta = json.loads(r.take(mlen, "metadata").decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ArchiveError(f"unreadable metadata at offset {start}: {exc}") from None
    (count,) = r.unpack("<I", "array count")
    arrays: dict[str, np.ndarray] = {}
    for _ in range(count):
        at = r.pos
        (nlen,) = r.unpack("<H", "name length")
        name = r.take(nlen, "name").decode()
        code, ndim = r.unpack("<BB", f"header of {name!r}")
        if code not in _DTYPES:
            raise ArchiveError(f"unknown dtype code {code} for {name!r} at offset {at}")
        dims = r.unpack(f"<{ndim}I", f"shape of {name!r}")
        dt = _DTYPES[code]
        n = int(np.prod(dims, dtype=np.int64)) if ndim else 1
        payload = r.take(n * dt.itemsize, f"payload of {name!r}")
        arrays[name] = np.frombuffer(payload, dtype=dt).reshape(dims).copy()
    if r.pos != len(body):
        raise ArchiveError(f"{len(body) - r.pos} trailing bytes at offset {r.pos}")
    (crc,) = struct.unpack("<I", data[-4:])
    if zlib.crc32(body) & 0xFFFFFFFF != crc:
        raise ArchiveError(f"checksum mismatch over bytes [0, {len(body)}): archive is corrupted")
    return arrays, meta


def save(path, arrays: dict[str, np.ndarray], meta: dict | None = None) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_bytes(dumps(arrays, meta))


def load(path) -> tuple[dict[str, np.ndarray], dict]:
    return loads(Path(path).read_bytes())
