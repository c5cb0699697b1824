"""Binary tensor checkpoints (FMV2).

Layout: magic ``b"FMV2"``, version u16 little-endian, then entries back
to back until end of file. Each entry is: name length u16, name bytes
(utf-8), rank u8, one u32 per dimension, then the row-major payload in
little-endian floats. Version 1 stores float32 payloads (compact,
storage-only precision); version 2 stores float64 and round-trips
training parameters bitwise. Entries are written in sorted name order
so identical parameter sets produce identical files.

A checkpoint may be prefixed with a single text header line (utf-8,
newline-terminated, must not itself begin with the magic) carrying
caller metadata such as a serialized model config.
"""

from __future__ import annotations

import struct

import numpy as np

MAGIC = b"FMV2"
VERSION_F32 = 1
VERSION_F64 = 2

_DTYPES = {"f32": (VERSION_F32, "<f4"), "f64": (VERSION_F64, "<f8")}
_BY_VERSION = {v: np_dtype for v, np_dtype in _DTYPES.values()}


class CheckpointError(ValueError):
    """Malformed checkpoint: bad magic, unknown version, or truncation."""


def dump_bytes(named: dict[str, np.ndarray], dtype: str = "f64") -> bytes:
    if dtype not in _DTYPES:
        raise ValueError(f"dtype must be one of {sorted(_DTYPES)}, got {dtype!r}")
    version, np_dtype = _DTYPES[dtype]
    chunks = [MAGIC, struct.pack("<H", version)]
    for name in sorted(named):
        arr = np.asarray(named[name])
        raw = name.encode("utf-8")
        if not 1 <= len(raw) <= 0xFFFF:
            raise ValueError(f"tensor name length {len(raw)} outside [1, 65535]: {name!r}")
        if arr.ndim > 0xFF:
            raise ValueError(f"tensor rank {arr.ndim} exceeds 255: {name!r}")
        chunks.append(struct.pack("<H", len(raw)))
        chunks.append(raw)
        chunks.append(struct.pack("<B", arr.ndim))
        for d in arr.shape:
            if d > 0xFFFFFFFF:
                raise ValueError(f"dimension {d} exceeds u32 range: {name!r}")
            chunks.append(struct.pack("<I", d))
        chunks.append(np.ascontiguousarray(arr, dtype=np_dtype).tobytes())
    return b"".join(chunks)


def _need(buf: bytes, off: int, n: int, what: str) -> None:
    if off + n > len(buf):
        raise CheckpointError(
            f"truncated checkpoint: need {n} bytes for {what} at offset {off}, file ends at {len(buf)}"
        )


def parse_bytes(buf: bytes) -> dict[str, np.ndarray]:
    """Parse an FMV2 blob. Arrays come back as float64 regardless of the
    stored precision (float32 payloads widen exactly)."""
    _need(buf, 0, len(MAGIC) + 2, "magic and version")
    if buf[: len(MAGIC)] != MAGIC:
        raise CheckpointError(f"bad magic: expected {MAGIC!r}, got {buf[: len(MAGIC)]!r}")
    off = len(MAGIC)
    (version,) = struct.unpack_from("<H", buf, off)
    off += 2
    if version not in _BY_VERSION:
        raise CheckpointError(f"unknown checkpoint version {version}")
    np_dtype = np.dtype(_BY_VERSION[version])
    out: dict[str, np.ndarray] = {}
    while off < len(buf):
        _need(buf, off, 2, "name length")
        (name_len,) = struct.unpack_from("<H", buf, off)
        off += 2
        _need(buf, off, name_len, "name")
        name = buf[off : off + name_len].decode("utf-8")
        off += name_len
        _need(buf, off, 1, f"rank of {name!r}")
        rank = buf[off]
        off += 1
        _need(buf, off, 4 * rank, f"dims of {name!r}")
        dims = struct.unpack_from(f"<{rank}I", buf, off) if rank else ()
        off += 4 * rank
        count = 1
        for d in dims:
            count *= d
        nbytes = count * np_dtype.itemsize
        _need(buf, off, nbytes, f"payload of {name!r}")
        if name in out:
            raise CheckpointError(f"duplicate tensor name {name!r}")
        arr = np.frombuffer(buf, dtype=np_dtype, count=count, offset=off)
        # astype copies out of the read-only buffer and keeps rank-0 shapes intact
        out[name] = arr.astype(np.float64).reshape(dims)
        off += nbytes
    return out


def save_tensors(path, named: dict[str, np.ndarray], dtype: str = "f64") -> None:
    with open(path, "wb") as fh:
        fh.write(dump_bytes(named, dtype))


def load_tensors(path) -> dict[str, np.ndarray]:
    with open(path, "rb") as fh:
        return parse_bytes(fh.read())


def dump_with_header(header: str, named: dict[str, np.ndarray], dtype: str = "f64") -> bytes:
    """One-line text header followed by the FMV2 blob."""
    if "\n" in header:
        raise ValueError("header must be a single line")
    line = header.encode("utf-8") + b"\n"
    if line.startswith(MAGIC):
        raise ValueError("header must not begin with the checkpoint magic")
    return line + dump_bytes(named, dtype)


def parse_with_header(buf: bytes) -> tuple[str, dict[str, np.ndarray]]:
    if buf.startswith(MAGIC):
        raise CheckpointError("checkpoint has no header line")
    nl = buf.find(b"\n")
    if nl < 0:
        raise CheckpointError("truncated checkpoint: header line never ends")
    return buf[:nl].decode("utf-8"), parse_bytes(buf[nl + 1 :])


def save_with_header(path, header: str, named: dict[str, np.ndarray], dtype: str = "f64") -> None:
    with open(path, "wb") as fh:
        fh.write(dump_with_header(header, named, dtype))


def load_with_header(path) -> tuple[str, dict[str, np.ndarray]]:
    with open(path, "rb") as fh:
        buf = fh.read()
    return parse_with_header(buf)
