"""Keyed binary checkpoint container used for model parameters.

Layout (little-endian): magic "VCKP", u32 version, u32 entry count; then per
entry u16 name length, utf-8 name, u8 dtype code (0 = f32, 1 = f64), u8 rank,
u32 dims, raw payload.
"""

import struct

import numpy as np

from .features import FormatError

MAGIC = b"VCKP"

_DTYPES = {0: "<f4", 1: "<f8"}
_CODES = {"<f4": 0, "<f8": 1}


def write_keyed(path, entries, version=1):
    """Write an ordered dict of name -> ndarray (f32 or f64)."""
    out = bytearray()
    out += MAGIC
    out += struct.pack("<II", version, len(entries))
    for name, arr in entries.items():
        arr = np.asarray(arr)
        code = 0 if arr.dtype == np.float32 else 1
        arr = arr.astype(_DTYPES[code])
        name_b = name.encode("utf-8")
        out += struct.pack("<H", len(name_b))
        out += name_b
        out += struct.pack("<BB", code, arr.ndim)
        out += struct.pack("<%dI" % arr.ndim, *arr.shape)
        out += arr.tobytes()
    with open(path, "wb") as fh:
        fh.write(bytes(out))


def read_keyed(path, expect_version=None):
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < 12 or data[:4] != MAGIC:
        raise FormatError("bad checkpoint magic in %r" % str(path))
    version, count = struct.unpack_from("<II", data, 4)
    if expect_version is not None and version != expect_version:
        raise FormatError("checkpoint version %d, expected %d"
                          % (version, expect_version))
    off = 12
    entries = {}
    try:
        for _ in range(count):
            (name_len,) = struct.unpack_from("<H", data, off)
            off += 2
            name = data[off:off + name_len].decode("utf-8")
            off += name_len
            code, rank = struct.unpack_from("<BB", data, off)
            off += 2
            shape = struct.unpack_from("<%dI" % rank, data, off)
            off += 4 * rank
            dtype = _DTYPES[code]
            n = int(np.prod(shape)) if rank else 1
            size = n * int(dtype[-1])
            if off + size > len(data):
                raise FormatError("truncated checkpoint at byte %d" % len(data))
            entries[name] = np.frombuffer(data, dtype, n, off).reshape(shape).copy()
            off += size
    except struct.error as exc:
        raise FormatError("truncated checkpoint at byte %d" % off) from exc
    return version, entries
