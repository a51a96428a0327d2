"""Binary array-record files used for checkpoints and raw tensor dumps.

Layout::

    b"ADVSTCKPT v1\\n"
    repeated until EOF:
        uint32 LE   name length in bytes
        bytes       name, UTF-8
        uint32 LE   rank
        int64 LE    extents[rank]
        float32 LE  values, row-major
"""

import struct

import numpy as np

from .errors import FormatError

HEADER = b"ADVSTCKPT v1\n"


def encode_arrays(arrays):
    parts = [HEADER]
    for name, arr in arrays.items():
        raw = name.encode("utf-8")
        arr = np.asarray(arr)
        parts.append(struct.pack("<I", len(raw)))
        parts.append(raw)
        parts.append(struct.pack("<I", arr.ndim))
        parts.append(np.asarray(arr.shape, dtype="<i8").tobytes())
        parts.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    return b"".join(parts)


def decode_arrays(blob):
    if not blob.startswith(HEADER):
        raise FormatError("missing ADVSTCKPT v1 header", offset=0)
    arrays = {}
    pos = len(HEADER)
    n = len(blob)
    while pos < n:
        start = pos
        if pos + 4 > n:
            raise FormatError("truncated name length", offset=pos)
        (name_len,) = struct.unpack_from("<I", blob, pos)
        pos += 4
        if pos + name_len + 4 > n:
            raise FormatError("truncated record name", offset=pos)
        try:
            name = blob[pos:pos + name_len].decode("utf-8")
        except UnicodeDecodeError:
            raise FormatError("record name is not valid UTF-8", offset=pos) from None
        pos += name_len
        (rank,) = struct.unpack_from("<I", blob, pos)
        pos += 4
        if pos + 8 * rank > n:
            raise FormatError(f"truncated extents for {name!r}", offset=pos)
        shape = tuple(int(v) for v in np.frombuffer(blob, dtype="<i8", count=rank, offset=pos))
        if any(s < 0 for s in shape):
            raise FormatError(f"negative extent for {name!r}", offset=pos)
        pos += 8 * rank
        count = int(np.prod(shape)) if shape else 1
        if pos + 4 * count > n:
            raise FormatError(f"truncated values for {name!r} (record starts at {start})", offset=pos)
        arrays[name] = np.frombuffer(blob, dtype="<f4", count=count, offset=pos).reshape(shape).astype(np.float32)
        pos += 4 * count
    return arrays


def save_arrays(path, arrays):
    with open(path, "wb") as fh:
        fh.write(encode_arrays(arrays))


def load_arrays(path):
    with open(path, "rb") as fh:
        return decode_arrays(fh.read())
