"""Single-file binary container for named float64 parameter blocks.

Layout (all little-endian):
    magic   8 bytes  b"CBTNSR01"
    version u32
    count   u32
    blocks, sorted by name:
        name_len u16, name utf-8
        ndim     u8,  dims u32 * ndim
        payload  float64 * prod(dims)
"""

import hashlib
import struct

import numpy as np

MAGIC = b"CBTNSR01"
VERSION = 1


class CheckpointError(ValueError):
    pass


def serialize_blocks(blocks):
    """dict[str, array-like] -> bytes in canonical (name-sorted) order."""
    parts = [MAGIC, struct.pack("<II", VERSION, len(blocks))]
    for name in sorted(blocks):
        # note: ascontiguousarray would promote 0-d blocks to 1-d
        arr = np.asarray(blocks[name], dtype="<f8")
        if arr.ndim and not arr.flags["C_CONTIGUOUS"]:
            arr = np.ascontiguousarray(arr)
        enc = name.encode("utf-8")
        parts.append(struct.pack("<H", len(enc)))
        parts.append(enc)
        parts.append(struct.pack("<B", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(arr.tobytes())
    return b"".join(parts)


def deserialize_blocks(buf):
    if buf[:8] != MAGIC:
        raise CheckpointError("bad magic bytes")
    version, count = struct.unpack_from("<II", buf, 8)
    if version != VERSION:
        raise CheckpointError(f"unsupported container version {version}")
    off = 16
    blocks = {}
    for _ in range(count):
        (nlen,) = struct.unpack_from("<H", buf, off)
        off += 2
        name = buf[off:off + nlen].decode("utf-8")
        off += nlen
        (ndim,) = struct.unpack_from("<B", buf, off)
        off += 1
        shape = struct.unpack_from(f"<{ndim}I", buf, off)
        off += 4 * ndim
        n = int(np.prod(shape)) if ndim else 1
        arr = np.frombuffer(buf, dtype="<f8", count=n, offset=off).reshape(shape)
        off += 8 * n
        blocks[name] = arr.astype(np.float64)
    if off != len(buf):
        raise CheckpointError("trailing bytes after last block")
    return blocks


def save_blocks(path, blocks):
    data = serialize_blocks(blocks)
    with open(path, "wb") as fh:
        fh.write(data)


def load_blocks(path):
    with open(path, "rb") as fh:
        return deserialize_blocks(fh.read())


def blocks_digest(blocks):
    """sha256 of the canonical serialization; stable across reload cycles."""
    return hashlib.sha256(serialize_blocks(blocks)).hexdigest()
