"""Flat binary parameter container plus a plain-text manifest.

Binary layout (little-endian)::

    b"GNRLPRM1"  uint32 count
    repeated count times:
        uint16 name_len, name (utf-8), uint8 ndim, uint64 dims[ndim], float64 values[prod(dims)]

The manifest lists one ``name<TAB>shape`` line per parameter, e.g.
``core.edge.out.w\t15x30``.
"""

import struct
from pathlib import Path

import numpy as np

MAGIC = b"GNRLPRM1"


def _shape_str(shape):
    return "x".join(str(d) for d in shape) if shape else "scalar"


def save_params(params, path):
    """Write ``{name: array-like}`` to ``path`` and ``path + '.manifest'``."""
    path = Path(path)
    chunks = [MAGIC, struct.pack("<I", len(params))]
    lines = []
    for name, value in params.items():
        arr = np.asarray(getattr(value, "data", value), dtype="<f8")
        encoded = name.encode("utf-8")
        chunks.append(struct.pack("<H", len(encoded)))
        chunks.append(encoded)
        chunks.append(struct.pack("<B", arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        chunks.append(arr.tobytes(order="C"))
        lines.append(f"{name}\t{_shape_str(arr.shape)}")
    path.write_bytes(b"".join(chunks))
    manifest_path(path).write_text("\n".join(lines) + "\n")


def manifest_path(path):
    path = Path(path)
    return path.with_name(path.name + ".manifest")


def load_params(path):
    """Read a container written by :func:`save_params` into ``{name: ndarray}``."""
    blob = Path(path).read_bytes()
    if blob[:len(MAGIC)] != MAGIC:
        raise ValueError(f"{path}: not a parameter container")
    pos = len(MAGIC)
    (count,) = struct.unpack_from("<I", blob, pos)
    pos += 4
    out = {}
    for _ in range(count):
        (nlen,) = struct.unpack_from("<H", blob, pos)
        pos += 2
        name = blob[pos:pos + nlen].decode("utf-8")
        pos += nlen
        (ndim,) = struct.unpack_from("<B", blob, pos)
        pos += 1
        shape = struct.unpack_from(f"<{ndim}Q", blob, pos)
        pos += 8 * ndim
        n = int(np.prod(shape)) if ndim else 1
        values = np.frombuffer(blob, dtype="<f8", count=n, offset=pos)
        pos += 8 * n
        out[name] = values.reshape(shape).astype(np.float64)
    if pos != len(blob):
        raise ValueError(f"{path}: trailing bytes in parameter container")
    return out


def read_manifest(path):
    """Parse a manifest into ``{name: shape tuple}``."""
    shapes = {}
    for line in Path(path).read_text().splitlines():
        if not line.strip():
            continue
        name, shape = line.split("\t")
        shapes[name] = () if shape == "scalar" else tuple(int(d) for d in shape.split("x"))
    return shapes
