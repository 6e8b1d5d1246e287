"""Writer for the BCAE embedding-file format.

Deliberately independent of the consumer package: this module serializes
the byte layout itself (32-byte little-endian header, float32 records,
optional int32 labels), and compatibility is proven by loading the output
with the consumer's tooling, not by sharing code.

Layout: magic "BCAE" | u16 version | u16 flags (bit 0 = labeled) | u32 d |
u32 K | u64 count | 8 reserved bytes | count * (d * f32 [+ i32 label]).
"""

from __future__ import annotations

import struct

import numpy as np

MAGIC = b"BCAE"
VERSION = 1
FLAG_LABELED = 0x0001

_HEADER = struct.Struct("<4sHHIIQ8s")


def write_bcae(path, vectors, labels=None, num_classes: int = 0) -> None:
    arr = np.ascontiguousarray(np.asarray(vectors), dtype="<f4")
    if arr.ndim != 2 or arr.shape[0] == 0:
        raise ValueError("vectors must be a nonempty (count, d) array")
    if not np.all(np.isfinite(arr)):
        raise ValueError("refusing to write non-finite embeddings")
    count, dim = arr.shape
    flags = 0
    if labels is not None:
        lab = np.asarray(labels, dtype="<i4")
        if lab.shape != (count,):
            raise ValueError("labels must align one-to-one with vectors")
        if num_classes <= 0:
            raise ValueError("labeled files need num_classes > 0")
        if lab.min(initial=0) < -1 or lab.max(initial=-1) >= num_classes:
            raise ValueError(f"labels must lie in [-1, {num_classes})")
        flags |= FLAG_LABELED

    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, VERSION, flags, dim, num_classes, count, b"\0" * 8))
        if labels is None:
            fh.write(arr.tobytes())
        else:
            rec = np.empty(count, dtype=[("v", "<f4", (dim,)), ("label", "<i4")])
            rec["v"] = arr
            rec["label"] = lab
            fh.write(rec.tobytes())
