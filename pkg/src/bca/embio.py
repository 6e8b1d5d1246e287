"""Bit-exact file formats: embedding streams, state checkpoints, CSV exports.

Two binary formats, both little-endian with float32 payloads:

Embedding file ("BCAE"), 32-byte header then ``count`` records::

    offset  size  field
    0       4     magic  b"BCAE"
    4       2     version (currently 1)
    6       2     flags   (bit 0: a signed 32-bit label follows each record)
    8       4     d       embedding dimension
    12      4     K       number of classes (label space; 0 allowed if unlabeled)
    16      8     count   number of records
    24      8     reserved (zero)
    32      --    count * (4*d [+ 4]) payload bytes

State checkpoint ("BCAS"), 56-byte header then the four state sections::

    offset  size  field
    0       4     magic  b"BCAS"
    4       2     version (currently 1)
    6       2     reserved (zero)
    8       4     M   num_class_embeddings
    12      4     K   num_classes
    16      4     d   embedding_dim
    20      4     reserved (zero)
    24      8     n1  init_count_embedding
    32      8     n2  init_count_prior
    40      8     tau          (float64)
    48      8     temperature  (float64)
    56      --    U (M*d float32) | V (M*K float32) | C1 (M uint64) | C2 (M uint64)

Loaders reject what they cannot trust and never repair data: bad magic,
unknown version or flags, truncation, non-finite floats, and checkpoint
states violating adapter invariants each raise their own exception type.
Readers may run concurrently on distinct files; a writer needs exclusive
access to its output path.
"""

from __future__ import annotations

import csv
import json
import os
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import (
    AdapterConfig,
    AdapterState,
    InvariantViolationError,
    ValidationError,
)

__all__ = [
    "FormatError",
    "BadMagicError",
    "UnsupportedVersionError",
    "TruncatedFileError",
    "NonFiniteDataError",
    "EmbeddingHeader",
    "EMBEDDINGS_MAGIC",
    "STATE_MAGIC",
    "FORMAT_VERSION",
    "write_embeddings",
    "read_embeddings",
    "save_state",
    "load_state",
    "state_section_sizes",
    "export_prior_csv",
    "write_metrics_csv",
    "write_summary_csv",
    "write_json_sidecar",
]

EMBEDDINGS_MAGIC = b"BCAE"
STATE_MAGIC = b"BCAS"
FORMAT_VERSION = 1

_FLAG_LABELED = 0x0001

_EMB_HEADER = struct.Struct("<4sHHIIQ8s")
_STATE_HEADER = struct.Struct("<4sHHIIIIQQdd")


class FormatError(Exception):
    """Base class for malformed or unreadable files."""


class BadMagicError(FormatError):
    pass


class UnsupportedVersionError(FormatError):
    pass


class TruncatedFileError(FormatError):
    pass


class NonFiniteDataError(FormatError):
    pass


@dataclass(frozen=True)
class EmbeddingHeader:
    version: int
    labeled: bool
    dim: int
    num_classes: int
    count: int


def _read_exact(fh, size: int, offset: int, what: str) -> bytes:
    data = fh.read(size)
    if len(data) != size:
        raise TruncatedFileError(
            f"{what} truncated: expected {size} bytes at offset {offset}, "
            f"file ends at byte {offset + len(data)}"
        )
    return data


def write_embeddings(path, vectors, labels=None, num_classes: int = 0) -> None:
    """Write an embedding file; records are float32 rows plus optional labels."""
    arr = np.ascontiguousarray(np.asarray(vectors), dtype="<f4")
    if arr.ndim != 2 or arr.shape[0] == 0 or arr.shape[1] == 0:
        raise ValidationError("vectors must be a nonempty (count, d) array")
    if not np.all(np.isfinite(arr)):
        raise ValidationError("refusing to write non-finite embeddings")
    count, dim = arr.shape
    flags = 0
    if labels is not None:
        lab = np.asarray(labels, dtype="<i4")
        if lab.shape != (count,):
            raise ValidationError(
                f"labels must have shape ({count},), got {lab.shape}"
            )
        if num_classes <= 0:
            raise ValidationError("labeled files need num_classes > 0")
        if lab.min(initial=0) < -1 or lab.max(initial=-1) >= num_classes:
            raise ValidationError(
                f"labels must lie in [-1, {num_classes}), "
                f"got range [{lab.min()}, {lab.max()}]"
            )
        flags |= _FLAG_LABELED

    header = _EMB_HEADER.pack(
        EMBEDDINGS_MAGIC, FORMAT_VERSION, flags, dim, num_classes, count, b"\0" * 8
    )
    with open(path, "wb") as fh:
        fh.write(header)
        if labels is None:
            fh.write(arr.tobytes())
        else:
            rec = np.empty(count, dtype=[("v", "<f4", (dim,)), ("label", "<i4")])
            rec["v"] = arr
            rec["label"] = lab
            fh.write(rec.tobytes())


def read_embeddings(path) -> tuple[EmbeddingHeader, np.ndarray, np.ndarray | None]:
    """Read an embedding file back as (header, float32 vectors, labels or None)."""
    with open(path, "rb") as fh:
        raw = _read_exact(fh, _EMB_HEADER.size, 0, "embedding header")
        magic, version, flags, dim, num_classes, count, _ = _EMB_HEADER.unpack(raw)
        if magic != EMBEDDINGS_MAGIC:
            raise BadMagicError(f"not an embedding file: magic {magic!r}")
        if version != FORMAT_VERSION:
            raise UnsupportedVersionError(f"unsupported embedding file version {version}")
        if flags & ~_FLAG_LABELED:
            raise FormatError(f"unknown flag bits 0x{flags:04x}")
        if dim == 0 or count == 0:
            raise FormatError("header declares an empty file (d or count is 0)")
        labeled = bool(flags & _FLAG_LABELED)
        rec_size = 4 * dim + (4 if labeled else 0)
        expected = rec_size * count
        remaining = os.fstat(fh.fileno()).st_size - _EMB_HEADER.size
        if remaining < expected:
            # Checked before reading so a hostile count cannot force a
            # matching allocation.
            raise TruncatedFileError(
                f"payload truncated: expected {expected} bytes from offset "
                f"{_EMB_HEADER.size}, file ends at byte "
                f"{_EMB_HEADER.size + max(remaining, 0)}"
            )
        payload = fh.read(expected)
        if fh.read(1):
            raise FormatError("trailing bytes after declared payload")

    if labeled:
        if num_classes == 0:
            raise FormatError("labeled file must declare num_classes > 0")
        rec = np.frombuffer(payload, dtype=[("v", "<f4", (dim,)), ("label", "<i4")])
        vectors = np.ascontiguousarray(rec["v"])
        labels = rec["label"].astype(np.int64)
        if labels.min(initial=0) < -1 or labels.max(initial=-1) >= num_classes:
            raise FormatError(
                f"labels out of range [-1, {num_classes}): "
                f"[{labels.min()}, {labels.max()}]"
            )
    else:
        vectors = np.frombuffer(payload, dtype="<f4").reshape(count, dim).copy()
        labels = None
    if not np.all(np.isfinite(vectors)):
        raise NonFiniteDataError("embedding payload contains non-finite floats")
    header = EmbeddingHeader(
        version=version,
        labeled=labeled,
        dim=dim,
        num_classes=num_classes,
        count=count,
    )
    return header, vectors, labels


def state_section_sizes(config: AdapterConfig) -> dict[str, int]:
    """Exact on-disk byte budget per checkpoint section."""
    m = config.num_class_embeddings
    return {
        "header": _STATE_HEADER.size,
        "bank": m * config.embedding_dim * 4,
        "priors": m * config.num_classes * 4,
        "counters": 2 * m * 8,
    }


def save_state(path, state: AdapterState) -> None:
    """Write a checkpoint; in-memory values are float32-exact so this is lossless."""
    state.validate()
    cfg = state.config
    header = _STATE_HEADER.pack(
        STATE_MAGIC,
        FORMAT_VERSION,
        0,
        cfg.num_class_embeddings,
        cfg.num_classes,
        cfg.embedding_dim,
        0,
        cfg.init_count_embedding,
        cfg.init_count_prior,
        cfg.tau,
        cfg.temperature,
    )
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(np.ascontiguousarray(state.bank, dtype="<f4").tobytes())
        fh.write(np.ascontiguousarray(state.priors, dtype="<f4").tobytes())
        fh.write(state.c1.astype("<u8").tobytes())
        fh.write(state.c2.astype("<u8").tobytes())


def load_state(path) -> AdapterState:
    """Read a checkpoint and validate every adapter invariant before returning.

    Format problems (magic, version, truncation) raise FormatError types;
    well-formed files describing an invalid state raise
    InvariantViolationError.  Data is never repaired.
    """
    with open(path, "rb") as fh:
        raw = _read_exact(fh, _STATE_HEADER.size, 0, "state header")
        (magic, version, _r0, m, k, dim, _r1, n1, n2, tau, temperature) = (
            _STATE_HEADER.unpack(raw)
        )
        if magic != STATE_MAGIC:
            raise BadMagicError(f"not a state checkpoint: magic {magic!r}")
        if version != FORMAT_VERSION:
            raise UnsupportedVersionError(f"unsupported checkpoint version {version}")
        try:
            config = AdapterConfig(
                num_class_embeddings=m,
                num_classes=k,
                embedding_dim=dim,
                tau=tau,
                init_count_embedding=n1,
                init_count_prior=n2,
                temperature=temperature,
            )
        except ValidationError as exc:
            raise InvariantViolationError(f"checkpoint config invalid: {exc}") from exc
        offset = _STATE_HEADER.size
        total = m * dim * 4 + m * k * 4 + 2 * m * 8
        remaining = os.fstat(fh.fileno()).st_size - offset
        if remaining < total:
            raise TruncatedFileError(
                f"checkpoint truncated: expected {total} payload bytes from "
                f"offset {offset}, file ends at byte {offset + max(remaining, 0)}"
            )
        sections = []
        for name, size in (
            ("bank", m * dim * 4),
            ("priors", m * k * 4),
            ("c1", m * 8),
            ("c2", m * 8),
        ):
            sections.append(_read_exact(fh, size, offset, f"{name} section"))
            offset += size
        if fh.read(1):
            raise FormatError("trailing bytes after checkpoint payload")

    bank = np.frombuffer(sections[0], dtype="<f4").reshape(m, dim).astype(np.float64)
    priors = np.frombuffer(sections[1], dtype="<f4").reshape(m, k).astype(np.float64)
    c1 = np.frombuffer(sections[2], dtype="<u8").astype(np.int64)
    c2 = np.frombuffer(sections[3], dtype="<u8").astype(np.int64)
    state = AdapterState(config=config, bank=bank, priors=priors, c1=c1, c2=c2)
    state.validate()
    return state


def export_prior_csv(state: AdapterState, path, top_n: int | None = None) -> None:
    """Write the prior matrix as CSV with class-index column headers.

    With ``top_n`` the output is restricted to the top-n classes by update
    count (rows and columns), the visualization-style view of the most
    active part of the prior.  Values use repr formatting (full precision,
    >= 6 significant digits).
    """
    cfg = state.config
    k = cfg.num_classes
    updates = state.c2 - cfg.init_count_prior
    per_class = np.zeros(k, dtype=np.int64)
    np.add.at(per_class, np.arange(cfg.num_class_embeddings) % k, updates)
    if top_n is None or top_n >= k:
        classes = list(range(k))
    else:
        if top_n < 1:
            raise ValidationError("top_n must be positive")
        order = sorted(range(k), key=lambda j: (-per_class[j], j))
        classes = order[:top_n]
    keep = set(classes)
    rows = [m for m in range(cfg.num_class_embeddings) if m % k in keep]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["embedding", "class", "updates"] + [str(j) for j in classes])
        for m in rows:
            writer.writerow(
                [m, m % k, int(updates[m])]
                + [repr(float(state.priors[m, j])) for j in classes]
            )


def write_metrics_csv(path, samples) -> None:
    """Per-sample records; deliberately timestamp-free so reruns are byte-identical."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            [
                "index",
                "predicted",
                "label",
                "correct",
                "updated",
                "selected",
                "selected_prob",
            ]
        )
        for i in range(len(samples.predicted)):
            writer.writerow(
                [
                    i,
                    int(samples.predicted[i]),
                    int(samples.label[i]),
                    int(samples.correct[i]),
                    int(samples.updated[i]),
                    int(samples.selected[i]),
                    repr(float(samples.selected_prob[i])),
                ]
            )


def format_summary_lines(summary: dict) -> list[str]:
    return [f"{key}={value}" for key, value in summary.items()]


def write_summary_csv(path, summary: dict) -> None:
    """Key/value summary block (accuracies, update counts, timings, config echo)."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["key", "value"])
        for key, value in summary.items():
            writer.writerow([key, value])


def write_json_sidecar(path, payload: dict) -> None:
    """Deterministic JSON sidecar (sorted keys, no timestamps)."""
    text = json.dumps(payload, indent=2, sort_keys=True)
    Path(path).write_text(text + "\n")
