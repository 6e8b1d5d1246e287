"""Export jobs: prompt templates to a text bank, image folders to a stream.

The exporter owns no math beyond L2 normalization -- everything Bayesian
lives in the consumer.  Both jobs emit a JSON manifest next to the output
file recording exactly what was encoded (and, for image jobs, every file
that was skipped: stream/label misalignment is the failure mode this
guards against).
"""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .bcae import write_bcae
from .encoders import resolve_encoder

logger = logging.getLogger(__name__)

IMAGE_SUFFIXES = {".png", ".jpg", ".jpeg", ".bmp", ".gif", ".webp"}


@dataclass(frozen=True)
class ExportJob:
    """What to encode and where to put it."""

    model: str
    out_path: str
    class_names: tuple[str, ...] = ()
    templates: tuple[str, ...] = ("a photo of a {}",)
    dataset_path: str | None = None
    device: str = "cpu"
    ensemble: bool = False
    shuffle_seed: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "class_names", tuple(self.class_names))
        object.__setattr__(self, "templates", tuple(self.templates))


def _sha256(path: Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def _write_manifest(out_path: Path, payload: dict) -> Path:
    manifest_path = out_path.with_suffix(out_path.suffix + ".manifest.json")
    manifest_path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    return manifest_path


def export_text_bank(job: ExportJob) -> Path:
    """Encode c templates x K classes into a BCAE bank of M = c*K rows.

    Rows are laid out in template blocks so row m belongs to class m % K.
    With ``ensemble`` the per-class template embeddings are averaged and
    renormalized instead, producing M = K rows; the manifest records which
    layout was used.
    """
    if len(job.class_names) < 2:
        raise ValueError("need at least two class names")
    if len(job.templates) < 1:
        raise ValueError("need at least one template")
    encoder = resolve_encoder(job.model, device=job.device)
    k = len(job.class_names)
    per_template = np.stack(
        [
            encoder.encode_text(template.format(name))
            for template in job.templates
            for name in job.class_names
        ]
    )
    if job.ensemble:
        rows = np.empty((k, per_template.shape[1]))
        for j in range(k):
            mean = per_template[j::k].mean(axis=0)
            rows[j] = mean / np.linalg.norm(mean)
    else:
        rows = per_template

    out_path = Path(job.out_path)
    write_bcae(out_path, rows, num_classes=k)
    _write_manifest(
        out_path,
        {
            "kind": "text-bank",
            "model": job.model,
            "classes": list(job.class_names),
            "templates": list(job.templates),
            "ensemble": job.ensemble,
            "rows": int(rows.shape[0]),
            "dim": int(rows.shape[1]),
            "row_class_rule": "row m belongs to class m % K",
            "sha256": _sha256(out_path),
        },
    )
    return out_path


def discover_classes(dataset_path: str) -> tuple[str, ...]:
    """Label subdirectories of the dataset root, sorted by name."""
    root = Path(dataset_path)
    if not root.is_dir():
        raise FileNotFoundError(f"dataset directory {root} does not exist")
    names = sorted(p.name for p in root.iterdir() if p.is_dir())
    if len(names) < 2:
        raise ValueError("dataset needs at least two label subdirectories")
    return tuple(names)


def export_visual_stream(job: ExportJob) -> Path:
    """Encode a labeled image folder into a BCAE stream, one record per image.

    Images live in per-class subdirectories; the label is the index of the
    class name (sorted subdirectory order unless the job names classes
    explicitly).  Unreadable files are skipped, logged, and listed in the
    manifest -- never silently.  Record order is deterministic: sorted
    paths, optionally shuffled by the job's seed.
    """
    if job.dataset_path is None:
        raise ValueError("image export needs a dataset path")
    class_names = job.class_names or discover_classes(job.dataset_path)
    if len(class_names) < 2:
        raise ValueError("need at least two classes")
    encoder = resolve_encoder(job.model, device=job.device)
    root = Path(job.dataset_path)

    files: list[tuple[Path, int]] = []
    for label, name in enumerate(class_names):
        class_dir = root / name
        if not class_dir.is_dir():
            raise FileNotFoundError(f"missing class directory {class_dir}")
        for path in sorted(class_dir.rglob("*")):
            if path.is_file() and path.suffix.lower() in IMAGE_SUFFIXES:
                files.append((path, label))
    if not files:
        raise ValueError(f"no images found under {root}")

    if job.shuffle_seed is not None:
        order = np.random.Generator(
            np.random.Philox(key=[job.shuffle_seed, 0xD5])
        ).permutation(len(files))
        files = [files[i] for i in order]

    vectors: list[np.ndarray] = []
    labels: list[int] = []
    skipped: list[dict] = []
    for path, label in files:
        try:
            vectors.append(encoder.encode_image(path.read_bytes()))
            labels.append(label)
        except Exception as exc:
            logger.warning("skipping unreadable image %s: %s", path, exc)
            skipped.append({"file": str(path.relative_to(root)), "reason": str(exc)})
    if not vectors:
        raise ValueError("every image failed to encode")

    out_path = Path(job.out_path)
    write_bcae(out_path, np.stack(vectors), labels, num_classes=len(class_names))
    _write_manifest(
        out_path,
        {
            "kind": "visual-stream",
            "model": job.model,
            "classes": list(class_names),
            "records": len(labels),
            "dim": int(vectors[0].shape[0]),
            "shuffle_seed": job.shuffle_seed,
            "per_class_counts": {
                name: int(sum(1 for lab in labels if lab == i))
                for i, name in enumerate(class_names)
            },
            "skipped": skipped,
            "sha256": _sha256(out_path),
        },
    )
    return out_path
