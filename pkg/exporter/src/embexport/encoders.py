"""Encoder backends mapping text or images to unit-norm embeddings.

Identifiers:

* ``hash:<dim>``   -- deterministic stand-in encoder: sha256 of the input
  (prompt string, or image file bytes) seeds a Philox draw of a Gaussian
  vector.  Stable across platforms and runs; carries no semantics.  The
  tested default in environments without model weights.
* ``pixels:<dim>`` -- content-based toy image encoder: decode, resize to
  16x16 grayscale, project with a fixed seeded random matrix.  Similar
  pictures map to similar embeddings, which is enough for end-to-end
  smoke runs.  Text side falls back to the hash encoder.
* ``clip:<model>`` -- a real vision-language checkpoint via transformers
  (optional extra); only usable when the weights are available locally.

Every backend L2-normalizes its output; nothing else is ever done to the
vectors.
"""

from __future__ import annotations

import hashlib
import io

import numpy as np


class EncoderError(RuntimeError):
    """The requested model could not be resolved or loaded."""


def _seed_from_bytes(payload: bytes) -> list[int]:
    digest = hashlib.sha256(payload).digest()
    return [int.from_bytes(digest[i : i + 8], "little") for i in (0, 8)]


def _unit(v: np.ndarray) -> np.ndarray:
    norm = float(np.linalg.norm(v))
    if norm < 1e-12:
        raise EncoderError("encoder produced a zero vector")
    return v / norm


class HashEncoder:
    """sha256 -> Philox -> Gaussian -> normalize; for text and image bytes."""

    def __init__(self, dim: int):
        if dim < 2:
            raise EncoderError("embedding dimension must be at least 2")
        self.dim = dim

    def encode_text(self, text: str) -> np.ndarray:
        gen = np.random.Generator(
            np.random.Philox(key=_seed_from_bytes(text.encode("utf-8")))
        )
        return _unit(gen.standard_normal(self.dim))

    def encode_image(self, payload: bytes) -> np.ndarray:
        gen = np.random.Generator(np.random.Philox(key=_seed_from_bytes(payload)))
        return _unit(gen.standard_normal(self.dim))


class PixelEncoder:
    """Downscaled-grayscale random projection; text goes through HashEncoder."""

    PATCH = 16

    def __init__(self, dim: int):
        if dim < 2:
            raise EncoderError("embedding dimension must be at least 2")
        self.dim = dim
        # Fixed projection per dimension so exports are reproducible anywhere.
        gen = np.random.Generator(np.random.Philox(key=[0xB1, dim]))
        self._projection = gen.standard_normal((self.PATCH * self.PATCH, dim))
        self._text = HashEncoder(dim)

    def encode_text(self, text: str) -> np.ndarray:
        return self._text.encode_text(text)

    def encode_image(self, payload: bytes) -> np.ndarray:
        from PIL import Image

        img = Image.open(io.BytesIO(payload)).convert("L")
        img = img.resize((self.PATCH, self.PATCH))
        flat = np.asarray(img, dtype=np.float64).reshape(-1)
        flat = (flat - flat.mean()) / (flat.std() + 1e-6)
        return _unit(flat @ self._projection)


class ClipEncoder:
    """transformers-backed checkpoint; requires locally available weights."""

    def __init__(self, model_id: str, device: str = "cpu"):
        try:
            import torch
            from transformers import CLIPModel, CLIPProcessor
        except ImportError as exc:
            raise EncoderError(
                "clip backend needs the optional [clip] dependencies"
            ) from exc
        try:
            self._model = CLIPModel.from_pretrained(model_id).to(device).eval()
            self._processor = CLIPProcessor.from_pretrained(model_id)
        except Exception as exc:
            raise EncoderError(f"could not load checkpoint {model_id!r}: {exc}") from exc
        self._torch = torch
        self._device = device
        self.dim = int(self._model.config.projection_dim)

    def encode_text(self, text: str) -> np.ndarray:
        inputs = self._processor(text=[text], return_tensors="pt", padding=True)
        with self._torch.no_grad():
            feats = self._model.get_text_features(
                **{k: v.to(self._device) for k, v in inputs.items()}
            )
        return _unit(feats[0].cpu().numpy().astype(np.float64))

    def encode_image(self, payload: bytes) -> np.ndarray:
        from PIL import Image

        img = Image.open(io.BytesIO(payload)).convert("RGB")
        inputs = self._processor(images=img, return_tensors="pt")
        with self._torch.no_grad():
            feats = self._model.get_image_features(
                **{k: v.to(self._device) for k, v in inputs.items()}
            )
        return _unit(feats[0].cpu().numpy().astype(np.float64))


def resolve_encoder(identifier: str, device: str = "cpu"):
    kind, _, rest = identifier.partition(":")
    if kind == "hash":
        return HashEncoder(int(rest or 64))
    if kind == "pixels":
        return PixelEncoder(int(rest or 64))
    if kind == "clip":
        if not rest:
            raise EncoderError("clip backend needs a model id, e.g. clip:openai/clip-vit-base-patch32")
        return ClipEncoder(rest, device=device)
    raise EncoderError(
        f"unknown model identifier {identifier!r} (expected hash:<dim>, "
        "pixels:<dim> or clip:<model-id>)"
    )
