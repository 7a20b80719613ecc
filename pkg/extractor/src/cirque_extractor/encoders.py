"""Checkpoint registry: resolve a checkpoint name to image/text encoders.

Supported name forms:

    toy:<dim>                     built-in deterministic encoders (tests, CI)
    hf:<model_id>                 a CLIP checkpoint via transformers
    open_clip:<arch>/<pretrained> an open_clip checkpoint

Real checkpoints need their weights available locally or a reachable hub;
otherwise resolution raises CheckpointLoadError.  The toy encoders are
small seeded torch modules: fast to load, deterministic in eval mode, and
dimensionally faithful stand-ins for the real thing.
"""

from __future__ import annotations

import logging
import zlib
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
import torch
from PIL import Image

from .errors import CheckpointLoadError

log = logging.getLogger(__name__)

_TOY_SEED = 0x51DEC0DE
_TOY_IMAGE_SIDE = 32
_TOY_VOCAB = 4096
TOY_TOKEN_LIMIT = 64


@dataclass(frozen=True)
class Encoders:
    checkpoint: str
    dim: int
    encode_images: Callable[[Sequence[Image.Image]], np.ndarray]
    encode_texts: Callable[[Sequence[str]], np.ndarray]


def _toy_encoders(dim: int) -> Encoders:
    gen = torch.Generator().manual_seed(_TOY_SEED)
    image_proj = torch.randn(
        3 * _TOY_IMAGE_SIDE * _TOY_IMAGE_SIDE, dim, generator=gen
    ) / (_TOY_IMAGE_SIDE * 3.0)
    text_proj = torch.randn(_TOY_VOCAB, dim, generator=gen) / 16.0

    @torch.no_grad()
    def encode_images(images: Sequence[Image.Image]) -> np.ndarray:
        batch = []
        for img in images:
            resized = img.convert("RGB").resize(
                (_TOY_IMAGE_SIDE, _TOY_IMAGE_SIDE), Image.Resampling.BILINEAR
            )
            arr = np.asarray(resized, dtype=np.float32) / 255.0
            batch.append((arr - 0.5) / 0.5)
        stacked = torch.from_numpy(np.stack(batch)).reshape(len(batch), -1)
        return (stacked @ image_proj).numpy().astype(np.float32)

    @torch.no_grad()
    def encode_texts(texts: Sequence[str]) -> np.ndarray:
        bags = torch.zeros((len(texts), _TOY_VOCAB))
        for row, text in enumerate(texts):
            tokens = text.lower().split()
            if len(tokens) > TOY_TOKEN_LIMIT:
                log.warning(
                    "text truncated from %d to %d tokens", len(tokens), TOY_TOKEN_LIMIT
                )
                tokens = tokens[:TOY_TOKEN_LIMIT]
            for token in tokens:
                bucket = zlib.crc32(token.encode("utf-8")) % _TOY_VOCAB
                bags[row, bucket] += 1.0
        return (bags @ text_proj).numpy().astype(np.float32)

    return Encoders(
        checkpoint=f"toy:{dim}",
        dim=dim,
        encode_images=encode_images,
        encode_texts=encode_texts,
    )


def _hf_encoders(model_id: str) -> Encoders:
    try:
        from transformers import CLIPModel, CLIPProcessor
    except ImportError as err:
        raise CheckpointLoadError(f"transformers not installed: {err}")
    try:
        model = CLIPModel.from_pretrained(model_id)
        processor = CLIPProcessor.from_pretrained(model_id)
    except Exception as err:
        raise CheckpointLoadError(f"cannot load {model_id!r}: {err}")
    model.eval()
    dim = int(model.config.projection_dim)
    limit = int(processor.tokenizer.model_max_length)

    @torch.no_grad()
    def encode_images(images: Sequence[Image.Image]) -> np.ndarray:
        inputs = processor(images=[img.convert("RGB") for img in images], return_tensors="pt")
        return model.get_image_features(**inputs).numpy().astype(np.float32)

    @torch.no_grad()
    def encode_texts(texts: Sequence[str]) -> np.ndarray:
        for text in texts:
            if len(processor.tokenizer(text, truncation=False)["input_ids"]) > limit:
                log.warning("text truncated to %d tokens", limit)
        inputs = processor(
            text=list(texts), return_tensors="pt", padding=True, truncation=True
        )
        return model.get_text_features(**inputs).numpy().astype(np.float32)

    return Encoders(f"hf:{model_id}", dim, encode_images, encode_texts)


def _open_clip_encoders(spec: str) -> Encoders:
    try:
        import open_clip
    except ImportError as err:
        raise CheckpointLoadError(f"open_clip not installed: {err}")
    arch, _, pretrained = spec.partition("/")
    if not pretrained:
        raise CheckpointLoadError(
            f"open_clip checkpoint must look like arch/pretrained, got {spec!r}"
        )
    try:
        model, _, preprocess = open_clip.create_model_and_transforms(
            arch, pretrained=pretrained
        )
        tokenizer = open_clip.get_tokenizer(arch)
    except Exception as err:
        raise CheckpointLoadError(f"cannot load {spec!r}: {err}")
    model.eval()
    dim = int(model.text_projection.shape[1]) if hasattr(model, "text_projection") else 512

    @torch.no_grad()
    def encode_images(images: Sequence[Image.Image]) -> np.ndarray:
        batch = torch.stack([preprocess(img.convert("RGB")) for img in images])
        return model.encode_image(batch).numpy().astype(np.float32)

    @torch.no_grad()
    def encode_texts(texts: Sequence[str]) -> np.ndarray:
        return model.encode_text(tokenizer(list(texts))).numpy().astype(np.float32)

    return Encoders(f"open_clip:{spec}", dim, encode_images, encode_texts)


def resolve_checkpoint(name: str) -> Encoders:
    scheme, _, rest = name.partition(":")
    if scheme == "toy":
        try:
            dim = int(rest)
        except ValueError:
            raise CheckpointLoadError(f"toy checkpoint needs a dimension, got {name!r}")
        if dim < 1:
            raise CheckpointLoadError("toy dimension must be positive")
        return _toy_encoders(dim)
    if scheme == "hf":
        return _hf_encoders(rest)
    if scheme == "open_clip":
        return _open_clip_encoders(rest)
    raise CheckpointLoadError(
        f"unknown checkpoint {name!r}; expected toy:<dim>, hf:<model>, or open_clip:<arch>/<tag>"
    )
