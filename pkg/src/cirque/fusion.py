"""Composed-query construction.

Two weighted fusions build the query vector: first the reference-image and
modification-text embeddings are blended with weight ``alpha``, then the
embedding of a generated target caption is blended in with weight ``beta``.
Every input is normalized before weighting and the result is renormalized,
so both weights behave as direction interpolators regardless of encoder
output scale.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import AlphaOutOfRange, BetaOutOfRange, DimMismatch, ZeroVector

# fused vectors shorter than this are treated as exact cancellation
_CANCEL_EPS = 1e-12


@dataclass(frozen=True)
class FusionParams:
    """Fusion weights; defaults follow the engine's stock configuration."""

    alpha: float = 0.7
    beta: float = 0.6

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise AlphaOutOfRange(f"alpha={self.alpha} outside [0, 1]")
        if not 0.0 <= self.beta <= 1.0:
            raise BetaOutOfRange(f"beta={self.beta} outside [0, 1]")


@dataclass(frozen=True)
class ComposedQuery:
    query_id: str
    q_vlm: np.ndarray
    q_final: np.ndarray
    params: FusionParams


def _unit64(vec: np.ndarray) -> np.ndarray:
    v = np.asarray(vec, dtype=np.float64)
    n = float(np.linalg.norm(v))
    if n == 0.0:
        raise ZeroVector("fusion input is the zero vector")
    return v / n


def _finish(fused: np.ndarray) -> np.ndarray:
    n = float(np.linalg.norm(fused))
    if n < _CANCEL_EPS:
        raise ZeroVector("fusion weights cancelled the inputs exactly")
    return (fused / n).astype(np.float32)


def fuse_vlm(ref_img_emb: np.ndarray, mod_text_emb: np.ndarray, alpha: float) -> np.ndarray:
    """Blend image and text directions: (1-alpha)*image + alpha*text, unit length.

    alpha=0 returns the normalized image embedding, alpha=1 the normalized
    text embedding.
    """
    if not 0.0 <= alpha <= 1.0:
        raise AlphaOutOfRange(f"alpha={alpha} outside [0, 1]")
    a = np.asarray(ref_img_emb)
    b = np.asarray(mod_text_emb)
    if a.shape != b.shape:
        raise DimMismatch(f"shape {a.shape} vs {b.shape}")
    return _finish((1.0 - alpha) * _unit64(a) + alpha * _unit64(b))


def fuse_final(q_vlm: np.ndarray, caption_emb: np.ndarray, beta: float) -> np.ndarray:
    """Blend the fused query with the caption direction, weight beta, unit length."""
    if not 0.0 <= beta <= 1.0:
        raise BetaOutOfRange(f"beta={beta} outside [0, 1]")
    q = np.asarray(q_vlm)
    c = np.asarray(caption_emb)
    if q.shape != c.shape:
        raise DimMismatch(f"shape {q.shape} vs {c.shape}")
    return _finish((1.0 - beta) * _unit64(q) + beta * _unit64(c))


def compose_query(
    query_id: str,
    ref_img_emb: np.ndarray,
    mod_text_emb: np.ndarray,
    caption_emb: np.ndarray | None,
    params: FusionParams,
) -> ComposedQuery:
    """Run both fusion steps for one query.

    When no caption embedding is available (caption generation failed or was
    disabled) or beta is 0, the final query is exactly the image/text fusion.
    """
    q_vlm = fuse_vlm(ref_img_emb, mod_text_emb, params.alpha)
    if caption_emb is None or params.beta == 0.0:
        q_final = q_vlm
    else:
        q_final = fuse_final(q_vlm, caption_emb, params.beta)
    return ComposedQuery(query_id=query_id, q_vlm=q_vlm, q_final=q_final, params=params)
