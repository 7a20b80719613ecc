"""Candidate-grid composition for batch reranking.

Each candidate raster is letterboxed into a square cell, framed with a
colored bounding box, and stamped with its rank index as a white-on-color
chip in the top-left corner; cells are then tiled row-major into an m x m
composite.  Digits are rendered from a built-in 5x7 pixel atlas, so output
is bit-reproducible with no font dependency (digits are all the grid ever
needs).
"""

from __future__ import annotations

import io
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from PIL import Image

from .errors import EmptyImage, IndexOutOfRange, WrongCount

# eight well-separated RGB colors, cycled across cells
DEFAULT_PALETTE: tuple[tuple[int, int, int], ...] = (
    (230, 25, 75),
    (60, 180, 75),
    (255, 225, 25),
    (0, 130, 200),
    (245, 130, 48),
    (145, 30, 180),
    (70, 240, 240),
    (240, 50, 230),
)

_DIGITS = {
    "0": ("01110", "10001", "10011", "10101", "11001", "10001", "01110"),
    "1": ("00100", "01100", "00100", "00100", "00100", "00100", "01110"),
    "2": ("01110", "10001", "00001", "00010", "00100", "01000", "11111"),
    "3": ("11111", "00010", "00100", "00010", "00001", "10001", "01110"),
    "4": ("00010", "00110", "01010", "10010", "11111", "00010", "00010"),
    "5": ("11111", "10000", "11110", "00001", "00001", "10001", "01110"),
    "6": ("00110", "01000", "10000", "11110", "10001", "10001", "01110"),
    "7": ("11111", "00001", "00010", "00100", "01000", "01000", "01000"),
    "8": ("01110", "10001", "10001", "01110", "10001", "10001", "01110"),
    "9": ("01110", "10001", "10001", "01111", "00001", "00010", "01100"),
}


@dataclass(frozen=True)
class GridSpec:
    m: int = 4
    cell_px: int = 256
    border_px: int = 6
    label_px: int = 28
    palette: tuple[tuple[int, int, int], ...] = DEFAULT_PALETTE

    def __post_init__(self):
        if self.m < 2:
            raise ValueError(f"grid side must be >= 2, got {self.m}")
        if self.cell_px < 64:
            raise ValueError(f"cell edge must be >= 64 px, got {self.cell_px}")
        if self.border_px < 1 or self.label_px < 7:
            raise ValueError("border_px must be >= 1 and label_px >= 7")
        if not self.palette:
            raise ValueError("palette must not be empty")


@dataclass(frozen=True)
class GridImage:
    pixels: np.ndarray
    cell_of: dict[int, tuple[int, int]]
    source_ids: tuple[str, ...]


def _digit_mask(text: str, scale: int) -> np.ndarray:
    """Boolean raster of the digit string at 5x7 per glyph, scaled up."""
    rows = 7
    cols = 6 * len(text) - 1  # 5-wide glyphs with 1-column gaps
    mask = np.zeros((rows, cols), dtype=bool)
    for pos, ch in enumerate(text):
        glyph = _DIGITS[ch]
        x0 = pos * 6
        for r in range(7):
            for c in range(5):
                if glyph[r][c] == "1":
                    mask[r, x0 + c] = True
    return np.kron(mask, np.ones((scale, scale), dtype=bool))


def annotate(image: np.ndarray, index: int, spec: GridSpec) -> np.ndarray:
    """Letterbox one candidate into a cell, add its colored frame and label."""
    capacity = spec.m * spec.m
    if not 0 <= index < capacity:
        raise IndexOutOfRange(f"index {index} outside 0..{capacity - 1}")
    arr = np.asarray(image, dtype=np.uint8)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise ValueError(f"expected an RGB raster (h, w, 3), got shape {arr.shape}")
    h, w = arr.shape[:2]
    if h == 0 or w == 0:
        raise EmptyImage("image has zero pixels")

    cell = np.zeros((spec.cell_px, spec.cell_px, 3), dtype=np.uint8)
    scale = min(spec.cell_px / w, spec.cell_px / h)
    new_w = min(spec.cell_px, max(1, round(w * scale)))
    new_h = min(spec.cell_px, max(1, round(h * scale)))
    resized = np.asarray(
        Image.fromarray(arr).resize((new_w, new_h), Image.Resampling.BILINEAR)
    )
    x0 = (spec.cell_px - new_w) // 2
    y0 = (spec.cell_px - new_h) // 2
    cell[y0 : y0 + new_h, x0 : x0 + new_w] = resized

    color = spec.palette[index % len(spec.palette)]
    b = spec.border_px
    cell[:b, :] = color
    cell[-b:, :] = color
    cell[:, :b] = color
    cell[:, -b:] = color

    glyph_scale = max(1, spec.label_px // 7)
    mask = _digit_mask(str(index), glyph_scale)
    pad = glyph_scale
    chip_h = min(spec.cell_px, mask.shape[0] + 2 * pad)
    chip_w = min(spec.cell_px, mask.shape[1] + 2 * pad)
    cell[:chip_h, :chip_w] = color
    window = cell[pad : pad + mask.shape[0], pad : pad + mask.shape[1]]
    window[mask[: window.shape[0], : window.shape[1]]] = (255, 255, 255)
    return cell


def cell_position(index: int, m: int) -> tuple[int, int]:
    """Row-major placement: index i sits at (i div m, i mod m)."""
    return index // m, index % m


def compose_grid(images: Sequence[tuple[str, np.ndarray]], spec: GridSpec) -> GridImage:
    """Tile exactly m*m annotated candidates, given in rank order."""
    capacity = spec.m * spec.m
    if len(images) != capacity:
        raise WrongCount(f"need exactly {capacity} images, got {len(images)}")
    side = spec.m * spec.cell_px
    canvas = np.zeros((side, side, 3), dtype=np.uint8)
    cell_of: dict[int, tuple[int, int]] = {}
    ids: list[str] = []
    for i, (image_id, raster) in enumerate(images):
        row, col = cell_position(i, spec.m)
        y0, x0 = row * spec.cell_px, col * spec.cell_px
        canvas[y0 : y0 + spec.cell_px, x0 : x0 + spec.cell_px] = annotate(raster, i, spec)
        cell_of[i] = (row, col)
        ids.append(image_id)
    return GridImage(pixels=canvas, cell_of=cell_of, source_ids=tuple(ids))


def encode_png(pixels: np.ndarray) -> bytes:
    buf = io.BytesIO()
    Image.fromarray(np.asarray(pixels, dtype=np.uint8)).save(buf, format="PNG")
    return buf.getvalue()


def save_png(pixels: np.ndarray, path: str | Path) -> None:
    Path(path).write_bytes(encode_png(pixels))
