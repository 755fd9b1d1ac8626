"""Soft-mask generation for the Monte-Carlo importance estimator.

Low-resolution binary grids are drawn cell-by-cell with keep probability p,
upsampled (bicubic by default, which makes them soft), then randomly cropped
to the analyzed image size. Randomness is counter-based: mask k is a pure
function of (seed, k), so any subset of the stream can be generated in any
order, or in parallel, with identical results.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, replace
from typing import Iterator

import numpy as np

from .imgproc import as_mask, random_resized_crop, resize_bicubic

_UINT64_MASK = (1 << 64) - 1

UPSAMPLE_MODES = ("bicubic", "nearest")


@dataclass(frozen=True)
class MaskConfig:
    """Parameters of the mask stream.

    `upsample_factor=None` picks the smallest integer factor that leaves at
    least one upsampled cell of slack for crop jitter.
    """

    cell_rows: int = 7
    cell_cols: int = 7
    keep_prob: float = 0.5
    num_masks: int = 8000
    upsample_factor: int | None = None
    upsample: str = "bicubic"
    seed: int = 0

    def __post_init__(self) -> None:
        if self.cell_rows < 1 or self.cell_cols < 1:
            raise ValueError("grid dimensions must be >= 1")
        if not 0.0 < self.keep_prob < 1.0:
            raise ValueError(f"keep_prob must lie strictly in (0, 1), got {self.keep_prob}")
        if self.num_masks < 1:
            raise ValueError("num_masks must be >= 1")
        if self.upsample_factor is not None and self.upsample_factor < 1:
            raise ValueError("upsample_factor must be >= 1")
        if self.upsample not in UPSAMPLE_MODES:
            raise ValueError(f"upsample must be one of {UPSAMPLE_MODES}")

    def with_num_masks(self, num_masks: int) -> "MaskConfig":
        return replace(self, num_masks=num_masks)


def resolved_upsample_factor(config: MaskConfig, target_h: int, target_w: int) -> int:
    """Integer upsample factor actually used for a given target size."""
    if config.upsample_factor is not None:
        factor = config.upsample_factor
    else:
        # Smallest factor with >= one upsampled cell of crop slack per axis.
        need_h = -(-target_h // max(config.cell_rows - 1, 1))
        need_w = -(-target_w // max(config.cell_cols - 1, 1))
        factor = max(need_h, need_w, 1)
    if config.cell_rows * factor < target_h or config.cell_cols * factor < target_w:
        raise ValueError(
            f"upsampled mask ({config.cell_rows * factor}x{config.cell_cols * factor}) "
            f"smaller than target ({target_h}x{target_w})"
        )
    return factor


def _rng_for(seed: int, index: int) -> np.random.Generator:
    """Counter-based generator: an independent Philox stream per (seed, index)."""
    ss = np.random.SeedSequence(entropy=[seed & _UINT64_MASK, index])
    return np.random.Generator(np.random.Philox(ss))


def _draw_grid(config: MaskConfig, rng: np.random.Generator) -> np.ndarray:
    grid = rng.random((config.cell_rows, config.cell_cols)) < config.keep_prob
    return grid.astype(np.float64)


def sample_low_res(config: MaskConfig, index: int) -> np.ndarray:
    """The index-th low-resolution binary grid, reproducible for (seed, index)."""
    if not 0 <= index < config.num_masks:
        raise IndexError(f"mask index {index} out of range [0, {config.num_masks})")
    return _draw_grid(config, _rng_for(config.seed, index))


def _upsample(grid: np.ndarray, factor: int, mode: str) -> np.ndarray:
    if mode == "nearest":
        return np.repeat(np.repeat(grid, factor, axis=0), factor, axis=1)
    return resize_bicubic(grid, grid.shape[0] * factor, grid.shape[1] * factor)


def mask_from_grid(
    grid: np.ndarray,
    config: MaskConfig,
    target_h: int,
    target_w: int,
    rng: np.random.Generator,
) -> np.ndarray:
    """Upsample a binary grid and randomly crop it to the target size."""
    factor = resolved_upsample_factor(config, target_h, target_w)
    big = _upsample(np.asarray(grid, dtype=np.float64), factor, config.upsample)
    return random_resized_crop(big, target_h, target_w, rng)


def make_mask(config: MaskConfig, index: int, target_h: int, target_w: int) -> np.ndarray:
    """The index-th soft mask of the stream at the target size, in [0, 1]."""
    if not 0 <= index < config.num_masks:
        raise IndexError(f"mask index {index} out of range [0, {config.num_masks})")
    # One generator per index: the crop offsets follow the cell draws.
    rng = _rng_for(config.seed, index)
    grid = _draw_grid(config, rng)
    return mask_from_grid(grid, config, target_h, target_w, rng)


def mask_stream(config: MaskConfig, target_h: int, target_w: int) -> Iterator[np.ndarray]:
    """All `num_masks` masks, in index order."""
    for index in range(config.num_masks):
        yield make_mask(config, index, target_h, target_w)


def enumerate_masks(
    config: MaskConfig, target_h: int, target_w: int
) -> Iterator[tuple[float, np.ndarray]]:
    """All 2^(rows*cols) grid masks with their Bernoulli probabilities.

    Only valid when the upsampled grid exactly matches the target size (no
    crop slack), so each grid maps to a single deterministic mask.
    """
    cells = config.cell_rows * config.cell_cols
    if cells > 20:
        raise ValueError(f"enumeration over 2^{cells} masks is not tractable")
    factor = resolved_upsample_factor(config, target_h, target_w)
    if (config.cell_rows * factor, config.cell_cols * factor) != (target_h, target_w):
        raise ValueError("enumeration requires the upsampled grid to equal the target size")
    p = config.keep_prob
    for bits in itertools.product((0.0, 1.0), repeat=cells):
        grid = np.array(bits, dtype=np.float64).reshape(config.cell_rows, config.cell_cols)
        ones = int(grid.sum())
        weight = (p**ones) * ((1.0 - p) ** (cells - ones))
        yield weight, _upsample(grid, factor, config.upsample)


def texture_mask(m: np.ndarray, edges: np.ndarray) -> np.ndarray:
    """Elementwise max of a soft mask and an edge map (soft OR).

    On binary inputs this is exactly the logical OR; edge pixels are always
    fully kept. `edges` may be (H, W) or a channel-replicated (H, W, C) map.
    """
    m = as_mask(m)
    edges = np.asarray(edges, dtype=np.float64)
    if edges.ndim == 3:
        edges = edges[:, :, 0]
    edges = as_mask(edges)
    if edges.shape != m.shape:
        raise ValueError(f"edge map shape {edges.shape} does not match mask {m.shape}")
    return np.maximum(m, edges)
