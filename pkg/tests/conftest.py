"""Shared fixtures and synthetic image builders."""

from __future__ import annotations

import numpy as np
import pytest


def rng(seed: int = 0) -> np.random.Generator:
    return np.random.default_rng(seed)


def random_image(seed: int, h: int = 16, w: int = 16, channels: int = 3) -> np.ndarray:
    return rng(seed).random((h, w, channels))


def quadrant_image(size: int = 32, color=(1.0, 0.0, 0.0)) -> np.ndarray:
    """A bright colored quadrant (top-left) on black."""
    img = np.zeros((size, size, 3))
    img[: size // 2, : size // 2] = color
    return img


def checkerboard(size: int = 32, cells: int = 4) -> np.ndarray:
    step = size // cells
    r, c = np.indices((size, size)) // step
    plane = ((r + c) % 2).astype(np.float64)
    return np.repeat(plane[:, :, None], 3, axis=2)


@pytest.fixture
def rng0() -> np.random.Generator:
    return rng(0)
