"""Monte-Carlo estimation of pixel importance maps.

For every sampled soft mask the analyzed image is perturbed by one of four
recipes (plain black-fill, color removal, edge masking, texture blurring),
embedded, and compared with a reference embedding by cosine similarity. The
per-pixel importance is the similarity-weighted average of mask values:

    importance[i, j] = (1 / N) * sum_n s(h, h_n) * M_n[i, j]

An optional coverage-normalized mode divides pixelwise by the accumulated
mask weight instead of N, and an enumeration mode replaces sampling with the
exact probability-weighted average over every possible low-resolution grid
(tractable for tiny grids only; used by oracle-style verification).
"""

from __future__ import annotations

import hashlib
import os
import time
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from .encoder import Encoder
from .imgproc import as_image, canny_edges, composite, gaussian_blur, to_grayscale
from .masks import MaskConfig, enumerate_masks, make_mask, texture_mask

COMPONENTS = ("overall", "color", "shape", "texture")
NORMALIZE_MODES = ("eq2", "rise")
SAMPLERS = ("monte-carlo", "enumerate")

THREADS_ENV_VAR = "PERCEPT_XAI_THREADS"

_DEGENERATE_NORM = 1e-12

__all__ = [
    "COMPONENTS",
    "NORMALIZE_MODES",
    "SAMPLERS",
    "THREADS_ENV_VAR",
    "DegenerateEmbeddingError",
    "ImportanceMap",
    "RunReport",
    "cosine_similarity",
    "estimate_importance",
    "overall_importance",
    "color_importance",
    "shape_importance",
    "texture_importance",
    "explain_image",
]


class DegenerateEmbeddingError(ValueError):
    """The reference embedding is (numerically) zero, so similarity is undefined."""


@dataclass
class ImportanceMap:
    """Per-pixel saliency surface for one perceptual component."""

    component: str
    values: np.ndarray  # (H, W) float64, each value in [-1, 1]
    num_masks: int
    fingerprint: str
    degenerate: bool = False

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]


@dataclass
class RunReport:
    """All maps produced for one image plus run provenance."""

    maps: dict[str, ImportanceMap]
    wall_time_s: float
    encoder_id: str
    mask_config: MaskConfig
    timings_s: dict[str, float] = field(default_factory=dict)


def cosine_similarity(a: np.ndarray, b: np.ndarray) -> float:
    """Cosine of two embeddings; 0.0 (with a warning) when either is ~zero."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise ValueError(f"embedding shapes differ: {a.shape} vs {b.shape}")
    na = np.linalg.norm(a)
    nb = np.linalg.norm(b)
    if na < _DEGENERATE_NORM or nb < _DEGENERATE_NORM:
        warnings.warn("cosine similarity of a ~zero embedding is undefined; returning 0")
        return 0.0
    return float(np.dot(a, b) / (na * nb))


def _cosine_batch(reference: np.ndarray, batch: np.ndarray) -> np.ndarray:
    """Cosine of each batch row against the reference; ~zero rows give 0."""
    ref_norm = np.linalg.norm(reference)
    norms = np.linalg.norm(batch, axis=1)
    safe = norms > _DEGENERATE_NORM
    sims = np.zeros(batch.shape[0])
    sims[safe] = (batch[safe] @ reference) / (norms[safe] * ref_norm)
    return sims


def worker_count(threads: int | None = None) -> int:
    """Requested worker count, bounded by the PERCEPT_XAI_THREADS env var."""
    limit = os.environ.get(THREADS_ENV_VAR)
    bound = int(limit) if limit else (os.cpu_count() or 1)
    if threads is None:
        threads = bound
    return max(1, min(threads, bound))


def _fingerprint(parts: Iterable[object]) -> str:
    digest = hashlib.sha256("|".join(str(p) for p in parts).encode()).hexdigest()
    return digest[:12]


def _accumulate(
    encoder: Encoder,
    reference: np.ndarray,
    masks: Sequence[np.ndarray],
    weights: Sequence[float] | None,
    perturbed_of: Callable[[np.ndarray], np.ndarray],
    mask_for_weight: Callable[[np.ndarray], np.ndarray],
) -> tuple[np.ndarray, np.ndarray]:
    """Partial sums (similarity-weighted masks, plain mask coverage) of one chunk."""
    perturbed = np.stack([perturbed_of(m) for m in masks])
    weight_masks = np.stack([mask_for_weight(m) for m in masks]).astype(np.float64)
    sims = _cosine_batch(reference, encoder.embed_batch(perturbed))
    if weights is not None:
        scale = np.asarray(weights, dtype=np.float64)
        return np.einsum("k,khw->hw", sims * scale, weight_masks), np.einsum(
            "k,khw->hw", scale, weight_masks
        )
    return np.einsum("k,khw->hw", sims, weight_masks), weight_masks.sum(axis=0)


def estimate_importance(
    encoder: Encoder,
    base: np.ndarray,
    perturbed_of: Callable[[np.ndarray], np.ndarray],
    mask_for_weight: Callable[[np.ndarray], np.ndarray],
    config: MaskConfig,
    *,
    component: str = "overall",
    normalize: str = "eq2",
    sampler: str = "monte-carlo",
    threads: int | None = None,
) -> ImportanceMap:
    """Estimate one importance map.

    `base` is the component's reference image; its embedding is computed once.
    `perturbed_of` builds the masked image for a sampled mask and
    `mask_for_weight` chooses the mask that weights the attribution (identity
    everywhere except texture, whose perturbation mask is edge-protected).
    Masked images that embed to ~zero contribute similarity 0.
    """
    if normalize not in NORMALIZE_MODES:
        raise ValueError(f"normalize must be one of {NORMALIZE_MODES}")
    if sampler not in SAMPLERS:
        raise ValueError(f"sampler must be one of {SAMPLERS}")
    base = as_image(base)
    if base.shape[:2] != encoder.spec.input_size:
        raise ValueError(
            f"image dims {base.shape[:2]} != encoder input size {encoder.spec.input_size}"
        )
    reference = encoder.embed(base)
    if np.linalg.norm(reference) < _DEGENERATE_NORM:
        raise DegenerateEmbeddingError(
            f"uninformative encoder: {encoder.identity} embeds the reference image to ~zero"
        )
    height, width = base.shape[:2]
    chunk = max(1, encoder.preferred_batch)

    if sampler == "enumerate":
        pairs = list(enumerate_masks(config, height, width))
        chunks = [pairs[i : i + chunk] for i in range(0, len(pairs), chunk)]
        jobs = [
            ([m for _w, m in part], [w for w, _m in part])
            for part in chunks
        ]
        total_n = len(pairs)
    else:
        n = config.num_masks
        jobs = [
            ([make_mask(config, i, height, width) for i in range(lo, min(lo + chunk, n))], None)
            for lo in range(0, n, chunk)
        ]
        total_n = n

    def run_job(job):
        mask_list, weight_list = job
        return _accumulate(encoder, reference, mask_list, weight_list, perturbed_of, mask_for_weight)

    workers = worker_count(threads)
    if workers > 1 and len(jobs) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            partials = list(pool.map(run_job, jobs))
    else:
        partials = [run_job(job) for job in jobs]

    # Merge in chunk order so results are bit-identical for any worker count.
    numerator = np.zeros((height, width))
    coverage = np.zeros((height, width))
    for num, cov in partials:
        numerator += num
        coverage += cov

    if normalize == "eq2":
        if sampler == "enumerate":  # probabilities already sum to 1
            values = numerator
        else:
            values = numerator / total_n
    else:
        values = np.divide(numerator, coverage, out=np.zeros_like(numerator), where=coverage > 0)

    fingerprint = _fingerprint(
        [config, normalize, sampler, component, encoder.identity, height, width]
    )
    return ImportanceMap(
        component=component,
        values=values,
        num_masks=total_n,
        fingerprint=fingerprint,
    )


def _black_like(img: np.ndarray) -> np.ndarray:
    return np.zeros_like(img)


def overall_importance(encoder: Encoder, img: np.ndarray, config: MaskConfig, **kw) -> ImportanceMap:
    """Importance of pixels for preserving the embedding under black-fill masking."""
    img = as_image(img)
    black = _black_like(img)
    return estimate_importance(
        encoder,
        img,
        lambda m: composite(img, black, m),
        lambda m: m,
        config,
        component="overall",
        **kw,
    )


def color_importance(encoder: Encoder, img: np.ndarray, config: MaskConfig, **kw) -> ImportanceMap:
    """Importance of pixels' color: masked regions fall back to grayscale."""
    img = as_image(img)
    gray = to_grayscale(img)
    return estimate_importance(
        encoder,
        img,
        lambda m: composite(img, gray, m),
        lambda m: m,
        config,
        component="color",
        **kw,
    )


def shape_importance(
    encoder: Encoder,
    img: np.ndarray,
    config: MaskConfig,
    *,
    canny_low: float = 0.1,
    canny_high: float = 0.2,
    **kw,
) -> ImportanceMap:
    """Importance of shape: the reference is the edge image, masked to black.

    When no edges are detected the map is undefined; a flat zero map is
    returned with `degenerate=True` and a warning.
    """
    img = as_image(img)
    edges = canny_edges(img, canny_low, canny_high)
    if edges.max() == 0:
        warnings.warn("no edges detected; shape importance is undefined, returning flat zeros")
        fingerprint = _fingerprint([config, "degenerate", "shape", encoder.identity, img.shape])
        return ImportanceMap(
            component="shape",
            values=np.zeros(img.shape[:2]),
            num_masks=config.num_masks,
            fingerprint=fingerprint,
            degenerate=True,
        )
    black = _black_like(edges)
    return estimate_importance(
        encoder,
        edges,
        lambda m: composite(edges, black, m),
        lambda m: m,
        config,
        component="shape",
        **kw,
    )


def texture_importance(
    encoder: Encoder,
    img: np.ndarray,
    config: MaskConfig,
    *,
    blur_sigma: float = 5.0,
    canny_low: float = 0.1,
    canny_high: float = 0.2,
    **kw,
) -> ImportanceMap:
    """Importance of texture: grayscale image blurred outside the kept mask.

    The perturbation mask is edge-protected (soft OR with the edge map) so
    blurring never erodes contours, but attribution weights use the plain
    mask.
    """
    img = as_image(img)
    gray = to_grayscale(img)
    blurred = gaussian_blur(gray, blur_sigma)
    edge_plane = canny_edges(img, canny_low, canny_high)[:, :, 0]
    return estimate_importance(
        encoder,
        gray,
        lambda m: composite(gray, blurred, texture_mask(m, edge_plane)),
        lambda m: m,
        config,
        component="texture",
        **kw,
    )


_COMPONENT_FUNCS = {
    "overall": overall_importance,
    "color": color_importance,
    "shape": shape_importance,
    "texture": texture_importance,
}


def explain_image(
    encoder: Encoder,
    img: np.ndarray,
    config: MaskConfig,
    components: Sequence[str] = COMPONENTS,
    *,
    normalize: str = "eq2",
    sampler: str = "monte-carlo",
    threads: int | None = None,
    canny_low: float = 0.1,
    canny_high: float = 0.2,
    blur_sigma: float = 5.0,
) -> RunReport:
    """Compute the requested component maps for one image.

    All components consume the same mask stream (same seed), so their maps
    are comparable mask-for-mask.
    """
    unknown = set(components) - set(COMPONENTS)
    if unknown:
        raise ValueError(f"unknown components {sorted(unknown)}; valid: {COMPONENTS}")
    img = as_image(img)
    maps: dict[str, ImportanceMap] = {}
    timings: dict[str, float] = {}
    started = time.perf_counter()
    for component in components:
        kwargs: dict = dict(normalize=normalize, sampler=sampler, threads=threads)
        if component == "shape":
            kwargs.update(canny_low=canny_low, canny_high=canny_high)
        elif component == "texture":
            kwargs.update(canny_low=canny_low, canny_high=canny_high, blur_sigma=blur_sigma)
        t0 = time.perf_counter()
        maps[component] = _COMPONENT_FUNCS[component](encoder, img, config, **kwargs)
        timings[component] = time.perf_counter() - t0
    return RunReport(
        maps=maps,
        wall_time_s=time.perf_counter() - started,
        encoder_id=encoder.identity,
        mask_config=config,
        timings_s=timings,
    )
