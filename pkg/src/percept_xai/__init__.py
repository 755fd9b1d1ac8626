"""Perceptual-component importance maps for black-box image encoders.

Explains an encoder's representation space at pixel level by masking color,
shape, and texture separately, tracking how each perturbation shifts the
embedding, and correlating the per-component maps with the overall one.
"""

from .agreement import AgreementReport, agreement_score, aggregate, score_maps
from .encoder import Encoder, EncoderSpec, embed, embed_batch, load_encoder, toy_encoders
from .engine import (
    COMPONENTS,
    ImportanceMap,
    RunReport,
    color_importance,
    cosine_similarity,
    estimate_importance,
    explain_image,
    overall_importance,
    shape_importance,
    texture_importance,
)
from .masks import MaskConfig, make_mask, texture_mask

__version__ = "0.1.0"

__all__ = [
    "AgreementReport",
    "agreement_score",
    "aggregate",
    "score_maps",
    "Encoder",
    "EncoderSpec",
    "embed",
    "embed_batch",
    "load_encoder",
    "toy_encoders",
    "COMPONENTS",
    "ImportanceMap",
    "RunReport",
    "color_importance",
    "cosine_similarity",
    "estimate_importance",
    "explain_image",
    "overall_importance",
    "shape_importance",
    "texture_importance",
    "MaskConfig",
    "make_mask",
    "texture_mask",
    "__version__",
]
