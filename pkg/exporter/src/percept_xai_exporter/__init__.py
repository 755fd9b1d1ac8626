"""One-shot converter: ResNet backbones to ONNX plus sidecar metadata.

The output pair (model file, JSON sidecar) is exactly what the percept-xai
encoder loader consumes.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from .resnet import (
    ExportError,
    build_backbone,
    embedding_dim,
    emit_onnx,
    load_checkpoint,
    source_embeddings,
)

IMAGENET_MEAN = (0.485, 0.456, 0.406)
IMAGENET_STD = (0.229, 0.224, 0.225)

__all__ = ["ExportRequest", "ExportError", "export", "source_embeddings",
           "IMAGENET_MEAN", "IMAGENET_STD"]


@dataclass
class ExportRequest:
    """What to export and where to put it."""

    arch: str = "resnet50"
    checkpoint: str | None = None
    out_model: str = "backbone.onnx"
    out_meta: str | None = None  # defaults to out_model with .json
    input_size: tuple[int, int] = (224, 224)
    normalization_mean: tuple[float, float, float] = IMAGENET_MEAN
    normalization_std: tuple[float, float, float] = IMAGENET_STD
    name: str = ""
    warnings: list[str] = field(default_factory=list)


def export(request: ExportRequest) -> tuple[Path, Path]:
    """Write the ONNX model and sidecar; returns their paths."""
    model = build_backbone(request.arch)
    if request.checkpoint:
        _missing, unexpected = load_checkpoint(model, request.checkpoint)
        if unexpected:
            request.warnings.append(
                f"ignored {len(unexpected)} non-backbone checkpoint entries "
                f"(e.g. {unexpected[:3]})"
            )
    blob = emit_onnx(model, request.input_size, graph_name=request.arch)

    model_path = Path(request.out_model)
    meta_path = Path(request.out_meta) if request.out_meta else model_path.with_suffix(".json")
    model_path.parent.mkdir(parents=True, exist_ok=True)
    meta_path.parent.mkdir(parents=True, exist_ok=True)
    model_path.write_bytes(blob)
    meta_path.write_text(json.dumps({
        "name": request.name or request.arch,
        "input_size": list(request.input_size),
        "normalization": {
            "mean": list(request.normalization_mean),
            "std": list(request.normalization_std),
        },
        "embedding_dim": embedding_dim(model),
    }, indent=2))
    return model_path, meta_path
