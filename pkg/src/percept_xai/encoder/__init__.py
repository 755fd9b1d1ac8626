"""Uniform embedding providers: ONNX-format model files and analytic toys.

A provider is described by an :class:`EncoderSpec` (where the model comes
from, expected input size, per-channel normalization, embedding width) and
answers ``embed`` / ``embed_batch`` deterministically. Real models are read
from ONNX files with a JSON sidecar describing the preprocessing contract:

    {
      "name": "resnet50",
      "input_size": [224, 224],
      "normalization": {"mean": [0.485, 0.456, 0.406],
                        "std": [0.229, 0.224, 0.225]},
      "embedding_dim": 2048
    }

Loaded encoders are immutable and safe to share across threads.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from ..imgproc import as_image
from . import onnx_format
from .execution import TorchExecutor, UnsupportedOpError, make_executor
from .toys import TOY_NAMES, toy_batch_function, toy_embedding_dim, toy_encoders, toy_function

__all__ = [
    "EncoderError",
    "ModelLoadError",
    "ShapeMismatchError",
    "NonFiniteEmbeddingError",
    "EncoderSpec",
    "Encoder",
    "toy_spec",
    "spec_from_files",
    "read_sidecar",
    "load_encoder",
    "embed",
    "embed_batch",
    "toy_encoders",
]


class EncoderError(Exception):
    """Base class for embedding-provider failures."""


class ModelLoadError(EncoderError):
    """The model file or its sidecar metadata could not be loaded."""


class ShapeMismatchError(EncoderError):
    """An input or output tensor has unexpected dimensions."""


class NonFiniteEmbeddingError(EncoderError):
    """The model produced NaN or Inf embedding values."""


@dataclass(frozen=True)
class EncoderSpec:
    """Provider description: source plus the implicit preprocessing contract."""

    source: str
    input_size: tuple[int, int] = (224, 224)
    normalization_mean: tuple[float, ...] = (0.0, 0.0, 0.0)
    normalization_std: tuple[float, ...] = (1.0, 1.0, 1.0)
    embedding_dim: int | None = None
    name: str = ""

    def __post_init__(self) -> None:
        if len(self.input_size) != 2 or min(self.input_size) < 1:
            raise ValueError(f"invalid input_size {self.input_size}")
        if len(self.normalization_mean) != len(self.normalization_std):
            raise ValueError("normalization mean/std lengths differ")
        if any(s <= 0 for s in self.normalization_std):
            raise ValueError("normalization std entries must be > 0")

    @property
    def is_toy(self) -> bool:
        return self.source.startswith("toy:")


def toy_spec(name: str, input_size: tuple[int, int] = (224, 224)) -> EncoderSpec:
    """Spec for a named toy encoder (identity normalization)."""
    if name.startswith("toy:"):
        name = name[4:]
    dim = toy_embedding_dim(name)  # raises KeyError for unknown names
    return EncoderSpec(
        source=f"toy:{name}", input_size=tuple(input_size), embedding_dim=dim, name=name
    )


def read_sidecar(meta_path) -> dict:
    """Parse and validate the JSON sidecar next to a model file."""
    try:
        raw = json.loads(Path(meta_path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ModelLoadError(f"cannot read sidecar metadata '{meta_path}': {exc}") from exc
    for key in ("input_size", "normalization", "embedding_dim"):
        if key not in raw:
            raise ModelLoadError(f"sidecar '{meta_path}' is missing '{key}'")
    norm = raw["normalization"]
    if "mean" not in norm or "std" not in norm:
        raise ModelLoadError(f"sidecar '{meta_path}' normalization needs 'mean' and 'std'")
    return raw


def spec_from_files(model_path, meta_path=None) -> EncoderSpec:
    """Build an EncoderSpec from a model file and its sidecar."""
    model_path = Path(model_path)
    meta_path = Path(meta_path) if meta_path is not None else model_path.with_suffix(".json")
    raw = read_sidecar(meta_path)
    try:
        return EncoderSpec(
            source=str(model_path),
            input_size=tuple(int(v) for v in raw["input_size"]),
            normalization_mean=tuple(float(v) for v in raw["normalization"]["mean"]),
            normalization_std=tuple(float(v) for v in raw["normalization"]["std"]),
            embedding_dim=int(raw["embedding_dim"]),
            name=str(raw.get("name", model_path.stem)),
        )
    except (TypeError, ValueError) as exc:
        raise ModelLoadError(f"invalid sidecar values in '{meta_path}': {exc}") from exc


class Encoder:
    """A loaded, immutable embedding provider."""

    def __init__(self, spec: EncoderSpec, backend: str | None = None):
        self.spec = spec
        if spec.is_toy:
            name = spec.source[4:]
            try:
                self._toy = toy_function(name)
                self._toy_batch = toy_batch_function(name)
            except KeyError as exc:
                raise ModelLoadError(str(exc)) from exc
            self._executor = None
            self.preferred_batch = 512 if self._toy_batch is not None else 64
        else:
            try:
                model = onnx_format.load_model(spec.source)
                self._executor = make_executor(model, backend)
            except OSError as exc:
                raise ModelLoadError(f"cannot read model file '{spec.source}': {exc}") from exc
            except (onnx_format.OnnxFormatError, UnsupportedOpError) as exc:
                raise ModelLoadError(f"cannot load model '{spec.source}': {exc}") from exc
            self._toy = None
            self._toy_batch = None
            self.preferred_batch = 16 if isinstance(self._executor, TorchExecutor) else 8
            self._check_static_shapes(model)

    def _check_static_shapes(self, model: onnx_format.OnnxModel) -> None:
        in_shape = model.inputs[0].shape
        if len(in_shape) == 4:
            fixed = [d for d in in_shape[2:] if isinstance(d, int)]
            if len(fixed) == 2 and tuple(fixed) != self.spec.input_size:
                raise ShapeMismatchError(
                    f"model expects spatial dims {tuple(fixed)}, sidecar says {self.spec.input_size}"
                )
        out_shape = model.outputs[0].shape
        fixed_out = [d for d in out_shape if isinstance(d, int)]
        if self.spec.embedding_dim and fixed_out and fixed_out[-1] != self.spec.embedding_dim:
            raise ShapeMismatchError(
                f"model output dim {fixed_out[-1]} != sidecar embedding_dim {self.spec.embedding_dim}"
            )

    @property
    def identity(self) -> str:
        return self.spec.source if self.spec.is_toy else f"{self.spec.name}:{Path(self.spec.source).name}"

    @property
    def embedding_dim(self) -> int | None:
        return self.spec.embedding_dim

    def _validate(self, img: np.ndarray) -> np.ndarray:
        img = as_image(img)
        if img.shape[:2] != self.spec.input_size:
            raise ShapeMismatchError(
                f"image dims {img.shape[:2]} != encoder input size {self.spec.input_size}"
            )
        return img

    def _finite(self, out: np.ndarray) -> np.ndarray:
        if not np.isfinite(out).all():
            raise NonFiniteEmbeddingError(f"{self.identity} produced non-finite embedding values")
        return out

    def _run_model(self, batch_hwc: np.ndarray) -> np.ndarray:
        mean = np.asarray(self.spec.normalization_mean, dtype=np.float32)
        std = np.asarray(self.spec.normalization_std, dtype=np.float32)
        x = (batch_hwc.astype(np.float32) - mean) / std
        x = np.ascontiguousarray(x.transpose(0, 3, 1, 2))
        out = self._executor.run(x)
        if out.ndim != 2:
            raise ShapeMismatchError(f"model output has shape {out.shape}, expected (N, D)")
        if self.spec.embedding_dim and out.shape[1] != self.spec.embedding_dim:
            raise ShapeMismatchError(
                f"model output dim {out.shape[1]} != declared embedding_dim {self.spec.embedding_dim}"
            )
        return out.astype(np.float64)

    def embed(self, img: np.ndarray) -> np.ndarray:
        """Embedding vector of one (H, W, C) image in [0, 1]."""
        img = self._validate(img)
        if self._toy is not None:
            return self._finite(np.asarray(self._toy(img), dtype=np.float64))
        return self._finite(self._run_model(img[None])[0])

    def embed_batch(self, imgs: Sequence[np.ndarray] | np.ndarray) -> np.ndarray:
        """Order-preserving embeddings of a stack of same-sized images."""
        batch = np.asarray(imgs, dtype=np.float64)
        if batch.ndim == 3:
            batch = batch[None]
        if batch.ndim != 4:
            raise ShapeMismatchError(f"expected (N, H, W, C) batch, got shape {batch.shape}")
        if batch.shape[1:3] != self.spec.input_size:
            raise ShapeMismatchError(
                f"batch dims {batch.shape[1:3]} != encoder input size {self.spec.input_size}"
            )
        if batch.shape[0] == 0:
            dim = self.spec.embedding_dim or 0
            return np.zeros((0, dim))
        if self._toy_batch is not None:
            return self._finite(np.asarray(self._toy_batch(batch), dtype=np.float64))
        if self._toy is not None:
            return self._finite(np.stack([self._toy(img) for img in batch]))
        chunks = [
            self._run_model(batch[i : i + self.preferred_batch])
            for i in range(0, batch.shape[0], self.preferred_batch)
        ]
        return self._finite(np.concatenate(chunks, axis=0))


def load_encoder(
    source, meta=None, input_size: tuple[int, int] | None = None, backend: str | None = None
) -> Encoder:
    """Load a provider from a toy name, a model path, or an EncoderSpec.

    `meta` points at the sidecar (defaults to the model path with a .json
    suffix); `input_size` applies to toys, whose analysis size is free.
    """
    if isinstance(source, EncoderSpec):
        return Encoder(source, backend=backend)
    text = str(source)
    toy_name = text[4:] if text.startswith("toy:") else text
    if toy_name in TOY_NAMES:
        return Encoder(toy_spec(toy_name, input_size or (224, 224)))
    if text.startswith("toy:"):
        raise ModelLoadError(f"unknown toy encoder '{toy_name}'; available: {', '.join(TOY_NAMES)}")
    path = Path(text)
    if not path.exists():
        raise ModelLoadError(
            f"'{text}' is neither a toy encoder ({', '.join(TOY_NAMES)}) nor an existing model file"
        )
    return Encoder(spec_from_files(path, meta), backend=backend)


_ENCODER_CACHE: dict[EncoderSpec, Encoder] = {}


def _resolve(spec_or_encoder) -> Encoder:
    if isinstance(spec_or_encoder, Encoder):
        return spec_or_encoder
    if isinstance(spec_or_encoder, EncoderSpec):
        if spec_or_encoder not in _ENCODER_CACHE:
            _ENCODER_CACHE[spec_or_encoder] = Encoder(spec_or_encoder)
        return _ENCODER_CACHE[spec_or_encoder]
    return load_encoder(spec_or_encoder)


def embed(spec, img: np.ndarray) -> np.ndarray:
    """Embed one image under a spec, encoder, toy name, or model path."""
    return _resolve(spec).embed(img)


def embed_batch(spec, imgs) -> np.ndarray:
    """Embed a sequence of images; order-preserving."""
    return _resolve(spec).embed_batch(imgs)
