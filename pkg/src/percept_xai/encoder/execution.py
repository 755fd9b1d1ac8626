"""Executors that run a parsed ONNX graph on NCHW float32 batches.

Two interchangeable backends cover the operator set emitted by common
convnet feature extractors (ResNet-style: Conv, BatchNormalization, Relu,
MaxPool, Add, GlobalAveragePool, AveragePool, Flatten, Reshape, Gemm,
MatMul, Identity, Abs):

* ``NumpyExecutor`` -- dependency-free reference implementation (im2col
  convolution over BLAS); always available.
* ``TorchExecutor`` -- same graph dispatched to torch CPU kernels; much
  faster for large models. Used automatically when torch is importable.

Both are deterministic and safe for concurrent ``run`` calls.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .onnx_format import OnnxModel, Node

try:  # optional acceleration
    import torch
    import torch.nn.functional as F
except ImportError:  # pragma: no cover - exercised only where torch is absent
    torch = None
    F = None

__all__ = ["UnsupportedOpError", "NumpyExecutor", "TorchExecutor", "make_executor"]


class UnsupportedOpError(ValueError):
    """The graph uses an operator outside the supported convnet subset."""


def _attr(node: Node, name: str, default=None):
    return node.attrs.get(name, default)


def _conv_output_size(size: int, kernel: int, stride: int, pad0: int, pad1: int) -> int:
    return (size + pad0 + pad1 - kernel) // stride + 1


class _BaseExecutor:
    """Topology checks and shared graph plumbing."""

    SUPPORTED = {
        "Conv",
        "BatchNormalization",
        "Relu",
        "MaxPool",
        "AveragePool",
        "GlobalAveragePool",
        "Add",
        "Flatten",
        "Reshape",
        "Gemm",
        "MatMul",
        "Identity",
        "Abs",
    }

    def __init__(self, model: OnnxModel):
        if len(model.inputs) != 1:
            raise UnsupportedOpError(f"expected a single graph input, got {len(model.inputs)}")
        if len(model.outputs) != 1:
            raise UnsupportedOpError(f"expected a single graph output, got {len(model.outputs)}")
        unsupported = {n.op_type for n in model.nodes} - self.SUPPORTED
        if unsupported:
            raise UnsupportedOpError(f"unsupported operators: {sorted(unsupported)}")
        self.model = model
        self.input_name = model.inputs[0].name
        self.output_name = model.outputs[0].name
        self._check_topological()

    def _check_topological(self) -> None:
        known = set(self.model.initializers) | {self.input_name, ""}
        for node in self.model.nodes:
            missing = [name for name in node.inputs if name not in known]
            if missing:
                raise UnsupportedOpError(
                    f"node '{node.name or node.op_type}' consumes undefined values {missing}"
                )
            known.update(node.outputs)
        if self.output_name not in known:
            raise UnsupportedOpError(f"graph output '{self.output_name}' is never produced")

    def run(self, batch: np.ndarray) -> np.ndarray:
        raise NotImplementedError


class NumpyExecutor(_BaseExecutor):
    """Reference executor; float32 throughout, convolution via im2col."""

    def run(self, batch: np.ndarray) -> np.ndarray:
        values: dict[str, np.ndarray] = {self.input_name: np.ascontiguousarray(batch, dtype=np.float32)}
        for node in self.model.nodes:
            inputs = [self._value(values, name) for name in node.inputs]
            values[node.outputs[0]] = self._dispatch(node, inputs)
        return np.asarray(self._value(values, self.output_name), dtype=np.float32)

    def _value(self, values: dict[str, np.ndarray], name: str) -> np.ndarray:
        if name in values:
            return values[name]
        arr = self.model.initializers[name]
        # Keep integer tensors (e.g. Reshape targets) intact; floats run as f32.
        if arr.dtype.kind == "f":
            return arr.astype(np.float32, copy=False)
        return arr

    def _dispatch(self, node: Node, inputs: list[np.ndarray]) -> np.ndarray:
        op = node.op_type
        if op == "Conv":
            return self._conv(node, *inputs)
        if op == "BatchNormalization":
            x, scale, bias, mean, var = inputs
            eps = float(_attr(node, "epsilon", 1e-5))
            shape = (1, -1, 1, 1)
            inv = (1.0 / np.sqrt(var + eps)).reshape(shape)
            return (x - mean.reshape(shape)) * inv * scale.reshape(shape) + bias.reshape(shape)
        if op == "Relu":
            return np.maximum(inputs[0], 0.0)
        if op == "MaxPool":
            return self._pool(node, inputs[0], kind="max")
        if op == "AveragePool":
            return self._pool(node, inputs[0], kind="avg")
        if op == "GlobalAveragePool":
            return inputs[0].mean(axis=(2, 3), keepdims=True)
        if op == "Add":
            return inputs[0] + inputs[1]
        if op == "Flatten":
            axis = int(_attr(node, "axis", 1))
            x = inputs[0]
            lead = int(np.prod(x.shape[:axis])) if axis else 1
            return x.reshape(lead, -1)
        if op == "Reshape":
            shape = [int(v) for v in inputs[1]]
            return inputs[0].reshape(shape)
        if op == "Gemm":
            return self._gemm(node, *inputs)
        if op == "MatMul":
            return inputs[0] @ inputs[1]
        if op == "Identity":
            return inputs[0]
        if op == "Abs":
            return np.abs(inputs[0])
        raise UnsupportedOpError(op)  # unreachable; guarded in __init__

    @staticmethod
    def _gemm(node: Node, a: np.ndarray, b: np.ndarray, c: np.ndarray | None = None) -> np.ndarray:
        alpha = float(_attr(node, "alpha", 1.0))
        beta = float(_attr(node, "beta", 1.0))
        if int(_attr(node, "transA", 0)):
            a = a.T
        if int(_attr(node, "transB", 0)):
            b = b.T
        out = alpha * (a @ b)
        if c is not None:
            out = out + beta * c
        return out

    @staticmethod
    def _window_view(x: np.ndarray, kh: int, kw: int, sh: int, sw: int) -> np.ndarray:
        # (N, C, Ho, Wo, kh, kw) strided view over a padded NCHW tensor.
        windows = sliding_window_view(x, (kh, kw), axis=(2, 3))
        return windows[:, :, ::sh, ::sw]

    def _conv(self, node: Node, x: np.ndarray, weight: np.ndarray, bias: np.ndarray | None = None) -> np.ndarray:
        group = int(_attr(node, "group", 1))
        if group != 1:
            raise UnsupportedOpError("grouped convolution is not supported")
        dilations = _attr(node, "dilations", [1, 1])
        if any(d != 1 for d in dilations):
            raise UnsupportedOpError("dilated convolution is not supported")
        sh, sw = (int(v) for v in _attr(node, "strides", [1, 1]))
        kh, kw = weight.shape[2], weight.shape[3]
        pt, pl, pb, pr = (int(v) for v in _attr(node, "pads", [0, 0, 0, 0]))
        n, c, h, w = x.shape
        padded = np.pad(x, ((0, 0), (0, 0), (pt, pb), (pl, pr)))
        ho = _conv_output_size(h, kh, sh, pt, pb)
        wo = _conv_output_size(w, kw, sw, pl, pr)
        cols = self._window_view(padded, kh, kw, sh, sw)  # (N, C, Ho, Wo, kh, kw)
        cols = cols.transpose(0, 2, 3, 1, 4, 5).reshape(n * ho * wo, c * kh * kw)
        out = cols @ weight.reshape(weight.shape[0], -1).T
        if bias is not None:
            out = out + bias
        return out.reshape(n, ho, wo, weight.shape[0]).transpose(0, 3, 1, 2)

    def _pool(self, node: Node, x: np.ndarray, kind: str) -> np.ndarray:
        kh, kw = (int(v) for v in _attr(node, "kernel_shape"))
        sh, sw = (int(v) for v in _attr(node, "strides", [1, 1]))
        pt, pl, pb, pr = (int(v) for v in _attr(node, "pads", [0, 0, 0, 0]))
        fill = -np.inf if kind == "max" else 0.0
        padded = np.pad(x, ((0, 0), (0, 0), (pt, pb), (pl, pr)), constant_values=fill)
        windows = self._window_view(padded, kh, kw, sh, sw)
        if kind == "max":
            return windows.max(axis=(4, 5))
        # count_include_pad=0 semantics: divide by the unpadded window size.
        ones = np.ones((1, 1, x.shape[2], x.shape[3]), dtype=np.float32)
        ones = np.pad(ones, ((0, 0), (0, 0), (pt, pb), (pl, pr)))
        counts = self._window_view(ones, kh, kw, sh, sw).sum(axis=(4, 5))
        return windows.sum(axis=(4, 5)) / counts


class TorchExecutor(_BaseExecutor):
    """Torch-backed executor; weights are materialized once as tensors."""

    def __init__(self, model: OnnxModel):
        if torch is None:
            raise RuntimeError("torch is not available")
        super().__init__(model)
        self._weights = {}
        for name, arr in model.initializers.items():
            if arr.dtype.kind == "f":
                arr = arr.astype(np.float32, copy=False)
            self._weights[name] = torch.from_numpy(np.ascontiguousarray(arr))

    def run(self, batch: np.ndarray) -> np.ndarray:
        x = torch.from_numpy(np.ascontiguousarray(batch, dtype=np.float32))
        with torch.inference_mode():
            values: dict[str, torch.Tensor] = {self.input_name: x}
            for node in self.model.nodes:
                inputs = [self._value(values, name) for name in node.inputs]
                values[node.outputs[0]] = self._dispatch(node, inputs)
            out = values[self.output_name]
        return out.numpy().astype(np.float32, copy=False)

    def _value(self, values, name):
        return values[name] if name in values else self._weights[name]

    def _dispatch(self, node: Node, inputs):
        op = node.op_type
        if op == "Conv":
            sh, sw = (int(v) for v in _attr(node, "strides", [1, 1]))
            pt, pl, pb, pr = (int(v) for v in _attr(node, "pads", [0, 0, 0, 0]))
            if (pt, pl) != (pb, pr):
                raise UnsupportedOpError("asymmetric convolution padding is not supported")
            bias = inputs[2] if len(inputs) > 2 else None
            return F.conv2d(inputs[0], inputs[1], bias, stride=(sh, sw), padding=(pt, pl))
        if op == "BatchNormalization":
            x, scale, bias, mean, var = inputs
            eps = float(_attr(node, "epsilon", 1e-5))
            return F.batch_norm(x, mean, var, scale, bias, training=False, eps=eps)
        if op == "Relu":
            return F.relu(inputs[0])
        if op == "MaxPool":
            kh, kw = (int(v) for v in _attr(node, "kernel_shape"))
            sh, sw = (int(v) for v in _attr(node, "strides", [1, 1]))
            pt, pl, pb, pr = (int(v) for v in _attr(node, "pads", [0, 0, 0, 0]))
            if (pt, pl) != (pb, pr):
                raise UnsupportedOpError("asymmetric pooling padding is not supported")
            return F.max_pool2d(inputs[0], (kh, kw), stride=(sh, sw), padding=(pt, pl))
        if op == "AveragePool":
            kh, kw = (int(v) for v in _attr(node, "kernel_shape"))
            sh, sw = (int(v) for v in _attr(node, "strides", [1, 1]))
            pt, pl, pb, pr = (int(v) for v in _attr(node, "pads", [0, 0, 0, 0]))
            return F.avg_pool2d(
                inputs[0], (kh, kw), stride=(sh, sw), padding=(pt, pl), count_include_pad=False
            )
        if op == "GlobalAveragePool":
            return inputs[0].mean(dim=(2, 3), keepdim=True)
        if op == "Add":
            return inputs[0] + inputs[1]
        if op == "Flatten":
            return torch.flatten(inputs[0], start_dim=int(_attr(node, "axis", 1)))
        if op == "Reshape":
            return inputs[0].reshape([int(v) for v in inputs[1].tolist()])
        if op == "Gemm":
            a, b = inputs[0], inputs[1]
            if int(_attr(node, "transA", 0)):
                a = a.T
            if int(_attr(node, "transB", 0)):
                b = b.T
            out = float(_attr(node, "alpha", 1.0)) * (a @ b)
            if len(inputs) > 2:
                out = out + float(_attr(node, "beta", 1.0)) * inputs[2]
            return out
        if op == "MatMul":
            return inputs[0] @ inputs[1]
        if op == "Identity":
            return inputs[0]
        if op == "Abs":
            return torch.abs(inputs[0])
        raise UnsupportedOpError(op)


def make_executor(model: OnnxModel, backend: str | None = None) -> _BaseExecutor:
    """Build the preferred executor: torch when available, numpy otherwise."""
    if backend not in (None, "numpy", "torch"):
        raise ValueError(f"unknown backend '{backend}'")
    if backend == "torch" or (backend is None and torch is not None):
        if torch is None:
            raise RuntimeError("torch backend requested but torch is not importable")
        return TorchExecutor(model)
    return NumpyExecutor(model)
