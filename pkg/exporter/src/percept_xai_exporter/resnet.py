"""Torchvision ResNet backbones to ONNX graphs, classifier head removed.

The emitter walks the module tree in forward order (conv1/bn1/maxpool,
layer1..4 BasicBlock or Bottleneck stacks, global average pool, flatten) and
records each layer's weights as initializers, so the exported graph computes
exactly the backbone's pooled feature vector. Checkpoints saved with common
wrapper prefixes (DataParallel ``module.``, VISSL-style
``model.trunk._feature_blocks.`` and friends) are normalized before loading.
"""

from __future__ import annotations

import numpy as np
import torch
from torchvision.models import resnet as tv_resnet

from .onnx_writer import model_proto, node_proto, value_info_proto

SUPPORTED_ARCHS = ("resnet18", "resnet34", "resnet50", "resnet101", "resnet152")

_PREFIXES = (
    "module.",
    "model.",
    "encoder.",
    "backbone.",
    "trunk.",
    "_feature_blocks.",
)

_HEAD_KEYS = ("fc.", "head.", "classifier.")


class ExportError(RuntimeError):
    """Raised when a backbone cannot be built or a checkpoint does not fit."""


def build_backbone(arch: str) -> torch.nn.Module:
    if arch not in SUPPORTED_ARCHS:
        raise ExportError(f"unsupported architecture '{arch}'; supported: {', '.join(SUPPORTED_ARCHS)}")
    return getattr(tv_resnet, arch)(weights=None).eval()


def normalize_state_dict(raw: dict) -> dict:
    """Strip wrapper prefixes and classifier-head entries from a checkpoint."""
    state = raw
    for container_key in ("state_dict", "model_state_dict", "classy_state_dict"):
        if isinstance(state, dict) and container_key in state and isinstance(state[container_key], dict):
            state = state[container_key]
    cleaned = {}
    for key, value in state.items():
        name = key
        changed = True
        while changed:
            changed = False
            for prefix in _PREFIXES:
                if name.startswith(prefix):
                    name = name[len(prefix):]
                    changed = True
        if any(name.startswith(head) for head in _HEAD_KEYS):
            continue
        cleaned[name] = value
    return cleaned


def load_checkpoint(model: torch.nn.Module, path) -> tuple[list[str], list[str]]:
    """Load a (possibly wrapped) checkpoint; returns (missing, unexpected)."""
    raw = torch.load(path, map_location="cpu", weights_only=True)
    if not isinstance(raw, dict):
        raise ExportError(f"checkpoint '{path}' does not contain a state dict")
    cleaned = normalize_state_dict(raw)
    try:
        result = model.load_state_dict(cleaned, strict=False)
    except RuntimeError as exc:  # shape mismatches
        raise ExportError(f"checkpoint '{path}' does not fit the architecture: {exc}") from exc
    missing = [k for k in result.missing_keys if not k.startswith("fc.")]
    if missing:
        raise ExportError(f"checkpoint '{path}' is missing backbone weights: {missing[:5]} ...")
    return list(result.missing_keys), list(result.unexpected_keys)


class _GraphAccumulator:
    def __init__(self):
        self.nodes: list[bytes] = []
        self.weights: dict[str, np.ndarray] = {}
        self._counter = 0

    def fresh(self, prefix: str) -> str:
        self._counter += 1
        return f"{prefix}.{self._counter}"

    def conv(self, x: str, module: torch.nn.Conv2d, name: str) -> str:
        if module.groups != 1 or any(d != 1 for d in module.dilation):
            raise ExportError(f"conv '{name}' uses groups/dilation, unsupported")
        weight_name = f"{name}.weight"
        self.weights[weight_name] = module.weight.detach().numpy()
        inputs = [x, weight_name]
        if module.bias is not None:
            bias_name = f"{name}.bias"
            self.weights[bias_name] = module.bias.detach().numpy()
            inputs.append(bias_name)
        out = self.fresh("conv")
        ph, pw = module.padding
        sh, sw = module.stride
        kh, kw = module.kernel_size
        self.nodes.append(node_proto(
            "Conv", inputs, [out],
            strides=[sh, sw], pads=[ph, pw, ph, pw], kernel_shape=[kh, kw],
        ))
        return out

    def batch_norm(self, x: str, module: torch.nn.BatchNorm2d, name: str) -> str:
        parts = {
            f"{name}.scale": module.weight,
            f"{name}.bias": module.bias,
            f"{name}.mean": module.running_mean,
            f"{name}.var": module.running_var,
        }
        for key, tensor in parts.items():
            self.weights[key] = tensor.detach().numpy()
        out = self.fresh("bn")
        self.nodes.append(node_proto(
            "BatchNormalization", [x, *parts.keys()], [out], epsilon=float(module.eps),
        ))
        return out

    def relu(self, x: str) -> str:
        out = self.fresh("relu")
        self.nodes.append(node_proto("Relu", [x], [out]))
        return out

    def max_pool(self, x: str, module: torch.nn.MaxPool2d) -> str:
        out = self.fresh("pool")
        k = module.kernel_size if isinstance(module.kernel_size, tuple) else (module.kernel_size,) * 2
        s = module.stride if isinstance(module.stride, tuple) else (module.stride,) * 2
        p = module.padding if isinstance(module.padding, tuple) else (module.padding,) * 2
        self.nodes.append(node_proto(
            "MaxPool", [x], [out],
            kernel_shape=list(k), strides=list(s), pads=[p[0], p[1], p[0], p[1]],
        ))
        return out

    def add(self, a: str, b: str) -> str:
        out = self.fresh("add")
        self.nodes.append(node_proto("Add", [a, b], [out]))
        return out


def _emit_basic_block(g: _GraphAccumulator, x: str, block, name: str) -> str:
    y = g.relu(g.batch_norm(g.conv(x, block.conv1, f"{name}.conv1"), block.bn1, f"{name}.bn1"))
    y = g.batch_norm(g.conv(y, block.conv2, f"{name}.conv2"), block.bn2, f"{name}.bn2")
    skip = x
    if block.downsample is not None:
        skip = g.batch_norm(
            g.conv(x, block.downsample[0], f"{name}.down.conv"),
            block.downsample[1], f"{name}.down.bn",
        )
    return g.relu(g.add(y, skip))


def _emit_bottleneck(g: _GraphAccumulator, x: str, block, name: str) -> str:
    y = g.relu(g.batch_norm(g.conv(x, block.conv1, f"{name}.conv1"), block.bn1, f"{name}.bn1"))
    y = g.relu(g.batch_norm(g.conv(y, block.conv2, f"{name}.conv2"), block.bn2, f"{name}.bn2"))
    y = g.batch_norm(g.conv(y, block.conv3, f"{name}.conv3"), block.bn3, f"{name}.bn3")
    skip = x
    if block.downsample is not None:
        skip = g.batch_norm(
            g.conv(x, block.downsample[0], f"{name}.down.conv"),
            block.downsample[1], f"{name}.down.bn",
        )
    return g.relu(g.add(y, skip))


def emit_onnx(model: torch.nn.Module, input_size: tuple[int, int], graph_name: str = "backbone") -> bytes:
    """Serialize a torchvision ResNet's feature extractor as ONNX bytes."""
    g = _GraphAccumulator()
    x = g.relu(g.batch_norm(g.conv("input", model.conv1, "stem.conv"), model.bn1, "stem.bn"))
    x = g.max_pool(x, model.maxpool)
    for layer_index in (1, 2, 3, 4):
        layer = getattr(model, f"layer{layer_index}")
        for block_index, block in enumerate(layer):
            name = f"layer{layer_index}.{block_index}"
            if isinstance(block, tv_resnet.Bottleneck):
                x = _emit_bottleneck(g, x, block, name)
            elif isinstance(block, tv_resnet.BasicBlock):
                x = _emit_basic_block(g, x, block, name)
            else:
                raise ExportError(f"unsupported residual block type {type(block).__name__}")
    gap = g.fresh("gap")
    g.nodes.append(node_proto("GlobalAveragePool", [x], [gap]))
    g.nodes.append(node_proto("Flatten", [gap], ["embedding"], axis=1))

    height, width = input_size
    return model_proto(
        g.nodes,
        g.weights,
        input_info=value_info_proto("input", ["N", 3, height, width]),
        output_info=value_info_proto("embedding", ["N", embedding_dim(model)]),
        graph_name=graph_name,
    )


def embedding_dim(model: torch.nn.Module) -> int:
    return int(model.fc.in_features)


@torch.inference_mode()
def source_embeddings(
    model: torch.nn.Module,
    images01: np.ndarray,
    mean: tuple[float, float, float],
    std: tuple[float, float, float],
) -> np.ndarray:
    """Pooled backbone features of (N, H, W, 3) images in [0, 1].

    The reference implementation the exported graph is compared against.
    """
    x = (images01.astype(np.float32) - np.asarray(mean, dtype=np.float32)) / np.asarray(
        std, dtype=np.float32
    )
    t = torch.from_numpy(np.ascontiguousarray(x.transpose(0, 3, 1, 2)))
    y = model.conv1(t)
    y = model.bn1(y)
    y = model.relu(y)
    y = model.maxpool(y)
    for layer_index in (1, 2, 3, 4):
        y = getattr(model, f"layer{layer_index}")(y)
    y = model.avgpool(y)
    return torch.flatten(y, 1).numpy()
