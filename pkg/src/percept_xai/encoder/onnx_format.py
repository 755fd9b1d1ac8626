"""Minimal reader for the ONNX protobuf container.

Decodes the subset of the format that convnet feature extractors use: graph
topology, node attributes, initializer tensors, and tensor-typed inputs and
outputs. The protobuf wire encoding is parsed directly; field numbers are
stable by the format's own compatibility rules, and unknown fields are
skipped, so models from newer producers still load as long as they stick to
tensor-valued single-graph models.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "OnnxFormatError",
    "Attribute",
    "Node",
    "TensorInfo",
    "OnnxModel",
    "parse_model",
    "load_model",
]


class OnnxFormatError(ValueError):
    """Raised when a file cannot be decoded as an ONNX model."""


# TensorProto.DataType values -> numpy dtypes (the ones we execute).
_TENSOR_DTYPES = {
    1: np.dtype("<f4"),  # FLOAT
    6: np.dtype("<i4"),  # INT32
    7: np.dtype("<i8"),  # INT64
    9: np.dtype("bool"),  # BOOL
    11: np.dtype("<f8"),  # DOUBLE
}


def _read_varint(buf: bytes, pos: int) -> tuple[int, int]:
    result = 0
    shift = 0
    while True:
        if pos >= len(buf):
            raise OnnxFormatError("truncated varint")
        byte = buf[pos]
        pos += 1
        result |= (byte & 0x7F) << shift
        if not byte & 0x80:
            return result, pos
        shift += 7
        if shift > 70:
            raise OnnxFormatError("varint too long")


def _iter_fields(buf: bytes):
    """Yield (field_number, wire_type, payload) triples of one message."""
    pos = 0
    end = len(buf)
    while pos < end:
        key, pos = _read_varint(buf, pos)
        field_no = key >> 3
        wire = key & 7
        if wire == 0:  # varint
            value, pos = _read_varint(buf, pos)
        elif wire == 1:  # fixed64
            value, pos = buf[pos : pos + 8], pos + 8
        elif wire == 2:  # length-delimited
            size, pos = _read_varint(buf, pos)
            if pos + size > end:
                raise OnnxFormatError("truncated length-delimited field")
            value, pos = buf[pos : pos + size], pos + size
        elif wire == 5:  # fixed32
            value, pos = buf[pos : pos + 4], pos + 4
        else:
            raise OnnxFormatError(f"unsupported wire type {wire}")
        yield field_no, wire, value


def _to_signed64(value: int) -> int:
    return value - (1 << 64) if value >= (1 << 63) else value


def _varint_list(wire: int, payload) -> list[int]:
    """A repeated varint field, in either packed or unpacked encoding."""
    if wire == 0:
        return [_to_signed64(payload)]
    values = []
    pos = 0
    while pos < len(payload):
        value, pos = _read_varint(payload, pos)
        values.append(_to_signed64(value))
    return values


@dataclass
class Attribute:
    name: str
    value: object


@dataclass
class Node:
    op_type: str
    inputs: list[str]
    outputs: list[str]
    name: str = ""
    attrs: dict[str, object] = field(default_factory=dict)


@dataclass
class TensorInfo:
    """Name and (possibly symbolic) shape of a graph input or output."""

    name: str
    shape: list[object]  # int for fixed dims, str for symbolic, None if unknown
    elem_type: int = 1


@dataclass
class OnnxModel:
    nodes: list[Node]
    initializers: dict[str, np.ndarray]
    inputs: list[TensorInfo]
    outputs: list[TensorInfo]
    graph_name: str = ""
    producer: str = ""
    ir_version: int = 0
    opset: int = 0


def _parse_tensor(buf: bytes) -> tuple[str, np.ndarray]:
    dims: list[int] = []
    data_type = 1
    name = ""
    raw = None
    float_data: list[float] = []
    int_data: list[int] = []
    double_data: list[float] = []
    for field_no, wire, payload in _iter_fields(buf):
        if field_no == 1:
            dims.extend(_varint_list(wire, payload))
        elif field_no == 2:
            data_type = payload if wire == 0 else 1
        elif field_no == 4:  # float_data, packed or single fixed32
            float_data.extend(np.frombuffer(payload, dtype="<f4"))
        elif field_no in (5, 7):  # int32_data / int64_data
            int_data.extend(_varint_list(wire, payload))
        elif field_no == 8:
            name = payload.decode("utf-8")
        elif field_no == 9:
            raw = payload
        elif field_no == 10:  # double_data
            double_data.extend(np.frombuffer(payload, dtype="<f8"))
    dtype = _TENSOR_DTYPES.get(data_type)
    if dtype is None:
        raise OnnxFormatError(f"unsupported tensor data type {data_type} for '{name}'")
    if raw is not None:
        array = np.frombuffer(raw, dtype=dtype)
    elif float_data:
        array = np.asarray(float_data, dtype=dtype)
    elif double_data:
        array = np.asarray(double_data, dtype=dtype)
    else:
        array = np.asarray(int_data, dtype=dtype)
    expected = int(np.prod(dims)) if dims else array.size
    if array.size != expected:
        raise OnnxFormatError(
            f"tensor '{name}': payload holds {array.size} elements, dims {dims} expect {expected}"
        )
    return name, array.reshape(dims).copy()


def _parse_attribute(buf: bytes) -> Attribute:
    name = ""
    value: object = None
    floats: list[float] = []
    ints: list[int] = []
    strings: list[bytes] = []
    for field_no, wire, payload in _iter_fields(buf):
        if field_no == 1:
            name = payload.decode("utf-8")
        elif field_no == 2:
            value = float(np.frombuffer(payload, dtype="<f4")[0])
        elif field_no == 3:
            value = _to_signed64(payload)
        elif field_no == 4:
            value = payload.decode("utf-8", errors="replace")
        elif field_no == 5:
            value = _parse_tensor(payload)[1]
        elif field_no == 7:
            floats.extend(float(v) for v in np.frombuffer(payload, dtype="<f4"))
        elif field_no == 8:
            ints.extend(_varint_list(wire, payload))
        elif field_no == 9:
            strings.append(payload)
    if ints:
        value = [int(v) for v in ints]
    elif floats:
        value = [float(v) for v in floats]
    elif strings:
        value = [s.decode("utf-8", errors="replace") for s in strings]
    return Attribute(name=name, value=value)


def _parse_node(buf: bytes) -> Node:
    node = Node(op_type="", inputs=[], outputs=[])
    for field_no, _wire, payload in _iter_fields(buf):
        if field_no == 1:
            node.inputs.append(payload.decode("utf-8"))
        elif field_no == 2:
            node.outputs.append(payload.decode("utf-8"))
        elif field_no == 3:
            node.name = payload.decode("utf-8")
        elif field_no == 4:
            node.op_type = payload.decode("utf-8")
        elif field_no == 5:
            attr = _parse_attribute(payload)
            node.attrs[attr.name] = attr.value
    if not node.op_type:
        raise OnnxFormatError("node without op_type")
    return node


def _parse_shape(buf: bytes) -> list[object]:
    dims: list[object] = []
    for field_no, _wire, payload in _iter_fields(buf):
        if field_no == 1:
            dim: object = None
            for sub_no, sub_wire, sub_payload in _iter_fields(payload):
                if sub_no == 1 and sub_wire == 0:
                    dim = _to_signed64(sub_payload)
                elif sub_no == 2:
                    dim = sub_payload.decode("utf-8")
            dims.append(dim)
    return dims


def _parse_value_info(buf: bytes) -> TensorInfo:
    info = TensorInfo(name="", shape=[])
    for field_no, _wire, payload in _iter_fields(buf):
        if field_no == 1:
            info.name = payload.decode("utf-8")
        elif field_no == 2:
            for type_no, _tw, type_payload in _iter_fields(payload):
                if type_no == 1:  # tensor_type
                    for tt_no, tt_wire, tt_payload in _iter_fields(type_payload):
                        if tt_no == 1 and tt_wire == 0:
                            info.elem_type = tt_payload
                        elif tt_no == 2:
                            info.shape = _parse_shape(tt_payload)
    return info


def _parse_graph(buf: bytes) -> OnnxModel:
    model = OnnxModel(nodes=[], initializers={}, inputs=[], outputs=[])
    for field_no, _wire, payload in _iter_fields(buf):
        if field_no == 1:
            model.nodes.append(_parse_node(payload))
        elif field_no == 2:
            model.graph_name = payload.decode("utf-8")
        elif field_no == 5:
            name, array = _parse_tensor(payload)
            model.initializers[name] = array
        elif field_no == 11:
            model.inputs.append(_parse_value_info(payload))
        elif field_no == 12:
            model.outputs.append(_parse_value_info(payload))
    return model


def parse_model(data: bytes) -> OnnxModel:
    """Decode serialized ONNX model bytes."""
    if not data:
        raise OnnxFormatError("empty model file")
    model = None
    ir_version = 0
    producer = ""
    opset = 0
    try:
        for field_no, wire, payload in _iter_fields(data):
            if field_no == 1 and wire == 0:
                ir_version = payload
            elif field_no == 2 and wire == 2:
                producer = payload.decode("utf-8", errors="replace")
            elif field_no == 7 and wire == 2:
                model = _parse_graph(payload)
            elif field_no == 8 and wire == 2:
                for op_no, op_wire, op_payload in _iter_fields(payload):
                    if op_no == 2 and op_wire == 0:
                        opset = max(opset, op_payload)
    except OnnxFormatError:
        raise
    except Exception as exc:  # malformed bytes surface as format errors
        raise OnnxFormatError(f"malformed model bytes: {exc}") from exc
    if model is None:
        raise OnnxFormatError("no graph found in model file")
    if not model.nodes:
        raise OnnxFormatError("model graph has no nodes")
    model.ir_version = ir_version
    model.producer = producer
    model.opset = opset
    # Initializers double as graph inputs in older exports; drop them there.
    model.inputs = [info for info in model.inputs if info.name not in model.initializers]
    return model


def load_model(path) -> OnnxModel:
    """Read and decode an ONNX model file."""
    with open(path, "rb") as handle:
        return parse_model(handle.read())
