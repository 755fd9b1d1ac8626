"""ONNX protobuf serialization for exported feature extractors.

Writes the wire format directly (varint/length-delimited fields against the
frozen ONNX field numbers), which keeps the exporter independent of the onnx
package. Covers what convnet backbones need: float32 initializers carried as
raw data, scalar and int-list node attributes, tensor-typed graph inputs and
outputs with an optional symbolic batch dimension.
"""

from __future__ import annotations

import numpy as np

_OPSET = 17
_IR_VERSION = 8


def _varint(value: int) -> bytes:
    out = bytearray()
    while True:
        byte = value & 0x7F
        value >>= 7
        if value:
            out.append(byte | 0x80)
        else:
            out.append(byte)
            return bytes(out)


def _tag(field_no: int, wire: int) -> bytes:
    return _varint((field_no << 3) | wire)


def _len_field(field_no: int, payload: bytes) -> bytes:
    return _tag(field_no, 2) + _varint(len(payload)) + payload


def _str_field(field_no: int, text: str) -> bytes:
    return _len_field(field_no, text.encode("utf-8"))


def _varint_field(field_no: int, value: int) -> bytes:
    return _tag(field_no, 0) + _varint(value)


def tensor_proto(name: str, array: np.ndarray) -> bytes:
    """TensorProto with float32 or int64 raw payload."""
    array = np.asarray(array)
    if array.dtype.kind == "f":
        data_type, raw = 1, np.ascontiguousarray(array, dtype="<f4").tobytes()
    elif array.dtype.kind in "iu":
        data_type, raw = 7, np.ascontiguousarray(array, dtype="<i8").tobytes()
    else:
        raise TypeError(f"unsupported initializer dtype {array.dtype}")
    payload = b"".join(_varint_field(1, int(d)) for d in array.shape)
    payload += _varint_field(2, data_type)
    payload += _str_field(8, name)
    payload += _len_field(9, raw)
    return payload


def _attribute(name: str, value) -> bytes:
    payload = _str_field(1, name)
    if isinstance(value, int):
        payload += _varint_field(3, value) + _varint_field(20, 2)  # INT
    elif isinstance(value, float):
        payload += _tag(2, 5) + np.float32(value).tobytes() + _varint_field(20, 1)  # FLOAT
    elif isinstance(value, (list, tuple)):
        payload += b"".join(_varint_field(8, int(v)) for v in value)
        payload += _varint_field(20, 7)  # INTS
    else:
        raise TypeError(f"unsupported attribute {name}={value!r}")
    return payload


def node_proto(op_type: str, inputs, outputs, **attrs) -> bytes:
    payload = b"".join(_str_field(1, name) for name in inputs)
    payload += b"".join(_str_field(2, name) for name in outputs)
    payload += _str_field(4, op_type)
    payload += b"".join(_len_field(5, _attribute(k, v)) for k, v in attrs.items())
    return payload


def value_info_proto(name: str, shape) -> bytes:
    dims = b""
    for dim in shape:
        if isinstance(dim, str):
            dims += _len_field(1, _str_field(2, dim))
        else:
            dims += _len_field(1, _varint_field(1, int(dim)))
    tensor_type = _varint_field(1, 1) + _len_field(2, dims)  # elem_type FLOAT
    return _str_field(1, name) + _len_field(2, _len_field(1, tensor_type))


def model_proto(
    nodes: list[bytes],
    initializers: dict[str, np.ndarray],
    input_info: bytes,
    output_info: bytes,
    graph_name: str,
) -> bytes:
    graph = b"".join(_len_field(1, n) for n in nodes)
    graph += _str_field(2, graph_name)
    graph += b"".join(_len_field(5, tensor_proto(k, v)) for k, v in initializers.items())
    graph += _len_field(11, input_info)
    graph += _len_field(12, output_info)
    out = _varint_field(1, _IR_VERSION)
    out += _str_field(2, "percept-xai-exporter")
    out += _len_field(7, graph)
    out += _len_field(8, _str_field(1, "") + _varint_field(2, _OPSET))
    return out
