"""Minimal ONNX protobuf writer.

Serializes the ONNX wire format directly (the onnx package is not
available in every build environment this tool targets), covering exactly
the message subset the exported text models need: a flat graph of nodes
with int/float/ints attributes, raw-data initializers, and value infos
with one symbolic dimension. Output is standard protobuf and loads in any
ONNX runtime.
"""

from __future__ import annotations

import struct

import numpy as np

IR_VERSION = 8
OPSET_VERSION = 17

FLOAT = 1
INT64 = 7

_ATTR_FLOAT = 1
_ATTR_INT = 2
_ATTR_INTS = 7


def _varint(value: int) -> bytes:
    value &= (1 << 64) - 1
    out = bytearray()
    while True:
        byte = value & 0x7F
        value >>= 7
        if value:
            out.append(byte | 0x80)
        else:
            out.append(byte)
            return bytes(out)


def _tag(field: int, wire: int) -> bytes:
    return _varint(field << 3 | wire)


def _len_delimited(field: int, payload: bytes) -> bytes:
    return _tag(field, 2) + _varint(len(payload)) + payload


def _string(field: int, text: str) -> bytes:
    return _len_delimited(field, text.encode("utf-8"))


def _uint(field: int, value: int) -> bytes:
    return _tag(field, 0) + _varint(value)


def _packed_ints(field: int, values: list[int]) -> bytes:
    payload = b"".join(_varint(v) for v in values)
    return _len_delimited(field, payload)


def tensor(name: str, array: np.ndarray) -> bytes:
    """TensorProto with raw little-endian data."""
    # note: ascontiguousarray would promote 0-d scalars to 1-d
    array = np.asarray(array)
    if array.dtype == np.float32:
        data_type = FLOAT
        raw = array.astype("<f4").tobytes()
    elif array.dtype == np.int64:
        data_type = INT64
        raw = array.astype("<i8").tobytes()
    else:
        raise ValueError(f"tensor {name!r}: unsupported dtype {array.dtype}")
    out = _packed_ints(1, list(array.shape)) if array.shape else b""  # dims
    out += _uint(2, data_type)
    out += _string(8, name)
    out += _len_delimited(9, raw)  # raw_data
    return out


def _attribute(name: str, value) -> bytes:
    out = _string(1, name)
    if isinstance(value, bool):
        raise ValueError("use int attributes, not bool")
    if isinstance(value, int):
        out += _uint(3, value) + _uint(20, _ATTR_INT)
    elif isinstance(value, float):
        out += _tag(2, 5) + struct.pack("<f", value) + _uint(20, _ATTR_FLOAT)
    elif isinstance(value, (list, tuple)) and all(isinstance(v, int) for v in value):
        out += _packed_ints(8, list(value)) + _uint(20, _ATTR_INTS)
    else:
        raise ValueError(f"attribute {name!r}: unsupported value {value!r}")
    return out


def node(op_type: str, inputs: list[str], outputs: list[str], **attributes) -> bytes:
    out = b"".join(_string(1, name) for name in inputs)
    out += b"".join(_string(2, name) for name in outputs)
    out += _string(4, op_type)
    out += b"".join(
        _len_delimited(5, _attribute(name, value)) for name, value in attributes.items()
    )
    return out


def value_info(name: str, elem_type: int, dims: list[int | str]) -> bytes:
    shape = b""
    for dim in dims:
        if isinstance(dim, str):
            encoded = _string(2, dim)  # dim_param
        else:
            encoded = _uint(1, dim)  # dim_value
        shape += _len_delimited(1, encoded)
    tensor_type = _uint(1, elem_type) + _len_delimited(2, shape)
    type_proto = _len_delimited(1, tensor_type)
    return _string(1, name) + _len_delimited(2, type_proto)


def model(
    nodes: list[bytes],
    initializers: list[bytes],
    inputs: list[bytes],
    outputs: list[bytes],
    graph_name: str = "graph",
    producer: str = "model-export",
) -> bytes:
    graph = b"".join(_len_delimited(1, n) for n in nodes)
    graph += _string(2, graph_name)
    graph += b"".join(_len_delimited(5, t) for t in initializers)
    graph += b"".join(_len_delimited(11, vi) for vi in inputs)
    graph += b"".join(_len_delimited(12, vi) for vi in outputs)
    out = _uint(1, IR_VERSION)
    out += _string(2, producer)
    out += _len_delimited(7, graph)
    out += _len_delimited(8, _string(1, "") + _uint(2, OPSET_VERSION))
    return out
