"""Self-contained ONNX graph loading and execution.

Reads the ONNX protobuf wire format directly (no onnx/onnxruntime
dependency; neither is available everywhere this runs) and evaluates the
graph with numpy. Only the operator subset used by the exported text models
is implemented; an unsupported operator is a hard error naming it. Graphs
are executed single-threaded and node-by-node in file order, which the
format guarantees is topological.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

# TensorProto.DataType values we accept.
_DTYPES = {
    1: np.dtype("<f4"),  # FLOAT
    6: np.dtype("<i4"),  # INT32
    7: np.dtype("<i8"),  # INT64
    9: np.dtype("bool"),  # BOOL
    11: np.dtype("<f8"),  # DOUBLE
}

FLOAT = 1
INT64 = 7


class GraphError(ValueError):
    """Malformed or unsupported graph file."""


# --- protobuf wire-format primitives -------------------------------------


def _read_varint(buf: bytes, pos: int) -> tuple[int, int]:
    result = 0
    shift = 0
    while True:
        if pos >= len(buf):
            raise GraphError("truncated varint")
        byte = buf[pos]
        pos += 1
        result |= (byte & 0x7F) << shift
        if not byte & 0x80:
            return result, pos
        shift += 7
        if shift > 70:
            raise GraphError("varint too long")


def _fields(buf: bytes):
    """Yield (field_number, wire_type, value) triples from a message."""
    pos = 0
    while pos < len(buf):
        key, pos = _read_varint(buf, pos)
        number, wire = key >> 3, key & 0x7
        if wire == 0:
            value, pos = _read_varint(buf, pos)
        elif wire == 1:
            value, pos = buf[pos : pos + 8], pos + 8
        elif wire == 2:
            size, pos = _read_varint(buf, pos)
            value, pos = buf[pos : pos + size], pos + size
        elif wire == 5:
            value, pos = buf[pos : pos + 4], pos + 4
        else:
            raise GraphError(f"unsupported wire type {wire}")
        yield number, wire, value


def _packed_varints(value: bytes, wire: int) -> list[int]:
    if wire == 0:
        return [value]  # already decoded
    out = []
    pos = 0
    while pos < len(value):
        item, pos = _read_varint(value, pos)
        out.append(item)
    return out


def _signed(value: int) -> int:
    return value - (1 << 64) if value >= (1 << 63) else value


# --- model structure ------------------------------------------------------


@dataclass
class TensorInfo:
    name: str
    elem_type: int
    dims: list[int | str] = field(default_factory=list)  # str for symbolic dims


@dataclass
class Node:
    op_type: str
    inputs: list[str]
    outputs: list[str]
    attributes: dict[str, object]


@dataclass
class Graph:
    nodes: list[Node]
    initializers: dict[str, np.ndarray]
    inputs: list[TensorInfo]
    outputs: list[TensorInfo]
    name: str = ""

    def input_info(self, name: str) -> TensorInfo | None:
        for info in self.inputs:
            if info.name == name:
                return info
        return None


@dataclass
class Model:
    ir_version: int
    opset_version: int
    graph: Graph


def _parse_tensor(buf: bytes) -> tuple[str, np.ndarray]:
    dims: list[int] = []
    data_type = 0
    name = ""
    raw = b""
    floats: list[float] = []
    ints: list[int] = []
    for number, wire, value in _fields(buf):
        if number == 1:
            dims.extend(_signed(v) for v in _packed_varints(value, wire))
        elif number == 2:
            data_type = value
        elif number == 4:  # float_data
            if wire == 5:
                floats.append(struct.unpack("<f", value)[0])
            else:
                floats.extend(np.frombuffer(value, dtype="<f4").tolist())
        elif number == 7:  # int64_data
            ints.extend(_signed(v) for v in _packed_varints(value, wire))
        elif number == 8:
            name = value.decode("utf-8")
        elif number == 9:
            raw = value
    if data_type not in _DTYPES:
        raise GraphError(f"tensor {name!r}: unsupported data type {data_type}")
    dtype = _DTYPES[data_type]
    if raw:
        array = np.frombuffer(raw, dtype=dtype)
    elif floats:
        array = np.array(floats, dtype=dtype)
    elif ints:
        array = np.array(ints, dtype=dtype)
    else:
        array = np.zeros(0, dtype=dtype)
    return name, array.reshape(dims if dims else ())


def _parse_attribute(buf: bytes) -> tuple[str, object]:
    name = ""
    value: object = None
    ints: list[int] = []
    floats: list[float] = []
    for number, wire, item in _fields(buf):
        if number == 1:
            name = item.decode("utf-8")
        elif number == 2:  # f
            value = struct.unpack("<f", item)[0]
        elif number == 3:  # i
            value = _signed(item)
        elif number == 4:  # s
            value = item.decode("utf-8")
        elif number == 5:  # t
            value = _parse_tensor(item)[1]
        elif number == 7:  # floats
            if wire == 5:
                floats.append(struct.unpack("<f", item)[0])
            else:
                floats.extend(np.frombuffer(item, dtype="<f4").tolist())
        elif number == 8:  # ints
            ints.extend(_signed(v) for v in _packed_varints(item, wire))
    if ints:
        value = ints
    elif floats:
        value = floats
    return name, value


def _parse_value_info(buf: bytes) -> TensorInfo:
    info = TensorInfo(name="", elem_type=0)
    for number, _, value in _fields(buf):
        if number == 1:
            info.name = value.decode("utf-8")
        elif number == 2:  # TypeProto
            for tnum, _, tval in _fields(value):
                if tnum != 1:  # tensor_type
                    continue
                for fnum, _, fval in _fields(tval):
                    if fnum == 1:
                        info.elem_type = fval
                    elif fnum == 2:  # shape
                        for snum, _, sval in _fields(fval):
                            if snum != 1:
                                continue
                            dim: int | str = -1
                            for dnum, _, dval in _fields(sval):
                                if dnum == 1:
                                    dim = _signed(dval)
                                elif dnum == 2:
                                    dim = dval.decode("utf-8")
                            info.dims.append(dim)
    return info


def _parse_node(buf: bytes) -> Node:
    node = Node(op_type="", inputs=[], outputs=[], attributes={})
    for number, _, value in _fields(buf):
        if number == 1:
            node.inputs.append(value.decode("utf-8"))
        elif number == 2:
            node.outputs.append(value.decode("utf-8"))
        elif number == 4:
            node.op_type = value.decode("utf-8")
        elif number == 5:
            name, attr = _parse_attribute(value)
            node.attributes[name] = attr
    return node


def _parse_graph(buf: bytes) -> Graph:
    graph = Graph(nodes=[], initializers={}, inputs=[], outputs=[])
    for number, _, value in _fields(buf):
        if number == 1:
            graph.nodes.append(_parse_node(value))
        elif number == 2:
            graph.name = value.decode("utf-8")
        elif number == 5:
            name, tensor = _parse_tensor(value)
            graph.initializers[name] = tensor
        elif number == 11:
            graph.inputs.append(_parse_value_info(value))
        elif number == 12:
            graph.outputs.append(_parse_value_info(value))
    return graph


def load_model(path: str | Path) -> Model:
    buf = Path(path).read_bytes()
    ir_version = 0
    opset = 0
    graph: Graph | None = None
    for number, _, value in _fields(buf):
        if number == 1:
            ir_version = value
        elif number == 7:
            graph = _parse_graph(value)
        elif number == 8:
            for onum, _, oval in _fields(value):
                if onum == 2:
                    opset = max(opset, _signed(oval))
    if graph is None:
        raise GraphError(f"{path}: no graph found in model file")
    return Model(ir_version=ir_version, opset_version=opset, graph=graph)


# --- execution ------------------------------------------------------------


def _axes_of(node: Node, values: dict[str, np.ndarray], input_index: int) -> list[int] | None:
    if len(node.inputs) > input_index:
        return [int(v) for v in values[node.inputs[input_index]].reshape(-1)]
    axes = node.attributes.get("axes")
    if axes is None:
        return None
    return [int(v) for v in axes]


def _run_node(node: Node, values: dict[str, np.ndarray]) -> list[np.ndarray]:
    def arg(i: int) -> np.ndarray:
        name = node.inputs[i]
        if name not in values:
            raise GraphError(f"node {node.op_type}: missing input tensor {name!r}")
        return values[name]

    op = node.op_type
    if op == "Add":
        return [arg(0) + arg(1)]
    if op == "Sub":
        return [arg(0) - arg(1)]
    if op == "Mul":
        return [arg(0) * arg(1)]
    if op == "Div":
        return [arg(0) / arg(1)]
    if op == "MatMul":
        return [np.matmul(arg(0), arg(1))]
    if op == "Relu":
        return [np.maximum(arg(0), 0)]
    if op == "Sqrt":
        return [np.sqrt(arg(0))]
    if op == "Tanh":
        return [np.tanh(arg(0))]
    if op == "Gather":
        axis = int(node.attributes.get("axis", 0))
        return [np.take(arg(0), arg(1), axis=axis)]
    if op == "Transpose":
        perm = node.attributes.get("perm")
        return [np.transpose(arg(0), axes=perm)]
    if op == "Softmax":
        axis = int(node.attributes.get("axis", -1))
        x = arg(0)
        shifted = x - x.max(axis=axis, keepdims=True)
        exp = np.exp(shifted)
        return [exp / exp.sum(axis=axis, keepdims=True)]
    if op == "Cast":
        to = int(node.attributes["to"])
        if to not in _DTYPES:
            raise GraphError(f"Cast to unsupported data type {to}")
        return [arg(0).astype(_DTYPES[to])]
    if op == "CumSum":
        if node.attributes.get("exclusive") or node.attributes.get("reverse"):
            raise GraphError("CumSum: only default exclusive/reverse supported")
        axis = int(values[node.inputs[1]].reshape(()))
        return [np.cumsum(arg(0), axis=axis, dtype=arg(0).dtype)]
    if op == "Unsqueeze":
        axes = _axes_of(node, values, 1)
        if axes is None:
            raise GraphError("Unsqueeze: missing axes")
        out = arg(0)
        for axis in sorted(axes):
            out = np.expand_dims(out, axis=axis)
        return [out]
    if op in ("ReduceMean", "ReduceSum"):
        axes = _axes_of(node, values, 1)
        keepdims = bool(node.attributes.get("keepdims", 1))
        reducer = np.mean if op == "ReduceMean" else np.sum
        x = arg(0)
        axis = tuple(axes) if axes is not None else None
        return [reducer(x, axis=axis, keepdims=keepdims, dtype=x.dtype)]
    raise GraphError(f"unsupported operator {op!r}")


class GraphRunner:
    """Evaluate a loaded graph on named inputs.

    Inputs are validated against the graph's declared names and element
    types; a mismatch names the offending tensor. Instances hold only
    read-only state but run nodes sequentially, so use one instance per
    worker thread.
    """

    def __init__(self, model: Model):
        self.model = model
        self.graph = model.graph
        self._feed_names = [
            info.name
            for info in self.graph.inputs
            if info.name not in self.graph.initializers
        ]

    def input_names(self) -> list[str]:
        return list(self._feed_names)

    def output_names(self) -> list[str]:
        return [info.name for info in self.graph.outputs]

    def run(self, feeds: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
        missing = [name for name in self._feed_names if name not in feeds]
        if missing:
            raise GraphError(f"missing graph input {missing[0]!r}")
        unknown = [name for name in feeds if name not in self._feed_names]
        if unknown:
            raise GraphError(f"unexpected graph input {unknown[0]!r}")
        values: dict[str, np.ndarray] = dict(self.graph.initializers)
        for name, array in feeds.items():
            info = self.graph.input_info(name)
            expected = _DTYPES.get(info.elem_type)
            if expected is not None and np.dtype(array.dtype) != expected:
                raise GraphError(
                    f"graph input {name!r} expects dtype {expected}, got {array.dtype}"
                )
            values[name] = array
        for node in self.graph.nodes:
            results = _run_node(node, values)
            for out_name, result in zip(node.outputs, results):
                values[out_name] = result
        outputs = {}
        for info in self.graph.outputs:
            if info.name not in values:
                raise GraphError(f"graph output {info.name!r} was never produced")
            outputs[info.name] = values[info.name]
        return outputs
