"""Network description, manifest loading and structural validation.

A model on disk is a JSON manifest listing layers in order plus one raw
little-endian float32 blob per weight reference (row-major, no header).
See ``docs/model_format.md`` for the full layout.
"""
from __future__ import annotations

import graphlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from types import MappingProxyType
from typing import Mapping

import numpy as np

from .tensor import DTYPE, ConvParams, ShapeError

FORMAT = "cnnfix-model"
VERSION = 1

INPUT = "Input"
CONV = "Conv"
RELU = "ReLU"
MAXPOOL = "MaxPool"
FLATTEN = "Flatten"
FC = "FullyConnected"
SOFTMAX = "Softmax"
CONCAT = "Concat"
ADD = "Add"
LSTM = "LstmCell"
BATCHNORM = "BatchNorm"  # manifest only, folded into the preceding Conv

KINDS = (INPUT, CONV, RELU, MAXPOOL, FLATTEN, FC, SOFTMAX, CONCAT, ADD, LSTM)
SINGLE_INPUT = (CONV, RELU, MAXPOOL, FLATTEN, FC, SOFTMAX, LSTM)
LSTM_GATES = ("i", "f", "o", "c")
LSTM_REFS = tuple(f"W_{g}{s}" for g in LSTM_GATES for s in "xm")


class ModelError(Exception):
    """A manifest or weight blob could not be turned into a valid graph."""


@dataclass(frozen=True)
class LayerSpec:
    name: str
    kind: str
    inputs: tuple[str, ...] = ()
    params: Mapping = field(default_factory=dict)
    weights: Mapping[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "inputs", tuple(self.inputs))
        object.__setattr__(self, "params", MappingProxyType(dict(self.params)))
        frozen = {}
        for key, value in self.weights.items():
            arr = np.array(value, dtype=DTYPE)
            arr.flags.writeable = False
            frozen[key] = arr
        object.__setattr__(self, "weights", MappingProxyType(frozen))

    @property
    def conv_params(self) -> ConvParams:
        p = self.params
        return ConvParams(int(p["kernel"]), int(p.get("stride", 1)), int(p.get("pad", 0)),
                          int(p["out_channels"]))


@dataclass(frozen=True)
class NetworkGraph:
    layers: tuple[LayerSpec, ...]
    class_count: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))
        object.__setattr__(self, "_index", {l.name: l for l in self.layers})

    @property
    def num_layers(self) -> int:
        return len(self.layers)

    def __getitem__(self, name: str) -> LayerSpec:
        return self._index[name]

    def __contains__(self, name: str) -> bool:
        return name in self._index

    def __iter__(self):
        return iter(self.layers)

    @property
    def input_layer(self) -> LayerSpec:
        return next(l for l in self.layers if l.kind == INPUT)

    @property
    def input_shape(self) -> tuple[int, ...]:
        return tuple(int(n) for n in self.input_layer.params["shape"])

    @property
    def output_layer(self) -> LayerSpec:
        return self.layers[-1]

    def consumers(self, name: str) -> list[LayerSpec]:
        return [l for l in self.layers if name in l.inputs]


def _layer_shape(layer: LayerSpec, in_shapes: list[tuple]) -> tuple[int, ...]:
    kind = layer.kind
    if kind == INPUT:
        return tuple(int(n) for n in layer.params["shape"])
    if kind in SINGLE_INPUT and len(in_shapes) != 1:
        raise ShapeError(f"{kind} takes exactly one input, got {len(in_shapes)}")
    if kind == CONV:
        shp = in_shapes[0]
        if len(shp) != 3:
            raise ShapeError(f"Conv needs a spatial input, got {shp}")
        cp = layer.conv_params
        return (cp.out_channels, cp.out_size(shp[1]), cp.out_size(shp[2]))
    if kind in (RELU, SOFTMAX):
        return in_shapes[0]
    if kind == MAXPOOL:
        shp = in_shapes[0]
        k, s = int(layer.params["kernel"]), int(layer.params.get("stride", layer.params["kernel"]))
        if len(shp) != 3 or k > shp[1] or k > shp[2]:
            raise ShapeError(f"pool window {k} does not fit input {shp}")
        return (shp[0], (shp[1] - k) // s + 1, (shp[2] - k) // s + 1)
    if kind == FLATTEN:
        return (math.prod(in_shapes[0]),)
    if kind in (FC, LSTM):
        return (int(layer.params["units"]),)
    if kind == CONCAT:
        if len(in_shapes) < 2:
            raise ShapeError(f"Concat needs at least 2 inputs, got {len(in_shapes)}")
        spatial = {s[1:] for s in in_shapes}
        if any(len(s) != 3 for s in in_shapes) or len(spatial) != 1:
            raise ShapeError(f"Concat inputs disagree spatially: {in_shapes}")
        return (sum(s[0] for s in in_shapes),) + in_shapes[0][1:]
    if kind == ADD:
        if len(in_shapes) != 2:
            raise ShapeError(f"Add needs exactly 2 inputs, got {len(in_shapes)}")
        if in_shapes[0] != in_shapes[1]:
            raise ShapeError(f"Add inputs differ in shape: {in_shapes[0]} vs {in_shapes[1]}")
        return in_shapes[0]
    raise ShapeError(f"unknown layer kind {kind!r}")


def expected_weight_shapes(layer: LayerSpec, in_shape: tuple) -> dict[str, tuple]:
    """Shapes of the weight refs a layer must carry, given its input shape."""
    kind = layer.kind
    if kind == CONV:
        cp = layer.conv_params
        return {"kernel": (cp.out_channels, in_shape[0], cp.kernel, cp.kernel),
                "bias": (cp.out_channels,)}
    if kind == FC:
        units = int(layer.params["units"])
        return {"matrix": (units, math.prod(in_shape)), "bias": (units,)}
    if kind == LSTM:
        units, d = int(layer.params["units"]), math.prod(in_shape)
        shapes = {}
        for g in LSTM_GATES:
            shapes[f"W_{g}x"] = (units, d)
            shapes[f"W_{g}m"] = (units, units)
        return shapes
    return {}


def _check_weights(layer: LayerSpec, in_shape: tuple) -> list[str]:
    problems = []
    for ref, shape in expected_weight_shapes(layer, in_shape).items():
        w = layer.weights.get(ref)
        if w is None:
            problems.append(f"{layer.name}: missing weight {ref!r}")
        elif w.shape != shape:
            problems.append(f"{layer.name}: weight {ref!r} has shape {w.shape}, expected {shape}")
    if layer.kind == LSTM and "x_seq" in layer.weights:
        steps = int(layer.params.get("steps", 1))
        want = (steps - 1, math.prod(in_shape))
        if layer.weights["x_seq"].shape != want:
            problems.append(f"{layer.name}: x_seq has shape {layer.weights['x_seq'].shape}, expected {want}")
    return problems


def _walk(graph: NetworkGraph, input_shape=None, violations=None) -> dict[str, tuple]:
    shapes: dict[str, tuple] = {}
    for layer in graph.layers:
        try:
            if layer.kind == INPUT and input_shape is not None:
                shp = tuple(int(n) for n in input_shape)
            else:
                shp = _layer_shape(layer, [shapes[n] for n in layer.inputs])
            if any(n < 1 for n in shp):
                raise ShapeError(f"non-positive dimension {shp}")
        except (ShapeError, KeyError, ValueError) as exc:
            if violations is None:
                raise ShapeError(f"{layer.name}: {exc}") from exc
            violations.append(f"{layer.name}: {exc}")
            return shapes
        if violations is not None and layer.inputs:
            violations.extend(_check_weights(layer, shapes[layer.inputs[0]]))
        shapes[layer.name] = shp
    return shapes


def infer_shapes(graph: NetworkGraph, input_shape=None) -> dict[str, tuple[int, ...]]:
    """Output shape of every layer, in graph order."""
    return _walk(graph, input_shape)


def validate_graph(graph: NetworkGraph) -> list[str]:
    """Return a list of human-readable violations; empty means valid."""
    violations = []
    names = [l.name for l in graph.layers]
    dupes = sorted({n for n in names if names.count(n) > 1})
    if dupes:
        violations.append(f"duplicate layer names: {dupes}")
    n_inputs = sum(l.kind == INPUT for l in graph.layers)
    if n_inputs != 1:
        violations.append(f"expected exactly one Input layer, found {n_inputs}")
    seen = set()
    structural_ok = not dupes and n_inputs == 1
    for layer in graph.layers:
        if layer.kind not in KINDS:
            violations.append(f"{layer.name}: unknown kind {layer.kind!r}")
            structural_ok = False
        if layer.kind == INPUT and layer.inputs:
            violations.append(f"{layer.name}: Input layer cannot have inputs")
        if layer.kind != INPUT and not layer.inputs:
            violations.append(f"{layer.name}: no inputs")
            structural_ok = False
        if layer.kind == ADD and len(layer.inputs) != 2:
            violations.append(f"{layer.name}: Add needs exactly 2 inputs, got {len(layer.inputs)}")
            structural_ok = False
        if layer.kind == CONCAT and len(layer.inputs) < 2:
            violations.append(f"{layer.name}: Concat needs at least 2 inputs")
            structural_ok = False
        for src in layer.inputs:
            if src not in seen:
                what = "unknown" if src not in names else "later (cycle or bad ordering)"
                violations.append(f"{layer.name}: input {src!r} is {what}")
                structural_ok = False
        seen.add(layer.name)
    if structural_ok:
        _walk(graph, violations=violations)
    return violations


def _fold_batchnorm(layers: list[LayerSpec]) -> list[LayerSpec]:
    """Fold every BatchNorm into the Conv that feeds it."""
    renames: dict[str, str] = {}
    out: dict[str, LayerSpec] = {}
    for layer in layers:
        if layer.kind != BATCHNORM:
            out[layer.name] = layer
            continue
        if len(layer.inputs) != 1:
            raise ModelError(f"{layer.name}: BatchNorm takes exactly one input")
        src = renames.get(layer.inputs[0], layer.inputs[0])
        conv = out.get(src)
        if conv is None or conv.kind != CONV:
            raise ModelError(f"{layer.name}: BatchNorm must directly follow a Conv")
        others = [l.name for l in layers if src in l.inputs and l.name != layer.name]
        if others:
            raise ModelError(f"{layer.name}: cannot fold, {src} also feeds {others}")
        try:
            gamma, beta, mean, var = (np.asarray(layer.weights[r], dtype=np.float64)
                                      for r in ("gamma", "beta", "mean", "var"))
        except KeyError as exc:
            raise ModelError(f"{layer.name}: missing BatchNorm weight {exc}") from None
        eps = float(layer.params.get("eps", 1e-5))
        scale = gamma / np.sqrt(var + eps)
        kernel = conv.weights["kernel"].astype(np.float64) * scale[:, None, None, None]
        bias = (conv.weights["bias"].astype(np.float64) - mean) * scale + beta
        out[src] = LayerSpec(conv.name, CONV, conv.inputs, conv.params,
                             {"kernel": kernel, "bias": bias})
        renames[layer.name] = src
    result = []
    for layer in out.values():
        inputs = tuple(renames.get(n, n) for n in layer.inputs)
        if inputs != layer.inputs:
            layer = LayerSpec(layer.name, layer.kind, inputs, layer.params, layer.weights)
        result.append(layer)
    return result


def _topological(layers: list[LayerSpec]) -> list[LayerSpec]:
    names = {l.name for l in layers}
    sorter = graphlib.TopologicalSorter(
        {l.name: [n for n in l.inputs if n in names] for l in layers})
    try:
        order = list(sorter.static_order())
    except graphlib.CycleError as exc:
        raise ModelError(f"graph has a cycle through {exc.args[1]}") from None
    seen: set[str] = set()
    in_order = True
    for layer in layers:
        in_order &= all(n in seen or n not in names for n in layer.inputs)
        seen.add(layer.name)
    if in_order:
        return layers
    rank = {n: i for i, n in enumerate(order)}
    return sorted(layers, key=lambda l: rank[l.name])


def build_graph(layers, class_count: int | None = None) -> NetworkGraph:
    """Fold batch norms, order topologically and validate; raise on any violation."""
    layers = _topological(_fold_batchnorm(list(layers)))
    graph = NetworkGraph(tuple(layers), class_count)
    problems = validate_graph(graph)
    if problems:
        raise ModelError("invalid graph:\n  " + "\n  ".join(problems))
    if class_count is None and graph.output_layer.kind == SOFTMAX:
        graph = NetworkGraph(graph.layers, infer_shapes(graph)[graph.output_layer.name][0])
    return graph


def _read_blob(path: Path, shape) -> np.ndarray:
    if not path.is_file():
        raise ModelError(f"missing weight blob {path}")
    raw = path.read_bytes()
    want = math.prod(shape) * 4
    if len(raw) != want:
        raise ModelError(
            f"shape mismatch for {path.name}: declared {list(shape)} needs {want} bytes, "
            f"blob has {len(raw)}")
    return np.frombuffer(raw, dtype="<f4").reshape(shape).astype(DTYPE)


def load_model(manifest_path) -> NetworkGraph:
    """Read a manifest (or a directory holding ``model.json``) and its blobs."""
    path = Path(manifest_path)
    if path.is_dir():
        path = path / "model.json"
    try:
        doc = json.loads(path.read_text())
    except FileNotFoundError:
        raise ModelError(f"manifest not found: {path}") from None
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise ModelError(f"cannot parse manifest {path}: {exc}") from None
    if not isinstance(doc, dict) or doc.get("format") != FORMAT:
        raise ModelError(f"{path}: not a {FORMAT} manifest")
    layers = []
    try:
        for entry in doc["layers"]:
            weights = {ref: _read_blob(path.parent / spec["file"], spec["shape"])
                       for ref, spec in entry.get("weights", {}).items()}
            layers.append(LayerSpec(entry["name"], entry["kind"], entry.get("inputs", []),
                                    entry.get("params", {}), weights))
    except (KeyError, TypeError) as exc:
        raise ModelError(f"{path}: malformed layer entry ({exc})") from None
    return build_graph(layers, doc.get("class_count"))


def save_model(graph: NetworkGraph, directory, name: str = "model") -> Path:
    """Write ``<name>.json`` and one ``.f32`` blob per weight ref; return the manifest path."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    entries = []
    for layer in graph.layers:
        entry = {"name": layer.name, "kind": layer.kind}
        if layer.inputs:
            entry["inputs"] = list(layer.inputs)
        if layer.params:
            entry["params"] = {k: (list(v) if isinstance(v, tuple) else v)
                               for k, v in layer.params.items()}
        if layer.weights:
            entry["weights"] = {}
            for ref, arr in layer.weights.items():
                fname = f"{layer.name}.{ref}.f32"
                (directory / fname).write_bytes(np.asarray(arr, dtype="<f4").tobytes())
                entry["weights"][ref] = {"file": fname, "shape": list(arr.shape)}
        entries.append(entry)
    doc = {"format": FORMAT, "version": VERSION, "class_count": graph.class_count,
           "layers": entries}
    manifest = directory / f"{name}.json"
    manifest.write_text(json.dumps(doc, indent=2) + "\n")
    return manifest
