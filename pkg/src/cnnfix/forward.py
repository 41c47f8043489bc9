"""Single forward pass that keeps every layer's output for backtracking."""
from __future__ import annotations

from dataclasses import dataclass, field
from types import MappingProxyType
from typing import Mapping

import numpy as np

from . import graph as g
from .tensor import (DTYPE, ChannelRange, ShapeError, concat_channels, conv2d_forward,
                     elementwise_add, fc_forward, maxpool_forward, relu, sigmoid, softmax,
                     tanh_act)


def _ro(arr) -> np.ndarray:
    arr = np.array(arr, dtype=DTYPE)
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class LstmStep:
    """Everything computed at one unrolling of the cell.

    ``pre_*`` are the gate sums before their nonlinearity; ``g`` is the
    squashed candidate that gets gated into the cell state.
    """
    x: np.ndarray
    m_prev: np.ndarray
    c_prev: np.ndarray
    pre_i: np.ndarray
    pre_f: np.ndarray
    pre_o: np.ndarray
    pre_c: np.ndarray
    i: np.ndarray
    f: np.ndarray
    o: np.ndarray
    g: np.ndarray
    c: np.ndarray
    m: np.ndarray


@dataclass(frozen=True)
class ActivationTrace:
    outputs: Mapping[str, np.ndarray]
    image: np.ndarray
    scores: np.ndarray | None = None
    predicted: int | None = None
    lstm: Mapping[str, tuple[LstmStep, ...]] = field(default_factory=dict)
    concat_ranges: Mapping[str, tuple[ChannelRange, ...]] = field(default_factory=dict)

    def __getitem__(self, name: str) -> np.ndarray:
        return self.outputs[name]

    def __len__(self) -> int:
        return len(self.outputs)


def run_lstm_unrolled(cell: g.LayerSpec, image_embedding, steps: int | None = None,
                      inputs=None) -> tuple[LstmStep, ...]:
    """Unroll the cell from a zero state.

    Step 1 consumes ``image_embedding``; step ``t > 1`` consumes
    ``inputs[t - 2]`` (zeros when no sequence is given).
    """
    steps = int(cell.params.get("steps", 1)) if steps is None else int(steps)
    if steps < 1:
        raise ValueError("LSTM needs at least one step")
    w = {ref: cell.weights[ref].astype(np.float64) for ref in g.LSTM_REFS}
    units, dim = w["W_ix"].shape
    x = np.asarray(image_embedding, dtype=DTYPE).ravel()
    if x.shape[0] != dim:
        raise ShapeError(f"embedding has length {x.shape[0]}, W_ix expects {dim}")
    if inputs is None:
        inputs = cell.weights.get("x_seq", np.zeros((steps - 1, dim), dtype=DTYPE))
    inputs = np.asarray(inputs, dtype=DTYPE)
    if inputs.shape != (steps - 1, dim):
        raise ShapeError(f"input sequence has shape {inputs.shape}, expected {(steps - 1, dim)}")

    m_prev = np.zeros(units, dtype=DTYPE)
    c_prev = np.zeros(units, dtype=DTYPE)
    records = []
    for t in range(steps):
        xt = x if t == 0 else inputs[t - 1]
        x64, m64 = xt.astype(np.float64), m_prev.astype(np.float64)
        pre = {gate: (w[f"W_{gate}x"] @ x64 + w[f"W_{gate}m"] @ m64).astype(DTYPE)
               for gate in g.LSTM_GATES}
        i, f, o = sigmoid(pre["i"]), sigmoid(pre["f"]), sigmoid(pre["o"])
        cand = tanh_act(pre["c"])
        c = (f.astype(np.float64) * c_prev + i.astype(np.float64) * cand).astype(DTYPE)
        m = (o.astype(np.float64) * c).astype(DTYPE)
        records.append(LstmStep(_ro(xt), _ro(m_prev), _ro(c_prev), _ro(pre["i"]), _ro(pre["f"]),
                                _ro(pre["o"]), _ro(pre["c"]), _ro(i), _ro(f), _ro(o), _ro(cand),
                                _ro(c), _ro(m)))
        m_prev, c_prev = m, c
    return tuple(records)


def run_forward(graph: g.NetworkGraph, image) -> ActivationTrace:
    """Evaluate every layer once, in graph order."""
    image = np.asarray(image, dtype=DTYPE)
    if image.shape != graph.input_shape:
        raise ShapeError(f"image shape {image.shape} does not match model input {graph.input_shape}")
    out: dict[str, np.ndarray] = {}
    lstm: dict[str, tuple[LstmStep, ...]] = {}
    ranges: dict[str, tuple[ChannelRange, ...]] = {}
    for layer in graph.layers:
        args = [out[n] for n in layer.inputs]
        kind = layer.kind
        if kind == g.INPUT:
            y = image
        elif kind == g.CONV:
            y = conv2d_forward(args[0], layer.weights["kernel"], layer.weights["bias"],
                               layer.conv_params)
        elif kind == g.RELU:
            y = relu(args[0])
        elif kind == g.MAXPOOL:
            k = int(layer.params["kernel"])
            y = maxpool_forward(args[0], k, int(layer.params.get("stride", k)))
        elif kind == g.FLATTEN:
            y = args[0].ravel()
        elif kind == g.FC:
            y = fc_forward(args[0].ravel(), layer.weights["matrix"], layer.weights["bias"])
        elif kind == g.SOFTMAX:
            y = softmax(args[0].ravel())
        elif kind == g.CONCAT:
            y, ranges[layer.name] = concat_channels(args)
        elif kind == g.ADD:
            y = elementwise_add(*args)
        elif kind == g.LSTM:
            steps = run_lstm_unrolled(layer, args[0])
            lstm[layer.name] = steps
            y = steps[-1].m
        else:
            raise ValueError(f"{layer.name}: unsupported kind {kind!r}")
        out[layer.name] = _ro(y)

    scores = predicted = None
    head = graph.output_layer
    if head.kind == g.SOFTMAX:
        scores = out[head.name]
        predicted = int(np.argmax(scores))
    return ActivationTrace(MappingProxyType(out), out[graph.input_layer.name], scores, predicted,
                           MappingProxyType(lstm), MappingProxyType(ranges))


def predict_label(trace: ActivationTrace) -> int:
    """Argmax of the softmax head; the lowest index wins ties."""
    if trace.scores is None:
        raise ValueError("network has no softmax head")
    return int(np.argmax(trace.scores))
