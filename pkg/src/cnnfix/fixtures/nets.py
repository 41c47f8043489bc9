"""Seeded random networks covering every layer kind the backtracker handles."""
from __future__ import annotations

import math

import numpy as np

from .. import graph as g
from ..graph import LayerSpec, build_graph
from .rng import SplitMix64


def _uniform(rng: SplitMix64, shape, fan_in: int) -> np.ndarray:
    bound = 1.0 / math.sqrt(fan_in)
    return rng.uniform(-bound, bound, shape).astype(np.float32)


def conv_layer(rng, name, src, in_ch, out_ch, kernel=3, stride=1, pad=None) -> LayerSpec:
    pad = kernel // 2 if pad is None else pad
    fan = in_ch * kernel * kernel
    return LayerSpec(name, g.CONV, [src],
                     {"kernel": kernel, "stride": stride, "pad": pad, "out_channels": out_ch},
                     {"kernel": _uniform(rng, (out_ch, in_ch, kernel, kernel), fan),
                      "bias": _uniform(rng, (out_ch,), fan) * 0.1})


def fc_layer(rng, name, src, n_in, units) -> LayerSpec:
    return LayerSpec(name, g.FC, [src], {"units": units},
                     {"matrix": _uniform(rng, (units, n_in), n_in),
                      "bias": _uniform(rng, (units,), n_in) * 0.1})


def random_image(seed: int, shape) -> np.ndarray:
    return SplitMix64(seed ^ 0x5EED).uniform(0.0, 1.0, shape).astype(np.float32)


def make_random_cnn(seed: int, depth: int = 2, input_shape=(1, 8, 8), channels: int = 4,
                    pool_every: int = 0, fc_units=(3,), kernel: int = 3) -> g.NetworkGraph:
    """``depth`` Conv+ReLU blocks (a 2x2 MaxPool after every ``pool_every``), then FC layers."""
    rng = SplitMix64(seed)
    layers = [LayerSpec("input", g.INPUT, params={"shape": list(input_shape)})]
    c, h, w = input_shape
    prev = "input"
    for i in range(1, depth + 1):
        layers.append(conv_layer(rng, f"conv{i}", prev, c, channels, kernel))
        layers.append(LayerSpec(f"relu{i}", g.RELU, [f"conv{i}"]))
        prev, c = f"relu{i}", channels
        if pool_every and i % pool_every == 0 and h >= 2 and w >= 2:
            layers.append(LayerSpec(f"pool{i}", g.MAXPOOL, [prev], {"kernel": 2, "stride": 2}))
            prev, h, w = f"pool{i}", h // 2, w // 2
    layers.append(LayerSpec("flatten", g.FLATTEN, [prev]))
    n, prev = c * h * w, "flatten"
    for j, units in enumerate(fc_units, 1):
        layers.append(fc_layer(rng, f"fc{j}", prev, n, units))
        prev, n = f"fc{j}", units
        if j < len(fc_units):
            layers.append(LayerSpec(f"fc{j}_relu", g.RELU, [prev]))
            prev = f"fc{j}_relu"
    layers.append(LayerSpec("prob", g.SOFTMAX, [prev]))
    return build_graph(layers)


def make_efficiency_net(seed: int = 0) -> g.NetworkGraph:
    """Five conv blocks and two fully connected layers on a 3x64x64 input."""
    return make_random_cnn(seed, depth=5, input_shape=(3, 64, 64), channels=16, pool_every=1,
                           fc_units=(32, 10))


def make_exhaustive_toy(seed: int, relu: bool = True, pool: bool = False,
                        input_shape=(2, 4, 4), channels: int = 3, classes: int = 3,
                        kernel: int = 1) -> g.NetworkGraph:
    """Conv -> (ReLU) -> (MaxPool) -> Flatten -> FC -> Softmax, small enough to enumerate."""
    rng = SplitMix64(seed)
    c, h, w = input_shape
    layers = [LayerSpec("input", g.INPUT, params={"shape": list(input_shape)}),
              conv_layer(rng, "conv", "input", c, channels, kernel)]
    prev = "conv"
    if relu:
        layers.append(LayerSpec("relu", g.RELU, [prev]))
        prev = "relu"
    if pool:
        layers.append(LayerSpec("pool", g.MAXPOOL, [prev], {"kernel": 2, "stride": 2}))
        prev, h, w = "pool", h // 2, w // 2
    layers += [LayerSpec("flatten", g.FLATTEN, [prev]),
               fc_layer(rng, "fc", "flatten", channels * h * w, classes),
               LayerSpec("prob", g.SOFTMAX, ["fc"])]
    return build_graph(layers)


def _head(rng, layers, prev, n, classes=3):
    layers += [LayerSpec("flatten", g.FLATTEN, [prev]),
               fc_layer(rng, "fc", "flatten", n, classes),
               LayerSpec("prob", g.SOFTMAX, ["fc"])]


def make_inception_toy(seed: int, input_shape=(2, 8, 8)) -> g.NetworkGraph:
    """A stem conv feeding three parallel conv branches joined by Concat."""
    rng = SplitMix64(seed)
    c, h, w = input_shape
    layers = [LayerSpec("input", g.INPUT, params={"shape": list(input_shape)}),
              conv_layer(rng, "stem", "input", c, 3), LayerSpec("stem_relu", g.RELU, ["stem"]),
              conv_layer(rng, "b1", "stem_relu", 3, 2, kernel=1),
              LayerSpec("b1_relu", g.RELU, ["b1"]),
              conv_layer(rng, "b3", "stem_relu", 3, 3, kernel=3),
              LayerSpec("b3_relu", g.RELU, ["b3"]),
              conv_layer(rng, "b5", "stem_relu", 3, 2, kernel=5),
              LayerSpec("b5_relu", g.RELU, ["b5"]),
              LayerSpec("mixed", g.CONCAT, ["b1_relu", "b3_relu", "b5_relu"])]
    _head(rng, layers, "mixed", 7 * h * w)
    return build_graph(layers)


def make_residual_toy(seed: int, input_shape=(2, 8, 8), blocks: int = 2) -> g.NetworkGraph:
    """Stem conv followed by ``blocks`` residual blocks; Add inputs are ``[skip, delta]``."""
    rng = SplitMix64(seed)
    c, h, w = input_shape
    ch = 4
    layers = [LayerSpec("input", g.INPUT, params={"shape": list(input_shape)}),
              conv_layer(rng, "stem", "input", c, ch), LayerSpec("stem_relu", g.RELU, ["stem"])]
    prev = "stem_relu"
    for b in range(1, blocks + 1):
        layers += [conv_layer(rng, f"res{b}a", prev, ch, ch),
                   LayerSpec(f"res{b}a_relu", g.RELU, [f"res{b}a"]),
                   conv_layer(rng, f"res{b}b", f"res{b}a_relu", ch, ch),
                   LayerSpec(f"res{b}", g.ADD, [prev, f"res{b}b"]),
                   LayerSpec(f"res{b}_relu", g.RELU, [f"res{b}"])]
        prev = f"res{b}_relu"
    _head(rng, layers, prev, ch * h * w)
    return build_graph(layers)


def make_dense_toy(seed: int, input_shape=(2, 8, 8), blocks: int = 2) -> g.NetworkGraph:
    """Each block concatenates its input (copied as-is) with a new conv output."""
    rng = SplitMix64(seed)
    c, h, w = input_shape
    ch, growth = 3, 2
    layers = [LayerSpec("input", g.INPUT, params={"shape": list(input_shape)}),
              conv_layer(rng, "stem", "input", c, ch), LayerSpec("stem_relu", g.RELU, ["stem"])]
    prev = "stem_relu"
    for b in range(1, blocks + 1):
        layers += [conv_layer(rng, f"dense{b}_conv", prev, ch, growth),
                   LayerSpec(f"dense{b}_relu", g.RELU, [f"dense{b}_conv"]),
                   LayerSpec(f"dense{b}", g.CONCAT, [prev, f"dense{b}_relu"])]
        prev, ch = f"dense{b}", ch + growth
    _head(rng, layers, prev, ch * h * w)
    return build_graph(layers)


def lstm_cell(rng, name, src, dim, units, steps, scale=1.0) -> LayerSpec:
    weights = {}
    for gate in g.LSTM_GATES:
        weights[f"W_{gate}x"] = _uniform(rng, (units, dim), dim) * scale
        weights[f"W_{gate}m"] = _uniform(rng, (units, units), units) * scale
    if steps > 1:
        weights["x_seq"] = rng.uniform(-1, 1, (steps - 1, dim)).astype(np.float32)
    return LayerSpec(name, g.LSTM, [src], {"units": units, "steps": steps}, weights)


def make_toy_lstm(seed: int, steps: int = 1, units: int = 2, embed: int = 5,
                  input_shape=(1, 6, 6)) -> g.NetworkGraph:
    """Conv -> ReLU -> Flatten -> FC image embedding -> 2-unit LSTM cell."""
    rng = SplitMix64(seed)
    c, h, w = input_shape
    layers = [LayerSpec("input", g.INPUT, params={"shape": list(input_shape)}),
              conv_layer(rng, "conv", "input", c, 2),
              LayerSpec("relu", g.RELU, ["conv"]),
              LayerSpec("flatten", g.FLATTEN, ["relu"]),
              fc_layer(rng, "embed", "flatten", 2 * h * w, embed),
              lstm_cell(rng, "lstm", "embed", embed, units, steps, scale=3.0)]
    return build_graph(layers)
