"""Trace an output neuron back to the input pixels that excite it.

Every handler maps a set of discriminative coordinates on a layer's output to
coordinates on that layer's input, using only the recorded forward
activations and the layer weights. Evidence is an activation whose product
with the connecting weight is strictly positive; biases never count.

Coordinates are int64 arrays: shape ``(m,)`` of flat indices for vector
layers and ``(m, 3)`` of ``(channel, x, y)`` rows for spatial layers, where
``x`` is the row and ``y`` the column. Sets are kept sorted and unique.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import graph as g
from .forward import ActivationTrace, LstmStep
from .tensor import ConvParams, ShapeError

SAME_LOCATION = "same-location"
ARGMAX_LOCATION = "argmax-location"
FALLBACK_ARGMAX = "argmax"
FALLBACK_ABORT = "abort"


class BacktrackError(Exception):
    pass


class EmptyEvidenceError(BacktrackError):
    """No positive contribution exists and the fallback is set to abort."""


class UnsupportedLayerError(BacktrackError):
    pass


@dataclass(frozen=True)
class BacktrackConfig:
    conv_spatial_mode: str = SAME_LOCATION
    empty_set_fallback: str = FALLBACK_ARGMAX

    def __post_init__(self):
        if self.conv_spatial_mode not in (SAME_LOCATION, ARGMAX_LOCATION):
            raise ValueError(f"unknown conv_spatial_mode {self.conv_spatial_mode!r}")
        if self.empty_set_fallback not in (FALLBACK_ARGMAX, FALLBACK_ABORT):
            raise ValueError(f"unknown empty_set_fallback {self.empty_set_fallback!r}")


DEFAULT_CONFIG = BacktrackConfig()


def _unique(coords: np.ndarray) -> np.ndarray:
    coords = np.asarray(coords, dtype=np.int64)
    if coords.ndim == 1:
        return np.unique(coords)
    if len(coords) == 0:
        return coords.reshape(0, coords.shape[1])
    return np.unique(coords, axis=0)


@dataclass(frozen=True)
class FixationSet:
    coords: np.ndarray
    layer: str = ""
    fallback: bool = False

    def __post_init__(self):
        coords = _unique(self.coords)
        coords.flags.writeable = False
        object.__setattr__(self, "coords", coords)

    @classmethod
    def empty(cls, ndim: int = 1, layer: str = "") -> "FixationSet":
        shape = (0,) if ndim == 1 else (0, ndim)
        return cls(np.zeros(shape, dtype=np.int64), layer)

    @property
    def spatial(self) -> bool:
        return self.coords.ndim == 2

    def __len__(self) -> int:
        return len(self.coords)

    def to_list(self) -> list:
        return [tuple(int(v) for v in c) if self.spatial else int(c) for c in self.coords]

    def union(self, other: "FixationSet") -> "FixationSet":
        if len(other) == 0:
            return FixationSet(self.coords, self.layer, self.fallback or other.fallback)
        if len(self) == 0:
            return FixationSet(other.coords, self.layer or other.layer,
                               self.fallback or other.fallback)
        return FixationSet(np.concatenate([self.coords, other.coords]), self.layer,
                           self.fallback or other.fallback)


def _coords(X) -> np.ndarray:
    if isinstance(X, FixationSet):
        return X.coords
    return np.asarray(X, dtype=np.int64)


def backtrack_fc(X, weights, A_prev, cfg: BacktrackConfig = DEFAULT_CONFIG) -> FixationSet:
    """Input indices whose activation times weight is positive for some neuron in ``X``."""
    idx = _coords(X).ravel()
    W = np.asarray(weights)
    a = np.asarray(A_prev, dtype=np.float64).ravel()
    if W.ndim != 2 or W.shape[1] != a.shape[0]:
        raise ShapeError(f"weights {W.shape} do not match activation length {a.shape[0]}")
    if len(idx) == 0:
        return FixationSet.empty()
    if idx.min() < 0 or idx.max() >= W.shape[0]:
        raise IndexError(f"neuron index out of range for {W.shape[0]} outputs")
    contrib = W[idx].astype(np.float64) * a[None, :]
    hits = np.flatnonzero((contrib > 0).any(axis=0))
    if len(hits):
        return FixationSet(hits)
    if cfg.empty_set_fallback == FALLBACK_ABORT:
        raise EmptyEvidenceError(f"no positive contribution for neurons {idx.tolist()}")
    return FixationSet(np.array([np.argmax(contrib[0])]), fallback=True)


def _check_spatial(coords: np.ndarray, shape, what: str):
    if coords.ndim != 2 or coords.shape[1] != 3:
        raise ShapeError(f"{what} expects (channel, x, y) coordinates")
    if len(coords) and ((coords < 0).any() or (coords >= np.asarray(shape)).any()):
        bad = coords[((coords < 0) | (coords >= np.asarray(shape))).any(axis=1)][0]
        raise IndexError(f"{what}: coordinate {tuple(bad)} outside output shape {tuple(shape)}")


def backtrack_conv(X, weights, A_prev, params: ConvParams,
                   cfg: BacktrackConfig = DEFAULT_CONFIG) -> FixationSet:
    """Map each ``(f, x, y)`` to its most contributing input channel and a location in it."""
    coords = _coords(X)
    if coords.ndim == 1 and len(coords) == 0:
        coords = coords.reshape(0, 3)
    A = np.asarray(A_prev, dtype=np.float64)
    W = np.asarray(weights, dtype=np.float64)
    C, H, Wd = A.shape
    k, s, p = params.kernel, params.stride, params.pad
    out_shape = (params.out_channels, params.out_size(H), params.out_size(Wd))
    _check_spatial(coords, out_shape, "conv backtrack")
    if len(coords) == 0:
        return FixationSet.empty(3)
    f, x, y = coords.T
    offs = np.arange(k)
    rows = x[:, None] * s - p + offs  # (m, k) in input coordinates
    cols = y[:, None] * s - p + offs
    mask = (((rows >= 0) & (rows < H))[:, :, None]
            & ((cols >= 0) & (cols < Wd))[:, None, :])  # (m, k, k)
    rc = np.clip(rows, 0, H - 1)
    cc = np.clip(cols, 0, Wd - 1)
    patches = A[:, rc[:, :, None], cc[:, None, :]].transpose(1, 0, 2, 3)  # (m, C, k, k)
    prod = patches * W[f] * mask[:, None]
    ch = np.argmax(prod.sum(axis=(2, 3)), axis=1)
    if cfg.conv_spatial_mode == ARGMAX_LOCATION:
        sel = np.where(mask, prod[np.arange(len(f)), ch], -np.inf).reshape(len(f), -1)
        u, v = np.divmod(np.argmax(sel, axis=1), k)
        px, py = rows[np.arange(len(f)), u], cols[np.arange(len(f)), v]
    else:
        px = np.clip(x * s - p + k // 2, np.maximum(x * s - p, 0), np.minimum(x * s - p + k - 1, H - 1))
        py = np.clip(y * s - p + k // 2, np.maximum(y * s - p, 0), np.minimum(y * s - p + k - 1, Wd - 1))
    return FixationSet(np.stack([ch, px, py], axis=1))


def backtrack_pool(X, A_prev, kernel: int, stride: int) -> FixationSet:
    """Send each pooled coordinate to the first maximum of its window."""
    coords = _coords(X)
    if coords.ndim == 1 and len(coords) == 0:
        coords = coords.reshape(0, 3)
    A = np.asarray(A_prev)
    C, H, W = A.shape
    out_shape = (C, (H - kernel) // stride + 1, (W - kernel) // stride + 1)
    _check_spatial(coords, out_shape, "pool backtrack")
    if len(coords) == 0:
        return FixationSet.empty(3)
    c, x, y = coords.T
    offs = np.arange(kernel)
    rows = x[:, None] * stride + offs
    cols = y[:, None] * stride + offs
    win = A[c[:, None, None], rows[:, :, None], cols[:, None, :]].reshape(len(c), -1)
    u, v = np.divmod(np.argmax(win, axis=1), kernel)
    return FixationSet(np.stack([c, x * stride + u, y * stride + v], axis=1))


def backtrack_relu(X, A_prev=None) -> FixationSet:
    if isinstance(X, FixationSet):
        return FixationSet(X.coords, fallback=X.fallback)
    return FixationSet(_coords(X))


def backtrack_flatten(X, spatial_shape) -> FixationSet:
    """Turn flat indices (channel-outermost, row-major) back into ``(c, x, y)``."""
    idx = _coords(X).ravel()
    size = int(np.prod(spatial_shape))
    if len(idx) and (idx.min() < 0 or idx.max() >= size):
        raise IndexError(f"flat index outside shape {tuple(spatial_shape)}")
    if len(idx) == 0:
        return FixationSet.empty(len(spatial_shape))
    return FixationSet(np.stack(np.unravel_index(idx, spatial_shape), axis=1))


def backtrack_concat(X, ranges) -> list[FixationSet]:
    """Split fixations by source branch, rebasing channels to each branch."""
    coords = _coords(X)
    if coords.ndim == 1 and len(coords) == 0:
        coords = coords.reshape(0, 3)
    out = []
    claimed = np.zeros(len(coords), dtype=bool)
    for r in ranges:
        sel = (coords[:, 0] >= r.start) & (coords[:, 0] < r.end)
        claimed |= sel
        part = coords[sel].copy()
        part[:, 0] -= r.start
        out.append(FixationSet(part))
    if not claimed.all():
        ch = int(coords[~claimed][0, 0])
        raise IndexError(f"channel {ch} is outside every concat range")
    return out


def backtrack_add(X, A_skip, A_delta) -> tuple[FixationSet, FixationSet]:
    """Route each fixation to the summand with the larger activation (skip wins ties)."""
    coords = _coords(X)
    if coords.ndim == 1 and len(coords) == 0:
        coords = coords.reshape(0, 3)
    A_skip, A_delta = np.asarray(A_skip), np.asarray(A_delta)
    if A_skip.shape != A_delta.shape:
        raise ShapeError(f"add branches differ in shape: {A_skip.shape} vs {A_delta.shape}")
    _check_spatial(coords, A_skip.shape, "add backtrack")
    c, x, y = coords.T
    to_skip = A_skip[c, x, y] >= A_delta[c, x, y]
    return FixationSet(coords[to_skip]), FixationSet(coords[~to_skip])


def _gate_matrix(layer: g.LayerSpec, gate: str) -> np.ndarray:
    return np.hstack([layer.weights[f"W_{gate}x"], layer.weights[f"W_{gate}m"]])


def backtrack_lstm(layer: g.LayerSpec, steps: tuple[LstmStep, ...], units=None,
                   n_steps: int | None = None,
                   cfg: BacktrackConfig = DEFAULT_CONFIG) -> FixationSet:
    """Trace LSTM state units back to positions on the first-step input.

    Starting from ``units`` of ``m`` at the last unrolling (default: its
    maximum element), each unit hands evidence to its output gate and its
    cell state. A cell state unit keeps the forget term and the input term
    when each is positive; a kept forget term also carries the unit to the
    previous cell state. Every active gate sum is then traced like a fully
    connected layer over ``[x_t, m_{t-1}]``. Locations on ``m_{t-1}`` feed the
    previous step; the returned set lives on ``x_1``.
    """
    T = len(steps) if n_steps is None else int(n_steps)
    if T < 1:
        raise BacktrackError("LSTM backtracking needs at least one step")
    if T > len(steps):
        raise BacktrackError(f"only {len(steps)} LSTM steps were recorded, asked for {T}")
    missing = [r for r in g.LSTM_REFS if r not in layer.weights]
    if missing:
        raise BacktrackError(f"{layer.name}: missing gate weights {missing}")
    gates = {gate: _gate_matrix(layer, gate) for gate in g.LSTM_GATES}
    dim = layer.weights["W_ix"].shape[1]

    last = steps[T - 1]
    if units is None:
        m_units = np.array([np.argmax(last.m)], dtype=np.int64)
    else:
        m_units = np.unique(_coords(units).ravel())
    c_units = np.zeros(0, dtype=np.int64)
    fallback = False
    x_locs = np.zeros(0, dtype=np.int64)
    for t in range(T, 0, -1):
        rec = steps[t - 1]
        cell = np.union1d(m_units, c_units)
        forget = cell[rec.f[cell].astype(np.float64) * rec.c_prev[cell] > 0]
        inject = cell[rec.i[cell].astype(np.float64) * rec.g[cell] > 0]
        active = {"o": m_units, "f": forget, "i": inject, "c": inject}
        a_cat = np.concatenate([rec.x, rec.m_prev])
        x_parts, m_parts = [], []
        for gate in g.LSTM_GATES:
            if len(active[gate]) == 0:
                continue
            res = backtrack_fc(active[gate], gates[gate], a_cat, cfg)
            fallback |= res.fallback
            x_parts.append(res.coords[res.coords < dim])
            m_parts.append(res.coords[res.coords >= dim] - dim)
        x_locs = np.unique(np.concatenate(x_parts)) if x_parts else np.zeros(0, np.int64)
        m_units = np.unique(np.concatenate(m_parts)) if m_parts else np.zeros(0, np.int64)
        c_units = forget
    return FixationSet(x_locs, layer.name, fallback)


def _unflatten(fs: FixationSet, shape) -> FixationSet:
    if len(shape) == 1:
        return fs
    out = backtrack_flatten(fs, shape)
    return FixationSet(out.coords, fallback=fs.fallback)


def resolve_start(graph: g.NetworkGraph, trace: ActivationTrace, start) -> tuple[str, FixationSet]:
    """Layer name and one-element set for a start selector (None means the predicted class)."""
    if start is None:
        head = graph.output_layer
        if trace.predicted is not None:
            return head.name, FixationSet(np.array([trace.predicted]), head.name)
        if head.kind == g.LSTM:
            return head.name, FixationSet(np.array([np.argmax(trace[head.name])]), head.name)
        act = trace[head.name]
        coord = np.unravel_index(int(np.argmax(act)), act.shape)
        start = (head.name, coord)
    name, coord = start
    if name not in graph:
        raise BacktrackError(f"unknown start layer {name!r}")
    shape = trace[name].shape
    coord = np.atleast_1d(np.asarray(coord, dtype=np.int64))
    if len(coord) != len(shape) or (coord < 0).any() or (coord >= np.asarray(shape)).any():
        raise BacktrackError(f"start coordinate {tuple(coord)} invalid for layer {name} {shape}")
    coords = coord if len(shape) == 1 else coord.reshape(1, -1)
    return name, FixationSet(coords, name)


def trace_fixations(graph: g.NetworkGraph, trace: ActivationTrace, start=None,
                    cfg: BacktrackConfig = DEFAULT_CONFIG) -> dict[str, FixationSet]:
    """Fixation sets for every layer reached from ``start``, keyed by layer name.

    ``start`` is ``(layer_name, coordinate)`` or None for the predicted class.
    """
    name, first = resolve_start(graph, trace, start)
    pending: dict[str, FixationSet] = {name: first}
    done: dict[str, FixationSet] = {}
    order = [l.name for l in graph.layers]
    for lname in reversed(order[: order.index(name) + 1]):
        X = pending.pop(lname, None)
        if X is None:
            continue
        X = FixationSet(X.coords, lname, X.fallback)
        done[lname] = X
        layer = graph[lname]
        for src, fs in _step(graph, layer, trace, X, cfg):
            fs = FixationSet(fs.coords, src, fs.fallback or X.fallback)
            pending[src] = pending[src].union(fs) if src in pending else fs
    return done


def _step(graph, layer: g.LayerSpec, trace: ActivationTrace, X: FixationSet,
          cfg: BacktrackConfig) -> list[tuple[str, FixationSet]]:
    kind = layer.kind
    if kind == g.INPUT:
        return []
    ins = layer.inputs
    if len(X) == 0:
        return []
    if kind in (g.RELU, g.SOFTMAX):
        return [(ins[0], backtrack_relu(X))]
    if kind == g.FLATTEN:
        return [(ins[0], backtrack_flatten(X, trace[ins[0]].shape))]
    if kind == g.FC:
        a_prev = trace[ins[0]]
        res = backtrack_fc(X, layer.weights["matrix"], a_prev, cfg)
        return [(ins[0], _unflatten(res, a_prev.shape))]
    if kind == g.CONV:
        return [(ins[0], backtrack_conv(X, layer.weights["kernel"], trace[ins[0]],
                                        layer.conv_params, cfg))]
    if kind == g.MAXPOOL:
        k = int(layer.params["kernel"])
        return [(ins[0], backtrack_pool(X, trace[ins[0]], k, int(layer.params.get("stride", k))))]
    if kind == g.CONCAT:
        parts = backtrack_concat(X, trace.concat_ranges[layer.name])
        return [(src, fs) for src, fs in zip(ins, parts) if len(fs)]
    if kind == g.ADD:
        skip, delta = backtrack_add(X, trace[ins[0]], trace[ins[1]])
        return [(src, fs) for src, fs in zip(ins, (skip, delta)) if len(fs)]
    if kind == g.LSTM:
        res = backtrack_lstm(layer, trace.lstm[layer.name], X.coords, cfg=cfg)
        return [(ins[0], _unflatten(res, trace[ins[0]].shape))]
    raise UnsupportedLayerError(f"{layer.name}: cannot backtrack through {kind!r}")


def compute_fixations(graph: g.NetworkGraph, trace: ActivationTrace, start=None,
                      cfg: BacktrackConfig = DEFAULT_CONFIG) -> FixationSet:
    """Image-plane fixations as unique ``(x, y)`` pixels, channels merged."""
    sets = trace_fixations(graph, trace, start, cfg)
    inp = graph.input_layer.name
    fallback = any(fs.fallback for fs in sets.values())
    fs = sets.get(inp)
    if fs is None:
        return FixationSet(np.zeros((0, 2), dtype=np.int64), inp, fallback)
    coords = fs.coords[:, 1:] if fs.spatial else fs.coords
    return FixationSet(coords, inp, fallback)
