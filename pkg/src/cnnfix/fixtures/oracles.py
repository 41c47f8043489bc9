"""Brute-force reference tracers, written with plain loops over Python floats.

They share no code with :mod:`cnnfix.backtrack`; tests compare the two.
"""
from __future__ import annotations

from .. import graph as g

MAX_WEIGHTED_LAYERS = 3
MAX_PATHS = 10_000


class OracleTooLarge(Exception):
    pass


def _argmax(values) -> int:
    best = 0
    for i, v in enumerate(values):
        if v > values[best]:
            best = i
    return best


def conv_choice(patch, kernel, valid, mode="same-location"):
    """Channel and in-patch ``(u, v)`` picked for one conv output.

    ``patch`` and ``kernel`` are nested lists ``[c][u][v]``; ``valid[u][v]``
    is false on padding.
    """
    C, k = len(patch), len(patch[0])
    sums = []
    for c in range(C):
        s = 0.0
        for u in range(k):
            for v in range(k):
                if valid[u][v]:
                    s += patch[c][u][v] * kernel[c][u][v]
        sums.append(s)
    ch = _argmax(sums)
    if mode == "same-location":
        return ch, None
    best, best_uv = None, None
    for u in range(k):
        for v in range(k):
            if valid[u][v]:
                val = patch[ch][u][v] * kernel[ch][u][v]
                if best is None or val > best:
                    best, best_uv = val, (u, v)
    return ch, best_uv


def fc_positive(row, acts) -> list[int]:
    return [j for j in range(len(acts)) if acts[j] * row[j] > 0]


def _fc_children(row, acts, fallback):
    hits = fc_positive(row, acts)
    if hits or fallback != "argmax":
        return hits
    return [_argmax([acts[j] * row[j] for j in range(len(acts))])]


def exhaustive_path_oracle(graph: g.NetworkGraph, trace, start_class: int,
                           mode: str = "same-location", fallback: str = "argmax"):
    """Input pixels reachable from ``start_class`` along strictly positive chains.

    Supports sequential graphs of Input, Conv, ReLU, MaxPool, Flatten,
    FullyConnected and Softmax layers with at most three weighted layers.
    The fallback is applied per chain node, which matches the set-level
    rule whenever the first step is a single neuron and no deeper step is
    empty.
    """
    layers = list(graph.layers)
    weighted = sum(l.kind in (g.CONV, g.FC) for l in layers)
    if weighted > MAX_WEIGHTED_LAYERS:
        raise OracleTooLarge(f"{weighted} weighted layers (limit {MAX_WEIGHTED_LAYERS})")
    for l in layers:
        if l.kind not in (g.INPUT, g.CONV, g.RELU, g.MAXPOOL, g.FLATTEN, g.FC, g.SOFTMAX):
            raise OracleTooLarge(f"oracle does not handle {l.kind}")
        if l.kind != g.INPUT and (len(l.inputs) != 1 or l.inputs[0] != layers[layers.index(l) - 1].name):
            raise OracleTooLarge("oracle needs a plain chain of layers")
    acts = {l.name: trace[l.name].tolist() for l in layers}
    shapes = {l.name: trace[l.name].shape for l in layers}
    found = set()
    paths = 0

    def visit(idx, coord):
        nonlocal paths
        layer = layers[idx]
        if layer.kind == g.INPUT:
            paths += 1
            if paths > MAX_PATHS:
                raise OracleTooLarge(f"more than {MAX_PATHS} paths")
            found.add((coord[1], coord[2]))
            return
        src = layers[idx - 1].name
        if layer.kind in (g.RELU, g.SOFTMAX):
            visit(idx - 1, coord)
        elif layer.kind == g.FLATTEN:
            c_, h_, w_ = shapes[src]
            n = coord
            visit(idx - 1, (n // (h_ * w_), (n % (h_ * w_)) // w_, n % w_))
        elif layer.kind == g.FC:
            a = acts[src]
            if isinstance(a[0], list):
                a = [v for ch in a for row in ch for v in row]
            row = layer.weights["matrix"][coord].tolist()
            for j in _fc_children(row, a, fallback):
                if len(shapes[src]) == 1:
                    visit(idx - 1, j)
                else:
                    c_, h_, w_ = shapes[src]
                    visit(idx - 1, (j // (h_ * w_), (j % (h_ * w_)) // w_, j % w_))
        elif layer.kind == g.MAXPOOL:
            k = int(layer.params["kernel"])
            s = int(layer.params.get("stride", k))
            c, x, y = coord
            a = acts[src][c]
            best = None
            for u in range(k):
                for v in range(k):
                    if best is None or a[x * s + u][y * s + v] > a[best[0]][best[1]]:
                        best = (x * s + u, y * s + v)
            visit(idx - 1, (c, best[0], best[1]))
        elif layer.kind == g.CONV:
            cp = layer.conv_params
            f, x, y = coord
            a = acts[src]
            C, H, W = shapes[src]
            k, s, p = cp.kernel, cp.stride, cp.pad
            kern = layer.weights["kernel"][f].tolist()
            patch = [[[0.0] * k for _ in range(k)] for _ in range(C)]
            valid = [[False] * k for _ in range(k)]
            for u in range(k):
                for v in range(k):
                    r, q = x * s - p + u, y * s - p + v
                    if 0 <= r < H and 0 <= q < W:
                        valid[u][v] = True
                        for c in range(C):
                            patch[c][u][v] = a[c][r][q]
            ch, uv = conv_choice(patch, kern, valid, mode)
            if uv is None:
                lo_r, hi_r = max(x * s - p, 0), min(x * s - p + k - 1, H - 1)
                lo_c, hi_c = max(y * s - p, 0), min(y * s - p + k - 1, W - 1)
                r = min(max(x * s - p + k // 2, lo_r), hi_r)
                q = min(max(y * s - p + k // 2, lo_c), hi_c)
            else:
                r, q = x * s - p + uv[0], y * s - p + uv[1]
            visit(idx - 1, (ch, r, q))

    visit(len(layers) - 1, start_class)
    return sorted(found)


def lstm_path_oracle(layer: g.LayerSpec, steps, start_unit=None, fallback: str = "argmax"):
    """Positions on ``x_1`` reachable by enumerating gate-wise evidence chains.

    Nodes are ``('m', t, u)`` state units, ``('c', t, u)`` cell units and
    ``(gate, t, u)`` gate sums. Fallback applies per gate node.
    """
    T = len(steps)
    W = {k: layer.weights[k].tolist() for k in g.LSTM_REFS}
    dim = len(W["W_ix"][0])
    if start_unit is None:
        start_unit = _argmax(steps[-1].m.tolist())
    found = set()
    seen = set()

    def gate(name, t, u):
        rec = steps[t - 1]
        x, m_prev = rec.x.tolist(), rec.m_prev.tolist()
        row = W[f"W_{name}x"][u] + W[f"W_{name}m"][u]
        for j in _fc_children(row, x + m_prev, fallback):
            if j < dim:
                if t == 1:
                    found.add(j)
            else:
                node("m", t - 1, j - dim)

    def node(kind, t, u):
        if t == 0 or (kind, t, u) in seen:
            return
        seen.add((kind, t, u))
        rec = steps[t - 1]
        if kind == "m":
            gate("o", t, u)
            node("c", t, u)
        else:
            if float(rec.f[u]) * float(rec.c_prev[u]) > 0:
                gate("f", t, u)
                node("c", t - 1, u)
            if float(rec.i[u]) * float(rec.g[u]) > 0:
                gate("i", t, u)
                gate("c", t, u)

    node("m", T, start_unit)
    return sorted(found)
