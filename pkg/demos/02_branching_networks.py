# Following evidence through branches: inception, residual and dense blocks
#
# A concatenation hands each channel back to the branch that produced it.
# An addition sends a location to whichever summand was larger. A dense
# block copies earlier maps, so their locations pass through unchanged.
#
#     python demos/02_branching_networks.py

import numpy as np

from cnnfix import graph as g
from cnnfix.backtrack import trace_fixations
from cnnfix.fixtures import make_dense_toy, make_inception_toy, make_residual_toy, random_image
from cnnfix.forward import run_forward

# %% Inception: three parallel convolutions joined on the channel axis

net = make_inception_toy(seed=3)
trace = run_forward(net, random_image(3, net.input_shape))
sets = trace_fixations(net, trace)
for r, src in zip(trace.concat_ranges["mixed"], net["mixed"].inputs):
    print(f"channels [{r.start}, {r.end}) come from {src}:",
          len(sets.get(src, ())), "locations traced there")

# %% Residual: skip path versus the convolution path

net = make_residual_toy(seed=3)
trace = run_forward(net, random_image(3, net.input_shape))
sets = trace_fixations(net, trace)
for layer in net.layers:
    if layer.kind != g.ADD:
        continue
    skip, delta = layer.inputs
    coords = sets[layer.name].coords
    c, x, y = coords.T
    to_skip = trace[skip][c, x, y] >= trace[delta][c, x, y]
    print(f"{layer.name}: {to_skip.sum()} locations to the skip path, "
          f"{(~to_skip).sum()} to the convolution path")

# %% Dense: earlier maps are copied into the concatenation

net = make_dense_toy(seed=3)
trace = run_forward(net, random_image(3, net.input_shape))
sets = trace_fixations(net, trace)
prev = net["dense2"].inputs[0]
copied = sets["dense2"].coords
copied = copied[copied[:, 0] < trace[prev].shape[0]]
same = np.isin([tuple(c) for c in copied.tolist()], [tuple(c) for c in sets[prev].to_list()])
print(f"dense2: {len(copied)} locations on copied channels, all found on {prev}:",
      bool(np.all(same)))
