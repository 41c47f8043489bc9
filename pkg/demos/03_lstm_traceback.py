# Tracing a recurrent cell back to the image embedding
#
# A toy captioner: conv features, a small embedding, and a two unit LSTM
# unrolled for two steps. We start from the strongest unit of the final
# state and walk the gates back to the embedding and then to pixels.
#
#     python demos/03_lstm_traceback.py

import numpy as np

from cnnfix.backtrack import backtrack_lstm, compute_fixations
from cnnfix.fixtures import lstm_path_oracle, make_toy_lstm, random_image
from cnnfix.forward import run_forward

net = make_toy_lstm(seed=1, steps=2)
trace = run_forward(net, random_image(1, net.input_shape))
steps = trace.lstm["lstm"]

# %% What the cell recorded

for t, s in enumerate(steps, 1):
    print(f"t={t}  i={np.round(s.i, 3)}  f={np.round(s.f, 3)}  "
          f"o={np.round(s.o, 3)}  c={np.round(s.c, 3)}  m={np.round(s.m, 3)}")

# %% Gate-wise traceback, checked against plain path enumeration

unit = int(np.argmax(steps[-1].m))
embedding = backtrack_lstm(net["lstm"], steps)
print("start unit", unit)
print("embedding positions", embedding.to_list(), "fallback:", embedding.fallback)
print("enumeration agrees:", embedding.to_list() == lstm_path_oracle(net["lstm"], steps, unit))

# %% All the way to the image

fx = compute_fixations(net, trace)
print(len(fx), "pixels on the 6x6 input:")
grid = np.full((6, 6), ".")
grid[fx.coords[:, 0], fx.coords[:, 1]] = "#"
print("\n".join(" ".join(row) for row in grid))
