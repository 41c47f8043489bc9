# Localizing a bright blob without any localization training
#
# The blob detector only knows which quadrant holds the blob. We run one
# forward pass, trace the winning class back to the pixels that drove it,
# then turn those pixels into a heat map and a box.
#
#     python demos/01_blob_localization.py [out_dir]

import sys
from pathlib import Path

import numpy as np

from cnnfix import io as fio
from cnnfix.backtrack import trace_fixations
from cnnfix.fixtures import blob_images, make_blob_detector
from cnnfix.metrics import iou
from cnnfix.pipeline import localize

out = Path(sys.argv[1] if len(sys.argv) > 1 else "demo_out")

# %% The network and one image

net = make_blob_detector()
for layer in net.layers:
    print(f"{layer.name:8s} {layer.kind}")

sample = blob_images(seed=2024, count=1)[0]
print("true quadrant", sample.label, "true box", sample.box.as_tuple())

# %% One forward pass, one backward walk over recorded activations

res = localize(net, sample.image)
print("predicted class", res.trace.predicted)
print("scores", np.round(res.trace.scores, 3))
print(len(res.fixations), "fixations,", len(res.kept), "after outlier removal")

# how the evidence narrows layer by layer
sets = trace_fixations(net, res.trace)
for name in reversed(list(sets)):
    print(f"  {name:8s} {len(sets[name]):4d} locations")

# %% Box and overlap with the generator's box

print("box", res.box.as_tuple(), "IoU", round(iou(res.box, sample.box), 3))

# %% Pictures

fio.write_gray(out / "blob.png", sample.image)
fio.write_bytes(out / "blob_fixations.png",
                fio.encode_png(fio.fixation_overlay(sample.image, res.fixations.coords)))
fio.write_bytes(out / "blob_heatmap.png",
                fio.encode_png(fio.heatmap_overlay(sample.image, res.heatmap)))
print("wrote images to", out)

# %% A batch

hits = 0
samples = blob_images(seed=7, count=100)
for s in samples:
    r = localize(net, s.image)
    hits += r.trace.predicted == s.label and iou(r.box, s.box) >= 0.5
print(f"localized {hits}/{len(samples)} blobs at IoU >= 0.5")
