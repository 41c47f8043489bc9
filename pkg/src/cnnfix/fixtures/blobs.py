"""Hand-weighted bright-blob detector and its labelled image generator.

The network answers "which quadrant holds the blob". Class ids follow
reading order: 0 top-left, 1 top-right, 2 bottom-left, 3 bottom-right.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .. import graph as g
from ..graph import LayerSpec, build_graph
from ..postprocess import BoundingBox
from .rng import SplitMix64

SIZE = 64
QUADRANTS = ("top-left", "top-right", "bottom-left", "bottom-right")
NOISE = 0.1
SIGMA_RANGE = (3.0, 4.5)
# a pixel belongs to the blob while its intensity is at least this share of the peak
BOX_LEVEL = 0.3


def _gaussian_kernel(k: int, sigma: float) -> np.ndarray:
    r = np.arange(k) - k // 2
    ker = np.exp(-(r[:, None] ** 2 + r[None, :] ** 2) / (2 * sigma ** 2))
    return ker / ker.sum()


def make_blob_detector(seed: int = 0, size: int = SIZE) -> g.NetworkGraph:
    """Two conv/pool stages and a quadrant-routing FC layer.

    conv1 channel 0 is a smoothing detector thresholded above the noise
    floor; channel 1 responds to dark regions and is wired negatively into
    conv2, so only the blob survives to the FC layer. Each class weight is
    +1 on the pooled cells of its quadrant and -1 elsewhere. The weights are
    fixed; ``seed`` is accepted for interface symmetry with the random
    fixtures and does not change them.
    """
    del seed
    if size % 8:
        raise ValueError("size must be a multiple of 8")
    smooth = _gaussian_kernel(5, 1.5)
    conv1_k = np.stack([smooth, -smooth])[:, None]  # (2, 1, 5, 5)
    conv1_b = np.array([-0.2, 0.1])
    conv2_k = np.zeros((1, 2, 3, 3))
    conv2_k[0, 0] = 1.0 / 9
    conv2_k[0, 1] = -1.0 / 9
    conv2_b = np.array([-0.05])
    cells = size // 4
    q = np.zeros((4, cells, cells))
    half = cells // 2
    for cls in range(4):
        q[cls] = -1.0
        r0, c0 = (cls // 2) * half, (cls % 2) * half
        q[cls, r0:r0 + half, c0:c0 + half] = 1.0
    layers = [
        LayerSpec("input", g.INPUT, params={"shape": [1, size, size]}),
        LayerSpec("conv1", g.CONV, ["input"], {"kernel": 5, "stride": 1, "pad": 2, "out_channels": 2},
                  {"kernel": conv1_k, "bias": conv1_b}),
        LayerSpec("relu1", g.RELU, ["conv1"]),
        LayerSpec("pool1", g.MAXPOOL, ["relu1"], {"kernel": 2, "stride": 2}),
        LayerSpec("conv2", g.CONV, ["pool1"], {"kernel": 3, "stride": 1, "pad": 1, "out_channels": 1},
                  {"kernel": conv2_k, "bias": conv2_b}),
        LayerSpec("relu2", g.RELU, ["conv2"]),
        LayerSpec("pool2", g.MAXPOOL, ["relu2"], {"kernel": 2, "stride": 2}),
        LayerSpec("flatten", g.FLATTEN, ["pool2"]),
        LayerSpec("fc", g.FC, ["flatten"], {"units": 4},
                  {"matrix": q.reshape(4, -1), "bias": np.zeros(4)}),
        LayerSpec("prob", g.SOFTMAX, ["fc"]),
    ]
    return build_graph(layers, class_count=4)


@dataclass(frozen=True)
class BlobSample:
    image: np.ndarray
    label: int
    box: BoundingBox
    center: tuple[float, float]
    sigma: float


def blob_box(center, sigma, size) -> BoundingBox:
    """Pixels whose blob intensity reaches ``BOX_LEVEL`` of the peak."""
    reach = sigma * np.sqrt(2 * np.log(1 / BOX_LEVEL))
    cx, cy = center
    lo = np.clip(np.ceil(np.array([cx, cy]) - reach), 0, size - 1).astype(int)
    hi = np.clip(np.floor(np.array([cx, cy]) + reach), 0, size - 1).astype(int)
    return BoundingBox(int(lo[0]), int(lo[1]), int(hi[0]), int(hi[1]))


def make_blob_image(rng: SplitMix64, quadrant: int | None = None, size: int = SIZE,
                    noise: float = NOISE) -> BlobSample:
    """Gaussian blob of peak 1 inside one quadrant, over uniform noise in ``[0, noise)``."""
    if quadrant is None:
        quadrant = int(rng.integers(0, 4))
    sigma = float(rng.uniform(*SIGMA_RANGE))
    reach = sigma * np.sqrt(2 * np.log(1 / BOX_LEVEL))
    half = size / 2
    margin = np.ceil(reach)
    lo = margin
    hi = half - 1 - margin
    cx, cy = rng.uniform(lo, hi, (2,))
    cx += (quadrant // 2) * half
    cy += (quadrant % 2) * half
    r = np.arange(size)
    blob = np.exp(-((r[:, None] - cx) ** 2 + (r[None, :] - cy) ** 2) / (2 * sigma ** 2))
    img = blob + noise * rng.random((size, size))
    img = np.clip(img, 0.0, 1.0).astype(np.float32)[None]
    return BlobSample(img, quadrant, blob_box((cx, cy), sigma, size), (float(cx), float(cy)), sigma)


def blob_images(seed: int, count: int, size: int = SIZE, noise: float = NOISE):
    """``count`` samples from one seeded stream."""
    rng = SplitMix64(seed)
    return [make_blob_image(rng, None, size, noise) for _ in range(count)]
