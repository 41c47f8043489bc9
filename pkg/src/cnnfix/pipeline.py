"""Forward pass, fixations, outlier filter, heat map and box for one image."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .backtrack import DEFAULT_CONFIG, BacktrackConfig, FixationSet, compute_fixations
from .forward import ActivationTrace, run_forward
from .graph import NetworkGraph
from .postprocess import (DEFAULT_MIN_FRACTION, DEFAULT_RADIUS_FRACTION, DEFAULT_SIGMA_FRACTION,
                          BoundingBox, bbox_from_fixations, heatmap_from_fixations,
                          image_diagonal, remove_outliers)


@dataclass(frozen=True)
class Localization:
    trace: ActivationTrace
    fixations: FixationSet
    kept: np.ndarray
    heatmap: np.ndarray
    box: BoundingBox | None


def localize(graph: NetworkGraph, image, start=None, cfg: BacktrackConfig = DEFAULT_CONFIG,
             min_fraction: float = DEFAULT_MIN_FRACTION, radius: float | None = None,
             sigma: float | None = None) -> Localization:
    image = np.asarray(image, dtype=np.float32)
    diag = image_diagonal(image.shape)
    radius = DEFAULT_RADIUS_FRACTION * diag if radius is None else radius
    sigma = DEFAULT_SIGMA_FRACTION * diag if sigma is None else sigma
    trace = run_forward(graph, image)
    fixations = compute_fixations(graph, trace, start, cfg)
    kept = remove_outliers(fixations.coords, min_fraction, radius)
    if len(kept) == 0:
        # every point isolated: keep them all rather than report no evidence
        kept = fixations.coords
    heatmap = heatmap_from_fixations(kept, image.shape, sigma)
    return Localization(trace, fixations, kept, heatmap, bbox_from_fixations(kept))
