"""Feature extractors for input-diversity scoring and feature-space coverage.

The default extractor mean-pools the image over an 8x8 grid (64 features).
Any NEF model can be designated as an extractor instead; its final-layer
raw output is the feature vector and its layout block is ignored.
"""

from __future__ import annotations

from pathlib import Path
from typing import Callable

import numpy as np

from .nef import ModelGraph, load_model
from .runtime import forward

FeatureExtractor = Callable[[np.ndarray], np.ndarray]


def pooled_features(image: np.ndarray, grid: int = 8) -> np.ndarray:
    """Mean intensity of each cell in a grid x grid partition of the image."""
    img = np.asarray(image, dtype=np.float64)
    rows = np.array_split(np.arange(img.shape[0]), grid)
    cols = np.array_split(np.arange(img.shape[1]), grid)
    out = np.empty(grid * grid, dtype=np.float64)
    k = 0
    for r in rows:
        band = img[r]
        for c in cols:
            out[k] = band[:, c].mean()
            k += 1
    return out


class ModelFeatureExtractor:
    """Wraps a NEF model; features are its raw forward output."""

    def __init__(self, model: ModelGraph):
        self.model = model

    def __call__(self, image: np.ndarray) -> np.ndarray:
        return forward(self.model, image).astype(np.float64)


def make_extractor(spec: str | Path) -> FeatureExtractor:
    """Resolve an extractor spec: "pool8" (default grid pooling) or a NEF path."""
    if isinstance(spec, str) and spec.startswith("pool"):
        grid = int(spec[4:] or 8)
        if grid < 1:
            raise ValueError(f"bad pooling grid in extractor spec {spec!r}")
        return lambda image: pooled_features(image, grid=grid)
    path = Path(spec)
    return ModelFeatureExtractor(load_model(path.read_bytes()))
