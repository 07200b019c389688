"""Class activation maps from the discriminator readout."""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np
import torch
import torch.nn.functional as F

from .models import Discriminator, DiscriminatorReadout, discriminator_forward


@dataclass
class SaliencyMap:
    """A min-max normalized heatmap at image resolution.

    ``degenerate`` marks maps whose raw values were constant; those
    normalize to all zeros.
    """

    values: np.ndarray
    raw_range: Tuple[float, float]

    @property
    def degenerate(self) -> bool:
        lo, hi = self.raw_range
        return not hi > lo

    @property
    def shape(self):
        return self.values.shape

    def to_uint8(self) -> np.ndarray:
        return np.rint(np.clip(self.values, 0.0, 1.0) * 255).astype(np.uint8)

    def to_text(self) -> str:
        return "\n".join(" ".join(f"{v:.6f}" for v in row) for row in self.values) + "\n"


def raw_cam(feature_maps: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """Channel-weighted sum of (h, w, K) feature maps."""
    return np.tensordot(np.asarray(feature_maps, dtype=np.float64),
                        np.asarray(weights, dtype=np.float64), axes=([-1], [0]))


def upsample(raw: np.ndarray, size: int) -> np.ndarray:
    """Bilinear resize (half-pixel centers, no corner alignment)."""
    t = torch.as_tensor(raw, dtype=torch.float64)[None, None]
    return F.interpolate(t, size=(size, size), mode="bilinear", align_corners=False)[0, 0].numpy()


def normalize(values: np.ndarray) -> Tuple[np.ndarray, Tuple[float, float]]:
    lo, hi = float(values.min()), float(values.max())
    if not hi > lo:
        return np.zeros_like(values, dtype=np.float64), (lo, hi)
    return (values - lo) / (hi - lo), (lo, hi)


def compute_cam(readout: DiscriminatorReadout, image_index: int,
                size: Optional[int] = None) -> SaliencyMap:
    """CAM of one image in the readout, upsampled to ``size`` (input size by default).

    ``size`` defaults to ``h * scale`` where the scale maps the 4x4 feature
    grid back to the input; pass it explicitly for non-standard readouts.
    """
    r = readout.numpy()
    n = r.feature_maps.shape[0]
    if not -n <= image_index < n:
        raise IndexError(f"image_index {image_index} out of range for {n} images")
    raw = raw_cam(r.feature_maps[image_index], r.gap_weights)
    if size is None:
        size = raw.shape[0]
    up = upsample(raw, size) if raw.shape != (size, size) else raw
    values, rng = normalize(up)
    return SaliencyMap(values, rng)


def cam_batch(model: Discriminator, images, batch_size: int = 256) -> List[SaliencyMap]:
    """One saliency map per image, computed with normalization layers frozen."""
    was_training = model.training
    model.eval()
    maps = []
    try:
        with torch.no_grad():
            for start in range(0, len(images), batch_size):
                chunk = images[start:start + batch_size]
                readout = discriminator_forward(chunk, model)
                maps.extend(compute_cam(readout, i, model.config.input_size)
                            for i in range(len(chunk)))
    finally:
        model.train(was_training)
    return maps
