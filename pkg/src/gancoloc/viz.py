"""Static image outputs: sample grids, heatmaps and three-panel figures."""

from __future__ import annotations

import numpy as np
import torch
from PIL import Image

from .models import to_nhwc

PRED_COLOR = (0, 255, 0)
GT_COLOR = (0, 0, 255)
OVERLAY_ALPHA = 0.5


def to_uint8(images: np.ndarray) -> np.ndarray:
    """[-1, 1] floats to 8-bit; inverse of ``v / 127.5 - 1``."""
    return np.rint((np.clip(images, -1.0, 1.0) + 1.0) * 127.5).astype(np.uint8)


def save_png(array: np.ndarray, path: str) -> None:
    Image.fromarray(array).save(path, format="PNG")


def tile(images: np.ndarray, cols: int = 8) -> np.ndarray:
    n, h, w, c = images.shape
    rows = -(-n // cols)
    canvas = np.zeros((rows * h, cols * w, c), dtype=images.dtype)
    for i, img in enumerate(images):
        r, q = divmod(i, cols)
        canvas[r * h:(r + 1) * h, q * w:(q + 1) * w] = img
    return canvas


def sample_grid(generator, z: torch.Tensor) -> np.ndarray:
    """8x8 grid of generator samples as an 8-bit RGB image."""
    was_training = generator.training
    generator.eval()
    try:
        with torch.no_grad():
            samples = to_nhwc(generator(z))
    finally:
        generator.train(was_training)
    return tile(to_uint8(samples), 8)


def _jet_table() -> np.ndarray:
    x = np.linspace(0.0, 1.0, 256)
    r = np.clip(1.5 - np.abs(4 * x - 3), 0, 1)
    g = np.clip(1.5 - np.abs(4 * x - 2), 0, 1)
    b = np.clip(1.5 - np.abs(4 * x - 1), 0, 1)
    return np.rint(np.stack([r, g, b], axis=1) * 255).astype(np.uint8)


COLOR_TABLE = _jet_table()


def colorize(gray: np.ndarray) -> np.ndarray:
    return COLOR_TABLE[gray]


def draw_box(image: np.ndarray, box, color) -> np.ndarray:
    """Draw a one-pixel rectangle outline in place and return the image."""
    h, w = image.shape[:2]
    x0, y0 = max(box[0], 0), max(box[1], 0)
    x1, y1 = min(box[2], w) - 1, min(box[3], h) - 1
    if x1 < x0 or y1 < y0:
        return image
    image[y0, x0:x1 + 1] = color
    image[y1, x0:x1 + 1] = color
    image[y0:y1 + 1, x0] = color
    image[y0:y1 + 1, x1] = color
    return image


def panel(image: np.ndarray, heat_gray: np.ndarray, pred_box, gt_box=None) -> np.ndarray:
    """Input with boxes | heatmap | heatmap over input, side by side."""
    rgb = to_uint8(image) if image.dtype != np.uint8 else image.copy()
    left = rgb.copy()
    if gt_box is not None:
        draw_box(left, gt_box, GT_COLOR)
    draw_box(left, pred_box, PRED_COLOR)
    heat = colorize(heat_gray)
    overlay = np.rint(OVERLAY_ALPHA * heat + (1 - OVERLAY_ALPHA) * rgb).astype(np.uint8)
    return np.concatenate([left, heat, overlay], axis=1)
