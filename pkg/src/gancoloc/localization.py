"""Heatmap to bounding box: threshold, label components, keep the largest box."""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import IO, Iterable, List, NamedTuple, Tuple

import numpy as np
from scipy import ndimage

from .saliency import SaliencyMap

_STRUCTURE = {
    8: np.ones((3, 3), dtype=bool),
    4: ndimage.generate_binary_structure(2, 1),
}


class Box(NamedTuple):
    """Pixel rectangle; min corner inclusive, max corner exclusive."""

    x_min: int
    y_min: int
    x_max: int
    y_max: int

    @property
    def area(self) -> int:
        return max(self.x_max - self.x_min, 0) * max(self.y_max - self.y_min, 0)

    def is_valid(self, width=None, height=None) -> bool:
        ok = 0 <= self.x_min < self.x_max and 0 <= self.y_min < self.y_max
        if width is not None:
            ok = ok and self.x_max <= width
        if height is not None:
            ok = ok and self.y_max <= height
        return ok

    @classmethod
    def from_inclusive(cls, x0, y0, x1, y1) -> "Box":
        return cls(int(x0), int(y0), int(x1) + 1, int(y1) + 1)


def _values(saliency) -> np.ndarray:
    return saliency.values if isinstance(saliency, SaliencyMap) else np.asarray(saliency, dtype=float)


def binarize(saliency, ratio: float = 0.2) -> Tuple[np.ndarray, bool]:
    """Mask of pixels at or above ``ratio`` times the map maximum.

    Returns ``(mask, degenerate)``; an all-zero (or constant, already
    normalized) map gives an all-false mask and ``degenerate=True``.
    """
    if not 0.0 < ratio <= 1.0:
        raise ValueError("ratio must lie in (0, 1]")
    values = _values(saliency)
    top = values.max() if values.size else 0.0
    degenerate = isinstance(saliency, SaliencyMap) and saliency.degenerate
    if degenerate or not top > 0:
        return np.zeros(values.shape, dtype=bool), True
    return values >= ratio * top, False


def connected_components(mask: np.ndarray, connectivity: int = 8) -> List[np.ndarray]:
    """Maximal connected sets of true pixels as (k, 2) arrays of (row, col).

    Components are ordered by their first pixel in row-major order, i.e.
    by (min row, min col of that row).
    """
    labels, count = ndimage.label(np.asarray(mask, dtype=bool), structure=_STRUCTURE[connectivity])
    if count == 0:
        return []
    flat = labels.ravel()
    order = np.argsort(flat, kind="stable")
    sorted_labels = flat[order]
    starts = np.searchsorted(sorted_labels, np.arange(1, count + 1))
    ends = np.searchsorted(sorted_labels, np.arange(1, count + 1), side="right")
    width = labels.shape[1]
    comps = []
    for s, e in zip(starts, ends):
        idx = order[s:e]  # ascending flat index == row-major order
        comps.append(np.stack([idx // width, idx % width], axis=1))
    comps.sort(key=lambda c: (int(c[0, 0]), int(c[0, 1])))
    return comps


def tight_box(pixels: np.ndarray) -> Box:
    rows, cols = pixels[:, 0], pixels[:, 1]
    return Box(int(cols.min()), int(rows.min()), int(cols.max()) + 1, int(rows.max()) + 1)


def largest_box(components: Iterable[np.ndarray], criterion: str = "box_area") -> int:
    """Index of the component with the largest box (or pixel count); first wins ties."""
    best, best_key = -1, -1
    for i, comp in enumerate(components):
        key = tight_box(comp).area if criterion == "box_area" else len(comp)
        if key > best_key:
            best, best_key = i, key
    return best


@dataclass
class Localization:
    box: Box
    degenerate: bool


def localize_full(saliency, ratio: float = 0.2, connectivity: int = 8,
                  criterion: str = "box_area") -> Localization:
    if criterion not in ("box_area", "pixel_count"):
        raise ValueError(f"unknown criterion {criterion!r}")
    values = _values(saliency)
    height, width = values.shape
    mask, degenerate = binarize(saliency, ratio)
    comps = connected_components(mask, connectivity)
    if degenerate or not comps:
        return Localization(Box(0, 0, width, height), True)
    return Localization(tight_box(comps[largest_box(comps, criterion)]), False)


def localize(saliency, ratio: float = 0.2, connectivity: int = 8,
             criterion: str = "box_area") -> Box:
    """Single predicted box for a normalized saliency map.

    Degenerate maps fall back to the full image.
    """
    return localize_full(saliency, ratio, connectivity, criterion).box


def write_predictions(fh: IO[str], records: Iterable[Tuple[str, Box, float, bool]]) -> None:
    """Write one JSON object per prediction."""
    for image_id, box, ratio, degenerate in records:
        obj = {"image_id": image_id, "x_min": box.x_min, "y_min": box.y_min,
               "x_max": box.x_max, "y_max": box.y_max, "ratio": ratio,
               "degenerate_flag": bool(degenerate)}
        fh.write(json.dumps(obj) + "\n")


def read_predictions(fh: IO[str]) -> List[dict]:
    out = []
    for lineno, line in enumerate(fh, 1):
        line = line.strip()
        if not line:
            continue
        try:
            obj = json.loads(line)
            obj["box"] = Box(int(obj["x_min"]), int(obj["y_min"]), int(obj["x_max"]), int(obj["y_max"]))
        except (ValueError, KeyError) as exc:
            raise ValueError(f"predictions line {lineno}: {exc}") from None
        out.append(obj)
    return out
