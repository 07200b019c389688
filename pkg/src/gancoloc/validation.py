"""Input validation for the estimator API."""

from __future__ import annotations

from typing import List, Optional

import numpy as np
from sklearn.utils import check_array

from .exceptions import InputError
from .localization import Box


def check_image_batch(X, size: Optional[int] = None, atol: float = 1e-5) -> np.ndarray:
    """Validate an (N, H, W, 3) batch in [-1, 1] and return it as float32."""
    X = check_array(X, allow_nd=True, ensure_2d=False, dtype=np.float32)
    if X.ndim != 4 or X.shape[-1] != 3:
        raise InputError(f"expected an (N, H, W, 3) image batch, got shape {X.shape}")
    if X.shape[1] != X.shape[2]:
        raise InputError(f"images must be square, got {X.shape[1]}x{X.shape[2]}")
    if size is not None and X.shape[1] != size:
        raise InputError(f"expected {size}x{size} images, got {X.shape[1]}x{X.shape[2]}")
    if X.min() < -1 - atol or X.max() > 1 + atol:
        raise InputError("image values must lie in [-1, 1]")
    return X


def check_boxes(y, n_samples: int, size: Optional[int] = None) -> List[Box]:
    """Validate ground-truth boxes given as an (N, 4) array-like of half-open corners."""
    arr = np.asarray(y)
    if arr.shape != (n_samples, 4):
        raise InputError(f"expected boxes of shape ({n_samples}, 4), got {arr.shape}")
    if not np.issubdtype(arr.dtype, np.integer):
        if not np.all(arr == np.round(arr)):
            raise InputError("box coordinates must be integers")
    boxes = [Box(*(int(v) for v in row)) for row in arr]
    for b in boxes:
        if not b.is_valid(size, size):
            raise InputError(f"invalid box {tuple(b)}")
    return boxes
