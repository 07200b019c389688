"""Localization metrics and the MS-SSIM diversity score."""

from __future__ import annotations

import json
import warnings
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Mapping, Optional, Sequence

import numpy as np
import torch
from scipy import ndimage

from .exceptions import DataError
from .localization import Box, localize_full
from .models import sample_latent, to_nhwc
from .saliency import cam_batch

IOU_THRESHOLD = 0.5

# standard five-scale MS-SSIM exponents
MS_SSIM_WEIGHTS = np.array([0.0448, 0.2856, 0.3001, 0.2363, 0.1333])
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1, SSIM_K2 = 0.01, 0.03


def iou(a: Box, b: Box) -> float:
    """Intersection over union of two half-open pixel boxes."""
    iw = min(a[2], b[2]) - max(a[0], b[0])
    ih = min(a[3], b[3]) - max(a[1], b[1])
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    union = (a[2] - a[0]) * (a[3] - a[1]) + (b[2] - b[0]) * (b[3] - b[1]) - inter
    return inter / union


def gt_known_loc(predictions: Sequence[Box], ground_truth: Sequence[Box]) -> float:
    """Fraction of images whose predicted box has IoU strictly above 0.5."""
    if len(predictions) != len(ground_truth):
        raise ValueError(f"{len(predictions)} predictions for {len(ground_truth)} ground-truth boxes")
    if not predictions:
        raise ValueError("no predictions to score")
    hits = sum(iou(p, g) > IOU_THRESHOLD for p, g in zip(predictions, ground_truth))
    return hits / len(predictions)


def default_scales(size: int, max_scales: int = 5) -> int:
    """Largest scale count whose coarsest level still fits the SSIM window."""
    n = 1
    while n < max_scales and size >= (SSIM_WINDOW - 1) * 2 ** n + 1:
        n += 1
    return n


def _filter(x: np.ndarray) -> np.ndarray:
    # gaussian blur over H and W, then crop to the 'valid' region
    out = ndimage.gaussian_filter(x, sigma=(0, SSIM_SIGMA, SSIM_SIGMA, 0)[-x.ndim:],
                                  truncate=(SSIM_WINDOW // 2) / SSIM_SIGMA, mode="constant")
    r = SSIM_WINDOW // 2
    return out[..., r:-r, r:-r, :] if x.ndim == 4 else out[r:-r, r:-r, :]


def _ssim_terms(x: np.ndarray, y: np.ndarray):
    c1, c2 = SSIM_K1 ** 2, SSIM_K2 ** 2
    mx, my = _filter(x), _filter(y)
    sxx = _filter(x * x) - mx * mx
    syy = _filter(y * y) - my * my
    sxy = _filter(x * y) - mx * my
    cs = (2 * sxy + c2) / (sxx + syy + c2)
    lum = (2 * mx * my + c1) / (mx * mx + my * my + c1)
    axes = tuple(range(x.ndim - 3, x.ndim))
    return cs.mean(axis=axes), (lum * cs).mean(axis=axes)


def _downsample(x: np.ndarray) -> np.ndarray:
    h, w = x.shape[-3] // 2 * 2, x.shape[-2] // 2 * 2
    x = x[..., :h, :w, :]
    return 0.25 * (x[..., 0::2, 0::2, :] + x[..., 1::2, 0::2, :]
                   + x[..., 0::2, 1::2, :] + x[..., 1::2, 1::2, :])


def ms_ssim(a: np.ndarray, b: np.ndarray, n_scales: Optional[int] = None) -> np.ndarray:
    """Multi-scale SSIM of [-1, 1] images (H, W, 3) or batches (N, H, W, 3).

    Images are shifted to [0, 1] first.  Exponents are the leading entries of
    the standard five-scale vector, renormalized to sum to one.
    """
    x = (np.asarray(a, dtype=np.float64) + 1.0) / 2.0
    y = (np.asarray(b, dtype=np.float64) + 1.0) / 2.0
    if x.shape != y.shape:
        raise ValueError(f"shape mismatch {x.shape} vs {y.shape}")
    size = min(x.shape[-3], x.shape[-2])
    fit = default_scales(size)
    if n_scales is None:
        n_scales = fit
    elif n_scales > fit:
        warnings.warn(f"{size}px images support {fit} MS-SSIM scales; using {fit} instead of {n_scales}",
                      RuntimeWarning, stacklevel=2)
        n_scales = fit
    if size < SSIM_WINDOW:
        raise ValueError(f"images must be at least {SSIM_WINDOW} pixels")
    weights = MS_SSIM_WEIGHTS[:n_scales] / MS_SSIM_WEIGHTS[:n_scales].sum()
    score = 1.0
    for j in range(n_scales):
        cs, full = _ssim_terms(x, y)
        if j < n_scales - 1:
            score = score * np.maximum(cs, 0.0) ** weights[j]
            x, y = _downsample(x), _downsample(y)
        else:
            score = score * np.maximum(full, 0.0) ** weights[j]
    return score


def ms_ssim_diversity(generator, sample_pairs: int = 1000, rng=None,
                      n_scales: Optional[int] = None, batch_size: int = 256) -> float:
    """Mean MS-SSIM over random pairs of generated samples (higher = less diverse).

    ``rng`` is a ``torch.Generator`` or an integer seed.
    """
    if sample_pairs < 1:
        raise ValueError("sample_pairs must be >= 1")
    if rng is None or isinstance(rng, int):
        rng = torch.Generator().manual_seed(0 if rng is None else rng)
    latent_dim = generator.config.latent_dim if hasattr(generator, "config") else generator.latent_dim
    was_training = getattr(generator, "training", False)
    if hasattr(generator, "eval"):
        generator.eval()
    try:
        z = sample_latent(2 * sample_pairs, latent_dim, rng)
        chunks = []
        with torch.no_grad():
            for s in range(0, len(z), batch_size):
                chunks.append(to_nhwc(generator(z[s:s + batch_size])))
    finally:
        if hasattr(generator, "train"):
            generator.train(was_training)
    samples = np.concatenate(chunks)
    return float(np.mean(ms_ssim(samples[:sample_pairs], samples[sample_pairs:], n_scales)))


@dataclass
class EvalReport:
    per_image: List[Dict] = field(default_factory=list)
    gt_known_loc: float = 0.0
    ratio: float = 0.2
    checkpoint: str = ""
    config: Dict = field(default_factory=dict)
    ms_ssim_mean: Optional[float] = None
    ms_ssim_pairs: Optional[int] = None
    ms_ssim_seed: Optional[int] = None

    @property
    def n(self) -> int:
        return len(self.per_image)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)

    def summary_line(self) -> str:
        return (f"gt_known_loc={self.gt_known_loc:.6f} n={self.n} "
                f"ratio={self.ratio} checkpoint={self.checkpoint or '-'}")


def score_boxes(predictions: Mapping[str, Box], ground_truth: Mapping[str, Box],
                ratio: float = 0.2, **meta) -> EvalReport:
    """Score predictions keyed by image id against every annotated image."""
    if not ground_truth:
        raise DataError("no annotated images to evaluate")
    missing = sorted(set(ground_truth) - set(predictions))
    if missing:
        raise DataError(f"predictions missing for {len(missing)} annotated images: {', '.join(missing)}")
    per_image = []
    for image_id in sorted(ground_truth):
        v = iou(predictions[image_id], ground_truth[image_id])
        per_image.append({"image_id": image_id, "iou": v, "correct": v > IOU_THRESHOLD})
    acc = sum(r["correct"] for r in per_image) / len(per_image)
    return EvalReport(per_image=per_image, gt_known_loc=acc, ratio=ratio, **meta)


def evaluate_checkpoint(checkpoint, dataset, ratio: float = 0.2, diversity_pairs: Optional[int] = None,
                        seed: int = 0, connectivity: int = 8, criterion: str = "box_area") -> EvalReport:
    """CAM -> box -> GT-known Loc for an annotated image set.

    ``checkpoint`` is anything :func:`gancoloc.checkpoint.load_checkpoint`
    accepts, or a ``(config, generator, discriminator)`` triple.
    """
    from .checkpoint import Checkpoint, load_checkpoint

    if isinstance(checkpoint, tuple):
        config, g, d = checkpoint
        ckpt_id = ""
    else:
        config, g, d, _ = load_checkpoint(checkpoint)
        ckpt_id = checkpoint.id if isinstance(checkpoint, Checkpoint) else str(checkpoint)
    if len(dataset.images) == 0:
        raise DataError("evaluation split is empty")
    if dataset.boxes is None or any(b is None for b in dataset.boxes):
        raise DataError("evaluation split lacks ground-truth boxes")
    maps = cam_batch(d, dataset.images)
    preds = {i: localize_full(m, ratio, connectivity, criterion).box for i, m in zip(dataset.ids, maps)}
    truth = dict(zip(dataset.ids, dataset.boxes))
    report = score_boxes(preds, truth, ratio, checkpoint=ckpt_id, config=config.to_dict())
    if diversity_pairs:
        report.ms_ssim_mean = ms_ssim_diversity(g, diversity_pairs, seed)
        report.ms_ssim_pairs = diversity_pairs
        report.ms_ssim_seed = seed
    return report
