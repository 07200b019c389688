"""scikit-learn style front end for GAN-based co-localization."""

from __future__ import annotations

from typing import Optional

import numpy as np
import torch
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .checkpoint import load_checkpoint
from .config import AugmentationPolicy, GanConfig
from .evaluation import gt_known_loc, ms_ssim_diversity
from .localization import localize_full
from .models import sample_latent, to_nhwc
from .saliency import cam_batch
from .training import select_peak_checkpoint, train
from .validation import check_boxes, check_image_batch


class CoLocalizer(TransformerMixin, BaseEstimator):
    """Train a GAN on unlabeled images of one category and localize its object.

    ``fit`` trains the generator/discriminator pair; ``transform`` returns
    the discriminator's normalized class activation maps, ``predict`` one
    ``(x_min, y_min, x_max, y_max)`` box per image and ``score`` the
    GT-known localization accuracy.

    Parameters mirror :class:`~gancoloc.config.GanConfig`; ``random_state``
    is its seed.  When ``fit`` receives ``eval_set=(X_val, boxes_val)`` every
    checkpoint is scored on it and the best one is kept.
    """

    def __init__(self, variant="SN-DCGAN", input_size=64, latent_dim=128, base_channels=64,
                 batch_size=128, max_iterations=250_000, learning_rate=2e-4, adam_beta1=0.9,
                 adam_beta2=0.999, penalty_weight=10.0, augmentation=False,
                 augmentation_policy=None, ratio=0.2, checkpoint_interval=5000,
                 connectivity=8, criterion="box_area", random_state=0):
        self.variant = variant
        self.input_size = input_size
        self.latent_dim = latent_dim
        self.base_channels = base_channels
        self.batch_size = batch_size
        self.max_iterations = max_iterations
        self.learning_rate = learning_rate
        self.adam_beta1 = adam_beta1
        self.adam_beta2 = adam_beta2
        self.penalty_weight = penalty_weight
        self.augmentation = augmentation
        self.augmentation_policy = augmentation_policy
        self.ratio = ratio
        self.checkpoint_interval = checkpoint_interval
        self.connectivity = connectivity
        self.criterion = criterion
        self.random_state = random_state

    def _gan_config(self) -> GanConfig:
        return GanConfig(variant=self.variant, input_size=self.input_size, latent_dim=self.latent_dim,
                         base_channels=self.base_channels, batch_size=self.batch_size,
                         max_iterations=self.max_iterations, learning_rate=self.learning_rate,
                         adam_beta1=self.adam_beta1, adam_beta2=self.adam_beta2,
                         penalty_weight=self.penalty_weight, augmentation=self.augmentation,
                         seed=int(self.random_state or 0))

    def fit(self, X, y=None, eval_set=None, callbacks=()):
        X = check_image_batch(X, self.input_size)
        self.config_ = self._gan_config()
        policy = self.augmentation_policy or AugmentationPolicy()
        state = train(self.config_, X, callbacks=callbacks, policy=policy,
                      checkpoint_interval=self.checkpoint_interval)
        self.history_ = list(state.history)
        self.checkpoints_ = list(state.checkpoints)
        self.checkpoint_scores_ = {}
        chosen = self.checkpoints_[-1]
        if eval_set is not None:
            X_val = check_image_batch(eval_set[0], self.input_size)
            boxes = check_boxes(eval_set[1], len(X_val), self.input_size)

            def evaluate(ckpt):
                _, _, d, _ = load_checkpoint(ckpt)
                acc = gt_known_loc(self._predict_with(d, X_val), boxes)
                self.checkpoint_scores_[ckpt.iteration] = acc
                return acc

            chosen = select_peak_checkpoint(self.checkpoints_, evaluate)
        _, self.generator_, self.discriminator_, _ = load_checkpoint(chosen)
        self.generator_.eval()
        self.discriminator_.eval()
        self.peak_iteration_ = chosen.iteration
        return self

    def _maps(self, d, X):
        return cam_batch(d, X)

    def _predict_with(self, d, X):
        return [localize_full(m, self.ratio, self.connectivity, self.criterion).box
                for m in self._maps(d, X)]

    def transform(self, X):
        """Normalized saliency maps, shape (N, H, W)."""
        check_is_fitted(self, "discriminator_")
        X = check_image_batch(X, self.input_size)
        return np.stack([m.values for m in self._maps(self.discriminator_, X)])

    def predict(self, X):
        """One half-open box per image as an (N, 4) integer array."""
        check_is_fitted(self, "discriminator_")
        X = check_image_batch(X, self.input_size)
        return np.array([tuple(b) for b in self._predict_with(self.discriminator_, X)],
                        dtype=np.int64).reshape(-1, 4)

    def score(self, X, y):
        """GT-known localization accuracy against (N, 4) ground-truth boxes."""
        check_is_fitted(self, "discriminator_")
        X = check_image_batch(X, self.input_size)
        boxes = check_boxes(y, len(X), self.input_size)
        return gt_known_loc(self._predict_with(self.discriminator_, X), boxes)

    def sample(self, n: int, random_state: Optional[int] = None) -> np.ndarray:
        """Generated images, (n, H, W, 3) in [-1, 1]."""
        check_is_fitted(self, "generator_")
        rng = torch.Generator().manual_seed(0 if random_state is None else int(random_state))
        with torch.no_grad():
            return to_nhwc(self.generator_(sample_latent(n, self.latent_dim, rng)))

    def diversity(self, sample_pairs: int = 1000, random_state: Optional[int] = None) -> float:
        """Mean pairwise MS-SSIM of generated samples."""
        check_is_fitted(self, "generator_")
        return ms_ssim_diversity(self.generator_, sample_pairs,
                                 0 if random_state is None else int(random_state))
