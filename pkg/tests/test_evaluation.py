import numpy as np
import pytest
import torch

from gancoloc.config import GanConfig
from gancoloc.data import ImageSet
from gancoloc.evaluation import (
    default_scales,
    evaluate_checkpoint,
    gt_known_loc,
    iou,
    ms_ssim,
    ms_ssim_diversity,
    score_boxes,
)
from gancoloc.exceptions import DataError
from gancoloc.localization import Box
from gancoloc.models import Discriminator, Generator
from oracles import pixel_iou


def test_iou_examples():
    assert iou(Box(3, 4, 10, 12), Box(3, 4, 10, 12)) == 1.0
    assert iou(Box(0, 0, 10, 10), Box(20, 20, 30, 30)) == 0.0
    assert iou(Box(0, 0, 10, 10), Box(5, 0, 15, 10)) == pytest.approx(1 / 3)
    assert pixel_iou((0, 0, 10, 10), (5, 0, 15, 10)) == pytest.approx(50 / 150)


def test_iou_touching_edges_is_zero():
    assert iou(Box(0, 0, 5, 5), Box(5, 0, 10, 5)) == 0.0


def test_iou_matches_pixel_oracle_and_is_symmetric(rng):
    for _ in range(300):
        a = _random_box(rng)
        b = _random_box(rng)
        assert iou(a, b) == pixel_iou(a, b)
        assert iou(a, b) == iou(b, a)
        assert 0.0 <= iou(a, b) <= 1.0


def _random_box(rng, size=64):
    x0, x1 = sorted(rng.choice(size + 1, 2, replace=False))
    y0, y1 = sorted(rng.choice(size + 1, 2, replace=False))
    return Box(int(x0), int(y0), int(x1), int(y1))


def test_gt_known_loc_counts():
    gt = Box(0, 0, 10, 10)
    # ious 0.6, 0.4, 0.51 via horizontal overlap fractions
    preds = [Box(0, 0, 10, 6), Box(0, 0, 10, 4), Box(0, 0, 10, 10)]
    assert [round(iou(p, gt), 2) for p in preds] == [0.6, 0.4, 1.0]
    assert gt_known_loc(preds, [gt] * 3) == pytest.approx(2 / 3)


def test_gt_known_loc_direct_values():
    gts = [Box(0, 0, 100, 1)] * 3
    preds = [Box(0, 0, 60, 1), Box(0, 0, 40, 1), Box(0, 0, 51, 1)]
    assert [iou(p, g) for p, g in zip(preds, gts)] == [0.6, 0.4, 0.51]
    assert gt_known_loc(preds, gts) == pytest.approx(2 / 3)


def test_gt_known_loc_strict_boundary():
    # iou exactly 0.5 is not counted
    assert iou(Box(0, 0, 10, 10), Box(0, 0, 5, 10)) == 0.5
    assert gt_known_loc([Box(0, 0, 5, 10)], [Box(0, 0, 10, 10)]) == 0.0


def test_gt_known_loc_perfect_and_order_invariant(rng):
    boxes = [_random_box(rng) for _ in range(20)]
    preds = [_random_box(rng) for _ in range(20)]
    assert gt_known_loc(boxes, boxes) == 1.0
    perm = rng.permutation(20)
    assert gt_known_loc(preds, boxes) == gt_known_loc([preds[i] for i in perm], [boxes[i] for i in perm])


def test_gt_known_loc_length_mismatch():
    with pytest.raises(ValueError):
        gt_known_loc([Box(0, 0, 1, 1)], [])


# --- MS-SSIM -------------------------------------------------------------------

def test_default_scales():
    assert default_scales(64) == 3
    assert default_scales(32) == 2
    assert default_scales(256) == 5


def test_ms_ssim_identity(rng):
    x = rng.uniform(-1, 1, size=(32, 32, 3))
    assert ms_ssim(x, x) == pytest.approx(1.0, abs=1e-6)
    y = rng.uniform(-1, 1, size=(4, 64, 64, 3))
    np.testing.assert_allclose(ms_ssim(y, y), 1.0, atol=1e-6)


def test_ms_ssim_symmetric_and_bounded(rng):
    for _ in range(10):
        a = rng.uniform(-1, 1, size=(32, 32, 3))
        b = np.clip(a + rng.normal(0, rng.uniform(0.05, 1), a.shape), -1, 1)
        s = ms_ssim(a, b)
        assert s == pytest.approx(ms_ssim(b, a), abs=1e-12)
        assert 0.0 <= s <= 1.0


def test_ms_ssim_decreases_with_noise(rng):
    a = np.clip(rng.normal(0, 0.3, (64, 64, 3)), -1, 1)
    scores = [ms_ssim(a, np.clip(a + rng.normal(0, s, a.shape), -1, 1)) for s in (0.01, 0.1, 0.5)]
    assert scores[0] > scores[1] > scores[2]


def test_ms_ssim_scale_reduction_warns(rng):
    x = rng.uniform(-1, 1, size=(32, 32, 3))
    with pytest.warns(RuntimeWarning):
        assert ms_ssim(x, x, n_scales=5) == pytest.approx(1.0)


class ConstantGenerator(torch.nn.Module):
    latent_dim = 8

    def forward(self, z):
        return torch.full((z.shape[0], 3, 32, 32), 0.3)


def test_collapsed_generator_scores_one():
    assert ms_ssim_diversity(ConstantGenerator(), 50, 0) == pytest.approx(1.0, abs=1e-3)


def test_diversity_of_random_generator_below_one():
    torch.manual_seed(0)
    g = Generator(GanConfig(input_size=32, base_channels=4, latent_dim=16))
    with torch.no_grad():
        g.linear.weight.mul_(50)
    s = ms_ssim_diversity(g, 20, 0)
    assert 0.0 <= s < 1.0
    assert s == ms_ssim_diversity(g, 20, 0)


# --- reports ----------------------------------------------------------------------

def test_score_boxes_report():
    gt = {"a": Box(0, 0, 10, 10), "b": Box(0, 0, 4, 4)}
    preds = {"b": Box(0, 0, 4, 4), "a": Box(20, 20, 30, 30), "extra": Box(0, 0, 1, 1)}
    rep = score_boxes(preds, gt, 0.2, checkpoint="ck")
    assert rep.gt_known_loc == 0.5 and rep.n == 2
    assert rep.summary_line() == "gt_known_loc=0.500000 n=2 ratio=0.2 checkpoint=ck"
    assert '"gt_known_loc": 0.5' in rep.to_json()


def test_score_boxes_missing_predictions():
    with pytest.raises(DataError, match="b"):
        score_boxes({"a": Box(0, 0, 1, 1)}, {"a": Box(0, 0, 1, 1), "b": Box(0, 0, 1, 1)})


class _SquareDiscriminator(Discriminator):
    """Discriminator whose CAM is the local brightness of the image."""

    def readout(self, x):
        from gancoloc.models import DiscriminatorReadout

        feats = torch.nn.functional.avg_pool2d(x.mean(1, keepdim=True), 8)  # 32 -> 4
        feats = (feats > 0).to(x.dtype).permute(0, 2, 3, 1)
        w = torch.ones(1, dtype=x.dtype)
        return DiscriminatorReadout(feats.mean((1, 2)) @ w, feats, w, torch.zeros((), dtype=x.dtype))


def test_evaluate_checkpoint_constructed_perfect_case():
    cfg = GanConfig(input_size=32, base_channels=4)
    d = _SquareDiscriminator(cfg)
    images = np.full((4, 32, 32, 3), -1.0, np.float32)
    boxes = []
    for i, (cx, cy) in enumerate([(0, 0), (1, 2), (3, 3), (2, 0)]):
        images[i, cy * 8:cy * 8 + 8, cx * 8:cx * 8 + 8] = 1.0
        boxes.append(Box(cx * 8, cy * 8, cx * 8 + 8, cy * 8 + 8))
    split = ImageSet(images, [f"i{k}" for k in range(4)], boxes)
    # bilinear upsampling spreads the one-hot cell, so a mid ratio recovers most of it
    rep = evaluate_checkpoint((cfg, Generator(cfg), d), split, ratio=0.5)
    assert rep.gt_known_loc == 1.0
    assert all(r["iou"] > 0.5 for r in rep.per_image)


def test_evaluate_checkpoint_errors():
    cfg = GanConfig(input_size=32, base_channels=4)
    triple = (cfg, Generator(cfg), Discriminator(cfg))
    with pytest.raises(DataError):
        evaluate_checkpoint(triple, ImageSet(np.zeros((0, 32, 32, 3), np.float32), [], []))
    with pytest.raises(DataError):
        evaluate_checkpoint(triple, ImageSet(np.zeros((1, 32, 32, 3), np.float32), ["x"], None))
