import os

import numpy as np
import pytest
import torch

from gancoloc.checkpoint import Checkpoint, load_checkpoint, read_archive, to_bytes
from gancoloc.config import AugmentationPolicy, GanConfig
from gancoloc.data import synthetic_squares
from gancoloc.exceptions import NumericalError
from gancoloc.training import (
    BatchSampler,
    augment,
    init_state,
    photometric,
    select_peak_checkpoint,
    train,
    train_step,
    translate,
)


@pytest.fixture(scope="module")
def images():
    return synthetic_squares(64, 32, 12, np.random.default_rng(0)).images


def small(variant="SN-DCGAN", **kw):
    base = dict(variant=variant, input_size=32, base_channels=4, latent_dim=16, batch_size=8,
                max_iterations=10, seed=0)
    base.update(kw)
    return GanConfig(**base)


@pytest.mark.parametrize("variant,per_g", [("WGAN-GP", 5), ("SN-WGAN-GP", 5), ("DCGAN", 1),
                                            ("SN-DCGAN", 1), ("DRAGAN", 1)])
def test_update_schedule(variant, per_g, images):
    cfg = small(variant, max_iterations=10)
    state = train(cfg, images, checkpoint_interval=100)
    assert state.g_updates == 10
    assert state.d_updates == 10 * per_g


def test_identical_runs_identical_logs(images):
    cfg = small(max_iterations=30)
    a = train(cfg, images, checkpoint_interval=100).history
    b = train(cfg, images, checkpoint_interval=100).history
    assert a == b and len(a) > 0


def test_resume_matches_uninterrupted(images, tmp_path):
    cfg = small("WGAN-GP", max_iterations=10)
    full = train(cfg, images, checkpoint_interval=5)
    part = train(cfg, images, checkpoint_interval=5, max_iterations=5, out_dir=str(tmp_path))
    ckpt = Checkpoint(5, path=os.path.join(str(tmp_path), "ckpt_0000005.pt"))
    rest = train(cfg, images, checkpoint_interval=5, resume=ckpt)
    assert rest.iteration == 10 and part.iteration == 5
    tail_full = [r for r in full.history if r[0] > 5]
    tail_rest = [r for r in rest.history if r[0] > 5]
    assert len(tail_full) == len(tail_rest)
    for x, y in zip(tail_full, tail_rest):
        assert x[:2] == y[:2] and abs(x[2] - y[2]) <= 1e-6
    for p, q in zip(full.generator.state_dict().values(), rest.generator.state_dict().values()):
        torch.testing.assert_close(p, q, atol=1e-6, rtol=0)


def test_out_dir_artifacts(images, tmp_path):
    cfg = small(max_iterations=4)
    train(cfg, images, checkpoint_interval=2, out_dir=str(tmp_path))
    names = sorted(os.listdir(tmp_path))
    assert "ckpt_0000002.pt" in names and "ckpt_0000004.pt" in names
    assert "samples_0000004.png" in names
    lines = (tmp_path / "train.log").read_text().splitlines()
    it, name, value = lines[0].split("\t")
    assert it == "1" and name == "d_loss" and np.isfinite(float(value))


def test_checkpoint_round_trip_bit_exact(images, tmp_path):
    cfg = small(max_iterations=2)
    state = train(cfg, images, checkpoint_interval=2, out_dir=str(tmp_path))
    path = os.path.join(str(tmp_path), "ckpt_0000002.pt")
    cfg2, g, d, payload = load_checkpoint(path)
    assert cfg2 == cfg and payload["iteration"] == 2
    for a, b in zip(state.generator.state_dict().values(), g.state_dict().values()):
        assert torch.equal(a, b)
    for a, b in zip(state.discriminator.state_dict().values(), d.state_dict().values()):
        assert torch.equal(a, b)
    assert "discriminator.conv1.sn_u" in payload["params"]
    assert to_bytes(read_archive(path)["params"]) == to_bytes(payload["params"])


def test_numerical_abort(images):
    cfg = small(max_iterations=1)
    state = init_state(cfg, len(images))
    with torch.no_grad():
        state.discriminator.fc.weight.fill_(float("nan"))
    with pytest.raises(NumericalError) as err:
        train_step(state, images, None)
    diag = err.value.diagnostics
    assert diag["iteration"] == 0 and diag["real_batch"]["finite"]


def test_batch_sampler_covers_epoch():
    s = BatchSampler(10, 4, np.random.default_rng(0))
    seen = np.concatenate([s.next_indices() for _ in range(5)])
    assert sorted(seen[:10]) == list(range(10)) and s.epoch == 2


def test_identity_augmentation_is_noop(images):
    out = augment(images, AugmentationPolicy.identity(), np.random.default_rng(0))
    np.testing.assert_array_equal(out, images)


def test_translation_bound():
    assert AugmentationPolicy().max_shift(64) == 3
    img = np.full((1, 64, 64, 3), -1.0, np.float32)
    img[0, 30, 30] = 1.0
    for seed in range(30):
        out = translate(img, 3, np.random.default_rng(seed))
        r, c = np.argwhere(out[0, :, :, 0] == 1.0)[0]
        assert abs(r - 30) <= 3 and abs(c - 30) <= 3


def test_brightness_only_scales_constant_image():
    pol = AugmentationPolicy(translation=0, brightness=0.2, contrast=0, saturation=0, lighting=0)
    img = np.zeros((20, 8, 8, 3), np.float32)  # 0.5 in [0, 1]
    out = photometric(img, pol, np.random.default_rng(0))
    x = (out + 1) / 2
    assert np.all(np.abs(x - 0.5) <= 0.5 * 0.2 + 1e-6)
    assert np.ptp(x.reshape(20, -1), axis=1).max() < 1e-6


def test_augmented_shape_and_range(images):
    out = augment(images, AugmentationPolicy(), np.random.default_rng(1))
    assert out.shape == images.shape and out.dtype == images.dtype
    assert out.min() >= -1 and out.max() <= 1


class _C:
    def __init__(self, it):
        self.iteration = it


def test_peak_selection():
    ckpts = [_C(3), _C(1), _C(2)]
    scores = {1: 0.4, 2: 0.7, 3: 0.7}
    assert select_peak_checkpoint(ckpts, lambda c: scores[c.iteration]).iteration == 2
    assert select_peak_checkpoint([_C(5)], lambda c: 0.0).iteration == 5
    with pytest.raises(ValueError):
        select_peak_checkpoint([], lambda c: 0.0)
