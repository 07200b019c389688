"""Adversarial training loop, augmentation and checkpoint selection."""

from __future__ import annotations

import logging
import math
import os
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, Iterable, List, Optional, Sequence

import numpy as np
import torch

from .checkpoint import Checkpoint, pack, restore_models, write_archive
from .config import AugmentationPolicy, GanConfig
from .exceptions import DataError, NumericalError
from .losses import LossBundle, assemble_objectives
from .models import Discriminator, Generator, check_images, sample_latent

logger = logging.getLogger(__name__)

# AlexNet PCA lighting basis for RGB in [0, 1]
_EIGVAL = np.array([0.2175, 0.0188, 0.0045])
_EIGVEC = np.array([
    [-0.5675, 0.7192, 0.4009],
    [-0.5808, -0.0045, -0.8140],
    [-0.5836, -0.6948, 0.4203],
])
_LUMA = np.array([0.299, 0.587, 0.114])


def translate(images: np.ndarray, max_shift: int, rng: np.random.Generator) -> np.ndarray:
    """Shift each image by up to ``max_shift`` pixels per axis, replicating edges."""
    if max_shift <= 0:
        return images.copy()
    n, h, w, _ = images.shape
    shifts = rng.integers(-max_shift, max_shift + 1, size=(n, 2))
    padded = np.pad(images, ((0, 0), (max_shift,) * 2, (max_shift,) * 2, (0, 0)), mode="edge")
    out = np.empty_like(images)
    for i, (dy, dx) in enumerate(shifts):
        y0, x0 = max_shift - dy, max_shift - dx
        out[i] = padded[i, y0:y0 + h, x0:x0 + w]
    return out


def photometric(images: np.ndarray, policy: AugmentationPolicy, rng: np.random.Generator) -> np.ndarray:
    """Brightness, contrast, saturation and PCA lighting jitter on [-1, 1] images."""
    if not (policy.brightness or policy.contrast or policy.saturation or policy.lighting):
        return images.copy()
    n = images.shape[0]
    x = (images.astype(np.float64) + 1.0) / 2.0
    if policy.brightness:
        x = x * (1 + rng.uniform(-policy.brightness, policy.brightness, (n, 1, 1, 1)))
    if policy.contrast:
        mean = (x @ _LUMA).mean(axis=(1, 2))[:, None, None, None]
        x = (x - mean) * (1 + rng.uniform(-policy.contrast, policy.contrast, (n, 1, 1, 1))) + mean
    if policy.saturation:
        gray = (x @ _LUMA)[..., None]
        x = (x - gray) * (1 + rng.uniform(-policy.saturation, policy.saturation, (n, 1, 1, 1))) + gray
    if policy.lighting:
        alpha = rng.normal(0.0, policy.lighting, (n, 3))
        x = x + ((alpha * _EIGVAL) @ _EIGVEC.T)[:, None, None, :]
    return np.clip(x * 2.0 - 1.0, -1.0, 1.0).astype(images.dtype)


def augment(images: np.ndarray, policy: AugmentationPolicy, rng: np.random.Generator) -> np.ndarray:
    """Random translation then photometric jitter; output clamped to [-1, 1]."""
    images = np.asarray(images)
    out = translate(images, policy.max_shift(images.shape[1]), rng)
    return photometric(out, policy, rng)


class BatchSampler:
    """Endless shuffled minibatches; reshuffles when an epoch is exhausted."""

    def __init__(self, n: int, batch_size: int, rng: np.random.Generator):
        if n <= 0:
            raise DataError("training set is empty")
        self.n, self.batch_size, self.rng = n, batch_size, rng
        self.perm = rng.permutation(n)
        self.cursor = 0
        self.epoch = 0

    def next_indices(self) -> np.ndarray:
        out = []
        need = self.batch_size
        while need:
            take = self.perm[self.cursor:self.cursor + need]
            out.append(take)
            need -= len(take)
            self.cursor += len(take)
            if self.cursor >= self.n:
                self.perm = self.rng.permutation(self.n)
                self.cursor = 0
                self.epoch += 1
        return np.concatenate(out)

    def state_dict(self) -> Dict[str, Any]:
        return {"perm": self.perm.copy(), "cursor": self.cursor, "epoch": self.epoch}

    def load_state_dict(self, state: Dict[str, Any]) -> None:
        self.perm = np.asarray(state["perm"]).copy()
        self.cursor = int(state["cursor"])
        self.epoch = int(state["epoch"])


@dataclass
class TrainState:
    config: GanConfig
    generator: Generator
    discriminator: Discriminator
    opt_g: torch.optim.Optimizer
    opt_d: torch.optim.Optimizer
    torch_rng: torch.Generator
    np_rng: np.random.Generator
    sampler: BatchSampler
    iteration: int = 0
    d_updates: int = 0
    g_updates: int = 0
    history: List[tuple] = field(default_factory=list)
    checkpoints: List[Checkpoint] = field(default_factory=list)

    def rng_state(self) -> Dict[str, Any]:
        return {
            "torch": self.torch_rng.get_state(),
            "numpy": self.np_rng.bit_generator.state,
            "sampler": self.sampler.state_dict(),
            "torch_global": torch.get_rng_state(),
            "counters": (self.d_updates, self.g_updates),
        }

    def snapshot(self) -> Dict[str, Any]:
        return pack(self.config, self.generator, self.discriminator,
                    {"generator": self.opt_g, "discriminator": self.opt_d},
                    self.iteration, self.rng_state())


def _make_optimizer(params, config: GanConfig) -> torch.optim.Optimizer:
    return torch.optim.Adam(params, lr=config.learning_rate,
                            betas=(config.adam_beta1, config.adam_beta2), eps=config.adam_eps)


def init_state(config: GanConfig, n_train: int, resume=None) -> TrainState:
    """Fresh (seeded) or resumed training state."""
    torch.manual_seed(config.seed)
    g, d = Generator(config), Discriminator(config)
    torch_rng = torch.Generator().manual_seed(config.seed + 1)
    np_rng = np.random.default_rng(config.seed)
    state = TrainState(config, g, d, _make_optimizer(g.parameters(), config),
                       _make_optimizer(d.parameters(), config), torch_rng, np_rng,
                       BatchSampler(n_train, config.batch_size, np_rng))
    if resume is not None:
        payload = resume.load() if isinstance(resume, Checkpoint) else resume
        _, g_saved, d_saved = restore_models(payload)
        g.load_state_dict(g_saved.state_dict())
        d.load_state_dict(d_saved.state_dict())
        state.opt_g.load_state_dict(payload["optimizer"]["generator"])
        state.opt_d.load_state_dict(payload["optimizer"]["discriminator"])
        rng = payload["rng"]
        torch_rng.set_state(rng["torch"])
        np_rng.bit_generator.state = rng["numpy"]
        state.sampler.load_state_dict(rng["sampler"])
        torch.set_rng_state(rng["torch_global"])
        state.d_updates, state.g_updates = rng["counters"]
        state.iteration = payload["iteration"]
    return state


def _batch_stats(x: torch.Tensor) -> Dict[str, float]:
    x = x.detach()
    return {"min": float(x.min()), "max": float(x.max()), "mean": float(x.mean()),
            "std": float(x.std()), "finite": bool(torch.isfinite(x).all())}


def _check_finite(name: str, value: torch.Tensor, state: TrainState, real: torch.Tensor,
                  fake: torch.Tensor, diagnostics: Dict[str, float]) -> None:
    if torch.isfinite(value).all():
        return
    dump = {"iteration": state.iteration, "loss": name,
            "real_batch": _batch_stats(real), "fake_batch": _batch_stats(fake), **diagnostics}
    raise NumericalError(f"non-finite {name} at iteration {state.iteration}: {dump}", dump)


def train_step(state: TrainState, images: np.ndarray, policy: Optional[AugmentationPolicy],
               recipe=None) -> LossBundle:
    """One generator iteration: ``critic_steps`` discriminator updates, then one generator update."""
    config = state.config
    recipe = recipe or assemble_objectives(config)
    g, d = state.generator, state.discriminator
    g.train()
    d.train()
    bundle = None
    for _ in range(config.critic_steps):
        real_np = images[state.sampler.next_indices()]
        if config.augmentation and policy is not None:
            real_np = augment(real_np, policy, state.np_rng)
        real = torch.from_numpy(np.ascontiguousarray(real_np, dtype=np.float32)).permute(0, 3, 1, 2)
        z = sample_latent(config.batch_size, config.latent_dim, state.torch_rng)
        with torch.no_grad():
            fake = g(z)
        bundle = recipe.discriminator_step(d, real, fake, state.torch_rng)
        _check_finite("d_loss", bundle.d_loss, state, real, fake, bundle.diagnostics)
        state.opt_d.zero_grad(set_to_none=True)
        bundle.d_loss.backward()
        state.opt_d.step()
        state.d_updates += 1

    z = sample_latent(config.batch_size, config.latent_dim, state.torch_rng)
    for p in d.parameters():
        p.requires_grad_(False)
    try:
        fake = g(z)
        g_loss = recipe.generator_loss(d(fake))
    finally:
        for p in d.parameters():
            p.requires_grad_(True)
    _check_finite("g_loss", g_loss, state, real, fake, bundle.diagnostics)
    state.opt_g.zero_grad(set_to_none=True)
    g_loss.backward()
    state.opt_g.step()
    state.g_updates += 1
    state.iteration += 1
    bundle.g_loss = g_loss.detach()
    bundle.diagnostics["g_loss"] = float(g_loss.detach())
    return bundle


def checkpoint_name(iteration: int) -> str:
    return f"ckpt_{iteration:07d}.pt"


def train(config: GanConfig, dataset, callbacks: Sequence[Callable] = (),
          checkpoint_interval: int = 5000, out_dir: Optional[str] = None,
          policy: Optional[AugmentationPolicy] = None, resume=None,
          max_iterations: Optional[int] = None, log_interval: int = 1,
          keep_in_memory: Optional[bool] = None) -> TrainState:
    """Train until ``config.max_iterations`` generator iterations.

    ``dataset`` is an (N, H, W, 3) array in [-1, 1] or an object with an
    ``images`` attribute.  Callbacks receive ``(state, bundle)`` after every
    generator iteration; objects with an ``on_checkpoint(state, checkpoint)``
    method are also told about each checkpoint.  With ``out_dir`` set,
    checkpoints, 8x8 sample grids and ``train.log`` are written there;
    otherwise checkpoints are kept in memory.  ``max_iterations`` stops this
    call early (for resumable chunks) without changing the configured total.
    """
    images = getattr(dataset, "images", dataset)
    images = np.asarray(images, dtype=np.float32)
    check_images(images, config.input_size)
    policy = policy or AugmentationPolicy()
    state = init_state(config, len(images), resume)
    recipe = assemble_objectives(config)
    if keep_in_memory is None:
        keep_in_memory = out_dir is None
    stop = config.max_iterations if max_iterations is None else min(max_iterations, config.max_iterations)

    log_fh = None
    grid_z = sample_latent(64, config.latent_dim, torch.Generator().manual_seed(config.seed + 2))
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        log_fh = open(os.path.join(out_dir, "train.log"), "a", encoding="utf-8")
    try:
        while state.iteration < stop:
            bundle = train_step(state, images, policy, recipe)
            if state.iteration % log_interval == 0:
                for name in ("d_loss", "g_loss", "penalty", "real_logit_mean",
                             "fake_logit_mean", "grad_norm_mean"):
                    if name in bundle.diagnostics:
                        record = (state.iteration, name, bundle.diagnostics[name])
                        state.history.append(record)
                        if log_fh is not None:
                            log_fh.write(f"{record[0]}\t{record[1]}\t{record[2]!r}\n")
            for cb in callbacks:
                if callable(cb):
                    cb(state, bundle)
            if state.iteration % checkpoint_interval == 0 or state.iteration == config.max_iterations:
                ckpt = _emit_checkpoint(state, out_dir, keep_in_memory, grid_z)
                for cb in callbacks:
                    hook = getattr(cb, "on_checkpoint", None)
                    if hook is not None:
                        hook(state, ckpt)
    finally:
        if log_fh is not None:
            log_fh.close()
    return state


def _emit_checkpoint(state: TrainState, out_dir: Optional[str], keep_in_memory: bool,
                     grid_z: torch.Tensor) -> Checkpoint:
    payload = state.snapshot()
    ckpt = Checkpoint(state.iteration, payload=payload if keep_in_memory else None)
    if out_dir is not None:
        path = os.path.join(out_dir, checkpoint_name(state.iteration))
        write_archive(path, payload)
        ckpt.path = path
        from .viz import sample_grid, save_png
        save_png(sample_grid(state.generator, grid_z),
                 os.path.join(out_dir, f"samples_{state.iteration:07d}.png"))
    state.checkpoints.append(ckpt)
    logger.info("checkpoint at iteration %d", state.iteration)
    return ckpt


def select_peak_checkpoint(checkpoints: Iterable, eval_fn: Callable[[Any], float]):
    """Checkpoint with the highest ``eval_fn`` score; the earliest wins ties."""
    items = sorted(checkpoints, key=lambda c: getattr(c, "iteration", 0))
    if not items:
        raise ValueError("no checkpoints to select from")
    best, best_score = None, -math.inf
    for ckpt in items:
        score = float(eval_fn(ckpt))
        if score > best_score:
            best, best_score = ckpt, score
    return best if best is not None else items[0]
