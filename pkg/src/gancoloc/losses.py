"""GAN objectives and gradient penalties.

Probability-space functions (``d_loss_ns``, ``g_loss_minimax``,
``g_loss_ns``) state the objectives directly and reject probabilities
outside (0, 1).  Training uses the ``*_from_logits`` forms, which evaluate
the same quantities through ``softplus`` so that no logit in a sane range
produces an infinite loss.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Dict, Optional

import torch
import torch.nn.functional as F

from .config import GanConfig
from .exceptions import CapabilityError, ConfigError, DomainError


def _probs(p) -> torch.Tensor:
    t = torch.as_tensor(p, dtype=torch.float64) if not isinstance(p, torch.Tensor) else p
    if torch.any((t <= 0) | (t >= 1)) or not torch.all(torch.isfinite(t)):
        raise DomainError("probabilities must lie strictly inside (0, 1); "
                          "compute losses from logits instead")
    return t


def d_loss_ns(real_probs, fake_probs) -> torch.Tensor:
    """-E[log D(x)] - E[log(1 - D(G(z)))]."""
    real, fake = _probs(real_probs), _probs(fake_probs)
    return -torch.log(real).mean() - torch.log1p(-fake).mean()


def g_loss_minimax(fake_probs) -> torch.Tensor:
    """E[log(1 - D(G(z)))]; saturates when the discriminator wins."""
    return torch.log1p(-_probs(fake_probs)).mean()


def g_loss_ns(fake_probs) -> torch.Tensor:
    """-E[log D(G(z))]."""
    return -torch.log(_probs(fake_probs)).mean()


# log(sigmoid(l)) = -softplus(-l);  log(1 - sigmoid(l)) = -softplus(l)

def d_loss_ns_from_logits(real_logits: torch.Tensor, fake_logits: torch.Tensor) -> torch.Tensor:
    return F.softplus(-real_logits).mean() + F.softplus(fake_logits).mean()


def g_loss_minimax_from_logits(fake_logits: torch.Tensor) -> torch.Tensor:
    return -F.softplus(fake_logits).mean()


def g_loss_ns_from_logits(fake_logits: torch.Tensor) -> torch.Tensor:
    return F.softplus(-fake_logits).mean()


def wgan_losses(real_scores, fake_scores):
    """Critic and generator losses of the Wasserstein GAN, both minimized.

    ``d_loss = E[D(G(z))] - E[D(x)]`` and ``g_loss = -E[D(G(z))]``.
    """
    real = torch.as_tensor(real_scores)
    fake = torch.as_tensor(fake_scores)
    return fake.mean() - real.mean(), -fake.mean()


def perturb(real: torch.Tensor, scale: float = 0.5,
            generator: Optional[torch.Generator] = None) -> torch.Tensor:
    """Real samples plus Gaussian noise of std ``scale * std(real)``.

    The standard deviation is taken per image over all of its values.
    """
    std = real.detach().flatten(1).std(dim=1).view(-1, *([1] * (real.dim() - 1)))
    noise = torch.randn(real.shape, generator=generator, dtype=real.dtype)
    return real + scale * std * noise


def gradient_penalty(discriminator: Callable, real_batch: torch.Tensor,
                     anchor_batch: Optional[torch.Tensor] = None, mode: str = "interpolate",
                     generator: Optional[torch.Generator] = None,
                     noise_scale: float = 0.5, return_norms: bool = False):
    """Mean of (||grad_x D(x_hat)||_2 - 1)^2 at random interpolates.

    ``x_hat = a * real + (1 - a) * anchor`` with one ``a ~ U[0, 1)`` per
    sample.  In ``"interpolate"`` mode the anchors are generated samples;
    in ``"perturb"`` mode they are noisy copies of the real batch and are
    drawn here when ``anchor_batch`` is omitted.  The result carries a graph
    for the second backward pass.
    """
    if mode not in ("interpolate", "perturb"):
        raise ConfigError(f"unknown penalty mode {mode!r}")
    if anchor_batch is None:
        if mode == "interpolate":
            raise ConfigError("interpolate mode needs generated samples as anchors")
        anchor_batch = perturb(real_batch, noise_scale, generator)
    if anchor_batch.shape != real_batch.shape:
        raise ConfigError("real and anchor batches must have the same shape")

    n = real_batch.shape[0]
    alpha = torch.rand(n, generator=generator, dtype=real_batch.dtype)
    alpha = alpha.view(n, *([1] * (real_batch.dim() - 1)))
    x_hat = (alpha * real_batch.detach() + (1 - alpha) * anchor_batch.detach()).requires_grad_(True)

    out = discriminator(x_hat)
    if not isinstance(out, torch.Tensor):
        raise CapabilityError("discriminator must return a torch tensor")
    if out.requires_grad:
        grad, = torch.autograd.grad(out.sum(), x_hat, create_graph=True, allow_unused=True)
    else:
        grad = None
    if grad is None:
        # output does not depend on the input: gradient is identically zero
        grad = torch.zeros_like(x_hat)
    norms = grad.flatten(1).norm(2, dim=1)
    penalty = ((norms - 1) ** 2).mean()
    if return_norms:
        return penalty, norms
    return penalty


@dataclass
class LossBundle:
    d_loss: torch.Tensor
    g_loss: torch.Tensor
    penalty: torch.Tensor
    diagnostics: Dict[str, float] = field(default_factory=dict)

    def is_finite(self) -> bool:
        return all(torch.isfinite(torch.as_tensor(v)).all() for v in (self.d_loss, self.g_loss, self.penalty))


@dataclass(frozen=True)
class LossRecipe:
    """Which objectives a variant minimizes.

    ``discriminator`` is ``"ns"`` or ``"wgan"``, ``generator`` is
    ``"ns"``, ``"minimax"`` or ``"wgan"``, and ``penalty`` is ``None``,
    ``"interpolate"`` or ``"perturb"``.
    """

    discriminator: str
    generator: str
    penalty: Optional[str]
    penalty_weight: float = 0.0
    noise_scale: float = 0.5

    def discriminator_step(self, d: Callable, real: torch.Tensor, fake: torch.Tensor,
                           generator: Optional[torch.Generator] = None) -> LossBundle:
        """Discriminator loss on one real and one (detached) fake batch."""
        fake = fake.detach()
        real_logits = d(real)
        fake_logits = d(fake)
        if self.discriminator == "wgan":
            d_loss, g_loss = wgan_losses(real_logits, fake_logits)
        else:
            d_loss = d_loss_ns_from_logits(real_logits, fake_logits)
            g_loss = self.generator_loss(fake_logits)
        diagnostics = {
            "real_logit_mean": float(real_logits.detach().mean()),
            "fake_logit_mean": float(fake_logits.detach().mean()),
        }
        penalty = torch.zeros((), dtype=real.dtype)
        if self.penalty is not None:
            anchor = fake if self.penalty == "interpolate" else None
            penalty, norms = gradient_penalty(d, real, anchor, self.penalty, generator,
                                              self.noise_scale, return_norms=True)
            diagnostics["grad_norm_mean"] = float(norms.detach().mean())
            d_loss = d_loss + self.penalty_weight * penalty
        diagnostics["d_loss"] = float(d_loss.detach())
        diagnostics["penalty"] = float(penalty.detach())
        return LossBundle(d_loss, g_loss.detach(), penalty, diagnostics)

    def generator_loss(self, fake_logits: torch.Tensor) -> torch.Tensor:
        if self.generator == "wgan":
            return -fake_logits.mean()
        if self.generator == "minimax":
            return g_loss_minimax_from_logits(fake_logits)
        return g_loss_ns_from_logits(fake_logits)


def assemble_objectives(config: GanConfig) -> LossRecipe:
    """Map a variant to its objectives.

    DCGAN-style variants use the non-saturating pair, DRAGAN adds the
    perturbed-sample penalty, Wasserstein variants use the critic losses
    with the interpolated penalty.
    """
    v = config.variant
    if v in ("DCGAN", "SN-DCGAN"):
        return LossRecipe("ns", "ns", None)
    if v == "DRAGAN":
        return LossRecipe("ns", "ns", "perturb", config.penalty_weight, config.dragan_noise_scale)
    if v in ("WGAN-GP", "SN-WGAN-GP"):
        return LossRecipe("wgan", "wgan", "interpolate", config.penalty_weight)
    raise ConfigError(f"unknown variant {v!r}")
