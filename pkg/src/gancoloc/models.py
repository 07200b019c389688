"""Generator and GAP discriminator networks.

Layer stacks are first described as :class:`LayerSpec` lists by
:func:`build_generator` / :func:`build_discriminator` and then instantiated
by :class:`Generator` / :class:`Discriminator`.  Modules work on NCHW
tensors; :func:`discriminator_forward` accepts NHWC image batches in
``[-1, 1]`` as used everywhere else in the package.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .config import GanConfig
from .exceptions import ConfigError, InputError

INIT_STD = 0.02
NORM_EPS = 1e-5
# torch counts momentum the other way round: 0.1 here == 0.9 decay
BN_MOMENTUM = 0.1


@dataclass(frozen=True)
class LayerSpec:
    kind: str  # conv | transposed_conv | linear | global_average_pool
    kernel: int
    stride: int
    out_channels: int
    normalization: str  # batch | layer | spectral | none
    activation: str  # relu | leaky_relu | tanh | none
    output_shape: Tuple[int, ...]  # (H, W, C) or (C,)
    spectral: bool = False

    def __str__(self):
        shape = "x".join(str(s) for s in self.output_shape)
        return f"{self.kind}(k={self.kernel}, s={self.stride}, c={self.out_channels}, " \
               f"norm={self.normalization}, act={self.activation}) -> {shape}"


def build_generator(config: GanConfig) -> List[LayerSpec]:
    """Linear projection to 4x4, then four transposed convolutions.

    For 32x32 outputs the last transposed convolution keeps stride 1.
    The generator is never spectrally normalized.
    """
    if config.input_size not in (32, 64):
        raise ConfigError(f"unsupported input_size {config.input_size}")
    b = config.base_channels
    widths = [8 * b, 4 * b, 2 * b]
    last_stride = 2 if config.input_size == 64 else 1
    specs = [LayerSpec("linear", 0, 0, 2 * b, "none", "none", (4, 4, 2 * b))]
    size = 4
    for w in widths:
        size *= 2
        specs.append(LayerSpec("transposed_conv", 4, 2, w, "batch", "relu", (size, size, w)))
    size *= last_stride
    specs.append(LayerSpec("transposed_conv", 4, last_stride, 3, "none", "tanh", (size, size, 3)))
    assert size == config.input_size
    return specs


def build_discriminator(config: GanConfig) -> List[LayerSpec]:
    """Four convolutions, global average pooling and a single-logit linear layer."""
    b = config.base_channels
    sn = bool(config.spectral_norm)
    norm = config.discriminator_norm
    size = config.input_size
    specs = []
    for i, w in enumerate([b, 2 * b, 4 * b, 8 * b]):
        stride = 1 if (i == 0 and config.input_size == 32) else 2
        size //= stride
        specs.append(LayerSpec("conv", 4, stride, w, norm, "leaky_relu", (size, size, w), spectral=sn))
    specs.append(LayerSpec("global_average_pool", 0, 0, 8 * b, "none", "none", (1, 1, 8 * b)))
    specs.append(LayerSpec("linear", 0, 0, 1, "none", "none", (1,), spectral=sn))
    assert size == 4
    return specs


def spectral_normalize(weight, state, n_iter: int = 1, eps: float = 1e-12):
    """Divide ``weight`` by a power-iteration estimate of its top singular value.

    ``weight`` is flattened to (out, -1); ``state`` is the left singular
    vector estimate of length ``out``.  Returns ``(normalized, new_state)``.
    The normalized weight stays differentiable with respect to ``weight``;
    the power iteration itself is not.  Numpy inputs yield numpy outputs.
    """
    as_numpy = isinstance(weight, np.ndarray)
    w = torch.as_tensor(weight)
    u = torch.as_tensor(state, dtype=w.dtype)
    mat = w.reshape(w.shape[0], -1)
    if u.shape != (mat.shape[0],):
        raise InputError(f"state must have length {mat.shape[0]}, got shape {tuple(u.shape)}")
    with torch.no_grad():
        m = mat.detach()
        if not torch.any(m != 0):
            warnings.warn("spectral norm of an all-zero weight is undefined; weight left unchanged",
                          RuntimeWarning, stacklevel=2)
            return (weight, state)
        for _ in range(max(n_iter, 1)):
            v = F.normalize(m.t() @ u, dim=0, eps=eps)
            u = F.normalize(m @ v, dim=0, eps=eps)
    sigma = torch.dot(u, mat @ v)
    out = w / sigma
    if as_numpy:
        return out.detach().numpy(), u.numpy()
    return out, u


class _SpectralMixin:
    """Adds an optional spectrally normalized view of ``self.weight``.

    The power iteration advances one step per forward pass in training mode
    and is frozen in eval mode.
    """

    n_power_iterations = 1

    def _init_spectral(self, spectral: bool):
        self.spectral = spectral
        if spectral:
            u = torch.randn(self.weight.shape[0])
            self.register_buffer("sn_u", u / u.norm())

    def effective_weight(self) -> torch.Tensor:
        if not self.spectral:
            return self.weight
        if self.training:
            w, u = spectral_normalize(self.weight, self.sn_u, self.n_power_iterations)
            with torch.no_grad():
                self.sn_u.copy_(u)
            return w
        mat = self.weight.reshape(self.weight.shape[0], -1)
        with torch.no_grad():
            v = F.normalize(mat.detach().t() @ self.sn_u, dim=0, eps=1e-12)
        return self.weight / torch.dot(self.sn_u, mat @ v)


class SNConv2d(_SpectralMixin, nn.Conv2d):
    """Conv2d with optional spectral normalization.

    ``pad`` is an explicit (left, right, top, bottom) zero padding, used
    for stride-1 even kernels where symmetric padding cannot keep the size.
    """

    def __init__(self, *args, spectral: bool = False, pad=None, **kwargs):
        super().__init__(*args, **kwargs)
        self.pad = pad
        self._init_spectral(spectral)

    def forward(self, x):
        if self.pad is not None:
            x = F.pad(x, self.pad)
        return self._conv_forward(x, self.effective_weight(), self.bias)


class SNLinear(_SpectralMixin, nn.Linear):
    def __init__(self, *args, spectral: bool = False, **kwargs):
        super().__init__(*args, **kwargs)
        self._init_spectral(spectral)

    def forward(self, x):
        return F.linear(x, self.effective_weight(), self.bias)


def _norm_layer(kind: str, channels: int) -> nn.Module:
    if kind == "batch":
        return nn.BatchNorm2d(channels, eps=NORM_EPS, momentum=BN_MOMENTUM)
    if kind == "layer":
        # one group == normalization over channels and space
        return nn.GroupNorm(1, channels, eps=NORM_EPS)
    return nn.Identity()


def init_weights(module: nn.Module) -> None:
    for m in module.modules():
        if isinstance(m, (nn.Conv2d, nn.ConvTranspose2d, nn.Linear)):
            nn.init.normal_(m.weight, 0.0, INIT_STD)
            if m.bias is not None:
                nn.init.zeros_(m.bias)


class Generator(nn.Module):
    def __init__(self, config: GanConfig):
        super().__init__()
        self.config = config
        self.specs = build_generator(config)
        lin, *deconvs = self.specs
        self.base_shape = (lin.out_channels, 4, 4)
        self.linear = nn.Linear(config.latent_dim, 16 * lin.out_channels)
        in_ch = lin.out_channels
        for i, spec in enumerate(deconvs, 1):
            # stride-1 deconv yields size+1 with padding 1; trimmed in forward
            setattr(self, f"deconv{i}", nn.ConvTranspose2d(in_ch, spec.out_channels, 4, spec.stride, 1))
            if spec.normalization == "batch":
                setattr(self, f"bn{i}", _norm_layer("batch", spec.out_channels))
            in_ch = spec.out_channels
        init_weights(self)

    def forward(self, z: torch.Tensor, trace: Optional[list] = None) -> torch.Tensor:
        h = self.linear(z).view(-1, *self.base_shape)
        if trace is not None:
            trace.append(tuple(h.shape[1:]))
        for i, spec in enumerate(self.specs[1:], 1):
            h = getattr(self, f"deconv{i}")(h)
            if spec.stride == 1:
                h = h[:, :, :-1, :-1]
            if spec.normalization == "batch":
                h = getattr(self, f"bn{i}")(h)
            h = torch.relu(h) if spec.activation == "relu" else torch.tanh(h)
            if trace is not None:
                trace.append(tuple(h.shape[1:]))
        return h


@dataclass
class DiscriminatorReadout:
    """Discriminator output plus the pieces needed to rebuild it.

    ``feature_maps`` is NHWC (count x h x w x K), taken after the last
    convolution block; ``gap_weights``/``gap_bias`` are the effective
    (post spectral normalization) parameters of the final linear layer.
    """

    logit: torch.Tensor
    feature_maps: torch.Tensor
    gap_weights: torch.Tensor
    gap_bias: torch.Tensor

    def reconstruct_logit(self) -> torch.Tensor:
        pooled = self.feature_maps.mean(dim=(1, 2))
        return pooled @ self.gap_weights + self.gap_bias

    def numpy(self) -> "DiscriminatorReadout":
        def arr(t):
            return t.detach().cpu().numpy() if isinstance(t, torch.Tensor) else np.asarray(t)
        return DiscriminatorReadout(arr(self.logit), arr(self.feature_maps),
                                    arr(self.gap_weights), arr(self.gap_bias))


class Discriminator(nn.Module):
    def __init__(self, config: GanConfig):
        super().__init__()
        self.config = config
        self.specs = build_discriminator(config)
        convs = self.specs[:4]
        in_ch = 3
        for i, spec in enumerate(convs, 1):
            # stride 1 keeps the size with 1 pixel before and 2 after
            pad = None if spec.stride == 2 else (1, 2, 1, 2)
            setattr(self, f"conv{i}", SNConv2d(in_ch, spec.out_channels, 4, spec.stride,
                                               1 if pad is None else 0, spectral=spec.spectral, pad=pad))
            setattr(self, f"norm{i}", _norm_layer(spec.normalization, spec.out_channels))
            in_ch = spec.out_channels
        self.fc = SNLinear(in_ch, 1, spectral=self.specs[-1].spectral)
        self.leaky_slope = config.leaky_slope
        init_weights(self)

    def features(self, x: torch.Tensor, trace: Optional[list] = None) -> torch.Tensor:
        h = x
        for i in range(1, 5):
            h = getattr(self, f"conv{i}")(h)
            h = getattr(self, f"norm{i}")(h)
            h = F.leaky_relu(h, self.leaky_slope)
            if trace is not None:
                trace.append(tuple(h.shape[1:]))
        return h

    def forward(self, x: torch.Tensor, trace: Optional[list] = None) -> torch.Tensor:
        h = self.features(x, trace)
        pooled = h.mean(dim=(2, 3))
        if trace is not None:
            trace.append((pooled.shape[1], 1, 1))
        out = self.fc(pooled).squeeze(1)
        if trace is not None:
            trace.append((1,))
        return out

    def readout(self, x: torch.Tensor) -> DiscriminatorReadout:
        h = self.features(x)
        w = self.fc.effective_weight()[0]
        logit = h.mean(dim=(2, 3)) @ w + self.fc.bias[0]
        return DiscriminatorReadout(logit, h.permute(0, 2, 3, 1), w, self.fc.bias[0])


def to_nchw(images, dtype=torch.float32) -> torch.Tensor:
    t = torch.as_tensor(np.asarray(images) if not isinstance(images, torch.Tensor) else images)
    return t.to(dtype).permute(0, 3, 1, 2).contiguous()


def to_nhwc(tensor: torch.Tensor) -> np.ndarray:
    return tensor.detach().permute(0, 2, 3, 1).cpu().numpy()


def check_images(images, size: Optional[int] = None, atol: float = 1e-5) -> None:
    shape = tuple(images.shape)
    if len(shape) != 4 or shape[-1] != 3:
        raise InputError(f"expected an (N, H, W, 3) image batch, got shape {shape}")
    if size is not None and shape[1:3] != (size, size):
        raise InputError(f"expected {size}x{size} images, got {shape[1]}x{shape[2]}")
    arr = images.detach() if isinstance(images, torch.Tensor) else np.asarray(images)
    if arr.size and (float(arr.min()) < -1 - atol or float(arr.max()) > 1 + atol):
        raise InputError("image values must lie in [-1, 1]")


def discriminator_forward(images, model: Discriminator) -> DiscriminatorReadout:
    """Run the discriminator on an NHWC batch and keep its CAM internals."""
    check_images(images, model.config.input_size)
    dtype = next(model.parameters()).dtype
    return model.readout(to_nchw(images, dtype))


def sample_latent(n: int, latent_dim: int, generator: Optional[torch.Generator] = None,
                  dtype=torch.float32) -> torch.Tensor:
    """Latent codes drawn uniformly from [-1, 1)."""
    return torch.rand(n, latent_dim, generator=generator, dtype=dtype) * 2 - 1
