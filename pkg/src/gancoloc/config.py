"""Configuration objects and the ``key=value`` text format.

Three layers of configuration exist:

* :class:`GanConfig` fixes the adversarial model and its optimizer.
* :class:`AugmentationPolicy` fixes the real-image augmentation.
* :class:`ExperimentConfig` is the flat, file-backed union of both plus the
  dataset, post-processing and output settings used by the CLI.

All three serialize to UTF-8 text with one ``key=value`` pair per line;
``#`` starts a comment.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields
from typing import Any, Dict, Optional, Union, get_args, get_origin, get_type_hints

from .exceptions import ConfigError

VARIANTS = ("DCGAN", "SN-DCGAN", "DRAGAN", "WGAN-GP", "SN-WGAN-GP")
INPUT_SIZES = (32, 64)

_WGAN = {"WGAN-GP", "SN-WGAN-GP"}
_SPECTRAL = {"SN-DCGAN", "SN-WGAN-GP"}
_LAYER_NORM = {"WGAN-GP", "SN-WGAN-GP"}
_BATCH_NORM = {"DCGAN", "DRAGAN"}


def parse_key_values(text: str) -> Dict[str, str]:
    """Parse ``key=value`` lines. Blank lines and ``#`` comments are skipped."""
    out: Dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key=value, got {raw!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if not key:
            raise ConfigError(f"line {lineno}: empty key")
        if key in out:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        out[key] = value
    return out


def _format_value(value: Any) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _coerce(name: str, text: str, hint: Any) -> Any:
    optional = False
    if get_origin(hint) is Union:
        args = [a for a in get_args(hint) if a is not type(None)]
        optional = len(args) < len(get_args(hint))
        hint = args[0]
    if text == "" or text.lower() == "none":
        if optional:
            return None
        if hint is str:
            return ""
        raise ConfigError(f"{name}: value required")
    try:
        if hint is bool:
            lowered = text.lower()
            if lowered in ("true", "1", "yes", "on"):
                return True
            if lowered in ("false", "0", "no", "off"):
                return False
            raise ValueError(text)
        if hint is int:
            return int(text)
        if hint is float:
            return float(text)
        return str(text)
    except ValueError:
        raise ConfigError(f"{name}: cannot parse {text!r} as {hint.__name__}") from None


class _KeyValueMixin:
    """Round-trip a flat dataclass through ``key=value`` text."""

    def to_dict(self) -> Dict[str, Any]:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    def to_text(self) -> str:
        return "".join(f"{k}={_format_value(v)}\n" for k, v in self.to_dict().items())

    @classmethod
    def from_mapping(cls, values: Dict[str, str]):
        hints = get_type_hints(cls)
        names = {f.name for f in fields(cls)}
        unknown = sorted(set(values) - names)
        if unknown:
            raise ConfigError(f"unknown configuration keys: {', '.join(unknown)}")
        kwargs = {k: _coerce(k, v, hints[k]) for k, v in values.items()}
        return cls(**kwargs)

    @classmethod
    def from_text(cls, text: str):
        return cls.from_mapping(parse_key_values(text))


@dataclass(frozen=True)
class GanConfig(_KeyValueMixin):
    """Variant selector and every hyperparameter of one GAN run.

    ``critic_steps`` and ``spectral_norm`` default to ``None`` and are
    resolved from ``variant``; an explicit value that contradicts the variant
    is rejected.  ``base_channels`` scales every hidden width (64 reproduces
    the standard architecture; smaller values exist for CPU-sized runs).
    """

    variant: str = "SN-DCGAN"
    input_size: int = 64
    latent_dim: int = 128
    leaky_slope: float = 0.2
    critic_steps: Optional[int] = None
    penalty_weight: float = 10.0
    learning_rate: float = 2e-4
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    batch_size: int = 128
    max_iterations: int = 250_000
    augmentation: bool = False
    seed: int = 0
    spectral_norm: Optional[bool] = None
    base_channels: int = 64
    dragan_noise_scale: float = 0.5

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown variant {self.variant!r}; expected one of {VARIANTS}")
        if self.input_size not in INPUT_SIZES:
            raise ConfigError(f"unsupported input_size {self.input_size}; expected 32 or 64")
        expected_steps = 5 if self.variant in _WGAN else 1
        if self.critic_steps is None:
            object.__setattr__(self, "critic_steps", expected_steps)
        elif self.critic_steps != expected_steps:
            raise ConfigError(
                f"{self.variant} requires critic_steps={expected_steps}, got {self.critic_steps}"
            )
        expected_sn = self.variant in _SPECTRAL
        if self.spectral_norm is None:
            object.__setattr__(self, "spectral_norm", expected_sn)
        elif self.spectral_norm != expected_sn:
            if self.variant == "DRAGAN":
                raise ConfigError("spectral normalization cannot be applied to DRAGAN")
            raise ConfigError(
                f"{self.variant} implies spectral_norm={str(expected_sn).lower()}"
            )
        for name in ("latent_dim", "batch_size", "max_iterations", "base_channels"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        if self.penalty_weight < 0:
            raise ConfigError("penalty_weight must be nonnegative")
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be positive")
        for name in ("adam_beta1", "adam_beta2"):
            if not 0.0 < getattr(self, name) < 1.0:
                raise ConfigError(f"{name} must lie in (0, 1)")
        if self.dragan_noise_scale < 0:
            raise ConfigError("dragan_noise_scale must be nonnegative")

    @property
    def is_wasserstein(self) -> bool:
        return self.variant in _WGAN

    @property
    def discriminator_norm(self) -> str:
        """Feature normalization used by the discriminator's convolutions."""
        if self.variant in _BATCH_NORM:
            return "batch"
        if self.variant in _LAYER_NORM:
            return "layer"
        return "none"

    def replace(self, **changes) -> "GanConfig":
        values = self.to_dict()
        # derived fields must be re-derived when the variant changes
        if "variant" in changes:
            values.pop("critic_steps")
            values.pop("spectral_norm")
        values.update(changes)
        return GanConfig(**values)


@dataclass(frozen=True)
class AugmentationPolicy(_KeyValueMixin):
    """Random translation followed by photometric jitter.

    Jitter amplitudes are relative; ``lighting`` is the standard deviation of
    the PCA lighting coefficients.
    """

    translation: float = 0.05
    brightness: float = 0.2
    contrast: float = 0.2
    saturation: float = 0.2
    lighting: float = 0.1

    def __post_init__(self):
        for f in fields(self):
            if getattr(self, f.name) < 0:
                raise ConfigError(f"{f.name} must be nonnegative")
        if self.translation >= 0.5:
            raise ConfigError("translation must be below 0.5")

    @classmethod
    def identity(cls) -> "AugmentationPolicy":
        return cls(0.0, 0.0, 0.0, 0.0, 0.0)

    def max_shift(self, size: int) -> int:
        return int(self.translation * size)


_GAN_FIELDS = tuple(f.name for f in fields(GanConfig))
_AUG_FIELDS = tuple(f.name for f in fields(AugmentationPolicy))


@dataclass(frozen=True)
class ExperimentConfig(_KeyValueMixin):
    """Everything one CLI run needs, as a flat key space."""

    # model / optimizer
    variant: str = "SN-DCGAN"
    input_size: int = 64
    latent_dim: int = 128
    leaky_slope: float = 0.2
    critic_steps: Optional[int] = None
    penalty_weight: float = 10.0
    learning_rate: float = 2e-4
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    batch_size: int = 128
    max_iterations: int = 250_000
    augmentation: bool = False
    seed: int = 0
    spectral_norm: Optional[bool] = None
    base_channels: int = 64
    dragan_noise_scale: float = 0.5
    # augmentation
    translation: float = 0.05
    brightness: float = 0.2
    contrast: float = 0.2
    saturation: float = 0.2
    lighting: float = 0.1
    # data
    dataset: str = "synthetic"
    root: str = ""
    include_test: bool = False
    synthetic_train: int = 1000
    synthetic_test: int = 100
    synthetic_square: int = 12
    # training / evaluation
    checkpoint_interval: int = 5000
    ratio: float = 0.2
    select_peak: bool = True
    out: str = "runs/default"

    def __post_init__(self):
        # surface cross-field errors early
        self.gan_config()
        self.augmentation_policy()
        if not 0.0 < self.ratio <= 1.0:
            raise ConfigError("ratio must lie in (0, 1]")
        if self.checkpoint_interval <= 0:
            raise ConfigError("checkpoint_interval must be positive")

    def gan_config(self) -> GanConfig:
        return GanConfig(**{k: getattr(self, k) for k in _GAN_FIELDS})

    def augmentation_policy(self) -> AugmentationPolicy:
        return AugmentationPolicy(**{k: getattr(self, k) for k in _AUG_FIELDS})

    def replace(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes)
