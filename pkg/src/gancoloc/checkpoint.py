"""Single-file checkpoint archives.

An archive is a ``torch.save`` zip holding:

* ``config``: the :class:`GanConfig` as ``key=value`` text,
* ``params``: every tensor of both networks keyed by dotted path
  (``generator.deconv1.weight``, ``discriminator.conv1.sn_u`` ...),
* ``optimizer``: both optimizer state dicts,
* ``iteration``: generator updates completed,
* ``rng``: torch and numpy generator states plus the batch sampler position.
"""

from __future__ import annotations

import copy
import io
import os
from dataclasses import dataclass, field
from typing import Any, Dict, Optional, Tuple, Union

import torch

from .config import GanConfig
from .models import Discriminator, Generator

FORMAT_VERSION = 1


@dataclass
class Checkpoint:
    """A saved training state, either on disk (``path``) or in memory (``payload``)."""

    iteration: int
    path: Optional[str] = None
    payload: Optional[Dict[str, Any]] = field(default=None, repr=False)

    @property
    def id(self) -> str:
        if self.path:
            return os.path.basename(self.path)
        return f"iter{self.iteration:07d}"

    def load(self) -> Dict[str, Any]:
        if self.payload is not None:
            return self.payload
        return read_archive(self.path)


def pack(config: GanConfig, generator: Generator, discriminator: Discriminator,
         optimizers: Optional[Dict[str, torch.optim.Optimizer]] = None,
         iteration: int = 0, rng: Optional[Dict[str, Any]] = None,
         extra: Optional[Dict[str, Any]] = None) -> Dict[str, Any]:
    params = {}
    for prefix, module in (("generator", generator), ("discriminator", discriminator)):
        for name, tensor in module.state_dict().items():
            params[f"{prefix}.{name}"] = tensor.detach().clone()
    return {
        "format": FORMAT_VERSION,
        "config": config.to_text(),
        "params": params,
        "optimizer": {k: copy.deepcopy(o.state_dict()) for k, o in (optimizers or {}).items()},
        "iteration": int(iteration),
        "rng": copy.deepcopy(rng or {}),
        "extra": copy.deepcopy(extra or {}),
    }


def write_archive(path: Union[str, os.PathLike], payload: Dict[str, Any]) -> None:
    tmp = f"{path}.tmp"
    torch.save(payload, tmp)
    os.replace(tmp, path)


def read_archive(path: Union[str, os.PathLike]) -> Dict[str, Any]:
    return torch.load(path, map_location="cpu", weights_only=False)


def to_bytes(payload: Dict[str, Any]) -> bytes:
    buf = io.BytesIO()
    torch.save(payload, buf)
    return buf.getvalue()


def restore_models(payload: Dict[str, Any]) -> Tuple[GanConfig, Generator, Discriminator]:
    """Rebuild both networks from an archive payload."""
    config = GanConfig.from_text(payload["config"])
    g, d = Generator(config), Discriminator(config)
    for prefix, module in (("generator", g), ("discriminator", d)):
        state = {k[len(prefix) + 1:]: v for k, v in payload["params"].items()
                 if k.startswith(prefix + ".")}
        module.load_state_dict(state)
    return config, g, d


def load_checkpoint(source) -> Tuple[GanConfig, Generator, Discriminator, Dict[str, Any]]:
    """Accepts a path, a :class:`Checkpoint` or a payload dict."""
    if isinstance(source, Checkpoint):
        payload = source.load()
    elif isinstance(source, dict):
        payload = source
    else:
        payload = read_archive(source)
    config, g, d = restore_models(payload)
    return config, g, d, payload
