"""Type-name registry mapping config ``type`` strings to module builders.

Mined databases suffix colliding class names with _2, _3, ...; resolution
falls back to the unsuffixed base name so configs like ``InvertedResidual_3``
build against the base implementation.
"""

from __future__ import annotations

import re

import torch.nn as nn

REGISTRY: dict[str, type] = {}

_SUFFIX_RE = re.compile(r"_(\d+)$")


class BuildError(ValueError):
    pass


def register(cls=None, *, name: str | None = None):
    def wrap(klass):
        REGISTRY[name or klass.__name__] = klass
        return klass
    return wrap(cls) if cls is not None else wrap


def resolve(type_name: str) -> type:
    if type_name in REGISTRY:
        return REGISTRY[type_name]
    base = _SUFFIX_RE.sub("", type_name)
    if base in REGISTRY:
        return REGISTRY[base]
    raise BuildError(f"no implementation registered for type {type_name!r}")


def build(cfg: dict) -> nn.Module:
    """Instantiate the module described by a config node."""
    if not isinstance(cfg, dict) or not isinstance(cfg.get("type"), str):
        raise BuildError(f"module config must be a dict with a 'type': {cfg!r}")
    kwargs = {k: v for k, v in cfg.items() if k != "type"}
    cls = resolve(cfg["type"])
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise BuildError(f"cannot build {cfg['type']}: {exc}") from exc


def build_act(cfg: dict | None) -> nn.Module:
    if cfg is None:
        return nn.ReLU()
    return build(cfg)


def build_norm(cfg: dict | None, num_features: int) -> nn.Module:
    if cfg is None:
        return nn.BatchNorm2d(num_features)
    kwargs = {k: v for k, v in cfg.items() if k != "type"}
    kwargs.setdefault("num_features", num_features)
    cls = resolve(cfg["type"])
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise BuildError(f"cannot build norm {cfg['type']}: {exc}") from exc


# Plain torch layers that appear directly in configs.
for _torch_cls in (nn.Conv2d, nn.BatchNorm2d, nn.GroupNorm, nn.LayerNorm, nn.Linear,
                   nn.ReLU, nn.GELU, nn.SiLU, nn.Sigmoid, nn.Tanh, nn.MaxPool2d,
                   nn.AvgPool2d, nn.AdaptiveAvgPool2d, nn.Dropout, nn.Dropout2d,
                   nn.Upsample):
    REGISTRY[_torch_cls.__name__] = _torch_cls
