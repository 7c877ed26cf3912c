"""Combinator modules that compose sub-configs at runtime."""

from __future__ import annotations

import torch
import torch.nn as nn

from .registry import BuildError, build, register


@register
class Identity(nn.Module):
    def forward(self, x):
        return x


@register
class MyReshape(nn.Module):
    def __init__(self, shape):
        super().__init__()
        self.shape = list(shape)

    def forward(self, x):
        return x.reshape(*self.shape)


@register
class SequentialWithConfig(nn.Module):
    def __init__(self, module_cfgs):
        super().__init__()
        self.layers = nn.ModuleList(build(cfg) for cfg in module_cfgs)

    def forward(self, x):
        for layer in self.layers:
            x = layer(x)
        return x


@register
class NAS_Backbone(nn.Module):
    def __init__(self, layer_cfgs):
        super().__init__()
        self.layers = nn.ModuleList(build(cfg) for cfg in layer_cfgs)

    def forward(self, x):
        for layer in self.layers:
            x = layer(x)
        return x


@register
class ParallelWithConfig(nn.Module):
    MERGE_OPERATIONS = ("add", "mul", "concat")

    def __init__(self, module_cfg1, module_cfg2, merge_operation="add", concat_dim=1):
        super().__init__()
        if merge_operation not in self.MERGE_OPERATIONS:
            raise BuildError(f"invalid merge_operation {merge_operation!r}")
        self.branch1 = build(module_cfg1)
        self.branch2 = build(module_cfg2)
        self.merge_operation = merge_operation
        self.concat_dim = concat_dim

    def forward(self, x):
        y1 = self.branch1(x)
        y2 = self.branch2(x)
        if self.merge_operation == "add":
            return y1 + y2
        if self.merge_operation == "mul":
            return y1 * y2
        return torch.cat([y1, y2], dim=self.concat_dim)
