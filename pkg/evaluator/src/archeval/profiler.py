"""Parameter and FLOP counting (single multiply-accumulate = 1 FLOP).

Convolutions and linear layers are counted through forward hooks; attention
modules report their matmul MACs explicitly via :func:`add_macs` from inside
their forward passes.  Elementwise work (activations, normalization, pooling)
is not counted, matching common profiler conventions.
"""

from __future__ import annotations

import threading
from contextlib import contextmanager

import torch
import torch.nn as nn

_state = threading.local()


def add_macs(macs: int) -> None:
    tally = getattr(_state, "tally", None)
    if tally is not None:
        tally[0] += int(macs)


def _conv_hook(module: nn.Conv2d, inputs, output):
    kh, kw = module.kernel_size
    per_position = (module.in_channels // module.groups) * kh * kw
    add_macs(output.numel() * per_position)


def _linear_hook(module: nn.Linear, inputs, output):
    add_macs(output.numel() * module.in_features)


@contextmanager
def profile(model: nn.Module):
    """Context manager: tallies MACs of one forward pass into the yielded list."""
    tally = [0]
    _state.tally = tally
    handles = []
    for sub in model.modules():
        if isinstance(sub, nn.Conv2d):
            handles.append(sub.register_forward_hook(_conv_hook))
        elif isinstance(sub, nn.Linear):
            handles.append(sub.register_forward_hook(_linear_hook))
    try:
        yield tally
    finally:
        for handle in handles:
            handle.remove()
        _state.tally = None


def count_params(model: nn.Module) -> int:
    return sum(p.numel() for p in model.parameters())


def measure(model: nn.Module, input_shape) -> tuple[int, int]:
    """(params, flops) for one forward on a zero batch of the given shape."""
    model.eval()
    x = torch.zeros(1, *input_shape)
    with torch.no_grad(), profile(model) as tally:
        model(x)
    return count_params(model), tally[0]
