"""Layer helpers shared by the generator and the critics."""
from typing import Tuple

import torch
import torch.nn as nn
from torch.nn.utils.parametrizations import weight_norm

from ..core.exceptions import ConfigurationError

ACTIVATIONS = {
    "elu": nn.ELU,
    "gelu": nn.GELU,
    "relu": nn.ReLU,
    "leaky_relu": nn.LeakyReLU,
}


def make_activation(name: str) -> nn.Module:
    if name not in ACTIVATIONS:
        raise ConfigurationError(f"Unknown activation '{name}'", {"available": sorted(ACTIVATIONS)})
    return ACTIVATIONS[name]()


def same_conv1d(in_channels: int, out_channels: int, kernel_size: int, **kwargs) -> nn.Conv1d:
    """Length-preserving 1D convolution for odd kernels."""
    return nn.Conv1d(in_channels, out_channels, kernel_size, padding=kernel_size // 2, **kwargs)


def downsample_padding(stride: int) -> Tuple[int, int]:
    """Padding that makes a ``2 * stride`` kernel emit ``floor(L / stride)`` frames."""
    return (stride + 1) // 2, stride // 2


def wn_conv2d(*args, **kwargs) -> nn.Module:
    return weight_norm(nn.Conv2d(*args, **kwargs))


def init_weights(module: nn.Module, std: float = 0.02) -> None:
    """Truncated-normal init for plain conv and linear layers."""
    if isinstance(module, (nn.Conv1d, nn.ConvTranspose1d, nn.Linear)):
        nn.init.trunc_normal_(module.weight, std=std)
        if module.bias is not None:
            nn.init.zeros_(module.bias)


def count_parameters(module: nn.Module) -> int:
    return sum(p.numel() for p in module.parameters())


def seeded(seed: int, *parts: int) -> torch.Generator:
    """Generator whose state depends only on ``seed`` and ``parts``."""
    mixed = seed
    for part in parts:
        mixed = (mixed * 1_000_003 + part) % (2 ** 63 - 1)
    generator = torch.Generator()
    generator.manual_seed(mixed)
    return generator
