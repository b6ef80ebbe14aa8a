"""Decoder: conv input layer, self-attention, ConvNeXt stack and an iSTFT head.

Tensors inside the transformer-style blocks are channels-last ``(B, T, C)``.
"""
from dataclasses import dataclass
from typing import Tuple, Union

import torch
import torch.nn as nn
from einops import rearrange

from ..core.config import DecoderConfig, EncoderConfig
from ..core.exceptions import EmptyInputError, ShapeError
from .base import downsample_padding, init_weights, make_activation, same_conv1d
from .dsp import AudioBuffer, ComplexSpectrogram, istft
from .encoder import ResidualUnit, channel_plan
from .vq import QuantizationResult


@dataclass
class HeadOutput:
    magnitude: torch.Tensor
    phase: torch.Tensor

    def complex(self) -> torch.Tensor:
        return self.magnitude * (torch.cos(self.phase) + 1j * torch.sin(self.phase))


def split_head(h: torch.Tensor, cfg: DecoderConfig) -> HeadOutput:
    """Split ``(..., F, n_fft + 2)`` into clipped magnitude and phase halves.

    Raises:
        ShapeError: If the channel count is not n_fft + 2
    """
    if h.shape[-1] != cfg.head_channels:
        raise ShapeError(
            "head channel count must be n_fft + 2",
            {"got": h.shape[-1], "expected": cfg.head_channels}
        )
    log_mag, phase = h.chunk(2, dim=-1)
    magnitude = torch.exp(log_mag).clamp(max=cfg.magnitude_ceiling)
    return HeadOutput(magnitude=magnitude, phase=phase)


def istft_head(h: torch.Tensor, cfg: DecoderConfig) -> torch.Tensor:
    """Synthesize ``F * hop`` samples from head activations."""
    spec = split_head(h, cfg).complex()
    return istft(ComplexSpectrogram(frames=spec, config=cfg.spectral))


class AttentionBlock(nn.Module):
    """Pre-norm multi-head self-attention with a residual connection."""

    def __init__(self, dim: int, heads: int):
        super().__init__()
        self.heads = heads
        self.scale = (dim // heads) ** -0.5
        self.norm = nn.LayerNorm(dim)
        self.qkv = nn.Linear(dim, 3 * dim)
        self.proj = nn.Linear(dim, dim)

    def attention_weights(self, x: torch.Tensor) -> torch.Tensor:
        """Row-stochastic ``(B, heads, T, T)`` weights for input ``x``."""
        q, k, _ = self._qkv(x)
        return self._softmax(q, k)

    def _qkv(self, x: torch.Tensor) -> Tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
        qkv = rearrange(self.qkv(self.norm(x)), "B T (three H d) -> three B H T d", three=3, H=self.heads)
        return qkv[0], qkv[1], qkv[2]

    def _softmax(self, q: torch.Tensor, k: torch.Tensor) -> torch.Tensor:
        return torch.softmax(q @ k.transpose(-1, -2) * self.scale, dim=-1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        q, k, v = self._qkv(x)
        out = self._softmax(q, k) @ v
        return x + self.proj(rearrange(out, "B H T d -> B T (H d)"))


class ConvNeXtBlock(nn.Module):
    def __init__(self, dim: int, kernel_size: int, expansion: int, layer_scale: float):
        super().__init__()
        self.dwconv = nn.Conv1d(dim, dim, kernel_size, padding=kernel_size // 2, groups=dim)
        self.norm = nn.LayerNorm(dim)
        self.pwconv1 = nn.Linear(dim, expansion * dim)
        self.act = nn.GELU()
        self.pwconv2 = nn.Linear(expansion * dim, dim)
        self.gamma = nn.Parameter(torch.full((dim,), layer_scale))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        residual = x
        x = rearrange(self.dwconv(rearrange(x, "B T C -> B C T")), "B C T -> B T C")
        x = self.pwconv2(self.act(self.pwconv1(self.norm(x))))
        return residual + self.gamma * x


class Decoder(nn.Module):
    def __init__(self, cfg: DecoderConfig):
        super().__init__()
        self.cfg = cfg
        self.conv_in = same_conv1d(cfg.input_dim, cfg.hidden_dim, 7)
        self.norm_in = nn.LayerNorm(cfg.hidden_dim)
        self.attention: nn.Module = (
            AttentionBlock(cfg.hidden_dim, cfg.attn_heads) if cfg.use_attention else nn.Identity()
        )
        layer_scale = 1.0 / max(cfg.convnext_depth, 1)
        self.blocks = nn.ModuleList(
            ConvNeXtBlock(cfg.hidden_dim, cfg.convnext_kernel, cfg.expansion, layer_scale)
            for _ in range(cfg.convnext_depth)
        )
        self.norm_out = nn.LayerNorm(cfg.hidden_dim)
        self.head = nn.Linear(cfg.hidden_dim, cfg.head_channels)

        self.apply(init_weights)

    @property
    def hop(self) -> int:
        return self.cfg.hop

    def head_activations(self, zq: torch.Tensor) -> torch.Tensor:
        """``(B, T, D)`` quantized latents to ``(B, T, n_fft + 2)`` head inputs."""
        if zq.shape[-2] == 0:
            raise EmptyInputError("decoder received an empty latent sequence")
        if zq.shape[-1] != self.cfg.input_dim:
            raise ShapeError("latent width does not match decoder", {"got": zq.shape[-1], "expected": self.cfg.input_dim})
        x = rearrange(self.conv_in(rearrange(zq, "B T D -> B D T")), "B C T -> B T C")
        x = self.attention(self.norm_in(x))
        for block in self.blocks:
            x = block(x)
        return self.head(self.norm_out(x))

    def forward(self, zq: torch.Tensor) -> torch.Tensor:
        return istft_head(self.head_activations(zq), self.cfg)

    def decode(self, zq: Union[QuantizationResult, torch.Tensor], sample_rate: int = 24000) -> AudioBuffer:
        """Decode ``(T, D)`` or ``(B, T, D)`` latents to ``T * hop`` samples."""
        return _decode(self, zq, sample_rate)


class MirrorDecoder(nn.Module):
    """Transposed-convolution decoder mirroring the encoder, kept for ablations."""

    def __init__(self, cfg: DecoderConfig, encoder_cfg: EncoderConfig):
        super().__init__()
        self.cfg = cfg
        widths = channel_plan(encoder_cfg)[::-1]
        self.strides = tuple(reversed(encoder_cfg.strides))
        self.conv_in = same_conv1d(cfg.input_dim, widths[0], 7)
        self.ups = nn.ModuleList()
        for width, stride in zip(widths[:-1], self.strides):
            self.ups.append(nn.ModuleDict({
                "act": make_activation(encoder_cfg.activation),
                "conv": nn.ConvTranspose1d(width, width // 2, kernel_size=2 * stride, stride=stride),
                "res": ResidualUnit(width // 2, encoder_cfg.activation),
            }))
        self.post_activation = make_activation(encoder_cfg.activation)
        self.conv_out = same_conv1d(widths[-1], 1, 7)

        self.apply(init_weights)

    @property
    def hop(self) -> int:
        return self.cfg.hop

    def forward(self, zq: torch.Tensor) -> torch.Tensor:
        if zq.shape[-2] == 0:
            raise EmptyInputError("decoder received an empty latent sequence")
        x = self.conv_in(rearrange(zq, "B T D -> B D T"))
        for stage, stride in zip(self.ups, self.strides):
            length = x.shape[-1] * stride
            x = stage["conv"](stage["act"](x))
            left = downsample_padding(stride)[0]
            x = stage["res"](x[..., left:left + length])
        x = self.conv_out(self.post_activation(x))
        return torch.tanh(rearrange(x, "B 1 L -> B L"))

    def decode(self, zq: Union[QuantizationResult, torch.Tensor], sample_rate: int = 24000) -> AudioBuffer:
        return _decode(self, zq, sample_rate)


def _decode(module: nn.Module, zq: Union[QuantizationResult, torch.Tensor], sample_rate: int) -> AudioBuffer:
    latents = zq.quantized if isinstance(zq, QuantizationResult) else zq
    unbatched = latents.dim() == 2
    audio = module(latents.unsqueeze(0) if unbatched else latents)
    return AudioBuffer(samples=audio.squeeze(0) if unbatched else audio, sample_rate=sample_rate)


def build_decoder(cfg: DecoderConfig, encoder_cfg: EncoderConfig) -> nn.Module:
    if cfg.variant == "mirror":
        return MirrorDecoder(cfg, encoder_cfg)
    return Decoder(cfg)
