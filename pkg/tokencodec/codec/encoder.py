"""Convolutional encoder: raw audio to latent frames Z."""
from dataclasses import dataclass
from typing import List, Union

import torch
import torch.nn as nn
import torch.nn.functional as F
from einops import rearrange

from ..core.config import EncoderConfig
from ..core.exceptions import EmptyInputError, TooShortInputError, ValidationError
from .base import downsample_padding, init_weights, make_activation, same_conv1d
from .dsp import AudioBuffer


@dataclass
class LatentSequence:
    """Encoder output frames shaped ``(..., T, D)``."""

    frames: torch.Tensor
    frame_rate: float

    def __post_init__(self):
        if not torch.isfinite(self.frames).all():
            raise ValidationError("latent frames contain non-finite values")

    @property
    def num_frames(self) -> int:
        return self.frames.shape[-2]

    @property
    def dim(self) -> int:
        return self.frames.shape[-1]


def total_stride(cfg: EncoderConfig) -> int:
    """Samples per latent frame."""
    return cfg.total_stride


def channel_plan(cfg: EncoderConfig) -> List[int]:
    """Width entering each block, followed by the width after the last block."""
    return [cfg.channels * 2 ** i for i in range(cfg.blocks + 1)]


class ResidualUnit(nn.Module):
    def __init__(self, channels: int, activation: str):
        super().__init__()
        hidden = max(1, channels // 2)
        self.block = nn.Sequential(
            make_activation(activation),
            same_conv1d(channels, hidden, 3),
            make_activation(activation),
            same_conv1d(hidden, channels, 3),
        )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return x + self.block(x)


class DownsampleBlock(nn.Module):
    """Residual unit, then a strided conv that doubles the width."""

    def __init__(self, channels: int, stride: int, activation: str):
        super().__init__()
        self.residual = ResidualUnit(channels, activation)
        self.activation = make_activation(activation)
        self.padding = downsample_padding(stride)
        self.conv = nn.Conv1d(channels, 2 * channels, kernel_size=2 * stride, stride=stride)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        x = self.activation(self.residual(x))
        return self.conv(F.pad(x, self.padding))


class SequenceLSTM(nn.Module):
    """Unidirectional LSTM over frames, with a skip when widths agree."""

    def __init__(self, in_dim: int, hidden: int, num_layers: int):
        super().__init__()
        self.rnn = nn.LSTM(input_size=in_dim, hidden_size=hidden, num_layers=num_layers, batch_first=True)
        self.use_skip = in_dim == hidden

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        x = rearrange(x, "B C T -> B T C")
        out, _ = self.rnn(x)
        if self.use_skip:
            out = out + x
        return rearrange(out, "B T C -> B C T")


class Encoder(nn.Module):
    def __init__(self, cfg: EncoderConfig):
        super().__init__()
        self.cfg = cfg
        widths = channel_plan(cfg)

        self.pre_conv = same_conv1d(1, cfg.channels, 7)
        self.blocks = nn.ModuleList(
            DownsampleBlock(width, stride, cfg.activation)
            for width, stride in zip(widths[:-1], cfg.strides)
        )
        if cfg.lstm_layers > 0:
            self.rnn: nn.Module = SequenceLSTM(widths[-1], cfg.recurrent_width, cfg.lstm_layers)
            rnn_width = cfg.recurrent_width
        else:
            self.rnn = nn.Identity()
            rnn_width = widths[-1]
        self.post_activation = make_activation(cfg.activation)
        self.post_conv = same_conv1d(rnn_width, cfg.latent_dim, 7)

        self.apply(init_weights)

    @property
    def hop(self) -> int:
        return self.cfg.total_stride

    def forward(self, audio: torch.Tensor) -> torch.Tensor:
        """Map ``(B, L)`` samples to ``(B, L // hop, D)`` latents.

        Raises:
            EmptyInputError: If L is zero
            TooShortInputError: If L is below one hop
        """
        length = audio.shape[-1]
        if length == 0:
            raise EmptyInputError("encoder received empty audio")
        if length < self.hop:
            raise TooShortInputError(
                "audio shorter than one latent frame",
                {"length": length, "hop": self.hop}
            )
        x = self.pre_conv(rearrange(audio, "B L -> B 1 L"))
        for block in self.blocks:
            x = block(x)
        x = self.post_conv(self.post_activation(self.rnn(x)))
        return rearrange(x, "B D T -> B T D")

    def encode(self, audio: Union[AudioBuffer, torch.Tensor], sample_rate: int = 24000) -> LatentSequence:
        """Encode mono ``(L,)`` or batched ``(B, L)`` audio."""
        if isinstance(audio, AudioBuffer):
            sample_rate = audio.sample_rate
            audio = audio.samples
        unbatched = audio.dim() == 1
        frames = self(audio.unsqueeze(0) if unbatched else audio)
        return LatentSequence(
            frames=frames.squeeze(0) if unbatched else frames,
            frame_rate=sample_rate / self.hop,
        )
