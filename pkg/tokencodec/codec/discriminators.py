"""Critic ensemble: multi-period, multi-resolution and multi-scale complex STFT discriminators.

Every sub-discriminator returns a logit map and a list of feature maps whose
last entry is the logit map itself.
"""
from dataclasses import dataclass, field
from typing import List, Sequence, Tuple, Union

import torch
import torch.nn as nn
import torch.nn.functional as F
from einops import rearrange

from ..core.config import DiscriminatorConfig, SpectralConfig
from ..core.exceptions import ShapeError, TooShortInputError
from .base import wn_conv2d
from .dsp import AudioBuffer, ComplexSpectrogram, stft

Features = List[torch.Tensor]


@dataclass
class CriticOutput:
    logits: List[torch.Tensor] = field(default_factory=list)
    features: List[Features] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.logits)

    def extend(self, other: "CriticOutput") -> "CriticOutput":
        self.logits.extend(other.logits)
        self.features.extend(other.features)
        return self


def period_reshape(audio: torch.Tensor, period: int) -> torch.Tensor:
    """Right-pad ``(B, L)`` to a multiple of ``period`` and fold to ``(B, 1, L' / p, p)``."""
    pad = (-audio.shape[-1]) % period
    padded = F.pad(audio, (0, pad))
    return rearrange(padded, "B (T p) -> B 1 T p", p=period)


def period_unreshape(folded: torch.Tensor, length: int) -> torch.Tensor:
    return rearrange(folded, "B 1 T p -> B (T p)")[..., :length]


def band_edges(n_bins: int, bands: Sequence[Tuple[float, float]]) -> List[Tuple[int, int]]:
    """Contiguous bin ranges for fractional band limits."""
    return [(int(lo * n_bins), int(hi * n_bins)) for lo, hi in bands]


def critic_spectrogram(audio: torch.Tensor, n_fft: int) -> ComplexSpectrogram:
    return stft(audio, SpectralConfig(n_fft=n_fft, hop=n_fft // 4, window="hann", padding="center"))


def amplitude_input(spec: ComplexSpectrogram) -> torch.Tensor:
    """``(B, 1, T, F)`` magnitudes."""
    return spec.frames.abs().unsqueeze(1)


def complex_input(spec: ComplexSpectrogram) -> torch.Tensor:
    """``(B, 2, T, F)`` real and imaginary parts."""
    return torch.stack([spec.frames.real, spec.frames.imag], dim=1)


def _require_length(audio: torch.Tensor, window: int) -> None:
    if audio.shape[-1] < window:
        raise TooShortInputError(
            "audio shorter than the critic's analysis window",
            {"length": audio.shape[-1], "window": window}
        )


class PeriodDiscriminator(nn.Module):
    def __init__(self, period: int, channels: int, slope: float):
        super().__init__()
        self.period = period
        widths = [1, channels, 2 * channels, 4 * channels, 8 * channels, 16 * channels]
        self.convs = nn.ModuleList(
            wn_conv2d(c_in, c_out, (5, 1), stride=(3, 1) if i < 4 else (1, 1), padding=(2, 0))
            for i, (c_in, c_out) in enumerate(zip(widths[:-1], widths[1:]))
        )
        self.conv_post = wn_conv2d(widths[-1], 1, (3, 1), padding=(1, 0))
        self.activation = nn.LeakyReLU(slope)

    def forward(self, audio: torch.Tensor) -> Tuple[torch.Tensor, Features]:
        x = period_reshape(audio, self.period)
        features: Features = []
        for conv in self.convs:
            x = self.activation(conv(x))
            features.append(x)
        x = self.conv_post(x)
        features.append(x)
        return x, features


class AmplitudeDiscriminator(nn.Module):
    """Single-band critic on the magnitude spectrogram of one resolution."""

    def __init__(self, n_fft: int, channels: int, slope: float):
        super().__init__()
        self.n_fft = n_fft
        self.convs = nn.ModuleList([
            wn_conv2d(1, channels, (3, 9), padding=(1, 4)),
            wn_conv2d(channels, channels, (3, 9), stride=(1, 2), padding=(1, 4)),
            wn_conv2d(channels, channels, (3, 9), stride=(1, 2), padding=(1, 4)),
            wn_conv2d(channels, channels, (3, 9), stride=(1, 2), padding=(1, 4)),
            wn_conv2d(channels, channels, (3, 3), padding=(1, 1)),
        ])
        self.conv_post = wn_conv2d(channels, 1, (3, 3), padding=(1, 1))
        self.activation = nn.LeakyReLU(slope)

    def forward(self, audio: torch.Tensor) -> Tuple[torch.Tensor, Features]:
        _require_length(audio, self.n_fft)
        x = amplitude_input(critic_spectrogram(audio, self.n_fft))
        features: Features = []
        for conv in self.convs:
            x = self.activation(conv(x))
            features.append(x)
        x = self.conv_post(x)
        features.append(x)
        return x, features


class BandSplitComplexDiscriminator(nn.Module):
    """Complex spectrogram critic that runs one conv stack per frequency band."""

    def __init__(self, n_fft: int, channels: int, slope: float, bands: Sequence[Tuple[float, float]]):
        super().__init__()
        self.n_fft = n_fft
        self.bands = band_edges(n_fft // 2 + 1, bands)

        def stack() -> nn.ModuleList:
            return nn.ModuleList([
                wn_conv2d(2, channels, (3, 9), padding=(1, 4)),
                wn_conv2d(channels, channels, (3, 9), stride=(1, 2), padding=(1, 4)),
                wn_conv2d(channels, channels, (3, 9), stride=(1, 2), padding=(1, 4)),
                wn_conv2d(channels, channels, (3, 9), stride=(1, 2), padding=(1, 4)),
                wn_conv2d(channels, channels, (3, 3), padding=(1, 1)),
            ])

        self.band_convs = nn.ModuleList(stack() for _ in self.bands)
        self.conv_post = wn_conv2d(channels, 1, (3, 3), padding=(1, 1))
        self.activation = nn.LeakyReLU(slope)

    def forward(self, audio: torch.Tensor) -> Tuple[torch.Tensor, Features]:
        _require_length(audio, self.n_fft)
        spec = complex_input(critic_spectrogram(audio, self.n_fft))
        features: Features = []
        outputs = []
        for (lo, hi), convs in zip(self.bands, self.band_convs):
            x = spec[..., lo:hi]
            for conv in convs:
                x = self.activation(conv(x))
                features.append(x)
            outputs.append(x)
        x = self.conv_post(torch.cat(outputs, dim=-1))
        features.append(x)
        return x, features


class STFTDiscriminator(nn.Module):
    """Complex STFT critic at one time scale, dilated along time."""

    def __init__(self, n_fft: int, channels: int, slope: float, dilations: Sequence[int] = (1, 2, 4)):
        super().__init__()
        self.n_fft = n_fft
        convs = [wn_conv2d(2, channels, (3, 9), padding=(1, 4))]
        for dilation in dilations:
            convs.append(wn_conv2d(
                channels, channels, (3, 9), stride=(1, 2), dilation=(dilation, 1), padding=(dilation, 4)
            ))
        convs.append(wn_conv2d(channels, channels, (3, 3), padding=(1, 1)))
        self.convs = nn.ModuleList(convs)
        self.conv_post = wn_conv2d(channels, 1, (3, 3), padding=(1, 1))
        self.activation = nn.LeakyReLU(slope)

    def forward(self, audio: torch.Tensor) -> Tuple[torch.Tensor, Features]:
        _require_length(audio, self.n_fft)
        x = complex_input(critic_spectrogram(audio, self.n_fft))
        features: Features = []
        for conv in self.convs:
            x = self.activation(conv(x))
            features.append(x)
        x = self.conv_post(x)
        features.append(x)
        return x, features


def _as_batch(audio: Union[AudioBuffer, torch.Tensor]) -> torch.Tensor:
    x = audio.samples if isinstance(audio, AudioBuffer) else audio
    return x.unsqueeze(0) if x.dim() == 1 else x


class DiscriminatorEnsemble(nn.Module):
    """All critics in a fixed order: periods, then resolutions, then STFT scales."""

    def __init__(self, cfg: DiscriminatorConfig):
        super().__init__()
        self.cfg = cfg
        slope = cfg.lrelu_slope
        self.mpd = nn.ModuleList(PeriodDiscriminator(p, cfg.mpd_channels, slope) for p in cfg.periods)
        mrd: List[nn.Module] = []
        for n_fft in cfg.resolutions:
            mrd.append(AmplitudeDiscriminator(n_fft, cfg.mrd_channels, slope))
            mrd.append(BandSplitComplexDiscriminator(n_fft, cfg.mrd_channels, slope, cfg.bands))
        self.mrd = nn.ModuleList(mrd)
        self.msstftd = nn.ModuleList(STFTDiscriminator(n, cfg.msstftd_channels, slope) for n in cfg.stft_scales)

    @property
    def count(self) -> int:
        return len(self.mpd) + len(self.mrd) + len(self.msstftd)

    @staticmethod
    def _run(critics: nn.ModuleList, audio: torch.Tensor) -> CriticOutput:
        out = CriticOutput()
        for critic in critics:
            logits, features = critic(audio)
            out.logits.append(logits)
            out.features.append(features)
        return out

    def mpd_forward(self, audio: Union[AudioBuffer, torch.Tensor]) -> CriticOutput:
        return self._run(self.mpd, _as_batch(audio))

    def mrd_forward(self, audio: Union[AudioBuffer, torch.Tensor]) -> CriticOutput:
        return self._run(self.mrd, _as_batch(audio))

    def msstftd_forward(self, audio: Union[AudioBuffer, torch.Tensor]) -> CriticOutput:
        return self._run(self.msstftd, _as_batch(audio))

    def critique(self, audio: Union[AudioBuffer, torch.Tensor]) -> CriticOutput:
        """Outputs of all K critics on one input.

        Raises:
            TooShortInputError: If audio is shorter than the longest STFT window
        """
        x = _as_batch(audio)
        _require_length(x, self.cfg.longest_window)
        return self.mpd_forward(x).extend(self.mrd_forward(x)).extend(self.msstftd_forward(x))

    def forward(
        self,
        real: Union[AudioBuffer, torch.Tensor],
        fake: Union[AudioBuffer, torch.Tensor],
    ) -> Tuple[CriticOutput, CriticOutput]:
        """Index-aligned critic outputs for real and generated audio.

        Raises:
            ShapeError: If real and fake differ in shape
        """
        real_x, fake_x = _as_batch(real), _as_batch(fake)
        if real_x.shape != fake_x.shape:
            raise ShapeError(
                "real and fake audio must have the same shape",
                {"real": list(real_x.shape), "fake": list(fake_x.shape)}
            )
        return self.critique(real_x), self.critique(fake_x)
