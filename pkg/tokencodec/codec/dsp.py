"""Spectral primitives shared by the decoder head, the mel loss and the critics.

Spectrogram tensors are frames-first: ``(..., F, n_fft // 2 + 1)``.
"""
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path
from typing import Optional, Tuple, Union

import torch
import torch.nn.functional as F
import torchaudio
import soundfile as sf

from ..core.config import SpectralConfig, MelConfig
from ..core.exceptions import (
    ConfigurationError,
    EmptyInputError,
    ShapeError,
    TooShortInputError,
    ValidationError,
    WindowNormalizationError,
)
from ..core.logging import get_logger

logger = get_logger(__name__)

COLA_RTOL = 1e-4
ENVELOPE_FLOOR = 1e-11


@dataclass
class AudioBuffer:
    """Waveform samples shaped ``(..., L)`` with their sample rate."""

    samples: torch.Tensor
    sample_rate: int

    def __post_init__(self):
        if self.sample_rate <= 0:
            raise ValidationError("sample_rate must be positive", {"sample_rate": self.sample_rate})
        if not torch.isfinite(self.samples).all():
            raise ValidationError("audio contains non-finite samples")

    @property
    def length(self) -> int:
        return self.samples.shape[-1]

    @property
    def duration_seconds(self) -> float:
        return self.length / self.sample_rate


@dataclass
class ComplexSpectrogram:
    frames: torch.Tensor
    config: SpectralConfig

    @property
    def num_frames(self) -> int:
        return self.frames.shape[-2]

    def magnitude(self) -> torch.Tensor:
        return self.frames.abs()


@lru_cache(maxsize=64)
def _window(n_fft: int, kind: str) -> torch.Tensor:
    if kind == "hann":
        return torch.hann_window(n_fft, periodic=True, dtype=torch.float64)
    return torch.ones(n_fft, dtype=torch.float64)


def window_tensor(cfg: SpectralConfig, like: Optional[torch.Tensor] = None) -> torch.Tensor:
    w = _window(cfg.n_fft, cfg.window)
    if like is None:
        return w.float()
    return w.to(device=like.device, dtype=like.real.dtype if like.is_complex() else like.dtype)


@lru_cache(maxsize=64)
def check_cola(cfg: SpectralConfig) -> float:
    """Verify that shifted squared windows sum to a constant.

    Returns:
        float: The steady-state overlap-add gain

    Raises:
        ConfigurationError: If the sum varies by more than COLA_RTOL
    """
    w2 = _window(cfg.n_fft, cfg.window) ** 2
    pad = (-cfg.n_fft) % cfg.hop
    folded = F.pad(w2, (0, pad)).reshape(-1, cfg.hop).sum(dim=0)
    low, high = folded.min().item(), folded.max().item()
    if low <= 0 or (high - low) / high > COLA_RTOL:
        raise ConfigurationError(
            "Window does not satisfy constant overlap-add for this hop",
            {"n_fft": cfg.n_fft, "hop": cfg.hop, "window": cfg.window, "min": low, "max": high}
        )
    return high


def padding_for(cfg: SpectralConfig) -> Tuple[int, int]:
    if cfg.centered:
        return cfg.n_fft // 2, cfg.n_fft // 2
    total = cfg.n_fft - cfg.hop
    return total // 2, total - total // 2


def frame_count(length: int, cfg: SpectralConfig) -> int:
    """Number of analysis frames for a signal of ``length`` samples."""
    return length // cfg.hop + 1 if cfg.centered else length // cfg.hop


def _as_tensor(audio: Union[AudioBuffer, torch.Tensor]) -> torch.Tensor:
    return audio.samples if isinstance(audio, AudioBuffer) else audio


def stft(audio: Union[AudioBuffer, torch.Tensor], cfg: SpectralConfig) -> ComplexSpectrogram:
    """Windowed one-sided DFT of overlapping frames.

    Args:
        audio: Samples shaped ``(..., L)``
        cfg: Transform parameters

    Returns:
        ComplexSpectrogram: Frames shaped ``(..., F, n_fft // 2 + 1)``

    Raises:
        EmptyInputError: If L is zero
        TooShortInputError: If "same" padding yields no frame
        ConfigurationError: If the window is not COLA for the hop
    """
    x = _as_tensor(audio)
    check_cola(cfg)
    length = x.shape[-1]
    if length == 0:
        raise EmptyInputError("stft received empty audio")
    if frame_count(length, cfg) < 1:
        raise TooShortInputError(
            "audio shorter than one hop",
            {"length": length, "hop": cfg.hop}
        )

    lead = x.shape[:-1]
    flat = x.reshape(-1, 1, length)
    left, right = padding_for(cfg)
    mode = "reflect" if max(left, right) < length else "constant"
    flat = F.pad(flat, (left, right), mode=mode).squeeze(1)

    spec = torch.stft(
        flat,
        n_fft=cfg.n_fft,
        hop_length=cfg.hop,
        win_length=cfg.n_fft,
        window=window_tensor(cfg, flat),
        center=False,
        normalized=False,
        onesided=True,
        return_complex=True,
    )
    frames = spec.transpose(-1, -2).reshape(*lead, spec.shape[-1], spec.shape[-2])
    return ComplexSpectrogram(frames=frames, config=cfg)


def istft(spec: ComplexSpectrogram, length: Optional[int] = None) -> torch.Tensor:
    """Overlap-add synthesis normalized by the squared-window envelope.

    Args:
        spec: Frames shaped ``(..., F, n_fft // 2 + 1)``
        length: Optional output length no longer than the natural one

    Returns:
        torch.Tensor: ``(F - 1) * hop`` samples for centered analysis, ``F * hop`` otherwise

    Raises:
        ShapeError: On a bin count other than n_fft // 2 + 1
        WindowNormalizationError: If the envelope vanishes inside the output span
    """
    cfg = spec.config
    frames = spec.frames
    if frames.shape[-1] != cfg.n_bins:
        raise ShapeError(
            "spectrogram bin count does not match n_fft",
            {"bins": frames.shape[-1], "expected": cfg.n_bins}
        )
    check_cola(cfg)

    lead = frames.shape[:-2]
    n_frames = frames.shape[-2]
    flat = frames.reshape(-1, n_frames, cfg.n_bins)
    window = window_tensor(cfg, flat)

    segments = torch.fft.irfft(flat, n=cfg.n_fft, dim=-1) * window
    total = (n_frames - 1) * cfg.hop + cfg.n_fft
    y = F.fold(
        segments.transpose(1, 2),
        output_size=(1, total),
        kernel_size=(1, cfg.n_fft),
        stride=(1, cfg.hop),
    ).reshape(flat.shape[0], total)
    envelope = F.fold(
        (window ** 2).reshape(1, cfg.n_fft, 1).repeat(1, 1, n_frames),
        output_size=(1, total),
        kernel_size=(1, cfg.n_fft),
        stride=(1, cfg.hop),
    ).reshape(total)

    start = padding_for(cfg)[0]
    natural = (n_frames - 1) * cfg.hop if cfg.centered else n_frames * cfg.hop
    out_len = natural if length is None else min(length, natural)
    y = y[:, start:start + out_len]
    envelope = envelope[start:start + out_len]
    if out_len and not (envelope > ENVELOPE_FLOOR).all():
        raise WindowNormalizationError(
            "overlap-add window envelope vanishes",
            {"n_fft": cfg.n_fft, "hop": cfg.hop, "min_envelope": envelope.min().item()}
        )
    y = y / envelope
    return y.reshape(*lead, out_len)


@lru_cache(maxsize=16)
def _mel_filters(n_freqs: int, f_min: float, f_max: float, n_mels: int, sample_rate: int) -> torch.Tensor:
    fb = torchaudio.functional.melscale_fbanks(
        n_freqs=n_freqs,
        f_min=f_min,
        f_max=f_max,
        n_mels=n_mels,
        sample_rate=sample_rate,
        norm=None,
        mel_scale="htk",
    )
    empty = (fb.max(dim=0).values <= 0).nonzero().flatten().tolist()
    if empty:
        raise ConfigurationError(
            "mel filterbank has filters with no weight; lower n_mels or raise n_fft",
            {"empty_filters": empty[:10], "n_mels": n_mels, "n_freqs": n_freqs}
        )
    return fb


def mel_filterbank(cfg: SpectralConfig, mel: MelConfig, sample_rate: int) -> torch.Tensor:
    """``(n_fft // 2 + 1, n_mels)`` triangular filters."""
    fmax = mel.resolved_fmax(sample_rate)
    return _mel_filters(cfg.n_bins, float(mel.fmin), float(fmax), mel.n_mels, sample_rate)


def mel_spectrogram(
    audio: Union[AudioBuffer, torch.Tensor],
    cfg: SpectralConfig,
    mel: MelConfig,
    sample_rate: Optional[int] = None,
) -> torch.Tensor:
    """Log mel magnitude spectrogram shaped ``(..., F, n_mels)``.

    Raises:
        ConfigurationError: If fmax exceeds Nyquist or a filter is empty
    """
    if isinstance(audio, AudioBuffer):
        sample_rate = audio.sample_rate
    if sample_rate is None:
        raise ValidationError("sample_rate is required for raw tensors")
    fb = mel_filterbank(cfg, mel, sample_rate)
    magnitude = stft(audio, cfg).magnitude()
    mels = magnitude @ fb.to(magnitude)
    return torch.log(torch.clamp(mels, min=mel.log_floor))


def load_audio(path: Union[str, Path], sample_rate: int) -> AudioBuffer:
    """Read a WAV/FLAC file as mono float32, resampled to ``sample_rate``."""
    data, file_rate = sf.read(str(path), dtype="float32", always_2d=True)
    samples = torch.from_numpy(data.T.copy())
    if samples.shape[0] > 1:
        logger.warning(f"Downmixing {samples.shape[0]} channels to mono: {path}")
    samples = samples.mean(dim=0)
    if file_rate != sample_rate:
        samples = torchaudio.functional.resample(samples, file_rate, sample_rate)
    return AudioBuffer(samples=samples, sample_rate=sample_rate)


def save_audio(path: Union[str, Path], audio: AudioBuffer) -> None:
    """Write mono float audio as 16-bit PCM WAV, clipping to [-1, 1]."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    samples = audio.samples.detach().reshape(-1).clamp(-1.0, 1.0).cpu().numpy()
    sf.write(str(path), samples, audio.sample_rate, subtype="PCM_16")
