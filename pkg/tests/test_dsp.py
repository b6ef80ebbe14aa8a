import pytest
import torch

from tokencodec.codec.dsp import (
    AudioBuffer,
    ComplexSpectrogram,
    check_cola,
    frame_count,
    istft,
    load_audio,
    mel_filterbank,
    mel_spectrogram,
    save_audio,
    stft,
)
from tokencodec.core.config import MelConfig, SpectralConfig
from tokencodec.core.exceptions import (
    ConfigurationError,
    EmptyInputError,
    ShapeError,
    TooShortInputError,
    ValidationError,
)


CENTER = SpectralConfig(n_fft=1024, hop=256)
SAME = SpectralConfig(n_fft=1280, hop=320, padding="same")


def test_stft_shape_centered():
    """Centered analysis yields L // hop + 1 frames of n_fft // 2 + 1 bins."""
    spec = stft(torch.randn(24000), CENTER)
    assert spec.frames.shape == (24000 // 256 + 1, 513)
    assert spec.frames.is_complex()


def test_stft_shape_same_padding():
    """'same' padding yields exactly L // hop frames."""
    spec = stft(torch.randn(2, 24000), SAME)
    assert spec.frames.shape == (2, 75, 641)
    assert frame_count(24000, SAME) == 75


def test_round_trip_random_signals(generator):
    """istft(stft(x)) reconstructs x to 1e-5 relative error."""
    for _ in range(100):
        length = int(torch.randint(1000, 100_001, (1,), generator=generator))
        x = torch.randn(length, generator=generator, dtype=torch.float64)
        y = istft(stft(x, CENTER), length=length)
        natural = (frame_count(length, CENTER) - 1) * CENTER.hop
        n = min(length, natural)
        assert y.shape[-1] == n
        err = (y - x[:n]).abs().max() / x[:n].abs().max()
        assert err < 1e-5


def test_round_trip_same_padding():
    """The decoder's 'same' layout also inverts inside the covered span."""
    x = torch.randn(3, 320 * 50, dtype=torch.float64)
    y = istft(stft(x, SAME))
    assert y.shape == (3, 320 * 50)
    torch.testing.assert_close(y, x, rtol=1e-5, atol=1e-7)


def test_round_trip_rectangular_window():
    cfg = SpectralConfig(n_fft=256, hop=256, window="rect")
    x = torch.randn(4096, dtype=torch.float64)
    torch.testing.assert_close(istft(stft(x, cfg))[:4096 - 256], x[:4096 - 256], rtol=1e-6, atol=1e-9)


def test_cola_rejects_sparse_hop():
    """Hann at 3/4 hop does not overlap-add to a constant."""
    with pytest.raises(ConfigurationError):
        check_cola(SpectralConfig(n_fft=512, hop=384))
    assert check_cola(CENTER) > 0


def test_stft_errors():
    with pytest.raises(EmptyInputError):
        stft(torch.zeros(0), CENTER)
    with pytest.raises(TooShortInputError):
        stft(torch.zeros(100), SAME)


def test_istft_wrong_bins():
    spec = ComplexSpectrogram(torch.zeros(10, 100, dtype=torch.complex64), CENTER)
    with pytest.raises(ShapeError):
        istft(spec)


def test_stft_of_silence_is_zero():
    spec = stft(torch.zeros(4096), CENTER)
    assert spec.magnitude().abs().max() == 0


def test_mel_filterbank_shape():
    fb = mel_filterbank(CENTER, MelConfig(), 24000)
    assert fb.shape == (513, 100)
    assert (fb.max(dim=0).values > 0).all()


def test_mel_spectrogram_floor():
    """Silence maps to log(log_floor) everywhere."""
    mel = MelConfig(log_floor=1e-5)
    m = mel_spectrogram(torch.zeros(2, 8192), CENTER, mel, sample_rate=24000)
    assert m.shape == (2, 8192 // 256 + 1, 100)
    torch.testing.assert_close(m, torch.full_like(m, torch.log(torch.tensor(1e-5)).item()))


def test_mel_spectrogram_from_buffer():
    audio = AudioBuffer(torch.randn(8192), 24000)
    assert mel_spectrogram(audio, CENTER, MelConfig()).shape == (33, 100)


def test_mel_needs_sample_rate():
    with pytest.raises(ValidationError):
        mel_spectrogram(torch.randn(4096), CENTER, MelConfig())


def test_mel_too_many_filters():
    with pytest.raises(ConfigurationError):
        mel_filterbank(SpectralConfig(n_fft=64, hop=16), MelConfig(n_mels=200), 24000)


def test_audio_buffer_validation():
    with pytest.raises(ValidationError):
        AudioBuffer(torch.tensor([0.0, float("nan")]), 24000)
    with pytest.raises(ValidationError):
        AudioBuffer(torch.zeros(4), 0)
    assert AudioBuffer(torch.zeros(48000), 24000).duration_seconds == 2.0


def test_wav_round_trip(tmp_path):
    """16-bit write then read stays within quantization error."""
    x = 0.5 * torch.sin(torch.linspace(0, 100, 24000))
    path = tmp_path / "tone.wav"
    save_audio(path, AudioBuffer(x, 24000))
    y = load_audio(path, 24000)
    assert y.sample_rate == 24000
    assert (y.samples - x).abs().max() < 1e-4


def test_load_audio_resamples_and_downmixes(tmp_path):
    import soundfile as sf
    import numpy as np

    stereo = np.stack([np.zeros(16000), np.full(16000, 0.5)], axis=1).astype("float32")
    path = tmp_path / "stereo.wav"
    sf.write(str(path), stereo, 16000)
    audio = load_audio(path, 24000)
    assert audio.length == 24000
    assert audio.samples[1000:-1000].mean().item() == pytest.approx(0.25, abs=1e-3)


def test_stft_is_linear(generator):
    x = torch.randn(2, 6000, generator=generator, dtype=torch.float64)
    y = torch.randn(2, 6000, generator=generator, dtype=torch.float64)
    combined = stft(2.5 * x - 0.75 * y, CENTER).frames
    separate = 2.5 * stft(x, CENTER).frames - 0.75 * stft(y, CENTER).frames
    torch.testing.assert_close(combined, separate, rtol=1e-10, atol=1e-10)


def test_stft_preserves_energy(generator):
    """Unpadded rectangular frames: one-sided bin energy over n_fft equals sample energy."""
    cfg = SpectralConfig(n_fft=128, hop=128, window="rect", padding="same")
    x = torch.randn(128 * 20 + 37, generator=generator, dtype=torch.float64)
    power = stft(x, cfg).frames.abs() ** 2
    weights = torch.full((cfg.n_bins,), 2.0, dtype=torch.float64)
    weights[0] = weights[-1] = 1.0
    spectral_energy = (power * weights).sum() / cfg.n_fft
    assert spectral_energy.item() == pytest.approx(x[: 128 * 20].pow(2).sum().item(), rel=1e-10)


def test_bin_centred_sine_peaks_at_its_bin():
    k = 37
    n = torch.arange(24000, dtype=torch.float64)
    x = torch.sin(2 * torch.pi * k * n / CENTER.n_fft)
    magnitude = stft(x, CENTER).magnitude()
    peaks = magnitude[4:-4].argmax(dim=-1)
    assert (peaks == k).all()


def test_frame_count_matches_stft(generator):
    """The frame-count formula agrees with the transform for random lengths and hops."""
    for _ in range(100):
        hop = int(torch.randint(8, 257, (1,), generator=generator))
        length = int(torch.randint(hop, 5001, (1,), generator=generator))
        for padding in ("center", "same"):
            cfg = SpectralConfig(n_fft=4 * hop, hop=hop, padding=padding)
            assert stft(torch.zeros(length), cfg).num_frames == frame_count(length, cfg), (length, hop, padding)


def test_white_noise_mel_above_floor(generator):
    mel = MelConfig(log_floor=1e-5)
    m = mel_spectrogram(torch.randn(24000, generator=generator), CENTER, mel, sample_rate=24000)
    assert (m > torch.log(torch.tensor(1e-5))).all()
