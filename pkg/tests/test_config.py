import pytest

from tokencodec.core.config import (
    CodecConfig,
    DecoderConfig,
    DiscriminatorConfig,
    EncoderConfig,
    MelConfig,
    SpectralConfig,
    TrainConfig,
    VQConfig,
    get_settings,
    load_codec_config,
    with_overrides,
)
from tokencodec.core.exceptions import ConfigurationError


def test_settings_defaults():
    """Settings load with the documented defaults."""
    settings = get_settings()
    assert settings.APP_NAME == "tokencodec"
    assert settings.LOG_FORMAT in ("standard", "json")
    assert settings.DEVICE


def test_default_config_is_75_tokens_per_second():
    """Default strides give a 320-sample hop at 24 kHz."""
    cfg = CodecConfig()
    assert cfg.encoder.total_stride == 320
    assert cfg.frame_rate == 75
    assert cfg.decoder.n_fft == 1280
    assert cfg.vq.codebook_size == 4096


def test_40tps_preset():
    """The 600x preset gives 40 frames per second and a matching head."""
    cfg = CodecConfig.preset("40tps")
    assert cfg.encoder.strides == (4, 5, 5, 6)
    assert cfg.frame_rate == 40
    assert cfg.decoder.hop == 600
    assert cfg.decoder.n_fft == 2400


def test_unknown_preset():
    with pytest.raises(ConfigurationError) as exc_info:
        CodecConfig.preset("9000tps")
    assert "toy" in exc_info.value.details["available"]


def test_spectral_config_validation():
    """Odd windows and hops longer than the window are rejected."""
    with pytest.raises(ConfigurationError):
        SpectralConfig(n_fft=1023, hop=256)
    with pytest.raises(ConfigurationError):
        SpectralConfig(n_fft=512, hop=1024)
    with pytest.raises(ConfigurationError):
        SpectralConfig(n_fft=512, hop=0)
    assert SpectralConfig(n_fft=512, hop=128).n_bins == 257


def test_encoder_blocks_must_match_strides():
    with pytest.raises(ConfigurationError) as exc_info:
        EncoderConfig(blocks=3)
    assert exc_info.value.details["errors"]


def test_vq_buffer_must_cover_codebook():
    with pytest.raises(ConfigurationError):
        VQConfig(codebook_size=64, init_buffer_frames=32)
    assert VQConfig(codebook_size=64).buffer_frames == 128


def test_vq_decay_bounds():
    with pytest.raises(ConfigurationError):
        VQConfig(ema_decay=1.0)


def test_decoder_validation():
    """Heads must divide the width and kernels must be odd."""
    with pytest.raises(ConfigurationError):
        DecoderConfig(hidden_dim=30, attn_heads=8)
    with pytest.raises(ConfigurationError):
        DecoderConfig(convnext_kernel=6)
    assert DecoderConfig().head_channels == 1282


def test_discriminator_count_defaults_to_sixteen():
    """Five periods, two critics per resolution, five STFT scales."""
    assert DiscriminatorConfig().count == 16


def test_discriminator_bands_must_tile():
    with pytest.raises(ConfigurationError):
        DiscriminatorConfig(bands=((0.0, 0.5), (0.6, 1.0)))
    with pytest.raises(ConfigurationError):
        DiscriminatorConfig(resolutions=(1022,))


def test_discriminator_needs_a_critic():
    with pytest.raises(ConfigurationError):
        DiscriminatorConfig(periods=(), resolutions=(), stft_scales=())


def test_train_crop_within_clip():
    with pytest.raises(ConfigurationError):
        TrainConfig(crop_seconds=12.0, max_clip_seconds=10.0)


def test_mel_fmax_above_nyquist():
    with pytest.raises(ConfigurationError):
        MelConfig(fmax=16000.0).resolved_fmax(24000)
    assert MelConfig().resolved_fmax(24000) == 12000.0


def test_cross_stage_mismatch():
    """Decoder hop must equal the encoder's total stride."""
    with pytest.raises(ConfigurationError):
        CodecConfig(decoder={"hop": 600})
    with pytest.raises(ConfigurationError):
        CodecConfig(vq={"dim": 256})


def test_unknown_field_rejected():
    with pytest.raises(ConfigurationError):
        CodecConfig(vq={"codebook": 1024})


def test_configs_are_frozen(toy_config):
    with pytest.raises(Exception):
        toy_config.sample_rate = 16000


def test_with_overrides(toy_config):
    """Nested overrides re-validate and leave other fields alone."""
    cfg = with_overrides(toy_config, {"vq": {"codebook_size": 32}})
    assert cfg.vq.codebook_size == 32
    assert cfg.vq.dim == toy_config.vq.dim
    assert toy_config.vq.codebook_size == 64


def test_with_overrides_rederives_n_fft_from_hop():
    """A new decoder hop moves n_fft to four hops unless n_fft is given too."""
    cfg = with_overrides(CodecConfig(), {"encoder": {"strides": (4, 5, 5, 6)}, "decoder": {"hop": 600}})
    assert cfg.decoder.n_fft == 2400
    assert cfg.decoder.spectral.hop == 600

    explicit = with_overrides(CodecConfig(), {"encoder": {"strides": (4, 5, 5, 6)}, "decoder": {"hop": 600, "n_fft": 1200}})
    assert explicit.decoder.n_fft == 1200
    assert with_overrides(CodecConfig(), {"train": {"lr": 1e-3}}).decoder.n_fft == 1280


def test_load_yaml_config(tmp_path):
    path = tmp_path / "codec.yaml"
    path.write_text("preset: toy\nvq:\n  codebook_size: 128\ntrain:\n  lr: 0.001\n")
    cfg = load_codec_config(path)
    assert cfg.vq.codebook_size == 128
    assert cfg.train.lr == 0.001
    assert cfg.encoder.latent_dim == 32


def test_load_toml_config(tmp_path):
    path = tmp_path / "codec.toml"
    path.write_text('preset = "40tps"\nsample_rate = 24000\n\n[losses]\nlambda_mel = 10.0\n')
    cfg = load_codec_config(path)
    assert cfg.frame_rate == 40
    assert cfg.losses.lambda_mel == 10.0


def test_load_config_errors(tmp_path):
    """Unknown suffixes, parse failures and invalid values all raise ConfigurationError."""
    ini = tmp_path / "codec.ini"
    ini.write_text("[x]\n")
    with pytest.raises(ConfigurationError):
        load_codec_config(ini)

    broken = tmp_path / "broken.yaml"
    broken.write_text("vq: [unclosed\n")
    with pytest.raises(ConfigurationError):
        load_codec_config(broken)

    invalid = tmp_path / "invalid.yaml"
    invalid.write_text("train:\n  batch_size: 0\n")
    with pytest.raises(ConfigurationError):
        load_codec_config(invalid)
