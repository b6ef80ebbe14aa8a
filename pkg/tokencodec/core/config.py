from pydantic_settings import BaseSettings
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator
from pydantic import ValidationError as PydanticValidationError
from typing import List, Dict, Any, Optional, Tuple, Literal
from functools import lru_cache
import math
import os
try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
import logging
from pathlib import Path
import yaml
from dotenv import load_dotenv
from .exceptions import ConfigurationError

# Load environment-specific .env file
app_env = os.getenv("APP_ENV", "development")
env_file = Path(__file__).parent / "environments" / f"{app_env}.env"
load_dotenv(env_file if env_file.exists() else ".env")

logger = logging.getLogger(__name__)

class Settings(BaseSettings):
    """Process-level settings read from the environment."""

    APP_NAME: str = Field(
        "tokencodec",
        description="Name used for log files and structured log records"
    )
    APP_VERSION: str = Field(
        "0.3.0",
        pattern=r"^\d+\.\d+\.\d+$",
        description="Semantic version of the package"
    )
    APP_ENV: str = Field(
        "development",
        pattern="^(development|staging|production)$",
        description="Deployment environment"
    )

    # Logging configuration
    LOG_LEVEL: str = Field(
        "INFO",
        pattern="^(DEBUG|INFO|WARNING|ERROR|CRITICAL)$",
        description="Logging level"
    )
    LOG_FORMAT: str = Field(
        "standard",
        pattern="^(standard|json)$",
        description="Logging format"
    )
    LOGS_DIR: Path = Field(
        Path("logs"),
        description="Directory for rotating log files and fault dumps"
    )
    METRICS_DIR: Path = Field(
        Path("metrics"),
        description="Default directory for training metrics CSV files"
    )

    # Compute configuration
    DEVICE: str = Field(
        "auto",
        pattern="^(auto|cpu|cuda|cuda:\\d+|mps)$",
        description="Torch device; auto picks cuda when available"
    )
    SEED: int = Field(
        0,
        ge=0,
        description="Default seed when a config does not provide one"
    )
    DETERMINISTIC: bool = Field(
        False,
        description="Request deterministic torch kernels"
    )

    model_config = ConfigDict(
        env_file=".env",
        case_sensitive=True,
        extra="ignore",
        validate_assignment=True
    )

@lru_cache()
def get_settings() -> Settings:
    """Get cached settings instance.

    Returns:
        Settings: Process settings

    Note:
        Uses LRU cache to prevent multiple reads of environment variables
    """
    try:
        settings = Settings()
        logger.info(f"Loaded settings for environment: {settings.APP_ENV}")
        return settings
    except Exception as e:
        logger.error(f"Failed to load settings: {str(e)}")
        raise


class ConfigModel(BaseModel):
    """Immutable config base that reports violations as ConfigurationError."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    def __init__(self, **data: Any):
        try:
            super().__init__(**data)
        except PydanticValidationError as e:
            raise ConfigurationError(
                f"Invalid {type(self).__name__}",
                {"errors": e.errors(include_url=False, include_context=False)}
            ) from e


class SpectralConfig(ConfigModel):
    """STFT analysis/synthesis parameters."""

    n_fft: int = Field(1024, ge=2, description="DFT size K")
    hop: int = Field(256, gt=0, description="Samples per frame step")
    window: Literal["hann", "rect"] = Field("hann", description="Analysis/synthesis taper")
    padding: Literal["center", "same"] = Field(
        "center",
        description="center: reflect-pad n_fft/2 per side; same: pad (n_fft-hop)/2 so frames = len/hop"
    )

    @field_validator("n_fft")
    @classmethod
    def n_fft_even(cls, v: int) -> int:
        if v % 2:
            raise ValueError("n_fft must be even")
        return v

    @model_validator(mode="after")
    def hop_within_window(self) -> "SpectralConfig":
        if self.hop > self.n_fft:
            raise ValueError(f"hop {self.hop} exceeds n_fft {self.n_fft}")
        return self

    @property
    def centered(self) -> bool:
        return self.padding == "center"

    @property
    def n_bins(self) -> int:
        return self.n_fft // 2 + 1


class MelConfig(ConfigModel):
    """Mel filterbank used by the reconstruction loss and evaluation."""

    n_mels: int = Field(100, ge=1)
    fmin: float = Field(0.0, ge=0.0)
    fmax: Optional[float] = Field(None, gt=0.0, description="None means Nyquist")
    log_floor: float = Field(1e-5, gt=0.0, description="Clamp applied before the logarithm")

    @model_validator(mode="after")
    def band_ordered(self) -> "MelConfig":
        if self.fmax is not None and self.fmin >= self.fmax:
            raise ValueError(f"fmin {self.fmin} must be below fmax {self.fmax}")
        return self

    def resolved_fmax(self, sample_rate: int) -> float:
        """Upper band edge, checked against the Nyquist frequency.

        Raises:
            ConfigurationError: If fmax lies above sample_rate / 2
        """
        nyquist = sample_rate / 2
        fmax = nyquist if self.fmax is None else self.fmax
        if fmax > nyquist:
            raise ConfigurationError(
                "Mel fmax exceeds Nyquist",
                {"fmax": fmax, "nyquist": nyquist}
            )
        return fmax


class EncoderConfig(ConfigModel):
    """Convolutional encoder layout."""

    channels: int = Field(32, gt=0, description="Initial width C")
    blocks: int = Field(4, gt=0, description="Number of downsampling blocks B")
    latent_dim: int = Field(512, gt=0, description="Output width D")
    strides: Tuple[int, ...] = Field((2, 4, 5, 8), min_length=1)
    lstm_layers: int = Field(2, ge=0)
    lstm_hidden: Optional[int] = Field(None, gt=0, description="Recurrent width; None means latent_dim")
    activation: Literal["elu", "gelu", "relu", "leaky_relu"] = "elu"

    @field_validator("strides")
    @classmethod
    def strides_positive(cls, v: Tuple[int, ...]) -> Tuple[int, ...]:
        if any(s < 1 for s in v):
            raise ValueError("strides must be positive")
        return v

    @model_validator(mode="after")
    def blocks_match_strides(self) -> "EncoderConfig":
        if len(self.strides) != self.blocks:
            raise ValueError(f"blocks={self.blocks} but {len(self.strides)} strides given")
        return self

    @property
    def total_stride(self) -> int:
        return math.prod(self.strides)

    @property
    def recurrent_width(self) -> int:
        return self.lstm_hidden or self.latent_dim


class VQConfig(ConfigModel):
    """Single-codebook quantizer settings."""

    codebook_size: int = Field(4096, ge=1, description="V")
    dim: int = Field(512, gt=0, description="Code vector width D")
    ema_decay: float = Field(0.99, gt=0.0, lt=1.0)
    revival_age: int = Field(2, ge=0, description="Batches a code may stay unassigned")
    kmeans_init: bool = True
    kmeans_iters: int = Field(20, ge=0)
    init_buffer_frames: Optional[int] = Field(None, gt=0, description="None means 2 * codebook_size")
    epsilon: float = Field(1e-5, gt=0.0, description="Laplace smoothing on EMA cluster sizes")

    @model_validator(mode="after")
    def buffer_covers_codebook(self) -> "VQConfig":
        if self.init_buffer_frames is not None and self.init_buffer_frames < self.codebook_size:
            raise ValueError("init_buffer_frames must be at least codebook_size")
        return self

    @property
    def buffer_frames(self) -> int:
        return self.init_buffer_frames or 2 * self.codebook_size


class DecoderConfig(ConfigModel):
    """Attention + ConvNeXt + iSTFT decoder layout."""

    input_dim: int = Field(512, gt=0)
    hidden_dim: int = Field(512, gt=0)
    attn_heads: int = Field(8, gt=0)
    use_attention: bool = True
    convnext_depth: int = Field(8, ge=0)
    convnext_kernel: int = Field(7, gt=0)
    expansion: int = Field(3, gt=0, description="Inverted bottleneck ratio")
    n_fft: int = Field(1280, ge=2)
    hop: int = Field(320, gt=0)
    magnitude_ceiling: float = Field(1e2, gt=0.0)
    variant: Literal["istft", "mirror"] = Field("istft", description="mirror is the transposed-conv ablation")

    @model_validator(mode="before")
    @classmethod
    def default_n_fft(cls, data: Any) -> Any:
        if isinstance(data, dict) and data.get("n_fft") is None:
            data = {**data, "n_fft": 4 * data.get("hop", 320)}
        return data

    @model_validator(mode="after")
    def consistent_layout(self) -> "DecoderConfig":
        if self.hidden_dim % self.attn_heads:
            raise ValueError("hidden_dim must be divisible by attn_heads")
        if self.n_fft % 2:
            raise ValueError("n_fft must be even")
        if self.hop > self.n_fft:
            raise ValueError("hop must not exceed n_fft")
        if self.convnext_kernel % 2 == 0:
            raise ValueError("convnext_kernel must be odd")
        return self

    @property
    def head_channels(self) -> int:
        return self.n_fft + 2

    @property
    def spectral(self) -> SpectralConfig:
        return SpectralConfig(n_fft=self.n_fft, hop=self.hop, window="hann", padding="same")


DEFAULT_BANDS: Tuple[Tuple[float, float], ...] = (
    (0.0, 0.1), (0.1, 0.25), (0.25, 0.5), (0.5, 0.75), (0.75, 1.0)
)

class DiscriminatorConfig(ConfigModel):
    """Critic ensemble layout."""

    periods: Tuple[int, ...] = (2, 3, 5, 7, 11)
    resolutions: Tuple[int, ...] = (2048, 1024, 512)
    stft_scales: Tuple[int, ...] = (2048, 1024, 512, 256, 128)
    bands: Tuple[Tuple[float, float], ...] = DEFAULT_BANDS
    mpd_channels: int = Field(32, gt=0)
    mrd_channels: int = Field(32, gt=0)
    msstftd_channels: int = Field(32, gt=0)
    lrelu_slope: float = Field(0.1, ge=0.0)

    @field_validator("periods", "resolutions", "stft_scales")
    @classmethod
    def positive_sizes(cls, v: Tuple[int, ...]) -> Tuple[int, ...]:
        if any(x < 1 for x in v):
            raise ValueError("sizes must be positive")
        return v

    @field_validator("resolutions", "stft_scales")
    @classmethod
    def divisible_by_four(cls, v: Tuple[int, ...]) -> Tuple[int, ...]:
        if any(x % 4 for x in v):
            raise ValueError("STFT sizes must be multiples of 4 (hop = n_fft / 4)")
        return v

    @field_validator("bands")
    @classmethod
    def bands_tile_unit_interval(cls, v: Tuple[Tuple[float, float], ...]) -> Tuple[Tuple[float, float], ...]:
        if not v or v[0][0] != 0.0 or v[-1][1] != 1.0:
            raise ValueError("bands must start at 0.0 and end at 1.0")
        for (_, hi), (lo, _) in zip(v, v[1:]):
            if hi != lo:
                raise ValueError("bands must be contiguous")
        return v

    @model_validator(mode="after")
    def at_least_one_critic(self) -> "DiscriminatorConfig":
        if self.count == 0:
            raise ValueError("the ensemble needs at least one sub-discriminator")
        return self

    @property
    def count(self) -> int:
        """K: one critic per period, two per MRD resolution, one per STFT scale."""
        return len(self.periods) + 2 * len(self.resolutions) + len(self.stft_scales)

    @property
    def longest_window(self) -> int:
        return max(self.resolutions + self.stft_scales, default=0)


class LossWeights(ConfigModel):
    """Generator objective weights."""

    lambda_q: float = Field(1.0, ge=0.0, allow_inf_nan=False)
    lambda_mel: float = Field(45.0, ge=0.0, allow_inf_nan=False)
    lambda_adv: float = Field(1.0, ge=0.0, allow_inf_nan=False)
    lambda_feat: float = Field(1.0, ge=0.0, allow_inf_nan=False)


class TrainConfig(ConfigModel):
    """Optimization and data policy."""

    crop_seconds: float = Field(3.0, gt=0.0)
    max_clip_seconds: float = Field(10.0, gt=0.0)
    batch_size: int = Field(40, gt=0)
    lr: float = Field(2e-4, ge=0.0, description="Peak learning rate")
    betas: Tuple[float, float] = (0.9, 0.999)
    weight_decay: float = Field(0.01, ge=0.0)
    schedule: Literal["cosine", "constant"] = "cosine"
    total_steps: int = Field(2000, gt=0, description="Generator steps; discriminator steps match 1:1")
    seed: int = Field(0, ge=0)
    context_windows: Tuple[float, ...] = Field((1.0, 3.0, 5.0), description="Crop lengths for the window ablation")
    disc_warmup_steps: int = Field(0, ge=0)
    grad_clip: Optional[float] = Field(None, gt=0.0)
    quantizer_reduction: Literal["sum", "mean"] = "sum"
    revival: bool = True
    log_every: int = Field(10, gt=0)
    checkpoint_every: int = Field(1000, gt=0)
    num_workers: int = Field(0, ge=0)

    @model_validator(mode="after")
    def crop_fits_clip(self) -> "TrainConfig":
        if self.crop_seconds > self.max_clip_seconds:
            raise ValueError("crop_seconds must not exceed max_clip_seconds")
        return self


class CodecConfig(ConfigModel):
    """Everything needed to build, train and run one codec."""

    sample_rate: int = Field(24000, gt=0)
    encoder: EncoderConfig = EncoderConfig()
    vq: VQConfig = VQConfig()
    decoder: DecoderConfig = DecoderConfig()
    discriminators: DiscriminatorConfig = DiscriminatorConfig()
    mel_spectral: SpectralConfig = SpectralConfig(n_fft=1024, hop=256)
    mel: MelConfig = MelConfig()
    losses: LossWeights = LossWeights()
    train: TrainConfig = TrainConfig()

    @model_validator(mode="after")
    def stages_agree(self) -> "CodecConfig":
        latent = self.encoder.latent_dim
        if self.vq.dim != latent:
            raise ValueError(f"vq.dim {self.vq.dim} != encoder.latent_dim {latent}")
        if self.decoder.input_dim != latent:
            raise ValueError(f"decoder.input_dim {self.decoder.input_dim} != encoder.latent_dim {latent}")
        if self.decoder.hop != self.encoder.total_stride:
            raise ValueError(
                f"decoder.hop {self.decoder.hop} != encoder total stride {self.encoder.total_stride}"
            )
        return self

    @property
    def frame_rate(self) -> float:
        return self.sample_rate / self.encoder.total_stride

    @classmethod
    def preset(cls, name: str) -> "CodecConfig":
        """Build one of the named configurations.

        Args:
            name: "75tps", "40tps" or "toy"

        Returns:
            CodecConfig: Validated configuration
        """
        if name not in PRESETS:
            raise ConfigurationError(f"Unknown preset '{name}'", {"available": sorted(PRESETS)})
        return cls(**PRESETS[name])


PRESETS: Dict[str, Dict[str, Any]] = {
    "75tps": {},
    "40tps": {
        "encoder": {"strides": (4, 5, 5, 6)},
        "decoder": {"hop": 600},
    },
    "toy": {
        "encoder": {"channels": 4, "latent_dim": 32, "lstm_layers": 1},
        "vq": {"codebook_size": 64, "dim": 32, "kmeans_iters": 5},
        "decoder": {"input_dim": 32, "hidden_dim": 32, "attn_heads": 4, "convnext_depth": 2},
        "discriminators": {
            "periods": (2, 3),
            "resolutions": (512,),
            "stft_scales": (512, 256),
            "mpd_channels": 4,
            "mrd_channels": 4,
            "msstftd_channels": 4,
        },
        "train": {"crop_seconds": 1.0, "batch_size": 4, "total_steps": 2000},
    },
}


def deep_merge(base: Dict[str, Any], overrides: Dict[str, Any]) -> Dict[str, Any]:
    """Recursively merge overrides into a copy of base."""
    merged = dict(base)
    for key, value in overrides.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = deep_merge(merged[key], value)
        else:
            merged[key] = value
    return merged


def with_overrides(config: CodecConfig, overrides: Dict[str, Any]) -> CodecConfig:
    """Return a re-validated copy of config with nested overrides applied.

    A new decoder hop without an explicit n_fft re-derives n_fft as 4 * hop.
    """
    merged = deep_merge(config.model_dump(), overrides)
    decoder = overrides.get("decoder")
    if isinstance(decoder, dict) and "hop" in decoder and "n_fft" not in decoder:
        merged["decoder"]["n_fft"] = None
    return CodecConfig(**merged)


def read_config_file(path: Path) -> Dict[str, Any]:
    """Parse a TOML or YAML file into a dict.

    Raises:
        ConfigurationError: On unknown suffix or parse failure
    """
    path = Path(path)
    if not path.is_file():
        raise ConfigurationError(f"Config file not found: {path}", {"path": str(path)})
    suffix = path.suffix.lower()
    try:
        if suffix == ".toml":
            with open(path, "rb") as f:
                data = tomllib.load(f)
        elif suffix in (".yaml", ".yml"):
            with open(path, "r") as f:
                data = yaml.safe_load(f) or {}
        else:
            raise ConfigurationError(
                f"Unsupported config format '{suffix}'",
                {"path": str(path), "supported": [".toml", ".yaml", ".yml"]}
            )
    except (tomllib.TOMLDecodeError, yaml.YAMLError) as e:
        raise ConfigurationError(f"Failed to parse {path}", {"error": str(e)}) from e
    if not isinstance(data, dict):
        raise ConfigurationError(f"{path} must hold a mapping at top level", {"path": str(path)})
    return data


def load_codec_config(path: Path) -> CodecConfig:
    """Load a codec configuration from TOML or YAML.

    A top-level ``preset`` key selects the base configuration; every other
    key overrides it.

    Args:
        path: Config file (.toml, .yaml or .yml)

    Returns:
        CodecConfig: Validated configuration

    Raises:
        ConfigurationError: On unknown suffix, parse failure or invalid values
    """
    data = read_config_file(path)
    preset = data.pop("preset", "75tps")
    config = with_overrides(CodecConfig.preset(preset), data)
    logger.info(f"Loaded codec config from {path} (preset {preset})")
    return config
