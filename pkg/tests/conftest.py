import math

import pytest
import soundfile as sf
import torch

from tokencodec.core.config import CodecConfig, with_overrides
from tokencodec.pipeline.data import TensorClips

SAMPLE_RATE = 24000


@pytest.fixture
def generator():
    """Seeded torch generator for reproducible random inputs."""
    g = torch.Generator()
    g.manual_seed(1234)
    return g


@pytest.fixture
def toy_config():
    """Desk-scale codec: 64 codes, 32-dim latents, two small critics per family."""
    return CodecConfig.preset("toy")


@pytest.fixture
def tiny_config(toy_config):
    """Toy codec with a short schedule and a short crop, for fast training tests."""
    return with_overrides(toy_config, {
        "vq": {"codebook_size": 16, "kmeans_iters": 3},
        "train": {"crop_seconds": 0.5, "batch_size": 2, "total_steps": 20, "log_every": 1},
    })


def tone(seconds=1.0, freq=220.0, sample_rate=SAMPLE_RATE, amplitude=0.5):
    n = int(round(seconds * sample_rate))
    t = torch.arange(n, dtype=torch.float32) / sample_rate
    return amplitude * torch.sin(2 * math.pi * freq * t)


@pytest.fixture
def tone_clips():
    """Ten 1-second harmonic clips at distinct pitches."""
    clips = []
    for i in range(10):
        f0 = 110.0 * (1 + i / 4)
        clips.append(tone(1.0, f0) + 0.25 * tone(1.0, 2 * f0) + 0.1 * tone(1.0, 3 * f0))
    return TensorClips(clips, SAMPLE_RATE)


@pytest.fixture
def write_wav(tmp_path):
    """Write a 1-D tensor as a 16-bit WAV under tmp_path and return its path."""
    def _write(name, samples, sample_rate=SAMPLE_RATE):
        path = tmp_path / name
        path.parent.mkdir(parents=True, exist_ok=True)
        sf.write(str(path), samples.numpy(), sample_rate, subtype="PCM_16")
        return path
    return _write


@pytest.fixture
def tiny_manifest(tmp_path, write_wav):
    """Manifest with three train clips and one test clip."""
    lines = []
    for i, split in enumerate(["train", "train", "train", "test"]):
        path = write_wav(f"audio/clip{i}.wav", tone(1.0, 200.0 + 50 * i))
        lines.append(f"audio/{path.name}\t1.0\t{split}")
    manifest = tmp_path / "manifest.tsv"
    manifest.write_text("# path\tduration\tsplit\n" + "\n".join(lines) + "\n")
    return manifest
