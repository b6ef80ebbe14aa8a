"""Training data: manifests, the truncate-then-crop policy and per-step batches."""
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Protocol, Sequence, Union

import soundfile as sf
import torch
import torch.nn.functional as F
from torch.utils.data import DataLoader, Dataset

from ..codec.base import seeded
from ..codec.dsp import AudioBuffer, load_audio
from ..core.config import TrainConfig
from ..core.exceptions import EmptyInputError, ValidationError
from ..core.logging import get_logger

logger = get_logger(__name__)

AUDIO_SUFFIXES = (".wav", ".flac")


@dataclass(frozen=True)
class ManifestEntry:
    path: Path
    duration: float
    split: str = "train"


@dataclass
class DatasetManifest:
    entries: List[ManifestEntry]

    def __len__(self) -> int:
        return len(self.entries)

    def split(self, tag: str) -> "DatasetManifest":
        return DatasetManifest([e for e in self.entries if e.split == tag])

    @property
    def total_seconds(self) -> float:
        return sum(e.duration for e in self.entries)


def load_manifest(path: Union[str, Path], check_files: bool = True) -> DatasetManifest:
    """Read a tab-separated ``path<TAB>duration<TAB>split`` manifest.

    Relative paths resolve against the manifest's directory; ``#`` starts a
    comment line.

    Raises:
        ValidationError: On malformed lines or missing files
    """
    path = Path(path)
    entries: List[ManifestEntry] = []
    for lineno, line in enumerate(path.read_text().splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        fields = line.split("\t")
        if len(fields) not in (2, 3):
            raise ValidationError(f"Malformed manifest line {lineno}", {"path": str(path), "line": line})
        try:
            duration = float(fields[1])
        except ValueError as e:
            raise ValidationError(f"Bad duration on manifest line {lineno}", {"value": fields[1]}) from e
        audio_path = Path(fields[0])
        if not audio_path.is_absolute():
            audio_path = path.parent / audio_path
        entries.append(ManifestEntry(audio_path, duration, fields[2] if len(fields) == 3 else "train"))

    if check_files:
        missing = [str(e.path) for e in entries if not e.path.is_file()]
        if missing:
            raise ValidationError("Manifest references missing files", {"missing": missing[:10], "count": len(missing)})
    logger.info(f"Loaded manifest {path} with {len(entries)} entries")
    return DatasetManifest(entries)


def build_manifest(audio_dir: Union[str, Path], split: str = "train") -> DatasetManifest:
    """Manifest of every WAV/FLAC file below ``audio_dir``, sorted by path."""
    files = sorted(p for p in Path(audio_dir).rglob("*") if p.suffix.lower() in AUDIO_SUFFIXES)
    return DatasetManifest([ManifestEntry(p, sf.info(str(p)).duration, split) for p in files])


def write_manifest(manifest: DatasetManifest, path: Union[str, Path]) -> None:
    path = Path(path)
    lines = [f"{e.path}\t{e.duration:.6f}\t{e.split}" for e in manifest.entries]
    path.write_text("\n".join(lines) + "\n")


def crop_sample(audio: AudioBuffer, cfg: TrainConfig, rng: torch.Generator) -> AudioBuffer:
    """Truncate to ``max_clip_seconds``, then take a uniform random crop.

    Clips shorter than the crop are zero-padded at the end.

    Raises:
        EmptyInputError: If the clip has no samples
    """
    samples = audio.samples
    if samples.shape[-1] == 0:
        raise EmptyInputError("cannot crop an empty clip")
    sr = audio.sample_rate
    crop = int(round(cfg.crop_seconds * sr))
    samples = samples[..., : int(round(cfg.max_clip_seconds * sr))]
    length = samples.shape[-1]

    if length > crop:
        start = int(torch.randint(length - crop + 1, (1,), generator=rng))
        samples = samples[..., start:start + crop]
    elif length < crop:
        logger.warning(f"Clip of {length} samples padded to crop length {crop}")
        samples = F.pad(samples, (0, crop - length))
    return AudioBuffer(samples=samples, sample_rate=sr)


class ClipSource(Protocol):
    sample_rate: int

    def __len__(self) -> int: ...

    def load(self, index: int) -> AudioBuffer: ...


class ManifestClips:
    """Clips read from disk, truncated to the maximum clip length and cached."""

    def __init__(self, manifest: DatasetManifest, sample_rate: int, max_clip_seconds: float, cache: bool = True):
        if len(manifest) == 0:
            raise EmptyInputError("manifest has no entries")
        self.manifest = manifest
        self.sample_rate = sample_rate
        self.max_samples = int(round(max_clip_seconds * sample_rate))
        self._cache: Optional[Dict[int, AudioBuffer]] = {} if cache else None

    def __len__(self) -> int:
        return len(self.manifest)

    def load(self, index: int) -> AudioBuffer:
        if self._cache is not None and index in self._cache:
            return self._cache[index]
        audio = load_audio(self.manifest.entries[index].path, self.sample_rate)
        audio = AudioBuffer(audio.samples[: self.max_samples], self.sample_rate)
        if self._cache is not None:
            self._cache[index] = audio
        return audio


class TensorClips:
    """In-memory clips, mainly for tests and synthetic corpora."""

    def __init__(self, clips: Sequence[torch.Tensor], sample_rate: int):
        if len(clips) == 0:
            raise EmptyInputError("no clips given")
        self.clips = list(clips)
        self.sample_rate = sample_rate

    def __len__(self) -> int:
        return len(self.clips)

    def load(self, index: int) -> AudioBuffer:
        return AudioBuffer(self.clips[index], self.sample_rate)


class StepBatchDataset(Dataset):
    """Item ``step`` is the ``(batch_size, crop)`` batch for that training step.

    Clip choice and crop offsets depend only on ``(seed, step)``, so a resumed
    run sees the same batches as an uninterrupted one.
    """

    def __init__(self, clips: ClipSource, cfg: TrainConfig, seed: Optional[int] = None, stream: int = 0):
        self.clips = clips
        self.cfg = cfg
        self.seed = cfg.seed if seed is None else seed
        self.stream = stream

    def __len__(self) -> int:
        return self.cfg.total_steps

    def __getitem__(self, step: int) -> torch.Tensor:
        rng = seeded(self.seed, self.stream, step)
        n = len(self.clips)
        if n >= self.cfg.batch_size:
            picks = torch.randperm(n, generator=rng)[: self.cfg.batch_size]
        else:
            picks = torch.randint(n, (self.cfg.batch_size,), generator=rng)
        return torch.stack([
            crop_sample(self.clips.load(int(i)), self.cfg, rng).samples for i in picks
        ])


def batch_loader(dataset: StepBatchDataset, start_step: int = 0, end_step: Optional[int] = None) -> DataLoader:
    """Loader over steps ``[start_step, end_step)``; each item is one whole batch."""
    end_step = dataset.cfg.total_steps if end_step is None else end_step
    return DataLoader(
        dataset,
        batch_size=None,
        sampler=range(start_step, end_step),
        num_workers=dataset.cfg.num_workers,
    )
