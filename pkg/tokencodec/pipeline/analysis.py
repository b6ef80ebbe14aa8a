"""Codebook usage statistics, mel-distance evaluation and the ablation grid."""
import csv
import itertools
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Iterable, List, Literal, Optional, Sequence, Tuple, Union

import numpy as np
import torch
from pydantic import Field

from ..codec.dsp import AudioBuffer, load_audio
from ..codec.losses import mel_loss
from ..codec.model import CodecModel
from ..codec.vq import Codebook, utilization_rate
from ..core.config import CodecConfig, ConfigModel, MelConfig, SpectralConfig, with_overrides
from ..core.exceptions import AnalysisError
from ..core.logging import get_logger, log_execution_time
from .data import AUDIO_SUFFIXES, ClipSource, DatasetManifest

logger = get_logger(__name__)

DISTRIBUTION_FIELDS = ("index", "count", "probability")
MEL_EVAL_FIELDS = ("file", "mel_distance")
ABLATION_FIELDS = (
    "cell", "codebook_size", "context_window", "decoder", "discriminators", "frame_rate", "steps",
    "utilization", "mel_distance", "utmos", "status", "error",
)


def entropy_bits(histogram: np.ndarray) -> float:
    """Shannon entropy of the normalized histogram, in bits."""
    counts = np.asarray(histogram, dtype=np.float64)
    total = counts.sum()
    if total <= 0:
        return 0.0
    probs = counts[counts > 0] / total
    return float(max(0.0, -np.sum(probs * np.log2(probs))))


@dataclass
class UtilizationReport:
    histogram: np.ndarray
    tag: str = ""

    @classmethod
    def from_indices(cls, indices: Iterable[np.ndarray], codebook_size: int, tag: str = "") -> "UtilizationReport":
        histogram = np.zeros(codebook_size, dtype=np.int64)
        for chunk in indices:
            histogram += np.bincount(np.asarray(chunk).reshape(-1), minlength=codebook_size)[:codebook_size]
        return cls(histogram=histogram, tag=tag)

    @property
    def codebook_size(self) -> int:
        return int(self.histogram.shape[0])

    @property
    def total_frames(self) -> int:
        return int(self.histogram.sum())

    @property
    def probabilities(self) -> np.ndarray:
        total = self.total_frames
        return self.histogram / total if total else np.zeros(self.codebook_size)

    @property
    def utilization(self) -> float:
        return utilization_rate(torch.from_numpy(self.histogram))

    @property
    def entropy_bits(self) -> float:
        return entropy_bits(self.histogram)

    @property
    def perplexity(self) -> float:
        return float(2.0 ** self.entropy_bits)

    def summary(self) -> Dict[str, Any]:
        return {
            "tag": self.tag,
            "codebook_size": self.codebook_size,
            "total_frames": self.total_frames,
            "utilization": self.utilization,
            "entropy_bits": self.entropy_bits,
            "perplexity": self.perplexity,
        }

    def write_csv(self, path: Union[str, Path]) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        probs = self.probabilities
        with open(path, "w", newline="") as f:
            writer = csv.DictWriter(f, fieldnames=DISTRIBUTION_FIELDS, lineterminator="\n")
            writer.writeheader()
            for index, (count, p) in enumerate(zip(self.histogram, probs)):
                writer.writerow({"index": index, "count": int(count), "probability": repr(float(p))})
        return path


def encode_histogram(model: CodecModel, clips: Iterable[AudioBuffer], tag: str = "") -> UtilizationReport:
    """Count code indices over every clip.

    Raises:
        AnalysisError: If no clip yields a frame
    """
    model.eval()
    device = next(model.parameters()).device
    indices = [
        model.encode_indices(clip.samples.to(device)).cpu().numpy()
        for clip in clips
    ]
    report = UtilizationReport.from_indices(indices, model.codebook_size, tag=tag)
    if report.total_frames == 0:
        raise AnalysisError("corpus produced no frames", {"tag": tag})
    return report


@log_execution_time()
def index_distribution(
    model: CodecModel,
    manifest: DatasetManifest,
    out_csv: Optional[Union[str, Path]] = None,
    tag: str = "",
) -> UtilizationReport:
    """Encode every manifest file and report the code-index distribution.

    Args:
        model: Trained codec
        manifest: Corpus to encode
        out_csv: Optional ``index,count,probability`` output sorted by index
        tag: Dataset label carried by the report

    Raises:
        AnalysisError: If the manifest is empty
    """
    if len(manifest) == 0:
        raise AnalysisError("cannot analyze an empty corpus", {"tag": tag})
    clips = (load_audio(entry.path, model.sample_rate) for entry in manifest.entries)
    report = encode_histogram(model, clips, tag=tag)
    if out_csv is not None:
        report.write_csv(out_csv)
    logger.bind(tag=tag).info(
        f"{report.total_frames} frames: utilization {report.utilization:.4f}, "
        f"entropy {report.entropy_bits:.3f} bits, perplexity {report.perplexity:.1f}"
    )
    return report


def export_codebook_csv(codebook: Codebook, path: Union[str, Path]) -> Path:
    """Dump ``index,count,probability,age,v0..v{D-1}`` for every code."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    counts = codebook.usage_count.cpu().numpy()
    total = counts.sum()
    probs = counts / total if total else np.zeros_like(counts, dtype=np.float64)
    ages = codebook.usage_age.cpu().numpy()
    vectors = codebook.vectors.detach().cpu().numpy()
    fieldnames = ["index", "count", "probability", "age"] + [f"v{d}" for d in range(codebook.dim)]
    with open(path, "w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(fieldnames)
        for i in range(codebook.size):
            writer.writerow([i, int(counts[i]), repr(float(probs[i])), int(ages[i]), *(repr(float(v)) for v in vectors[i])])
    logger.info(f"Exported {codebook.size} codes to {path}")
    return path


@dataclass
class MelEvalReport:
    distances: Dict[str, float]
    unpaired: List[str] = field(default_factory=list)

    @property
    def mean(self) -> float:
        return float(np.mean(list(self.distances.values())))

    @property
    def std(self) -> float:
        return float(np.std(list(self.distances.values())))


def _audio_files(directory: Path) -> Dict[str, Path]:
    return {
        p.name: p for p in sorted(Path(directory).iterdir())
        if p.is_file() and p.suffix.lower() in AUDIO_SUFFIXES
    }


@log_execution_time()
def mel_distance_eval(
    ref_dir: Union[str, Path],
    deg_dir: Union[str, Path],
    out_csv: Optional[Union[str, Path]] = None,
    spectral: Optional[SpectralConfig] = None,
    mel: Optional[MelConfig] = None,
    sample_rate: int = 24000,
) -> MelEvalReport:
    """Mel L1 distance for files present in both directories under the same name.

    Pairs are trimmed to their shorter length. The CSV ends with ``mean`` and
    ``std`` rows.

    Raises:
        AnalysisError: If no file pairs up
    """
    spectral = spectral or CodecConfig().mel_spectral
    mel = mel or MelConfig()
    refs, degs = _audio_files(Path(ref_dir)), _audio_files(Path(deg_dir))
    unpaired = sorted(set(refs) ^ set(degs))
    for name in unpaired:
        logger.warning(f"Skipping unpaired file {name}")

    distances: Dict[str, float] = {}
    with torch.no_grad():
        for name in sorted(set(refs) & set(degs)):
            ref = load_audio(refs[name], sample_rate).samples
            deg = load_audio(degs[name], sample_rate).samples
            n = min(ref.shape[-1], deg.shape[-1])
            distances[name] = float(mel_loss(ref[:n], deg[:n], spectral, mel, sample_rate))
    if not distances:
        raise AnalysisError("no paired files to evaluate", {"unpaired": unpaired})

    report = MelEvalReport(distances=distances, unpaired=unpaired)
    if out_csv is not None:
        out_csv = Path(out_csv)
        out_csv.parent.mkdir(parents=True, exist_ok=True)
        with open(out_csv, "w", newline="") as f:
            writer = csv.DictWriter(f, fieldnames=MEL_EVAL_FIELDS, lineterminator="\n")
            writer.writeheader()
            for name, value in distances.items():
                writer.writerow({"file": name, "mel_distance": repr(value)})
            writer.writerow({"file": "mean", "mel_distance": repr(report.mean)})
            writer.writerow({"file": "std", "mel_distance": repr(report.std)})
    logger.info(f"Mel distance over {len(distances)} pairs: {report.mean:.4f} ± {report.std:.4f}")
    return report


DecoderVariant = Literal["istft", "mirror", "no_attention"]
DiscriminatorSet = Literal["full", "no_msstftd"]


class AblationGrid(ConfigModel):
    """Axes of the ablation table; the grid is their Cartesian product."""

    codebook_sizes: Tuple[int, ...] = Field((1024, 4096), min_length=1)
    context_windows: Tuple[float, ...] = Field((1.0, 3.0, 5.0), min_length=1)
    decoders: Tuple[DecoderVariant, ...] = Field(("istft",), min_length=1)
    discriminator_sets: Tuple[DiscriminatorSet, ...] = Field(("full",), min_length=1)
    encoder_strides: Optional[Tuple[int, ...]] = Field(None, description="Shared by every cell; the decoder hop follows their product")

    def cells(self) -> List[Tuple[int, float, str, str]]:
        return list(itertools.product(
            self.codebook_sizes, self.context_windows, self.decoders, self.discriminator_sets
        ))


def cell_config(
    base: CodecConfig,
    codebook_size: int,
    context_window: float,
    decoder: str,
    discriminators: str,
    encoder_strides: Optional[Tuple[int, ...]] = None,
) -> CodecConfig:
    """Apply one grid cell to ``base``.

    New encoder strides move the decoder hop to their product, and the
    decoder n_fft to four hops.
    """
    overrides: Dict[str, Any] = {
        "vq": {"codebook_size": codebook_size, "init_buffer_frames": None},
        "train": {
            "crop_seconds": context_window,
            "max_clip_seconds": max(base.train.max_clip_seconds, context_window),
        },
    }
    if decoder == "mirror":
        overrides["decoder"] = {"variant": "mirror"}
    elif decoder == "no_attention":
        overrides["decoder"] = {"use_attention": False}
    if encoder_strides is not None:
        overrides["encoder"] = {"strides": tuple(encoder_strides), "blocks": len(encoder_strides)}
        overrides.setdefault("decoder", {})["hop"] = math.prod(encoder_strides)
    if discriminators == "no_msstftd":
        overrides["discriminators"] = {"stft_scales": ()}
    return with_overrides(base, overrides)


def reconstruction_distance(model: CodecModel, clips: ClipSource) -> float:
    """Mean mel distance between clips and their reconstructions."""
    cfg = model.cfg
    device = next(model.parameters()).device
    model.eval()
    distances = []
    with torch.no_grad():
        for i in range(len(clips)):
            audio = clips.load(i).samples.to(device)
            fake, _ = model(audio.unsqueeze(0))
            real = audio[: fake.shape[-1]].unsqueeze(0)
            distances.append(float(mel_loss(real, fake, cfg.mel_spectral, cfg.mel, cfg.sample_rate)))
    return float(np.mean(distances))


@log_execution_time()
def _run_cell(cfg: CodecConfig, clips: ClipSource, eval_clips: ClipSource, steps: int, device: Optional[str]) -> Dict[str, float]:
    from .training import Trainer

    trainer = Trainer(cfg, clips, device=device)
    trainer.fit(steps=steps)
    model = trainer.model
    report = encode_histogram(model, (eval_clips.load(i) for i in range(len(eval_clips))))
    return {
        "utilization": report.utilization,
        "mel_distance": reconstruction_distance(model, eval_clips),
    }


def _soft_check_utilization(rows: Sequence[Dict[str, Any]]) -> None:
    """Warn when a smaller codebook is used less than a larger one in the same setting."""
    groups: Dict[Tuple, List[Dict[str, Any]]] = {}
    for row in rows:
        if row["status"] == "ok":
            key = (row["context_window"], row["decoder"], row["discriminators"])
            groups.setdefault(key, []).append(row)
    for key, group in groups.items():
        group = sorted(group, key=lambda r: r["codebook_size"])
        for small, large in zip(group, group[1:]):
            if small["utilization"] < large["utilization"]:
                logger.warning(
                    f"Utilization of V={small['codebook_size']} ({small['utilization']:.4f}) is below "
                    f"V={large['codebook_size']} ({large['utilization']:.4f}) for {key}"
                )


def ablation_grid(
    base: CodecConfig,
    grid: AblationGrid,
    clips: ClipSource,
    eval_clips: Optional[ClipSource] = None,
    steps: int = 100,
    out_csv: Optional[Union[str, Path]] = None,
    device: Optional[str] = None,
) -> List[Dict[str, Any]]:
    """Train and measure one toy model per grid cell.

    A failing cell is recorded with ``status=failed`` and its error; the grid
    continues. The ``utmos`` column is left empty for external scores.
    """
    eval_clips = eval_clips or clips
    rows: List[Dict[str, Any]] = []
    writer = None
    f = None
    if out_csv is not None:
        out_csv = Path(out_csv)
        out_csv.parent.mkdir(parents=True, exist_ok=True)
        f = open(out_csv, "w", newline="")
        writer = csv.DictWriter(f, fieldnames=ABLATION_FIELDS, lineterminator="\n")
        writer.writeheader()

    try:
        for n, (codebook_size, context_window, decoder, discriminators) in enumerate(grid.cells()):
            row: Dict[str, Any] = {
                "cell": n,
                "codebook_size": codebook_size,
                "context_window": context_window,
                "decoder": decoder,
                "discriminators": discriminators,
                "frame_rate": None,
                "steps": steps,
                "utilization": None,
                "mel_distance": None,
                "utmos": None,
                "status": "ok",
                "error": "",
            }
            log = logger.bind(cell=n, V=codebook_size, window=context_window, decoder=decoder, critics=discriminators)
            try:
                cfg = cell_config(base, codebook_size, context_window, decoder, discriminators, grid.encoder_strides)
                row["frame_rate"] = cfg.frame_rate
                row.update(_run_cell(cfg, clips, eval_clips, steps, device))
                log.info(f"utilization={row['utilization']:.4f} mel={row['mel_distance']:.4f}")
            except Exception as e:
                row["status"] = "failed"
                row["error"] = f"{type(e).__name__}: {e}"
                log.error(f"Cell failed: {row['error']}")
            rows.append(row)
            if writer is not None:
                writer.writerow({k: ("" if v is None else v) for k, v in row.items()})
                f.flush()
    finally:
        if f is not None:
            f.close()

    _soft_check_utilization(rows)
    return rows
