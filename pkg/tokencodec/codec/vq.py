"""Single large-codebook vector quantizer.

The codebook learns only through EMA statistics; gradients reach the encoder
through a straight-through estimator.
"""
from dataclasses import dataclass
from typing import Sequence, Union

import torch
import torch.nn as nn
import torch.nn.functional as F

from ..core.config import VQConfig
from ..core.exceptions import EmptyInputError, InsufficientInitDataError, ShapeError, ValidationError
from ..core.logging import get_logger, log_execution_time
from .base import seeded
from .encoder import LatentSequence

logger = get_logger(__name__)


@dataclass
class QuantizationResult:
    """Indices ``(..., T)``, quantized latents and squared distances ``(..., T)``."""

    indices: torch.Tensor
    quantized: torch.Tensor
    distances: torch.Tensor
    latents: torch.Tensor
    codes: torch.Tensor


class Codebook(nn.Module):
    """V x D code table with EMA statistics and per-code usage age."""

    def __init__(self, cfg: VQConfig):
        super().__init__()
        self.size = cfg.codebook_size
        self.dim = cfg.dim
        self.decay = cfg.ema_decay
        self.epsilon = cfg.epsilon
        self.revival_age = cfg.revival_age

        vectors = nn.init.kaiming_uniform_(torch.empty(self.size, self.dim))
        self.register_buffer("vectors", vectors)
        self.register_buffer("ema_cluster_size", torch.ones(self.size))
        self.register_buffer("ema_embed_sum", vectors.clone())
        self.register_buffer("usage_age", torch.zeros(self.size, dtype=torch.long))
        self.register_buffer("usage_count", torch.zeros(self.size, dtype=torch.long))
        self.register_buffer("initialized", torch.tensor(not cfg.kmeans_init))


def _pairwise_sq_distances(x: torch.Tensor, codes: torch.Tensor) -> torch.Tensor:
    """``(N, V)`` squared L2 distances, computed in float64 about the code mean.

    Offset latents with close codes lose the nearest code to cancellation
    in float32 expansion form.
    """
    x64, codes64 = x.double(), codes.double()
    center = codes64.mean(dim=0, keepdim=True)
    x64, codes64 = x64 - center, codes64 - center
    return (
        x64.pow(2).sum(dim=1, keepdim=True)
        - 2 * x64 @ codes64.t()
        + codes64.pow(2).sum(dim=1).unsqueeze(0)
    )


def _flatten(latents: Union[LatentSequence, torch.Tensor]) -> torch.Tensor:
    frames = latents.frames if isinstance(latents, LatentSequence) else latents
    return frames.reshape(-1, frames.shape[-1])


def _kmeans_plus_plus(samples: torch.Tensor, k: int, generator: torch.Generator) -> torch.Tensor:
    n = samples.shape[0]
    chosen = [int(torch.randint(n, (1,), generator=generator))]
    nearest = (samples - samples[chosen[0]]).pow(2).sum(dim=1)
    warned = False
    for _ in range(1, k):
        weights = nearest.double().cpu()
        if weights.sum() > 0:
            pick = int(torch.multinomial(weights, 1, generator=generator))
        else:
            if not warned:
                logger.warning(f"k-means init found fewer than {k} distinct frames; duplicating centroids")
                warned = True
            pick = int(torch.randint(n, (1,), generator=generator))
        chosen.append(pick)
        nearest = torch.minimum(nearest, (samples - samples[pick]).pow(2).sum(dim=1))
    return samples[chosen].clone()


@log_execution_time()
def kmeans_init(
    buffer: Union[LatentSequence, torch.Tensor],
    cfg: VQConfig,
    seed: int = 0,
) -> Codebook:
    """Build a codebook from k-means centroids of buffered latent frames.

    Centroids start from a seeded k-means++ draw and run ``cfg.kmeans_iters``
    Lloyd iterations. Empty clusters keep their previous centroid.

    Args:
        buffer: Frames shaped ``(..., D)``
        cfg: Quantizer settings, k = codebook_size
        seed: Seed for the initial draw

    Returns:
        Codebook: EMA statistics seeded from the final cluster populations

    Raises:
        InsufficientInitDataError: If the buffer holds fewer than V frames
        ShapeError: On a width other than cfg.dim
    """
    samples = _flatten(buffer).detach()
    if samples.shape[-1] != cfg.dim:
        raise ShapeError("latent width does not match codebook", {"got": samples.shape[-1], "expected": cfg.dim})
    if samples.shape[0] < cfg.codebook_size:
        raise InsufficientInitDataError(
            "not enough frames to initialize the codebook",
            {"frames": samples.shape[0], "codebook_size": cfg.codebook_size}
        )

    k = cfg.codebook_size
    means = _kmeans_plus_plus(samples, k, seeded(seed))

    def assign(centroids: torch.Tensor) -> torch.Tensor:
        return _pairwise_sq_distances(samples, centroids).argmin(dim=1)

    for _ in range(cfg.kmeans_iters):
        buckets = assign(means)
        counts = torch.bincount(buckets, minlength=k)
        sums = torch.zeros_like(means).index_add_(0, buckets, samples)
        updated = sums / counts.clamp(min=1).unsqueeze(1).to(samples.dtype)
        means = torch.where(counts.unsqueeze(1) == 0, means, updated)

    counts = torch.bincount(assign(means), minlength=k).to(samples.dtype)

    book = Codebook(cfg).to(device=samples.device, dtype=samples.dtype)
    book.vectors.copy_(means)
    book.ema_cluster_size.copy_(counts)
    book.ema_embed_sum.copy_(means * counts.unsqueeze(1))
    book.usage_age.zero_()
    book.usage_count.zero_()
    book.initialized.fill_(True)
    logger.info(
        f"Initialized {k} codes from {samples.shape[0]} frames "
        f"({int((counts > 0).sum())} non-empty clusters)"
    )
    return book


def quantize(latents: Union[LatentSequence, torch.Tensor], book: Codebook, straight_through: bool = False) -> QuantizationResult:
    """Nearest-code assignment with smallest-index tie-breaking.

    Args:
        latents: Frames shaped ``(..., T, D)``
        book: Codebook to search
        straight_through: Pass gradients from quantized back to latents

    Raises:
        ShapeError: On a latent width other than the codebook's
    """
    z = latents.frames if isinstance(latents, LatentSequence) else latents
    if z.shape[-1] != book.dim:
        raise ShapeError("latent width does not match codebook", {"got": z.shape[-1], "expected": book.dim})

    flat = z.detach().reshape(-1, book.dim)
    indices = _pairwise_sq_distances(flat, book.vectors).argmin(dim=1)
    codes = F.embedding(indices, book.vectors)
    distances = (flat - codes).pow(2).sum(dim=1)

    lead = z.shape[:-1]
    indices = indices.reshape(lead)
    codes = codes.reshape(z.shape)
    quantized = z + (codes - z).detach() if straight_through else codes
    return QuantizationResult(
        indices=indices,
        quantized=quantized,
        distances=distances.reshape(lead),
        latents=z,
        codes=codes,
    )


@torch.no_grad()
def ema_update(book: Codebook, latents: Union[LatentSequence, torch.Tensor], assignments: torch.Tensor) -> Codebook:
    """Decay-weighted update of cluster sizes, sums and assigned vectors.

    Codes that received no frame keep their vector and age by one batch.
    """
    flat = _flatten(latents).detach().to(book.vectors.dtype)
    idx = assignments.reshape(-1)
    gamma = book.decay

    counts = torch.bincount(idx, minlength=book.size)
    sums = torch.zeros_like(book.vectors).index_add_(0, idx, flat)

    book.ema_cluster_size.mul_(gamma).add_(counts.to(flat.dtype), alpha=1 - gamma)
    book.ema_embed_sum.mul_(gamma).add_(sums, alpha=1 - gamma)

    total = book.ema_cluster_size.sum()
    smoothed = (book.ema_cluster_size + book.epsilon) / (total + book.size * book.epsilon) * total
    assigned = counts > 0
    book.vectors[assigned] = book.ema_embed_sum[assigned] / smoothed[assigned].unsqueeze(1)

    book.usage_age.add_(1).masked_fill_(assigned, 0)
    book.usage_count.add_(counts)
    return book


@torch.no_grad()
def revive_dead(book: Codebook, batch_latents: Union[LatentSequence, torch.Tensor], rng_seed: int) -> Codebook:
    """Replace codes idle for more than ``revival_age`` batches with batch frames.

    Raises:
        EmptyInputError: If the batch holds no frames
    """
    flat = _flatten(batch_latents).detach().to(book.vectors.dtype)
    if flat.shape[0] == 0:
        raise EmptyInputError("cannot revive codes from an empty batch")

    dead = book.usage_age > book.revival_age
    n_dead = int(dead.sum())
    if n_dead == 0:
        return book

    picks = torch.randint(flat.shape[0], (n_dead,), generator=seeded(rng_seed)).to(flat.device)
    replacements = flat[picks]
    book.vectors[dead] = replacements
    book.ema_embed_sum[dead] = replacements
    book.ema_cluster_size[dead] = 1.0
    book.usage_age[dead] = 0
    logger.debug(f"Revived {n_dead} dead codes")
    return book


def utilization_rate(index_histogram: Union[torch.Tensor, Sequence[int]]) -> float:
    """Fraction of codes with a nonzero count.

    Raises:
        ValidationError: On an empty histogram or negative counts
    """
    counts = torch.as_tensor(index_histogram)
    if counts.numel() == 0:
        raise ValidationError("histogram has no codes")
    if (counts < 0).any():
        raise ValidationError("histogram counts must be nonnegative")
    return float((counts > 0).sum()) / counts.numel()


class VectorQuantizer(nn.Module):
    """Module wrapper that owns the codebook and applies training-time updates."""

    def __init__(self, cfg: VQConfig):
        super().__init__()
        self.cfg = cfg
        self.codebook = Codebook(cfg)

    @property
    def initialized(self) -> bool:
        return bool(self.codebook.initialized)

    def initialize(self, buffer: Union[LatentSequence, torch.Tensor], seed: int = 0) -> None:
        book = kmeans_init(buffer, self.cfg, seed=seed)
        self.codebook.load_state_dict(book.state_dict())

    def forward(self, latents: torch.Tensor) -> QuantizationResult:
        return quantize(latents, self.codebook, straight_through=self.training)

    @torch.no_grad()
    def update(self, result: QuantizationResult, seed: int, revive: bool = True) -> None:
        ema_update(self.codebook, result.latents, result.indices)
        if revive:
            revive_dead(self.codebook, result.latents, seed)

    def encode(self, latents: torch.Tensor) -> torch.Tensor:
        return quantize(latents, self.codebook).indices

    def codes_to_latents(self, indices: torch.Tensor) -> torch.Tensor:
        """Table lookup ``(..., T) -> (..., T, D)``.

        Raises:
            ShapeError: If an index is outside [0, V)
        """
        if indices.numel() and (int(indices.min()) < 0 or int(indices.max()) >= self.codebook.size):
            raise ShapeError("code index out of range", {"codebook_size": self.codebook.size})
        return F.embedding(indices, self.codebook.vectors)

    def utilization(self) -> float:
        return utilization_rate(self.codebook.usage_count)
