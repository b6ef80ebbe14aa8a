"""Generator and discriminator objectives."""
from dataclasses import dataclass, field
from typing import Dict, Literal, Optional, Sequence, Union

import torch
import torch.nn.functional as F

from ..core.config import LossWeights, MelConfig, SpectralConfig
from ..core.exceptions import ShapeError, TrainingFaultError
from .dsp import mel_spectrogram

Scalar = Union[torch.Tensor, float]


@dataclass
class LossReport:
    """Per-term values and total for one side of a training step."""

    side: Literal["generator", "discriminator"]
    terms: Dict[str, float] = field(default_factory=dict)
    total: float = 0.0

    def as_row(self, step: int, lr: float, utilization: Optional[float] = None) -> Dict[str, object]:
        return {
            "step": step,
            "side": self.side,
            "lr": lr,
            **self.terms,
            "total": self.total,
            "utilization": utilization,
        }


def _check_arity(real: Sequence, fake: Sequence, what: str) -> None:
    if len(real) != len(fake):
        raise ShapeError(f"{what} lists are not aligned", {"real": len(real), "fake": len(fake)})
    if len(real) == 0:
        raise ShapeError(f"{what} lists are empty")


def disc_loss(real_logits: Sequence[torch.Tensor], fake_logits: Sequence[torch.Tensor]) -> torch.Tensor:
    """Hinge loss averaged over critics; each map is element-hinged then mean-reduced.

    Raises:
        ShapeError: If the lists differ in length or are empty
    """
    _check_arity(real_logits, fake_logits, "logit")
    total = sum(
        torch.mean(F.relu(1.0 - real)) + torch.mean(F.relu(1.0 + fake))
        for real, fake in zip(real_logits, fake_logits)
    )
    return total / len(real_logits)


def adv_loss(fake_logits: Sequence[torch.Tensor]) -> torch.Tensor:
    """Generator hinge loss averaged over critics."""
    if len(fake_logits) == 0:
        raise ShapeError("logit list is empty")
    return sum(torch.mean(F.relu(1.0 - fake)) for fake in fake_logits) / len(fake_logits)


def feat_match_loss(real_feats: Sequence[Sequence[torch.Tensor]], fake_feats: Sequence[Sequence[torch.Tensor]]) -> torch.Tensor:
    """Mean L1 distance between aligned feature maps, averaged over all K x L maps.

    Real features are treated as constants.

    Raises:
        ShapeError: If critics or layers are misaligned
    """
    _check_arity(real_feats, fake_feats, "feature")
    total: Scalar = 0.0
    count = 0
    for real_layers, fake_layers in zip(real_feats, fake_feats):
        _check_arity(real_layers, fake_layers, "feature layer")
        for real, fake in zip(real_layers, fake_layers):
            total = total + F.l1_loss(fake, real.detach())
            count += 1
    return total / count


def quantizer_loss(z: torch.Tensor, z_hat: torch.Tensor, reduction: Literal["sum", "mean"] = "sum") -> torch.Tensor:
    """Commitment loss: squared L2 between latents and their (constant) codes.

    ``sum`` adds over every frame; ``mean`` divides by the frame count.

    Raises:
        ShapeError: If shapes differ
    """
    if z.shape != z_hat.shape:
        raise ShapeError("latent and quantized shapes differ", {"z": list(z.shape), "z_hat": list(z_hat.shape)})
    per_frame = (z - z_hat.detach()).pow(2).sum(dim=-1)
    return per_frame.sum() if reduction == "sum" else per_frame.mean()


def mel_loss(
    x: torch.Tensor,
    x_tilde: torch.Tensor,
    spectral: SpectralConfig,
    mel: MelConfig,
    sample_rate: int,
) -> torch.Tensor:
    """Mean absolute difference of log-mel spectrograms.

    Raises:
        ShapeError: If the waveforms differ in length
    """
    if x.shape[-1] != x_tilde.shape[-1]:
        raise ShapeError("waveform lengths differ", {"x": x.shape[-1], "x_tilde": x_tilde.shape[-1]})
    reference = mel_spectrogram(x, spectral, mel, sample_rate=sample_rate)
    estimate = mel_spectrogram(x_tilde, spectral, mel, sample_rate=sample_rate)
    return F.l1_loss(estimate, reference)


def generator_total(terms: Dict[str, Scalar], w: LossWeights) -> torch.Tensor:
    """Weighted sum of the quantizer, mel, adversarial and feature-matching terms.

    Args:
        terms: Values keyed ``quantizer``, ``mel``, ``adv`` and ``feat``
        w: Weights

    Raises:
        TrainingFaultError: If any term is NaN or infinite
    """
    bad = {k: float(v) for k, v in terms.items() if not torch.isfinite(torch.as_tensor(v)).all()}
    if bad:
        raise TrainingFaultError("non-finite generator loss term", {"terms": bad})
    weights = {
        "quantizer": w.lambda_q,
        "mel": w.lambda_mel,
        "adv": w.lambda_adv,
        "feat": w.lambda_feat,
    }
    return sum(weights[name] * torch.as_tensor(terms[name]) for name in weights)


def detach_terms(terms: Dict[str, Scalar]) -> Dict[str, float]:
    return {k: float(v.detach()) if isinstance(v, torch.Tensor) else float(v) for k, v in terms.items()}
