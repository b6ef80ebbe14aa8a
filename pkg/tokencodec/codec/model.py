"""Generator: encoder, single quantizer and decoder wired together."""
from typing import Tuple

import torch
import torch.nn as nn

from ..core.config import CodecConfig
from ..core.exceptions import EmptyInputError
from .base import count_parameters
from .decoder import build_decoder
from .encoder import Encoder
from .vq import QuantizationResult, VectorQuantizer


class CodecModel(nn.Module):
    def __init__(self, cfg: CodecConfig):
        super().__init__()
        self.cfg = cfg
        self.encoder = Encoder(cfg.encoder)
        self.quantizer = VectorQuantizer(cfg.vq)
        self.decoder = build_decoder(cfg.decoder, cfg.encoder)

    @property
    def hop(self) -> int:
        return self.cfg.encoder.total_stride

    @property
    def sample_rate(self) -> int:
        return self.cfg.sample_rate

    @property
    def codebook_size(self) -> int:
        return self.cfg.vq.codebook_size

    def forward(self, audio: torch.Tensor) -> Tuple[torch.Tensor, QuantizationResult]:
        """Reconstruct ``(B, L)`` audio to ``(B, (L // hop) * hop)``."""
        result = self.quantizer(self.encoder(audio))
        return self.decoder(result.quantized), result

    @torch.no_grad()
    def encode_indices(self, audio: torch.Tensor) -> torch.Tensor:
        """``(B, L)`` or ``(L,)`` samples to code indices."""
        if audio.shape[-1] == 0:
            raise EmptyInputError("cannot encode empty audio")
        unbatched = audio.dim() == 1
        indices = self.quantizer.encode(self.encoder(audio.unsqueeze(0) if unbatched else audio))
        return indices.squeeze(0) if unbatched else indices

    @torch.no_grad()
    def decode_indices(self, indices: torch.Tensor) -> torch.Tensor:
        """``(B, T)`` or ``(T,)`` code indices to ``T * hop`` samples."""
        unbatched = indices.dim() == 1
        latents = self.quantizer.codes_to_latents(indices.unsqueeze(0) if unbatched else indices)
        audio = self.decoder(latents)
        return audio.squeeze(0) if unbatched else audio

    def parameter_summary(self) -> dict:
        return {
            "encoder": count_parameters(self.encoder),
            "decoder": count_parameters(self.decoder),
            "codebook_entries": self.codebook_size,
        }
