"""Single-codebook neural audio codec: encoder, vector quantizer, iSTFT decoder and adversarial training."""

__version__ = "0.3.0"
