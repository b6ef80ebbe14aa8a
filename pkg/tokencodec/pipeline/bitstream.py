"""Token file format and the file-level encode/decode path.

File layout, little-endian:

    offset  size  field
    0       4     magic b"WVTK"
    4       1     format version (1)
    5       4     sample rate, Hz
    9       2     hop (encoder total stride)
    11      4     codebook size V
    15      8     frame count N
    23      2N    indices, u16 each
"""
import math
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Union

import numpy as np
import torch

from ..codec.dsp import AudioBuffer, load_audio, save_audio
from ..codec.model import CodecModel
from ..core.exceptions import (
    BadMagicError,
    CompatibilityError,
    EmptyInputError,
    IndexOutOfRangeError,
    TruncatedPayloadError,
    UnsupportedVersionError,
    ValidationError,
)
from ..core.logging import get_logger
from ..core.monitoring import PerformanceMonitor

logger = get_logger(__name__)

MAGIC = b"WVTK"
VERSION = 1
HEADER = struct.Struct("<4sBIHIQ")
MAX_CODEBOOK = 2 ** 16


def token_rate(sample_rate: int, total_stride: int) -> float:
    """Tokens per second; non-divisible pairs give a fractional rate."""
    if sample_rate <= 0 or total_stride <= 0:
        raise ValidationError("sample rate and stride must be positive", {"sample_rate": sample_rate, "stride": total_stride})
    return sample_rate / total_stride


def bitrate(rate: float, codebook_size: int) -> float:
    """Bandwidth in kbps for ``rate`` tokens/s drawn from ``codebook_size`` codes."""
    if codebook_size < 2:
        raise ValidationError("codebook size must be at least 2", {"codebook_size": codebook_size})
    return rate * math.log2(codebook_size) / 1000


@dataclass
class TokenStream:
    sample_rate: int
    hop: int
    codebook_size: int
    indices: np.ndarray
    version: int = VERSION

    def __post_init__(self):
        self.indices = np.ascontiguousarray(np.asarray(self.indices).reshape(-1), dtype=np.int64)
        if not 2 <= self.codebook_size <= MAX_CODEBOOK:
            raise ValidationError(
                "codebook size must lie in [2, 65536] for u16 payloads",
                {"codebook_size": self.codebook_size}
            )
        if self.sample_rate <= 0 or not 0 < self.hop < 2 ** 16:
            raise ValidationError("invalid sample rate or hop", {"sample_rate": self.sample_rate, "hop": self.hop})
        _check_indices(self.indices, self.codebook_size)

    @property
    def num_frames(self) -> int:
        return int(self.indices.shape[0])

    @property
    def token_rate(self) -> float:
        return token_rate(self.sample_rate, self.hop)

    @property
    def duration_seconds(self) -> float:
        return self.num_frames * self.hop / self.sample_rate

    @property
    def bitrate_kbps(self) -> float:
        return bitrate(self.token_rate, self.codebook_size)

    @property
    def byte_size(self) -> int:
        return HEADER.size + 2 * self.num_frames


def _check_indices(indices: np.ndarray, codebook_size: int) -> None:
    if indices.size == 0:
        return
    bad = np.flatnonzero((indices < 0) | (indices >= codebook_size))
    if bad.size:
        raise IndexOutOfRangeError(
            f"token index {int(indices[bad[0]])} at frame {int(bad[0])} is outside [0, {codebook_size})",
            {"frame": int(bad[0]), "index": int(indices[bad[0]]), "codebook_size": codebook_size, "count": int(bad.size)}
        )


def pack(stream: TokenStream) -> bytes:
    header = HEADER.pack(MAGIC, VERSION, stream.sample_rate, stream.hop, stream.codebook_size, stream.num_frames)
    return header + stream.indices.astype("<u2").tobytes()


def unpack(data: bytes) -> TokenStream:
    """Parse and validate a serialized stream.

    Raises:
        TruncatedPayloadError: If the header or payload is short, or bytes trail it
        BadMagicError: If the magic does not match
        UnsupportedVersionError: If the version is unknown
        IndexOutOfRangeError: If any index is >= V
    """
    if not data.startswith(MAGIC) and not MAGIC.startswith(data):
        raise BadMagicError("not a token file", {"magic": data[:4].hex()})
    if len(data) < HEADER.size:
        raise TruncatedPayloadError("header is truncated", {"bytes": len(data), "header": HEADER.size})
    _, version, sample_rate, hop, codebook_size, frames = HEADER.unpack_from(data)
    if version != VERSION:
        raise UnsupportedVersionError(f"token format version {version} is not supported", {"found": version, "supported": VERSION})

    expected = HEADER.size + 2 * frames
    if len(data) < expected:
        raise TruncatedPayloadError(
            f"payload holds {(len(data) - HEADER.size) // 2} of {frames} frames",
            {"bytes": len(data), "expected": expected}
        )
    if len(data) > expected:
        raise TruncatedPayloadError("trailing bytes after payload", {"bytes": len(data), "expected": expected})

    indices = np.frombuffer(data, dtype="<u2", count=frames, offset=HEADER.size).astype(np.int64)
    _check_indices(indices, codebook_size)
    return TokenStream(sample_rate=sample_rate, hop=hop, codebook_size=codebook_size, indices=indices, version=version)


def write_tokens(stream: TokenStream, path: Union[str, Path]) -> Path:
    _check_indices(stream.indices, stream.codebook_size)
    path = Path(path)
    path.write_bytes(pack(stream))
    return path


def read_tokens(path: Union[str, Path]) -> TokenStream:
    return unpack(Path(path).read_bytes())


def check_compatible(stream: TokenStream, model: CodecModel) -> None:
    """Raise CompatibilityError if the stream was not produced by a model like ``model``."""
    mismatches = {
        name: {"stream": theirs, "model": ours}
        for name, theirs, ours in (
            ("sample_rate", stream.sample_rate, model.sample_rate),
            ("hop", stream.hop, model.hop),
            ("codebook_size", stream.codebook_size, model.codebook_size),
        )
        if theirs != ours
    }
    if mismatches:
        raise CompatibilityError("token stream does not match the model", mismatches)


def encode_audio(audio: AudioBuffer, model: CodecModel) -> TokenStream:
    if audio.length == 0:
        raise EmptyInputError("cannot encode empty audio")
    if audio.sample_rate != model.sample_rate:
        raise CompatibilityError(
            "audio sample rate differs from the model",
            {"audio": audio.sample_rate, "model": model.sample_rate}
        )
    device = next(model.parameters()).device
    indices = model.encode_indices(audio.samples.to(device))
    return TokenStream(model.sample_rate, model.hop, model.codebook_size, indices.cpu().numpy())


def decode_stream(stream: TokenStream, model: CodecModel) -> AudioBuffer:
    check_compatible(stream, model)
    device = next(model.parameters()).device
    samples = model.decode_indices(torch.from_numpy(stream.indices).to(device))
    return AudioBuffer(samples.cpu(), stream.sample_rate)


def encode_file(
    audio_path: Union[str, Path],
    model: CodecModel,
    monitor: Optional[PerformanceMonitor] = None,
) -> TokenStream:
    """Read a WAV file, resampled to the model rate, and encode it in one pass."""
    audio = load_audio(audio_path, model.sample_rate)
    monitor = monitor or PerformanceMonitor()
    with monitor.real_time_factor("encode", audio.duration_seconds):
        stream = encode_audio(audio, model)
    logger.info(
        f"Encoded {audio_path}: {stream.num_frames} tokens at {stream.token_rate:g} tok/s "
        f"({stream.bitrate_kbps:g} kbps)"
    )
    return stream


def decode_file(
    stream: TokenStream,
    model: CodecModel,
    out_path: Union[str, Path],
    monitor: Optional[PerformanceMonitor] = None,
) -> Path:
    """Decode a stream to a 16-bit WAV of ``num_frames * hop`` samples."""
    monitor = monitor or PerformanceMonitor()
    with monitor.real_time_factor("decode", stream.duration_seconds):
        audio = decode_stream(stream, model)
    out_path = Path(out_path)
    save_audio(out_path, audio)
    logger.info(f"Decoded {stream.num_frames} tokens to {out_path}")
    return out_path
