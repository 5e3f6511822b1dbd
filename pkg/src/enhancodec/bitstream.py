"""Bit-exact compressed file format.

Layout (integers little-endian):

    magic        4 bytes  b"ENCB"
    version      u8       currently 1
    sample_rate  u32      Hz
    latent_rate  u16      Hz (50 for the standard configuration)
    num_heads    u8       speech codebooks per frame
    bits_per_code u8      always 9
    speaker_index u16     single speaker code for the whole file
    frame_count  u32

followed by the payload: one `bits_per_code`-bit index per head per frame,
packed MSB-first, head-major within a frame, frames in time order, and
zero-padded to a byte boundary at the end of the stream.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .errors import BitstreamError
from .quantizer import QuantizerConfig

MAGIC = b"ENCB"
VERSION = 1
BITS_PER_CODE = 9
_HEADER = struct.Struct("<4sBIHBBHI")


@dataclass
class BitstreamHeader:
    sample_rate: int = 16000
    latent_rate: int = 50
    num_speech_codebooks: int = 3
    bits_per_code: int = BITS_PER_CODE
    speaker_index: int = 0
    frame_count: int = 0

    def __post_init__(self):
        if self.bits_per_code != BITS_PER_CODE:
            raise BitstreamError(f"bits_per_code must be {BITS_PER_CODE}")
        if not 0 <= self.speaker_index < 2**BITS_PER_CODE:
            raise BitstreamError(f"speaker_index {self.speaker_index} out of range")


def pack(frames: np.ndarray, header: BitstreamHeader) -> bytes:
    """Serialize (frame_count, num_heads) integer code indices to bytes."""
    frames = np.asarray(frames, dtype=np.int64).reshape(-1, header.num_speech_codebooks)
    header = BitstreamHeader(header.sample_rate, header.latent_rate,
                             header.num_speech_codebooks, header.bits_per_code,
                             header.speaker_index, frames.shape[0])
    if frames.size and (frames.min() < 0 or frames.max() >= 2**BITS_PER_CODE):
        raise BitstreamError(f"code index out of range [0, {2**BITS_PER_CODE})")

    out = bytearray(_HEADER.pack(MAGIC, VERSION, header.sample_rate, header.latent_rate,
                                 header.num_speech_codebooks, header.bits_per_code,
                                 header.speaker_index, header.frame_count))
    acc = 0
    nbits = 0
    for idx in frames.reshape(-1):
        acc = (acc << BITS_PER_CODE) | int(idx)
        nbits += BITS_PER_CODE
        while nbits >= 8:
            nbits -= 8
            out.append((acc >> nbits) & 0xFF)
    if nbits:
        out.append((acc << (8 - nbits)) & 0xFF)
    return bytes(out)


def unpack(data: bytes) -> tuple[BitstreamHeader, np.ndarray]:
    """Inverse of :func:`pack`: bytes -> (header, (frame_count, num_heads) indices)."""
    if len(data) < _HEADER.size:
        raise BitstreamError("stream shorter than the header")
    magic, version, rate, latent, heads, bits, speaker, count = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise BitstreamError(f"bad magic {magic!r}, expected {MAGIC!r}")
    if version != VERSION:
        raise BitstreamError(f"unsupported version {version}, expected {VERSION}")
    if bits != BITS_PER_CODE:
        raise BitstreamError(f"unsupported bits_per_code {bits}")
    header = BitstreamHeader(rate, latent, heads, bits, speaker, count)

    total = count * heads
    need = -(-total * BITS_PER_CODE // 8)
    payload = data[_HEADER.size :]
    if len(payload) < need:
        raise BitstreamError(
            f"truncated payload: need {need} bytes for {total} codes, have {len(payload)}"
        )
    indices = np.empty(total, dtype=np.int64)
    acc = 0
    nbits = 0
    pos = 0
    for i in range(total):
        while nbits < BITS_PER_CODE:
            acc = (acc << 8) | payload[pos]
            pos += 1
            nbits += 8
        nbits -= BITS_PER_CODE
        indices[i] = (acc >> nbits) & (2**BITS_PER_CODE - 1)
        acc &= (1 << nbits) - 1
    return header, indices.reshape(count, heads)


def bitrate(cfg: QuantizerConfig, latent_rate: int = 50) -> float:
    """Payload bits per second: heads x 9 bits x latent rate.

    The single speaker code is sent once per file and amortizes to ~0 over
    the utterance; it is not part of this figure.
    """
    return cfg.num_speech_codebooks * BITS_PER_CODE * latent_rate


def payload_bits(header: BitstreamHeader) -> int:
    """Exact payload size in bits, before byte padding."""
    return header.frame_count * header.num_speech_codebooks * BITS_PER_CODE
