"""
The bitstream format
====================

Transmitted files are a 19-byte header plus 9-bit code indices packed
MSB-first. This script packs a toy stream, dumps the bytes, and shows the
bitrate arithmetic for the standard operating points.
"""

import numpy as np

from enhancodec.bitstream import BitstreamHeader, bitrate, pack, payload_bits, unpack
from enhancodec.quantizer import QuantizerConfig

header = BitstreamHeader(
    sample_rate=16000,
    latent_rate=50,
    num_speech_codebooks=2,
    speaker_index=17,
    frame_count=0,  # set by pack()
)

# Two frames, two codebooks per frame. 511 is the largest 9-bit index.
indices = np.array([[5, 300], [511, 1]], dtype=np.int64)
stream = pack(indices, header)

print("stream bytes:", stream.hex(" "))
print("header takes", len(stream) - 5, "bytes; payload 4 x 9 = 36 bits -> 5 bytes")

# Unpacking restores the exact indices and the header fields.
back, decoded = unpack(stream)
print("round trip ok:", np.array_equal(decoded, indices))
print("speaker index:", back.speaker_index, " frames:", back.frame_count)

# Bitrate is frames/s x codebooks x 9 bits; the two standard operating points:
for heads in (2, 3):
    rate = bitrate(QuantizerConfig(num_speech_codebooks=heads), latent_rate=50)
    print(f"{heads} codebooks at 50 Hz -> {rate} b/s")

# One second of audio costs 50 frames of payload regardless of content.
one_second_header = BitstreamHeader(
    sample_rate=16000, latent_rate=50, num_speech_codebooks=3,
    speaker_index=0, frame_count=50,
)
print("payload bits for 1 s, 3 codebooks:", payload_bits(one_second_header))
print("total file bytes:",
      len(pack(np.zeros((50, 3), dtype=np.int64), one_second_header)))
