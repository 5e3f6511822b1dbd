"""
Mu-law companding and log-mel analysis
======================================

The codec transmits audio as 8-bit mu-law codes and conditions its encoders
on 80-bin log-mel frames. This script walks both transforms on a synthetic
vowel-like tone.
"""

import numpy as np

from enhancodec.dsp import (
    CODEC_SAMPLE_RATE,
    MelConfig,
    Waveform,
    log_mel,
    mulaw_decode,
    mulaw_encode,
)

# A 440 Hz tone with two harmonics, 0.5 s at the codec rate.
t = np.arange(8000) / CODEC_SAMPLE_RATE
x = 0.5 * np.sin(2 * np.pi * 440 * t) + 0.2 * np.sin(2 * np.pi * 880 * t)

# Companding maps [-1, 1] onto 256 codes, spending most of them near zero:
# quiet samples get fine resolution, loud ones get coarse.
codes = mulaw_encode(x)
print("first ten codes:", codes[:10])
print("code range:", codes.min(), "to", codes.max())
print("zero encodes to:", mulaw_encode(np.zeros(1))[0])

recovered = mulaw_decode(codes)
print(f"round-trip max error: {np.abs(recovered - x).max():.5f} (bound 0.022)")

# The error is relative: compare a quiet passage against a loud one.
quiet = 0.01 * np.sin(2 * np.pi * 440 * t)
loud = 0.99 * np.sin(2 * np.pi * 440 * t)
for name, sig in (("quiet", quiet), ("loud", loud)):
    err = np.abs(mulaw_decode(mulaw_encode(sig)) - sig).max()
    print(f"{name:>5}: max abs error {err:.6f}")

# Log-mel frames: 25 ms windows every 10 ms, 80 triangular bands.
mel = log_mel(Waveform(x, CODEC_SAMPLE_RATE), MelConfig())
print("\nmel frames:", mel.frames.shape, "(frames x bands; 100 frames per second)")
print("energy concentrates in a few bands:")
band = mel.frames.mean(axis=0)
top = np.argsort(band)[-5:][::-1]
for b in top:
    print(f"  band {b:2d}  mean log energy {band[b]:8.3f}")
