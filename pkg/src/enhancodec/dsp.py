"""Deterministic signal-processing primitives.

Mu-law companding, log-mel analysis, and PCM16 WAV file I/O. Everything in
this module is a pure function: identical inputs give bit-identical outputs.
"""

from __future__ import annotations

import struct
import wave
from dataclasses import dataclass

import numpy as np

from .errors import WavFormatError

CODEC_SAMPLE_RATE = 16000

_MU = 255.0
_LOG_MU1 = np.log(256.0)


@dataclass
class Waveform:
    """Mono audio: float samples in [-1, 1] plus a sample rate in Hz.

    Samples are clamped to [-1, 1] on construction.
    """

    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        if self.sample_rate <= 0:
            raise ValueError(f"sample_rate must be positive, got {self.sample_rate}")
        s = np.asarray(self.samples, dtype=np.float64)
        if s.ndim != 1:
            raise ValueError(f"expected mono 1-D samples, got shape {s.shape}")
        self.samples = np.clip(s, -1.0, 1.0)

    @property
    def duration(self) -> float:
        return len(self.samples) / self.sample_rate

    def __len__(self) -> int:
        return len(self.samples)


@dataclass
class MelConfig:
    """Analysis parameters for :func:`log_mel`.

    The defaults give an 80-bin log-mel at a 100 Hz frame rate on 16 kHz
    input (hop 10 ms). The window length is configurable; 25 ms is the
    default operating point.
    """

    sample_rate: int = CODEC_SAMPLE_RATE
    num_bins: int = 80
    hop_seconds: float = 0.010
    window_seconds: float = 0.025
    fmin: float = 0.0
    fmax: float = 8000.0
    power_floor: float = 1e-10

    @property
    def hop_samples(self) -> int:
        return int(round(self.hop_seconds * self.sample_rate))

    @property
    def window_samples(self) -> int:
        return int(round(self.window_seconds * self.sample_rate))


@dataclass
class LogMelSpectrogram:
    """T x num_bins matrix of log mel-band powers."""

    frames: np.ndarray
    hop: float
    window: float

    @property
    def num_frames(self) -> int:
        return self.frames.shape[0]


def num_frames(num_samples: int, cfg: MelConfig) -> int:
    """Frame count of :func:`log_mel` for an input of `num_samples` samples."""
    return num_samples // cfg.hop_samples


def mulaw_encode(w) -> np.ndarray:
    """Compand amplitudes in [-1, 1] to 8-bit mu-law codes in [0, 255].

    code = round_half_up(((sign(x) * ln(1 + 255|x|) / ln 256) + 1) / 2 * 255)
    """
    x = w.samples if isinstance(w, Waveform) else np.asarray(w, dtype=np.float64)
    x = np.clip(x, -1.0, 1.0)
    f = np.sign(x) * np.log1p(_MU * np.abs(x)) / _LOG_MU1
    codes = np.floor((f + 1.0) / 2.0 * 255.0 + 0.5)
    return np.clip(codes, 0, 255).astype(np.int64)


def mulaw_decode(codes) -> np.ndarray:
    """Expand mu-law codes in [0, 255] back to amplitudes in [-1, 1]."""
    c = np.asarray(codes)
    if c.size and (c.min() < 0 or c.max() > 255):
        raise ValueError("mu-law codes must lie in [0, 255]")
    f = 2.0 * c.astype(np.float64) / 255.0 - 1.0
    y = np.sign(f) * (np.power(256.0, np.abs(f)) - 1.0) / _MU
    return np.clip(y, -1.0, 1.0)


def mulaw_code_to_unit(codes) -> np.ndarray:
    """Linear map of codes [0, 255] onto [-1, 1] (no companding expansion)."""
    return 2.0 * np.asarray(codes, dtype=np.float64) / 255.0 - 1.0


def mel_filterbank(cfg: MelConfig, n_fft: int) -> np.ndarray:
    """Triangular mel filters, shape (num_bins, n_fft // 2 + 1).

    HTK mel scale, peak-1 triangles between 0 and fmax.
    """

    def hz_to_mel(f):
        return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)

    def mel_to_hz(m):
        return 700.0 * (np.power(10.0, np.asarray(m) / 2595.0) - 1.0)

    n_freqs = n_fft // 2 + 1
    fft_freqs = np.arange(n_freqs) * cfg.sample_rate / n_fft
    mel_pts = np.linspace(hz_to_mel(cfg.fmin), hz_to_mel(cfg.fmax), cfg.num_bins + 2)
    hz_pts = mel_to_hz(mel_pts)

    fb = np.zeros((cfg.num_bins, n_freqs))
    for b in range(cfg.num_bins):
        lo, center, hi = hz_pts[b], hz_pts[b + 1], hz_pts[b + 2]
        up = (fft_freqs - lo) / (center - lo)
        down = (hi - fft_freqs) / (hi - center)
        fb[b] = np.maximum(0.0, np.minimum(up, down))
    return fb


def log_mel(w: Waveform, cfg: MelConfig | None = None) -> LogMelSpectrogram:
    """Log mel spectrogram: windowed power STFT -> mel filterbank -> ln.

    Frames start at t*hop for t in [0, floor(len/hop)); the tail is
    zero-padded so the last window is complete. Power is floored at
    cfg.power_floor before the log.
    """
    cfg = cfg or MelConfig()
    if w.sample_rate != cfg.sample_rate:
        raise ValueError(
            f"expected {cfg.sample_rate} Hz input, got {w.sample_rate} Hz"
        )
    hop, win = cfg.hop_samples, cfg.window_samples
    x = w.samples
    if len(x) < win:
        raise ValueError(
            f"input too short: {len(x)} samples < one {win}-sample window"
        )
    frames_total = len(x) // hop
    pad = max(0, (frames_total - 1) * hop + win - len(x))
    if pad:
        x = np.concatenate([x, np.zeros(pad)])

    window = np.hanning(win)
    idx = np.arange(frames_total)[:, None] * hop + np.arange(win)[None, :]
    segments = x[idx] * window
    spectrum = np.fft.rfft(segments, n=win, axis=1)
    power = spectrum.real**2 + spectrum.imag**2
    mel = power @ mel_filterbank(cfg, win).T
    frames = np.log(np.maximum(mel, cfg.power_floor))
    return LogMelSpectrogram(frames=frames, hop=cfg.hop_seconds, window=cfg.window_seconds)


def wav_read(path) -> Waveform:
    """Read a mono PCM16 RIFF/WAVE file. int16 samples map to value/32768."""
    try:
        with wave.open(str(path), "rb") as f:
            channels = f.getnchannels()
            width = f.getsampwidth()
            comptype = f.getcomptype()
            rate = f.getframerate()
            n = f.getnframes()
            raw = f.readframes(n)
    except (wave.Error, EOFError, struct.error) as exc:
        raise WavFormatError(f"{path}: malformed WAV file ({exc})") from exc
    if comptype != "NONE":
        raise WavFormatError(f"{path}: compressed WAV ({comptype}) is unsupported")
    if channels != 1:
        raise WavFormatError(f"{path}: expected mono audio, got {channels} channels")
    if width != 2:
        raise WavFormatError(f"{path}: expected 16-bit PCM, got {8 * width}-bit")
    ints = np.frombuffer(raw, dtype="<i2")
    return Waveform(samples=ints.astype(np.float64) / 32768.0, sample_rate=rate)


def wav_write(path, w: Waveform) -> None:
    """Write a mono PCM16 RIFF/WAVE file (canonical 44-byte header)."""
    ints = np.clip(np.round(w.samples * 32768.0), -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as f:
        f.setnchannels(1)
        f.setsampwidth(2)
        f.setframerate(w.sample_rate)
        f.writeframes(ints.tobytes())
