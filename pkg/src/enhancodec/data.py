"""Noisy reverberant training-mixture construction.

Mixtures follow x = s * h + n: clean speech convolved with a synthetic
shoebox room impulse response, plus additive noise scaled to a requested
SNR. The enhancement target is the anechoic clean s.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.signal import fftconvolve

from .dsp import CODEC_SAMPLE_RATE, Waveform, wav_read

SPEED_OF_SOUND = 343.0


@dataclass
class RoomSpec:
    """A shoebox room for the image-source method."""

    dimensions: tuple  # (Lx, Ly, Lz) meters
    source_position: tuple
    mic_position: tuple
    reflection_coefficient: float = 0.5
    max_order: int = 6
    speed_of_sound: float = SPEED_OF_SOUND

    def __post_init__(self):
        dims = np.asarray(self.dimensions, dtype=np.float64)
        src = np.asarray(self.source_position, dtype=np.float64)
        mic = np.asarray(self.mic_position, dtype=np.float64)
        if dims.shape != (3,) or np.any(dims <= 0):
            raise ValueError(f"room dimensions must be 3 positive reals, got {self.dimensions}")
        for name, pos in (("source", src), ("mic", mic)):
            if pos.shape != (3,) or np.any(pos <= 0) or np.any(pos >= dims):
                raise ValueError(f"{name} position {tuple(pos)} not strictly inside the room")
        if not 0.0 <= self.reflection_coefficient < 1.0:
            raise ValueError("reflection_coefficient must lie in [0, 1)")
        if not 0 <= self.max_order <= 20:
            raise ValueError("max_order must lie in [0, 20]")


def _axis_images(source: float, length: float, max_order: int):
    """Per-axis mirror positions: yields (coordinate, reflection_count)."""
    out = []
    for n in range(-(max_order // 2 + 1), max_order // 2 + 2):
        for p in (0, 1):
            k = abs(n - p) + abs(n)
            if k <= max_order:
                out.append(((1 - 2 * p) * source + 2 * n * length, k))
    return out


def image_source_rir(room: RoomSpec, sample_rate: int = CODEC_SAMPLE_RATE) -> np.ndarray:
    """Shoebox impulse response by summing mirror-image sources.

    Each image up to `max_order` total reflections contributes an impulse of
    amplitude beta**reflections / (4*pi*distance) at the nearest sample to
    distance / c. Amplitudes are relative to this direct-path reference;
    colliding taps add.
    """
    mic = np.asarray(room.mic_position, dtype=np.float64)
    src = np.asarray(room.source_position, dtype=np.float64)
    if np.allclose(mic, src):
        raise ValueError("source and mic positions coincide (zero distance)")
    beta = room.reflection_coefficient

    per_axis = [
        _axis_images(src[a], room.dimensions[a], room.max_order) for a in range(3)
    ]
    taps: list[tuple[int, float]] = []
    for cx, kx in per_axis[0]:
        for cy, ky in per_axis[1]:
            if kx + ky > room.max_order:
                continue
            for cz, kz in per_axis[2]:
                order = kx + ky + kz
                if order > room.max_order:
                    continue
                if beta == 0.0 and order > 0:
                    continue
                dist = float(np.sqrt((cx - mic[0]) ** 2 + (cy - mic[1]) ** 2 + (cz - mic[2]) ** 2))
                delay = int(round(dist / room.speed_of_sound * sample_rate))
                taps.append((delay, beta**order / (4.0 * np.pi * dist)))

    length = max(delay for delay, _ in taps) + 1
    h = np.zeros(length)
    for delay, amp in taps:
        h[delay] += amp
    return h


@dataclass
class MixtureSpec:
    """Recipe for one training example: (speech, noise, rir or None, SNR dB)."""

    speech: Waveform
    noise: Waveform
    rir: np.ndarray | None
    snr_db: float


@dataclass
class MixResult:
    x: Waveform            # the noisy (possibly reverberant) mixture
    target: Waveform       # the anechoic clean reference, same gain as x
    alpha: float           # noise scale achieving the requested SNR
    gain: float            # joint pre-clamp rescale (1.0 when no peak limiting)


def mix_at_snr(spec: MixtureSpec) -> MixResult:
    """Mix speech and noise at the requested SNR.

    r = s * h (or s when no rir); alpha = sqrt(P_r / (P_n * 10^(snr/10))).
    If the pre-clamp mixture peaks above 0.99, both the mixture and the
    target are scaled down jointly, which preserves the SNR.
    """
    if spec.speech.sample_rate != spec.noise.sample_rate:
        raise ValueError("speech and noise sample rates differ")
    s = spec.speech.samples
    n = spec.noise.samples
    if len(n) < len(s):
        raise ValueError(f"noise ({len(n)}) shorter than speech ({len(s)})")
    n = n[: len(s)]
    if spec.rir is not None:
        r = fftconvolve(s, spec.rir)[: len(s)]
    else:
        r = s
    p_r = float(np.mean(r * r))
    p_n = float(np.mean(n * n))
    if p_r == 0.0 or p_n == 0.0:
        raise ValueError("zero-power speech or noise segment")
    alpha = float(np.sqrt(p_r / (p_n * 10.0 ** (spec.snr_db / 10.0))))
    mixture = r + alpha * n
    peak = float(np.max(np.abs(mixture)))
    gain = 0.99 / peak if peak > 0.99 else 1.0
    rate = spec.speech.sample_rate
    return MixResult(
        x=Waveform(np.clip(gain * mixture, -1.0, 1.0), rate),
        target=Waveform(gain * s, rate),
        alpha=alpha,
        gain=gain,
    )


@dataclass
class ManifestEntry:
    path: str
    weight: float = 1.0
    is_nonstationary: bool = False


@dataclass
class DatasetManifest:
    """Weighted speech and noise file lists for mixture sampling."""

    speech: list = field(default_factory=list)
    noise: list = field(default_factory=list)

    def __post_init__(self):
        if not self.speech:
            raise ValueError("manifest has no speech files")


def read_manifest(speech_path, noise_path=None, validate: bool = True) -> DatasetManifest:
    """Load line-oriented manifests: `path<TAB>weight<TAB>flags` per line.

    Recognized flag: `nonstationary` on noise entries. Weight defaults to 1.
    """

    def parse(path) -> list[ManifestEntry]:
        entries = []
        for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split("\t")
            wav = parts[0]
            weight = float(parts[1]) if len(parts) > 1 and parts[1] else 1.0
            if weight <= 0:
                raise ValueError(f"{path}:{lineno}: weight must be positive")
            flags = parts[2].split(",") if len(parts) > 2 and parts[2] else []
            if validate and not Path(wav).exists():
                raise FileNotFoundError(f"{path}:{lineno}: no such file {wav}")
            entries.append(ManifestEntry(wav, weight, "nonstationary" in flags))
        return entries

    return DatasetManifest(
        speech=parse(speech_path),
        noise=parse(noise_path) if noise_path else [],
    )


@dataclass
class SamplerConfig:
    """Randomization ranges for :func:`sample_training_example`."""

    sample_seconds: float = 1.0
    snr_range: tuple = (-5.0, 25.0)       # standard mode; (5, 25) for low-noise
    nonstationary_weight: float = 2.0
    reverb_probability: float = 1.0
    convolve_noise: bool = False          # optionally pass the noise through the rir too
    room_size_range: tuple = (3.0, 10.0)
    reflection_range: tuple = (0.3, 0.9)
    max_order: int = 10
    max_crop_attempts: int = 10


def random_room(rng: np.random.Generator, cfg: SamplerConfig) -> RoomSpec:
    lo, hi = cfg.room_size_range
    dims = rng.uniform(lo, hi, size=3)
    margin = 0.5
    src = rng.uniform(margin, dims - margin)
    mic = rng.uniform(margin, dims - margin)
    return RoomSpec(
        dimensions=tuple(dims),
        source_position=tuple(src),
        mic_position=tuple(mic),
        reflection_coefficient=float(rng.uniform(*cfg.reflection_range)),
        max_order=int(rng.integers(0, cfg.max_order + 1)),
    )


def _weighted_pick(rng, entries, nonstationary_weight=1.0):
    w = np.array(
        [e.weight * (nonstationary_weight if e.is_nonstationary else 1.0) for e in entries]
    )
    return entries[rng.choice(len(entries), p=w / w.sum())]


def _random_crop(rng, wav: Waveform, samples: int) -> np.ndarray:
    if len(wav) < samples:
        raise ValueError(f"file too short for a {samples}-sample crop")
    start = int(rng.integers(0, len(wav) - samples + 1))
    return wav.samples[start : start + samples]


def sample_clean_example(
    manifest: DatasetManifest,
    rng: np.random.Generator,
    cfg: SamplerConfig | None = None,
    file_read_hook=None,
) -> MixResult:
    """Draw one clean crop with input == target (codec-only training).

    Never opens a noise file; `file_read_hook` can verify that.
    """
    cfg = cfg or SamplerConfig()
    samples = int(round(cfg.sample_seconds * CODEC_SAMPLE_RATE))
    for _ in range(cfg.max_crop_attempts):
        entry = _weighted_pick(rng, manifest.speech)
        if file_read_hook is not None:
            file_read_hook(entry.path)
        wav = wav_read(entry.path)
        if wav.sample_rate != CODEC_SAMPLE_RATE:
            raise ValueError(f"{entry.path}: expected {CODEC_SAMPLE_RATE} Hz audio")
        speech = _random_crop(rng, wav, samples)
        if np.any(speech):
            w = Waveform(speech, CODEC_SAMPLE_RATE)
            return MixResult(x=w, target=w, alpha=0.0, gain=1.0)
    raise ValueError("could not draw a non-silent crop")


def sample_training_example(
    manifest: DatasetManifest,
    rng: np.random.Generator,
    mode: str = "standard",
    cfg: SamplerConfig | None = None,
    file_read_hook=None,
) -> MixResult:
    """Draw one (noisy, clean) pair: weighted files, random crops, random
    room, SNR uniform over the mode's range. Deterministic given the rng.

    Zero-power crops are rejected and redrawn. `file_read_hook`, when given,
    is called with every path actually opened.
    """
    cfg = cfg or SamplerConfig()
    if mode not in ("standard", "low_noise"):
        raise ValueError(f"unknown mode {mode!r}")
    snr_lo, snr_hi = (5.0, 25.0) if mode == "low_noise" else cfg.snr_range
    if not manifest.noise:
        raise ValueError("manifest has no noise files")
    samples = int(round(cfg.sample_seconds * CODEC_SAMPLE_RATE))

    def load(entry) -> Waveform:
        if file_read_hook is not None:
            file_read_hook(entry.path)
        wav = wav_read(entry.path)
        if wav.sample_rate != CODEC_SAMPLE_RATE:
            raise ValueError(f"{entry.path}: expected {CODEC_SAMPLE_RATE} Hz audio")
        return wav

    for _ in range(cfg.max_crop_attempts):
        speech = _random_crop(rng, load(_weighted_pick(rng, manifest.speech)), samples)
        noise = _random_crop(
            rng, load(_weighted_pick(rng, manifest.noise, cfg.nonstationary_weight)), samples
        )
        if not (np.any(speech) and np.any(noise)):
            continue
        rir = None
        if rng.random() < cfg.reverb_probability:
            rir = image_source_rir(random_room(rng, cfg))
            if cfg.convolve_noise:
                noise = fftconvolve(noise, rir)[: len(noise)]
        snr = float(rng.uniform(snr_lo, snr_hi))
        spec = MixtureSpec(
            speech=Waveform(speech, CODEC_SAMPLE_RATE),
            noise=Waveform(noise, CODEC_SAMPLE_RATE),
            rir=rir,
            snr_db=snr,
        )
        return mix_at_snr(spec)
    raise ValueError("could not draw a non-silent crop pair")
