"""Shared fixtures: synthetic audio, manifests, and tiny-model builders."""

from __future__ import annotations

import numpy as np
import pytest

from enhancodec.data import MixtureSpec, mix_at_snr
from enhancodec.dsp import CODEC_SAMPLE_RATE, Waveform, wav_write
from enhancodec.model import CompressorEnhancer, tiny_config
from enhancodec.training import TrainConfig


def harmonic_clip(seconds: float, f0: float, seed: int,
                  rate: int = CODEC_SAMPLE_RATE,
                  harmonics=(1.0, 0.5, 0.25),
                  envelope_hz=(1.0, 3.0)) -> np.ndarray:
    """A speech-like test tone: a few harmonics under slow amplitude drift."""
    rng = np.random.default_rng(seed)
    t = np.arange(int(round(seconds * rate))) / rate
    envelope = 0.55 + 0.25 * np.sin(2 * np.pi * rng.uniform(*envelope_hz) * t + rng.uniform(0, 6.28))
    x = np.zeros_like(t)
    for k, amp in enumerate(harmonics, start=1):
        x += amp * np.sin(2 * np.pi * f0 * k * t + rng.uniform(0, 6.28))
    x *= envelope / np.max(np.abs(x))
    return (0.6 * x).astype(np.float64)


def noise_clip(seconds: float, seed: int, rate: int = CODEC_SAMPLE_RATE) -> np.ndarray:
    rng = np.random.default_rng(seed)
    return (0.3 * rng.standard_normal(int(round(seconds * rate)))).astype(np.float64)


def make_overfit_pairs(n: int = 8, seconds: float = 1.0, seed: int = 0,
                       snr_range=(-5.0, 0.0)):
    """n paired (noisy, clean) clips mixed at low SNR, no reverberation.

    The clean clips are deliberately tame (stationary pure tones on a
    narrow pitch ladder, amplitudes spread by the zero-rate envelope) so a
    tiny model can overfit them in few steps.
    """
    rng = np.random.default_rng(seed)
    pairs = []
    for i in range(n):
        clean = harmonic_clip(seconds, f0=85.0 + 9.0 * i, seed=100 + i,
                              harmonics=(1.0,), envelope_hz=(0.0, 0.0))
        noise = noise_clip(seconds, seed=200 + i)
        snr = float(rng.uniform(*snr_range))
        res = mix_at_snr(MixtureSpec(
            speech=Waveform(clean, CODEC_SAMPLE_RATE),
            noise=Waveform(noise, CODEC_SAMPLE_RATE),
            rir=None,
            snr_db=snr,
        ))
        pairs.append((res.x.samples, res.target.samples))
    return pairs


def tiny_train_config(**overrides) -> TrainConfig:
    base = dict(preset="tiny", num_speech_codebooks=1, batch_size=8, steps=10,
                lr=1e-3, log_interval=0, dtype="float32")
    base.update(overrides)
    return TrainConfig(**base)


@pytest.fixture
def tiny_model() -> CompressorEnhancer:
    return CompressorEnhancer(tiny_config(), seed=0)


@pytest.fixture
def overfit_pairs():
    return make_overfit_pairs()


@pytest.fixture
def wav_dir(tmp_path):
    """Directory with a few speech and noise wav files plus manifests."""
    speech_paths, noise_paths = [], []
    for i in range(3):
        p = tmp_path / f"speech{i}.wav"
        wav_write(p, Waveform(harmonic_clip(1.5, 110.0 + 31.0 * i, seed=i), CODEC_SAMPLE_RATE))
        speech_paths.append(p)
    for i in range(2):
        p = tmp_path / f"noise{i}.wav"
        wav_write(p, Waveform(noise_clip(1.5, seed=50 + i), CODEC_SAMPLE_RATE))
        noise_paths.append(p)
    speech_manifest = tmp_path / "speech.tsv"
    speech_manifest.write_text("".join(f"{p}\t1.0\t\n" for p in speech_paths))
    noise_manifest = tmp_path / "noise.tsv"
    noise_manifest.write_text(
        f"{noise_paths[0]}\t1.0\t\n{noise_paths[1]}\t1.0\tnonstationary\n"
    )
    return {
        "dir": tmp_path,
        "speech": speech_paths,
        "noise": noise_paths,
        "speech_manifest": speech_manifest,
        "noise_manifest": noise_manifest,
    }
