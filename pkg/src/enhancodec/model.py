"""The complete compressor-enhancer model.

Glues the encoders, the vector-quantized bottleneck, and the autoregressive
decoder into the file-level encode/decode pipeline, and owns checkpoint
serialization.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from . import bitstream, nn
from .decoder import Decoder, DecoderConfig, condition
from .dsp import (
    CODEC_SAMPLE_RATE,
    MelConfig,
    Waveform,
    log_mel,
    mulaw_decode,
)
from .encoder import EncoderConfig, SpeakerEncoder, SpeechEncoder
from .errors import IncompatibleModelError
from .nn import Tensor
from .quantizer import QuantizerConfig, VectorQuantizer


@dataclass
class ModelConfig:
    """Aggregate configuration; presets: 'full' (deployment scale) and 'tiny'."""

    preset: str = "full"
    mel: MelConfig = None
    encoder: EncoderConfig = None
    quantizer: QuantizerConfig = None
    decoder: DecoderConfig = None
    speaker_codebook_size: int = 512
    dtype: str = "float64"

    def __post_init__(self):
        self.mel = self.mel or MelConfig()
        self.encoder = self.encoder or EncoderConfig()
        self.quantizer = self.quantizer or QuantizerConfig()
        if self.decoder is None:
            cond = (
                self.quantizer.num_speech_codebooks * self.quantizer.code_dim
                + self.quantizer.code_dim
            )
            self.decoder = DecoderConfig(conditioning_dim=cond)

    @property
    def np_dtype(self):
        return np.float32 if self.dtype == "float32" else np.float64

    def to_json(self) -> dict:
        return {
            "preset": self.preset,
            "mel": asdict(self.mel),
            "encoder": asdict(self.encoder),
            "quantizer": asdict(self.quantizer),
            "decoder": asdict(self.decoder),
            "speaker_codebook_size": self.speaker_codebook_size,
            "dtype": self.dtype,
        }

    @classmethod
    def from_json(cls, blob: dict) -> "ModelConfig":
        enc = EncoderConfig(**blob["encoder"])
        enc.strides = tuple(enc.strides)
        enc.kernels = tuple(enc.kernels)
        enc.speaker_strides = tuple(enc.speaker_strides)
        enc.speaker_kernels = tuple(enc.speaker_kernels)
        return cls(
            preset=blob["preset"],
            mel=MelConfig(**blob["mel"]),
            encoder=enc,
            quantizer=QuantizerConfig(**blob["quantizer"]),
            decoder=DecoderConfig(**blob["decoder"]),
            speaker_codebook_size=blob["speaker_codebook_size"],
            dtype=blob["dtype"],
        )


def full_config(num_speech_codebooks: int = 3, dtype: str = "float32",
                window_seconds: float = 0.025) -> ModelConfig:
    """The full-scale architecture at the 0.9 or 1.35 kb/s operating point."""
    q = QuantizerConfig(num_speech_codebooks=num_speech_codebooks)
    return ModelConfig(
        preset="full",
        mel=MelConfig(window_seconds=window_seconds),
        encoder=EncoderConfig(),
        quantizer=q,
        decoder=DecoderConfig(conditioning_dim=(num_speech_codebooks + 1) * q.code_dim),
        dtype=dtype,
    )


def tiny_config(dtype: str = "float32", num_speech_codebooks: int = 1) -> ModelConfig:
    """Desk-scale preset for tests: 2 conv layers, 64-code books, GRUs 32/64."""
    q = QuantizerConfig(
        num_speech_codebooks=num_speech_codebooks, bits=6, code_dim=32,
    )
    return ModelConfig(
        preset="tiny",
        mel=MelConfig(),
        encoder=EncoderConfig(
            filters=64, strides=(1, 2), kernels=(3, 4),
            speaker_filters=32, speaker_strides=(1, 2), speaker_kernels=(3, 4),
        ),
        quantizer=q,
        decoder=DecoderConfig(
            conditioning_dim=(num_speech_codebooks + 1) * q.code_dim,
            frame_gru_hidden=32,
            sample_gru_hidden=64,
            dense_hidden=64,
        ),
        speaker_codebook_size=64,
        dtype=dtype,
    )


@dataclass
class Encoding:
    """Frame-rate speech encoding plus the per-utterance speaker embedding."""

    frames: np.ndarray           # (T50, encoder filters), pre-projection
    speaker: np.ndarray          # (speaker filters,)
    source_duration: float


@dataclass
class QuantizedEncoding:
    vectors: np.ndarray          # (T50, num_heads * code_dim), copied codebook rows
    indices: np.ndarray          # (T50, num_heads)
    speaker_vector: np.ndarray   # (code_dim,)
    speaker_index: int


class CompressorEnhancer:
    """Encoder + bottleneck + decoder with file-level encode/decode."""

    def __init__(self, config: ModelConfig, seed: int = 0):
        self.config = config
        dtype = config.np_dtype
        rng = np.random.default_rng(seed)
        self.speech_encoder = SpeechEncoder(config.encoder, rng, dtype)
        self.speaker_encoder = SpeakerEncoder(config.encoder, rng, dtype)
        self.quantizer = VectorQuantizer(
            config.quantizer, config.encoder.filters, config.encoder.speaker_filters,
            rng, dtype, speaker_codebook_size=config.speaker_codebook_size,
        )
        self.decoder = Decoder(config.decoder, rng, dtype)

    def parameters(self):
        return (
            self.speech_encoder.parameters()
            + self.speaker_encoder.parameters()
            + self.quantizer.parameters()
            + self.decoder.parameters()
        )

    def _check_rate(self, w: Waveform) -> None:
        if w.sample_rate != CODEC_SAMPLE_RATE:
            raise IncompatibleModelError(
                f"codec requires {CODEC_SAMPLE_RATE} Hz audio, got {w.sample_rate} Hz"
            )

    def encode(self, w: Waveform) -> Encoding:
        """Run both encoder stacks in eval mode on one utterance."""
        self._check_rate(w)
        mel = log_mel(w, self.config.mel)
        mel_t = Tensor(mel.frames[None].astype(self.config.np_dtype))
        frames = self.speech_encoder(mel_t, training=False)
        speaker = self.speaker_encoder(mel_t, training=False)
        return Encoding(frames=frames.data[0], speaker=speaker.data[0],
                        source_duration=w.duration)

    def quantize(self, enc: Encoding) -> QuantizedEncoding:
        """Project each head, pick nearest codes, stack the quantized rows."""
        frames = Tensor(enc.frames[None])
        per_head_vectors = []
        per_head_indices = []
        for head in self.quantizer.heads:
            projected = head.project(frames).data[0]
            idx, codes = head.codebook.quantize(projected)
            per_head_indices.append(idx)
            per_head_vectors.append(codes)
        spk_proj = self.quantizer.speaker.project(Tensor(enc.speaker[None])).data
        spk_idx, spk_code = self.quantizer.speaker.codebook.quantize(spk_proj)
        return QuantizedEncoding(
            vectors=np.concatenate(per_head_vectors, axis=-1),
            indices=np.stack(per_head_indices, axis=-1),
            speaker_vector=spk_code[0],
            speaker_index=int(spk_idx[0]),
        )

    def encode_to_stream(self, w: Waveform) -> bytes:
        """Waveform -> compressed bytes."""
        q = self.quantize(self.encode(w))
        header = bitstream.BitstreamHeader(
            sample_rate=CODEC_SAMPLE_RATE,
            latent_rate=self.latent_rate,
            num_speech_codebooks=self.config.quantizer.num_speech_codebooks,
            speaker_index=q.speaker_index,
            frame_count=q.indices.shape[0],
        )
        return bitstream.pack(q.indices, header)

    @property
    def latent_rate(self) -> int:
        hop_rate = int(round(1.0 / self.config.mel.hop_seconds))
        return hop_rate // self.config.encoder.downsample

    def conditioning_from_indices(self, indices: np.ndarray, speaker_index: int) -> np.ndarray:
        """Rebuild the decoder conditioning (1, T, D) from transmitted indices."""
        k = self.config.quantizer.codebook_size
        if indices.size and (indices.min() < 0 or indices.max() >= k):
            raise IncompatibleModelError(
                f"stream index {indices.max()} exceeds the model's {k}-code books"
            )
        heads = self.quantizer.heads
        if indices.shape[1] != len(heads):
            raise IncompatibleModelError(
                f"stream has {indices.shape[1]} codebooks, model has {len(heads)}"
            )
        vectors = np.concatenate(
            [heads[i].codebook.codes[indices[:, i]] for i in range(len(heads))], axis=-1
        )
        spk = self.quantizer.speaker.codebook.codes[speaker_index]
        cond = condition(Tensor(vectors[None]), Tensor(spk[None]))
        return cond.data

    def decode_from_stream(self, data: bytes, seed: int = 0, temperature: float = 1.0) -> Waveform:
        """Compressed bytes -> reconstructed waveform (320 samples per frame)."""
        header, indices = bitstream.unpack(data)
        if header.sample_rate != CODEC_SAMPLE_RATE:
            raise IncompatibleModelError(
                f"stream sample rate {header.sample_rate} != codec rate {CODEC_SAMPLE_RATE}"
            )
        cond = self.conditioning_from_indices(indices, header.speaker_index)
        codes = self.decoder.generate(cond, seed=seed, temperature=temperature)
        return Waveform(mulaw_decode(codes[0]), CODEC_SAMPLE_RATE)

    # -- checkpointing --------------------------------------------------

    def state_arrays(self) -> dict[str, np.ndarray]:
        arrays = {p.name: p.data for p in self.parameters()}
        arrays.update(self.quantizer.codebook_arrays())
        arrays.update(self.speech_encoder.stack.bn_arrays("speech_encoder"))
        arrays.update(self.speaker_encoder.stack.bn_arrays("speaker_encoder"))
        return arrays

    def load_state(self, arrays: dict[str, np.ndarray]) -> None:
        nn.assign_arrays(self.parameters(), arrays)
        self.quantizer.load_codebooks(arrays)
        self.speech_encoder.stack.load_bn(arrays, "speech_encoder")
        self.speaker_encoder.stack.load_bn(arrays, "speaker_encoder")

    def save(self, path, extra_config: dict | None = None,
             extra_arrays: dict[str, np.ndarray] | None = None) -> None:
        config = {"model": self.config.to_json()}
        if extra_config:
            config.update(extra_config)
        arrays = self.state_arrays()
        if extra_arrays:
            arrays.update(extra_arrays)
        nn.save_checkpoint(path, config, arrays)

    @classmethod
    def load(cls, path) -> tuple["CompressorEnhancer", dict, dict]:
        """Returns (model, full config blob, full array table)."""
        config, arrays = nn.load_checkpoint(path)
        model = cls(ModelConfig.from_json(config["model"]))
        model.load_state(arrays)
        return model, config, arrays
