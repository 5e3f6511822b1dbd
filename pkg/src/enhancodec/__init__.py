"""Joint speech compression and enhancement at sub-2 kb/s.

A convolutional encoder turns noisy 16 kHz speech into 50 Hz latent frames,
a vector-quantized bottleneck maps each frame to a few small code indices,
and an autoregressive two-GRU decoder resynthesizes an estimate of the clean
speech from the transmitted codes.
"""

from .bitstream import BitstreamHeader, bitrate, pack, payload_bits, unpack
from .data import (
    DatasetManifest,
    ManifestEntry,
    MixResult,
    MixtureSpec,
    RoomSpec,
    SamplerConfig,
    image_source_rir,
    mix_at_snr,
    random_room,
    read_manifest,
    sample_clean_example,
    sample_training_example,
)
from .decoder import Decoder, DecoderConfig, condition, upsample
from .dsp import (
    CODEC_SAMPLE_RATE,
    MelConfig,
    Waveform,
    log_mel,
    mulaw_decode,
    mulaw_encode,
    wav_read,
    wav_write,
)
from .encoder import EncoderConfig, SpeakerEncoder, SpeechEncoder, latent_frames
from .errors import (
    BitstreamError,
    IncompatibleModelError,
    NumericalError,
    WavFormatError,
)
from .model import CompressorEnhancer, ModelConfig, full_config, tiny_config
from .quantizer import Codebook, QuantizerConfig, VectorQuantizer
from .training import (
    EvalPair,
    EvalReport,
    LatentEnhancer,
    LossReport,
    TrainConfig,
    Trainer,
    evaluate_objective,
    segmental_snr,
    total_loss,
    train_latent_enhancer,
    train_step,
)

__version__ = "0.1.0"

__all__ = [
    "BitstreamHeader", "bitrate", "pack", "payload_bits", "unpack",
    "DatasetManifest", "ManifestEntry", "MixResult", "MixtureSpec", "RoomSpec",
    "SamplerConfig", "image_source_rir", "mix_at_snr", "random_room",
    "read_manifest", "sample_clean_example", "sample_training_example",
    "Decoder", "DecoderConfig", "condition", "upsample",
    "CODEC_SAMPLE_RATE", "MelConfig", "Waveform", "log_mel",
    "mulaw_decode", "mulaw_encode", "wav_read", "wav_write",
    "EncoderConfig", "SpeakerEncoder", "SpeechEncoder", "latent_frames",
    "BitstreamError", "IncompatibleModelError", "NumericalError", "WavFormatError",
    "CompressorEnhancer", "ModelConfig", "full_config", "tiny_config",
    "Codebook", "QuantizerConfig", "VectorQuantizer",
    "EvalPair", "EvalReport", "LatentEnhancer", "LossReport", "TrainConfig",
    "Trainer", "evaluate_objective", "segmental_snr", "total_loss",
    "train_latent_enhancer", "train_step",
]
