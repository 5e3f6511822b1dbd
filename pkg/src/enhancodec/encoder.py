"""Speech and speaker encoders.

Both are stacks of (conv1d -> batchnorm -> ReLU) over log-mel frames. The
speech stack emits a frame-rate encoding at half the mel frame rate (one
stride-2 layer); the speaker stack averages its output over time into a
single per-utterance embedding.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import nn
from .nn import BatchNormState, Parameter, Tensor


@dataclass
class EncoderConfig:
    """Layer counts and shapes for both encoder stacks.

    The defaults are the full-scale model: five 768-filter layers for speech
    (the third downsampling by 2), and the same architecture with 64 filters
    and the fifth layer omitted for the speaker path.
    """

    mel_bins: int = 80
    filters: int = 768
    strides: tuple = (1, 1, 2, 1, 1)
    kernels: tuple = (3, 3, 4, 3, 3)
    speaker_filters: int = 64
    speaker_strides: tuple = (1, 1, 2, 1)
    speaker_kernels: tuple = (3, 3, 4, 3)
    bn_momentum: float = 0.1
    bn_eps: float = 1e-5

    def __post_init__(self):
        if len(self.strides) != len(self.kernels):
            raise ValueError("strides and kernels must have equal length")
        if [s for s in self.strides if s == 2] != [2]:
            raise ValueError("speech stack must contain exactly one stride-2 layer")

    @property
    def downsample(self) -> int:
        return int(np.prod(self.strides))


def latent_frames(mel_frames: int) -> int:
    """Encoder output length for a given mel frame count (one stride-2 layer)."""
    return -(-mel_frames // 2)


class ConvStack:
    """conv1d -> batchnorm -> ReLU, repeated."""

    def __init__(self, name: str, in_channels: int, filters: int, strides, kernels,
                 rng: np.random.Generator, momentum: float, eps: float, dtype=np.float64):
        self.strides = tuple(strides)
        self.momentum = momentum
        self.eps = eps
        self.weights: list[Parameter] = []
        self.biases: list[Parameter] = []
        self.gammas: list[Parameter] = []
        self.betas: list[Parameter] = []
        self.bn_states: list[BatchNormState] = []
        c_in = in_channels
        for i, (stride, kernel) in enumerate(zip(strides, kernels)):
            fan_in = kernel * c_in
            self.weights.append(Parameter(
                nn.uniform_init(rng, (kernel, c_in, filters), fan_in, dtype), f"{name}.conv{i}.w"
            ))
            self.biases.append(Parameter(np.zeros(filters, dtype=dtype), f"{name}.conv{i}.b"))
            self.gammas.append(Parameter(np.ones(filters, dtype=dtype), f"{name}.bn{i}.gamma"))
            self.betas.append(Parameter(np.zeros(filters, dtype=dtype), f"{name}.bn{i}.beta"))
            self.bn_states.append(BatchNormState(filters, dtype=dtype))
            c_in = filters

    def __call__(self, x: Tensor, training: bool, tape=None) -> Tensor:
        for i, stride in enumerate(self.strides):
            x = nn.conv1d(x, self.weights[i], self.biases[i], stride=stride, tape=tape)
            x = nn.batchnorm(x, self.gammas[i], self.betas[i], self.bn_states[i],
                             training, self.momentum, self.eps, tape=tape)
            x = nn.relu(x, tape=tape)
        return x

    def parameters(self):
        params = []
        for group in (self.weights, self.biases, self.gammas, self.betas):
            params.extend(group)
        return params

    def bn_arrays(self, name: str) -> dict[str, np.ndarray]:
        arrays = {}
        for i, st in enumerate(self.bn_states):
            arrays[f"{name}.bn{i}.running_mean"] = st.running_mean
            arrays[f"{name}.bn{i}.running_var"] = st.running_var
        return arrays

    def load_bn(self, arrays: dict[str, np.ndarray], name: str) -> None:
        for i, st in enumerate(self.bn_states):
            st.running_mean = arrays[f"{name}.bn{i}.running_mean"].astype(st.running_mean.dtype)
            st.running_var = arrays[f"{name}.bn{i}.running_var"].astype(st.running_var.dtype)


class SpeechEncoder:
    """Log-mel frames (B, T, mel_bins) -> encoding (B, ceil(T/2), filters)."""

    def __init__(self, cfg: EncoderConfig, rng: np.random.Generator, dtype=np.float64):
        self.cfg = cfg
        self.stack = ConvStack("speech_encoder", cfg.mel_bins, cfg.filters,
                               cfg.strides, cfg.kernels, rng, cfg.bn_momentum, cfg.bn_eps, dtype)

    def __call__(self, mel: Tensor, training: bool = False, tape=None) -> Tensor:
        if mel.data.shape[1] < 2:
            raise ValueError("input too short: need at least 2 mel frames")
        return self.stack(mel, training, tape=tape)

    def parameters(self):
        return self.stack.parameters()


class SpeakerEncoder:
    """Log-mel frames (B, T, mel_bins) -> one embedding (B, speaker_filters)."""

    def __init__(self, cfg: EncoderConfig, rng: np.random.Generator, dtype=np.float64):
        self.cfg = cfg
        self.stack = ConvStack("speaker_encoder", cfg.mel_bins, cfg.speaker_filters,
                               cfg.speaker_strides, cfg.speaker_kernels, rng,
                               cfg.bn_momentum, cfg.bn_eps, dtype)

    def __call__(self, mel: Tensor, training: bool = False, tape=None) -> Tensor:
        if mel.data.shape[1] < 2:
            raise ValueError("input too short: need at least 2 mel frames")
        out = self.stack(mel, training, tape=tape)
        return nn.mean_time(out, tape=tape)

    def parameters(self):
        return self.stack.parameters()
