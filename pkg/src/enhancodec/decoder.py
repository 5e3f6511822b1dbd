"""Autoregressive recurrent decoder.

A frame-rate conditioning GRU runs over the quantized encoding, its output
is repeated x320 up to the sample rate, the previous output sample is
appended, and a sample-rate GRU plus two dense layers predict a 256-way
distribution over the next 8-bit mu-law sample. Teacher forcing feeds the
ground-truth previous samples; generation feeds the model's own output back.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import nn
from .dsp import mulaw_code_to_unit
from .nn import GRUParams, Parameter, Tensor
from .nn.autodiff import _record

START_CODE = 128  # zero-amplitude mu-law code used for the first step


@dataclass
class DecoderConfig:
    """Recurrent decoder shapes. Upsampling must bridge 50 Hz -> 16 kHz."""

    conditioning_dim: int = 256  # num_heads * code_dim + speaker code_dim
    frame_gru_hidden: int = 192
    sample_gru_hidden: int = 896
    dense_hidden: int = 512
    upsample_factor: int = 320
    output_classes: int = 256
    prev_embedding_dim: int = 0  # 0 feeds the previous code as a scalar in [-1, 1]


def condition(quantized_speech: Tensor, speaker: Tensor, tape=None) -> Tensor:
    """Concatenate the speaker vector onto every frame of the speech encoding.

    quantized_speech (B, T, H), speaker (B, S) -> (B, T, H + S).
    """
    tiled = nn.tile_time(speaker, quantized_speech.data.shape[1], tape=tape)
    return nn.concat_last([quantized_speech, tiled], tape=tape)


def upsample(frames: np.ndarray, factor: int) -> np.ndarray:
    """Nearest-neighbor repetition over time: (B, T, H) -> (B, T*factor, H)."""
    return np.repeat(frames, factor, axis=1)


class Decoder:
    def __init__(self, cfg: DecoderConfig, rng: np.random.Generator, dtype=np.float64):
        self.cfg = cfg
        self.dtype = dtype
        self.frame_gru = GRUParams("decoder.frame_gru", cfg.conditioning_dim,
                                   cfg.frame_gru_hidden, rng, dtype)
        prev_dim = cfg.prev_embedding_dim if cfg.prev_embedding_dim else 1
        self.sample_gru = GRUParams("decoder.sample_gru", cfg.frame_gru_hidden + prev_dim,
                                    cfg.sample_gru_hidden, rng, dtype)
        self.dense1_w = Parameter(
            nn.uniform_init(rng, (cfg.sample_gru_hidden, cfg.dense_hidden),
                            cfg.sample_gru_hidden, dtype), "decoder.dense1.w")
        self.dense1_b = Parameter(np.zeros(cfg.dense_hidden, dtype=dtype), "decoder.dense1.b")
        self.dense2_w = Parameter(
            nn.uniform_init(rng, (cfg.dense_hidden, cfg.output_classes),
                            cfg.dense_hidden, dtype), "decoder.dense2.w")
        self.dense2_b = Parameter(np.zeros(cfg.output_classes, dtype=dtype), "decoder.dense2.b")
        if cfg.prev_embedding_dim:
            self.prev_embedding = Parameter(
                nn.uniform_init(rng, (cfg.output_classes, cfg.prev_embedding_dim),
                                cfg.output_classes, dtype), "decoder.prev_embedding")
        else:
            self.prev_embedding = None

    def parameters(self):
        params = self.frame_gru.parameters() + self.sample_gru.parameters()
        params += [self.dense1_w, self.dense1_b, self.dense2_w, self.dense2_b]
        if self.prev_embedding is not None:
            params.append(self.prev_embedding)
        return params

    def _prev_input(self, prev_codes: np.ndarray, tape=None) -> Tensor:
        """Previous-sample feature: scalar map or learned embedding."""
        if self.prev_embedding is not None:
            return nn.embedding(self.prev_embedding, prev_codes, tape=tape)
        unit = mulaw_code_to_unit(prev_codes).astype(self.dtype)
        return Tensor(unit[..., None])

    def teacher_forced_logits(self, cond: Tensor, targets: np.ndarray, tape=None) -> Tensor:
        """Logits (B, N, 256) for N = frames * upsample_factor.

        `targets` (B, N) are the mu-law codes of the clean reference; the
        network is fed targets shifted right by one with a start symbol.
        """
        batch, frames, _ = cond.data.shape
        n = frames * self.cfg.upsample_factor
        if targets.shape != (batch, n):
            raise ValueError(
                f"target shape {targets.shape} != (batch {batch}, {frames} frames x "
                f"{self.cfg.upsample_factor})"
            )
        prev = np.empty_like(targets)
        prev[:, 0] = START_CODE
        prev[:, 1:] = targets[:, :-1]

        frame_out = nn.gru_sequence(cond, self.frame_gru, tape=tape)
        up = _upsample_taped(frame_out, self.cfg.upsample_factor, tape=tape)
        x = nn.concat_last([up, self._prev_input(prev, tape=tape)], tape=tape)
        h = nn.gru_sequence(x, self.sample_gru, tape=tape)
        h = nn.relu(nn.dense(h, self.dense1_w, self.dense1_b, tape=tape), tape=tape)
        return nn.dense(h, self.dense2_w, self.dense2_b, tape=tape)

    def generate(self, cond_values: np.ndarray, seed: int = 0, temperature: float = 1.0) -> np.ndarray:
        """Sample mu-law codes (B, frames * upsample_factor) autoregressively.

        temperature 0 decodes by argmax; otherwise each step samples from
        softmax(logits / temperature) with an rng seeded by `seed`.
        """
        if temperature < 0:
            raise ValueError("temperature must be >= 0")
        rng = np.random.default_rng(seed)
        cfg = self.cfg
        batch, frames, _ = cond_values.shape

        frame_out = nn.gru_sequence(Tensor(cond_values.astype(self.dtype)), self.frame_gru)
        up = upsample(frame_out.data, cfg.upsample_factor)  # (B, N, Hf)
        prev_dim = cfg.prev_embedding_dim if cfg.prev_embedding_dim else 1
        w_prev = self.sample_gru.w.data[-prev_dim:]  # previous-sample rows of W
        # Input gates from the frame features and bias; the previous-sample
        # contribution is added per step inside the loop.
        up_gates = up @ self.sample_gru.w.data[:-prev_dim] + self.sample_gru.b.data

        n = frames * cfg.upsample_factor
        out = np.empty((batch, n), dtype=np.int64)
        h = np.zeros((batch, cfg.sample_gru_hidden), dtype=self.dtype)
        prev = np.full(batch, START_CODE, dtype=np.int64)
        for i in range(n):
            prev_feat = self._prev_input(prev).data.reshape(batch, prev_dim)
            gates = up_gates[:, i, :] + prev_feat @ w_prev
            h = nn.gru_step(self.sample_gru, gates, h)
            hidden = np.maximum(h @ self.dense1_w.data + self.dense1_b.data, 0.0)
            logits = hidden @ self.dense2_w.data + self.dense2_b.data
            if temperature == 0.0:
                prev = logits.argmax(axis=1)
            else:
                p = nn.softmax(logits / temperature, axis=1)
                u = rng.random((batch, 1))
                prev = np.minimum((p.cumsum(axis=1) < u).sum(axis=1),
                                  cfg.output_classes - 1)
            out[:, i] = prev
        return out


def _upsample_taped(frames: Tensor, factor: int, tape=None) -> Tensor:
    """Taped x`factor` frame repetition; backward sums each block of rows."""
    fd = frames.data
    out = np.repeat(fd, factor, axis=1)

    def backward(g):
        b, n, h = g.shape
        return (g.reshape(b, n // factor, factor, h).sum(axis=2),)

    return _record(tape, "upsample", (frames,), out, backward)
