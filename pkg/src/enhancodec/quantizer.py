"""Vector-quantized bottleneck.

Per-head linear projections, nearest-code assignment, straight-through
gradients, and exponential-moving-average k-means codebook updates. The
commitment term is the only gradient-bearing loss; codebooks move by EMA.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import nn
from .nn import Parameter, Tensor


@dataclass
class QuantizerConfig:
    """Bottleneck shape: `num_speech_codebooks` heads of 2**bits codes each.

    Two heads give the 0.9 kb/s operating point, three the 1.35 kb/s one.
    """

    num_speech_codebooks: int = 3
    bits: int = 9
    code_dim: int = 64
    commitment: float = 0.25
    ema_decay: float = 0.99

    @property
    def codebook_size(self) -> int:
        return 2**self.bits


class Codebook:
    """K learned code vectors plus EMA assignment statistics.

    The EMA update keeps counts N_i and vector sums m_i:

        N_i <- decay * N_i + (1 - decay) * count_i
        m_i <- decay * m_i + (1 - decay) * sum_i
        c_i  = m_i / max(N_i, eps)
    """

    def __init__(self, size: int, dim: int, decay: float = 0.99, eps: float = 1e-5, dtype=np.float64):
        self.size = size
        self.dim = dim
        self.decay = decay
        self.eps = eps
        self.codes = np.zeros((size, dim), dtype=dtype)
        self.ema_count = np.zeros(size, dtype=dtype)
        self.ema_sum = np.zeros((size, dim), dtype=dtype)
        self.initialized = False

    def initialize_from(self, vectors: np.ndarray, rng: np.random.Generator) -> None:
        """Seed codes by drawing rows from a batch of encodings."""
        vectors = vectors.reshape(-1, self.dim)
        picks = rng.integers(0, vectors.shape[0], size=self.size)
        self.codes = vectors[picks].astype(self.codes.dtype)
        self.ema_count = np.ones(self.size, dtype=self.codes.dtype)
        self.ema_sum = self.codes.copy()
        self.initialized = True

    def quantize(self, vectors: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Nearest codes by squared Euclidean distance; ties break low.

        vectors (M, dim) -> (indices (M,), codes (M, dim)).
        """
        if not self.initialized:
            raise RuntimeError("codebook is not initialized")
        v = vectors.reshape(-1, self.dim)
        d = (
            (v * v).sum(axis=1, keepdims=True)
            - 2.0 * (v @ self.codes.T)
            + (self.codes * self.codes).sum(axis=1)
        )
        idx = d.argmin(axis=1)
        return idx, self.codes[idx]

    def ema_update(self, vectors: np.ndarray, indices: np.ndarray) -> None:
        """Fold one minibatch of assignments into the EMA statistics."""
        v = vectors.reshape(-1, self.dim)
        counts = np.bincount(indices, minlength=self.size).astype(self.codes.dtype)
        sums = np.zeros_like(self.ema_sum)
        np.add.at(sums, indices, v)
        self.ema_count = self.decay * self.ema_count + (1.0 - self.decay) * counts
        self.ema_sum = self.decay * self.ema_sum + (1.0 - self.decay) * sums
        self.codes = self.ema_sum / np.maximum(self.ema_count, self.eps)[:, None]

    def state_arrays(self, prefix: str) -> dict[str, np.ndarray]:
        return {
            f"{prefix}.codes": self.codes,
            f"{prefix}.ema_count": self.ema_count,
            f"{prefix}.ema_sum": self.ema_sum,
            f"{prefix}.initialized": np.array(int(self.initialized), dtype=np.int64),
        }

    def load_state(self, arrays: dict[str, np.ndarray], prefix: str) -> None:
        dtype = self.codes.dtype
        self.codes = arrays[f"{prefix}.codes"].astype(dtype)
        self.ema_count = arrays[f"{prefix}.ema_count"].astype(dtype)
        self.ema_sum = arrays[f"{prefix}.ema_sum"].astype(dtype)
        self.initialized = bool(arrays[f"{prefix}.initialized"])
        if self.codes.shape != (self.size, self.dim):
            raise ValueError(
                f"codebook shape {self.codes.shape} does not match config ({self.size}, {self.dim})"
            )


def straight_through(e: Tensor, quantized: np.ndarray, tape=None) -> Tensor:
    """Forward value `quantized`; gradient flows to `e` as identity.

    Implemented as e + stop_gradient(quantized - e).
    """
    delta = nn.stop_gradient(nn.sub(Tensor(quantized), e))
    return nn.add(e, delta, tape=tape)


def commitment_loss(e: Tensor, quantized: np.ndarray, weight: float, tape=None) -> Tensor:
    """weight * mean over frames of the squared distance ||e_i - sg(q_i)||^2.

    The distance sums over the code dimension; the mean over frames keeps the
    weight batch-size independent. One frame at distance 1 gives weight * 1.
    """
    err = nn.sub(e, Tensor(np.asarray(quantized, dtype=e.data.dtype)), tape=tape)
    dim = e.data.shape[-1]
    return nn.scale(nn.mean_all(nn.square(err, tape=tape), tape=tape), weight * dim, tape=tape)


def codebook_error(e_values: np.ndarray, quantized: np.ndarray) -> float:
    """Mean over frames of ||sg(e_i) - q_i||^2, logged; EMA optimizes it."""
    return float(np.mean(((e_values - quantized) ** 2).sum(axis=-1)))


def codebook_perplexity(indices: np.ndarray, size: int) -> float:
    """exp(entropy) of the empirical code distribution; in [1, size]."""
    idx = np.asarray(indices).reshape(-1)
    if idx.size == 0:
        raise ValueError("perplexity of an empty index sequence")
    counts = np.bincount(idx, minlength=size)
    p = counts / idx.size
    nz = p[p > 0]
    return float(np.exp(-(nz * np.log(nz)).sum()))


class QuantizerHead:
    """One speech head: a 768 -> code_dim projection plus its codebook."""

    def __init__(self, name: str, input_dim: int, cfg: QuantizerConfig, size: int,
                 rng: np.random.Generator, dtype=np.float64):
        self.proj_w = Parameter(
            nn.uniform_init(rng, (input_dim, cfg.code_dim), input_dim, dtype), f"{name}.proj.w"
        )
        self.proj_b = Parameter(np.zeros(cfg.code_dim, dtype=dtype), f"{name}.proj.b")
        self.codebook = Codebook(size, cfg.code_dim, cfg.ema_decay, dtype=dtype)
        self.name = name

    def project(self, e: Tensor, tape=None) -> Tensor:
        return nn.dense(e, self.proj_w, self.proj_b, tape=tape)

    def parameters(self):
        return [self.proj_w, self.proj_b]


class VectorQuantizer:
    """The full bottleneck: speech heads plus a single speaker codebook."""

    def __init__(self, cfg: QuantizerConfig, encoder_dim: int, speaker_dim: int,
                 rng: np.random.Generator, dtype=np.float64, speaker_codebook_size: int | None = None):
        self.cfg = cfg
        self.heads = [
            QuantizerHead(f"quantizer.head{i}", encoder_dim, cfg, cfg.codebook_size, rng, dtype)
            for i in range(cfg.num_speech_codebooks)
        ]
        self.speaker = QuantizerHead(
            "quantizer.speaker", speaker_dim, cfg,
            speaker_codebook_size or cfg.codebook_size, rng, dtype,
        )

    @property
    def initialized(self) -> bool:
        return all(h.codebook.initialized for h in self.heads) and self.speaker.codebook.initialized

    def parameters(self):
        params = []
        for h in self.heads:
            params.extend(h.parameters())
        params.extend(self.speaker.parameters())
        return params

    def codebook_arrays(self) -> dict[str, np.ndarray]:
        arrays = {}
        for h in self.heads:
            arrays.update(h.codebook.state_arrays(h.name))
        arrays.update(self.speaker.codebook.state_arrays(self.speaker.name))
        return arrays

    def load_codebooks(self, arrays: dict[str, np.ndarray]) -> None:
        for h in self.heads:
            h.codebook.load_state(arrays, h.name)
        self.speaker.codebook.load_state(arrays, self.speaker.name)
