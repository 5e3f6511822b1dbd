"""Training loop and experiments.

The joint objective is the teacher-forced cross-entropy over mu-law codes of
the clean target plus the commitment term; codebooks are moved by EMA k-means
rather than by gradient. One trainer owns the model; manifest batches are
drawn by a worker thread through a bounded queue, with the batch for global
step k derived from (seed, k) so that prefetch depth and resume points cannot
change the data order.
"""

from __future__ import annotations

import math
import queue
import threading
import warnings
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from . import nn
from .data import (
    DatasetManifest,
    SamplerConfig,
    sample_clean_example,
    sample_training_example,
)
from .decoder import condition
from .dsp import CODEC_SAMPLE_RATE, Waveform, log_mel, mulaw_decode, mulaw_encode
from .encoder import ConvStack
from .errors import NumericalError
from .model import CompressorEnhancer, ModelConfig, full_config, tiny_config
from .nn import Adam, Parameter, Tape, Tensor
from .quantizer import (
    codebook_error,
    codebook_perplexity,
    commitment_loss,
    straight_through,
)

MODES = ("enhancing", "codec_only", "enhancing_low_noise")
PRESETS = ("full", "tiny")

# One short line per config key, surfaced verbatim by `train --help`.
CONFIG_DOC = {
    "mode": "enhancing (noisy in, clean target), codec_only (clean in and"
            " target, never reads noise), or enhancing_low_noise (SNR 5-25 dB)",
    "preset": "model size: full, or tiny (test scale)",
    "num_speech_codebooks": "speech codebooks; 0 = preset default (full 3, tiny 1)",
    "batch_size": "examples per optimizer step",
    "sample_seconds": "crop length per example; x16000 samples must be a"
                      " multiple of 320",
    "steps": "total optimizer steps",
    "lr": "Adam learning rate",
    "lr_final": "if >= 0, decay lr linearly to this value over `steps`",
    "adam_beta1": "Adam first-moment decay",
    "adam_beta2": "Adam second-moment decay",
    "adam_eps": "Adam denominator epsilon",
    "commitment_weight": "weight on the encoder-to-code commitment term",
    "ema_decay": "codebook EMA k-means decay",
    "grad_clip": "global gradient-norm clip; 0 disables",
    "seed": "master seed for init and data draws",
    "mel_window_seconds": "analysis window (hop is fixed at 10 ms)",
    "snr_min": "lower edge of the training SNR draw (dB)",
    "snr_max": "upper edge of the training SNR draw (dB)",
    "nonstationary_weight": "sampling-weight multiplier for flagged noise files",
    "reverb_probability": "chance a drawn example is convolved with a random room",
    "log_interval": "steps between progress lines; 0 silences them",
    "checkpoint_interval": "steps between checkpoints; 0 = final only",
    "queue_depth": "prefetched batches held by the data worker",
    "dtype": "training array precision: float32 or float64",
}


@dataclass
class TrainConfig:
    """Flat training configuration; serializes to `key = value` text."""

    mode: str = "enhancing"
    preset: str = "full"
    num_speech_codebooks: int = 0
    batch_size: int = 80
    sample_seconds: float = 1.0
    steps: int = 100000
    lr: float = 1e-3
    lr_final: float = -1.0
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    commitment_weight: float = 0.25
    ema_decay: float = 0.99
    grad_clip: float = 0.0
    seed: int = 0
    mel_window_seconds: float = 0.025
    snr_min: float = -5.0
    snr_max: float = 25.0
    nonstationary_weight: float = 2.0
    reverb_probability: float = 1.0
    log_interval: int = 50
    checkpoint_interval: int = 0
    queue_depth: int = 4
    dtype: str = "float32"

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.preset not in PRESETS:
            raise ValueError(f"preset must be one of {PRESETS}, got {self.preset!r}")
        if self.dtype not in ("float32", "float64"):
            raise ValueError(f"dtype must be float32 or float64, got {self.dtype!r}")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        n = self.sample_seconds * CODEC_SAMPLE_RATE
        if abs(n - round(n)) > 1e-9:
            raise ValueError(
                f"sample_seconds x {CODEC_SAMPLE_RATE} must be an integer, got {n}"
            )
        if self.lr < 0:
            raise ValueError("lr must be >= 0")

    @property
    def sample_count(self) -> int:
        return int(round(self.sample_seconds * CODEC_SAMPLE_RATE))

    def to_file(self, path) -> None:
        lines = [f"{f.name} = {getattr(self, f.name)}" for f in fields(self)]
        Path(path).write_text("\n".join(lines) + "\n")

    @classmethod
    def from_file(cls, path) -> "TrainConfig":
        """Parse `key = value` lines; '#' starts a comment."""
        defaults = cls()
        overrides = {}
        for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, value = line.partition("=")
            key, value = key.strip(), value.strip()
            if not sep or not key:
                raise ValueError(f"{path}:{lineno}: expected 'key = value', got {raw!r}")
            if not hasattr(defaults, key) or key not in CONFIG_DOC:
                raise ValueError(f"{path}:{lineno}: unknown config key {key!r}")
            kind = type(getattr(defaults, key))
            try:
                overrides[key] = kind(value)
            except ValueError:
                raise ValueError(
                    f"{path}:{lineno}: {key} expects {kind.__name__}, got {value!r}"
                ) from None
        return cls(**overrides)


def build_model_config(cfg: TrainConfig) -> ModelConfig:
    """Model architecture implied by a training configuration."""
    heads = cfg.num_speech_codebooks
    if cfg.preset == "tiny":
        mc = tiny_config(dtype=cfg.dtype, num_speech_codebooks=heads or 1)
    else:
        mc = full_config(
            num_speech_codebooks=heads or 3,
            dtype=cfg.dtype,
            window_seconds=cfg.mel_window_seconds,
        )
    mc.quantizer.commitment = cfg.commitment_weight
    mc.quantizer.ema_decay = cfg.ema_decay
    return mc


@dataclass
class LossReport:
    """Loss terms from one forward pass. total = ce + vq_commitment exactly;
    codebook_error is the EMA-optimized term, logged only. perplexity has one
    entry per speech codebook plus the speaker codebook last."""

    total: float
    ce: float
    vq_commitment: float
    codebook_error: float
    perplexity: tuple

    def describe(self) -> str:
        perp = "/".join(f"{p:.1f}" for p in self.perplexity)
        return (
            f"total {self.total:.4f}  ce {self.ce:.4f}  commit {self.vq_commitment:.4f}"
            f"  cb_err {self.codebook_error:.4f}  perplexity {perp}"
        )


def _as_sample_batch(x) -> np.ndarray:
    """Waveform | (L,) | (B, L) -> float64 (B, L)."""
    arr = np.asarray(getattr(x, "samples", x), dtype=np.float64)
    return arr[None] if arr.ndim == 1 else arr


def _batch_mels(model: CompressorEnhancer, inputs: np.ndarray) -> np.ndarray:
    frames = [
        log_mel(Waveform(x, CODEC_SAMPLE_RATE), model.config.mel).frames for x in inputs
    ]
    return np.stack(frames)


def _forward(model, inputs, target_codes, tape, training, rng=None):
    """Shared forward pass.

    Returns (total loss tensor, LossReport, ema updates to apply). The caller
    decides whether to backprop and whether to fold the EMA statistics in.
    """
    q = model.quantizer
    dtype = model.config.np_dtype
    weight = model.config.quantizer.commitment
    mel_t = Tensor(_batch_mels(model, inputs).astype(dtype))
    frames = model.speech_encoder(mel_t, training=training, tape=tape)
    speaker = model.speaker_encoder(mel_t, training=training, tape=tape)

    st_heads, commit_terms, perplexities, ema_batches = [], [], [], []
    err_total = 0.0
    for head in q.heads:
        e = head.project(frames, tape=tape)
        flat = e.data.reshape(-1, e.data.shape[-1])
        if not head.codebook.initialized:
            if rng is None:
                raise RuntimeError(f"{head.name} codebook is not initialized")
            head.codebook.initialize_from(flat, rng)
        idx, codes = head.codebook.quantize(flat)
        quantized = codes.reshape(e.data.shape)
        st_heads.append(straight_through(e, quantized, tape=tape))
        commit_terms.append(commitment_loss(e, quantized, weight, tape=tape))
        err_total += codebook_error(e.data, quantized)
        perplexities.append(codebook_perplexity(idx, head.codebook.size))
        ema_batches.append((head.codebook, flat, idx))

    se = q.speaker.project(speaker, tape=tape)
    if not q.speaker.codebook.initialized:
        if rng is None:
            raise RuntimeError("speaker codebook is not initialized")
        q.speaker.codebook.initialize_from(se.data, rng)
    sidx, scodes = q.speaker.codebook.quantize(se.data)
    st_speaker = straight_through(se, scodes, tape=tape)
    commit_terms.append(commitment_loss(se, scodes, weight, tape=tape))
    err_total += codebook_error(se.data, scodes)
    perplexities.append(codebook_perplexity(sidx, q.speaker.codebook.size))
    ema_batches.append((q.speaker.codebook, se.data, sidx))

    speech_q = st_heads[0] if len(st_heads) == 1 else nn.concat_last(st_heads, tape=tape)
    cond = condition(speech_q, st_speaker, tape=tape)
    logits = model.decoder.teacher_forced_logits(cond, target_codes, tape=tape)
    ce = nn.softmax_cross_entropy(logits, target_codes, tape=tape)

    commit = commit_terms[0]
    for term in commit_terms[1:]:
        commit = nn.add(commit, term, tape=tape)
    total = nn.add(ce, commit, tape=tape)

    ce_val, commit_val = float(ce.data), float(commit.data)
    report = LossReport(
        total=ce_val + commit_val,
        ce=ce_val,
        vq_commitment=commit_val,
        codebook_error=err_total / (len(q.heads) + 1),
        perplexity=tuple(perplexities),
    )
    return total, report, ema_batches


def total_loss(x, s, model: CompressorEnhancer, rng=None) -> LossReport:
    """Loss terms for input x against clean target s, with no state updates.

    Accepts Waveforms or sample arrays, single or batched. Uninitialized
    codebooks are seeded from this batch (rng defaults to a fixed seed).
    """
    inputs = _as_sample_batch(x)
    targets = mulaw_encode(_as_sample_batch(s))
    if rng is None:
        rng = np.random.default_rng(0)
    _, report, _ = _forward(model, inputs, targets, None, training=False, rng=rng)
    return report


def _clip_gradients(params, limit: float) -> None:
    total = 0.0
    for p in params:
        if p.grad is not None:
            total += float((p.grad.astype(np.float64) ** 2).sum())
    norm = math.sqrt(total)
    if norm > limit > 0:
        factor = limit / norm
        for p in params:
            if p.grad is not None:
                p.grad *= factor


def train_step(batch, model: CompressorEnhancer, optimizer: Adam,
               config: TrainConfig | None = None, rng=None) -> LossReport:
    """One step: forward, backward, Adam update, then codebook EMA update.

    The EMA update runs even at lr = 0. A non-finite loss aborts with the
    name of the first op whose output went non-finite.
    """
    x, s = batch
    inputs = _as_sample_batch(x)
    targets = mulaw_encode(_as_sample_batch(s))
    tape = Tape()
    total, report, ema_batches = _forward(model, inputs, targets, tape,
                                          training=True, rng=rng)
    if not math.isfinite(report.total):
        culprit = tape.first_nonfinite() or "loss"
        raise NumericalError(f"non-finite loss; first non-finite tensor from op {culprit!r}")
    optimizer.zero_grad()
    tape.backward(total)
    if config is not None and config.grad_clip > 0:
        _clip_gradients(optimizer.params, config.grad_clip)
    optimizer.step()
    for codebook, vectors, indices in ema_batches:
        codebook.ema_update(vectors, indices)
    return report


class _BatchSource:
    """Fixed in-memory pairs, or manifest draws keyed by global step."""

    def __init__(self, config: TrainConfig, manifest: DatasetManifest | None = None,
                 fixed_pairs=None, file_read_hook=None):
        if (manifest is None) == (fixed_pairs is None):
            raise ValueError("provide exactly one of manifest or fixed_pairs")
        self.config = config
        self.manifest = manifest
        self.file_read_hook = file_read_hook
        self.fixed = None
        if fixed_pairs is not None:
            xs = np.stack([_as_sample_batch(p[0])[0] for p in fixed_pairs])
            ss = np.stack([_as_sample_batch(p[1])[0] for p in fixed_pairs])
            if xs.shape != ss.shape:
                raise ValueError("input/target length mismatch in fixed pairs")
            self.fixed = (xs, ss)
        self.sampler_cfg = SamplerConfig(
            sample_seconds=config.sample_seconds,
            snr_range=(config.snr_min, config.snr_max),
            nonstationary_weight=config.nonstationary_weight,
            reverb_probability=config.reverb_probability,
        )

    def draw(self, step: int):
        if self.fixed is not None:
            return self.fixed
        rng = np.random.default_rng([self.config.seed, 1, step])
        xs, ss = [], []
        for _ in range(self.config.batch_size):
            if self.config.mode == "codec_only":
                r = sample_clean_example(self.manifest, rng, self.sampler_cfg,
                                         self.file_read_hook)
            else:
                mode = "low_noise" if self.config.mode == "enhancing_low_noise" else "standard"
                r = sample_training_example(self.manifest, rng, mode, self.sampler_cfg,
                                            self.file_read_hook)
            xs.append(r.x.samples)
            ss.append(r.target.samples)
        return np.stack(xs), np.stack(ss)

    def iter_steps(self, start: int, end: int):
        """Yield (step, batch) for start <= step < end, prefetching manifests."""
        if self.fixed is not None:
            for k in range(start, end):
                yield k, self.fixed
            return
        out: queue.Queue = queue.Queue(maxsize=max(1, self.config.queue_depth))

        def worker():
            try:
                for k in range(start, end):
                    out.put((k, self.draw(k)))
                out.put(None)
            except Exception as exc:  # re-raised on the training thread
                out.put(exc)

        threading.Thread(target=worker, daemon=True).start()
        while True:
            item = out.get()
            if item is None:
                return
            if isinstance(item, Exception):
                raise item
            yield item


class Trainer:
    """Owns one model and optimizer; runs steps and writes checkpoints."""

    def __init__(self, config: TrainConfig, model: CompressorEnhancer | None = None,
                 manifest: DatasetManifest | None = None, fixed_pairs=None,
                 file_read_hook=None):
        self.config = config
        if config.sample_count % 320 != 0:
            raise ValueError(
                f"{config.sample_count} samples do not map to whole decoder frames;"
                " sample_seconds x 16000 must be a multiple of 320"
            )
        self.model = model or CompressorEnhancer(build_model_config(config), seed=config.seed)
        self.optimizer = Adam(
            self.model.parameters(), lr=config.lr,
            beta1=config.adam_beta1, beta2=config.adam_beta2, eps=config.adam_eps,
        )
        self.source = _BatchSource(config, manifest, fixed_pairs, file_read_hook)
        self.step_index = 0
        self.history: list[LossReport] = []
        # Consumed only for first-batch codebook seeding.
        self._init_rng = np.random.default_rng([config.seed, 2])

    def _lr_at(self, step: int) -> float:
        cfg = self.config
        if cfg.lr_final < 0 or cfg.steps <= 1:
            return cfg.lr
        frac = min(step / max(cfg.steps - 1, 1), 1.0)
        return cfg.lr + (cfg.lr_final - cfg.lr) * frac

    def run(self, steps: int | None = None, checkpoint_path=None, log_fn=None) -> list[LossReport]:
        """Advance to global step `steps` (default: config.steps)."""
        end = self.config.steps if steps is None else steps
        interval = self.config.checkpoint_interval
        for step, batch in self.source.iter_steps(self.step_index, end):
            self.optimizer.lr = self._lr_at(step)
            report = train_step(batch, self.model, self.optimizer, self.config,
                                rng=self._init_rng)
            self.history.append(report)
            self.step_index = step + 1
            if log_fn and self.config.log_interval and step % self.config.log_interval == 0:
                log_fn(f"step {step}  {report.describe()}")
            if checkpoint_path and interval and self.step_index % interval == 0:
                self.save_checkpoint(checkpoint_path)
        if checkpoint_path:
            self.save_checkpoint(checkpoint_path)
        return self.history

    def save_checkpoint(self, path) -> None:
        extra = {f"adam.m.{k}": v for k, v in self.optimizer.m.items()}
        extra.update({f"adam.v.{k}": v for k, v in self.optimizer.v.items()})
        extra["adam.t"] = np.array(self.optimizer.t, dtype=np.int64)
        self.model.save(
            path,
            extra_config={"trainer": {"step": self.step_index, "config": asdict(self.config)}},
            extra_arrays=extra,
        )

    @classmethod
    def from_checkpoint(cls, path, manifest=None, fixed_pairs=None,
                        file_read_hook=None) -> "Trainer":
        """Rebuild a trainer that resumes bit-identically to the saved run."""
        model, blob, arrays = CompressorEnhancer.load(path)
        state = blob.get("trainer")
        if state is None:
            raise ValueError(f"{path} has no trainer state; was it saved by a Trainer?")
        config = TrainConfig(**state["config"])
        trainer = cls(config, model=model, manifest=manifest, fixed_pairs=fixed_pairs,
                      file_read_hook=file_read_hook)
        trainer.step_index = int(state["step"])
        opt = trainer.optimizer
        opt.t = int(arrays["adam.t"])
        for p in opt.params:
            opt.m[p.name] = arrays[f"adam.m.{p.name}"].astype(p.data.dtype)
            opt.v[p.name] = arrays[f"adam.v.{p.name}"].astype(p.data.dtype)
        return trainer


class LatentEnhancer:
    """Frame classifier mapping noisy mel input to a frozen codec's codes.

    A fresh convolutional stack plus one projection per speech codebook;
    per-frame logits are the negated squared distances to the frozen
    codebook rows, so argmax agrees with nearest-code quantization.
    """

    def __init__(self, codec: CompressorEnhancer, seed: int = 0):
        cfg = codec.config
        dtype = cfg.np_dtype
        rng = np.random.default_rng(seed)
        self.codec = codec
        self.stack = ConvStack(
            "enhancer", cfg.encoder.mel_bins, cfg.encoder.filters,
            cfg.encoder.strides, cfg.encoder.kernels, rng,
            cfg.encoder.bn_momentum, cfg.encoder.bn_eps, dtype,
        )
        dim = cfg.quantizer.code_dim
        self.proj = []
        for i in range(len(codec.quantizer.heads)):
            w = Parameter(nn.uniform_init(rng, (cfg.encoder.filters, dim),
                                          cfg.encoder.filters, dtype), f"enhancer.head{i}.w")
            b = Parameter(np.zeros(dim, dtype=dtype), f"enhancer.head{i}.b")
            self.proj.append((w, b))

    def parameters(self):
        params = list(self.stack.parameters())
        for w, b in self.proj:
            params.extend([w, b])
        return params

    def head_logits(self, mel: Tensor, training: bool, tape=None) -> list[Tensor]:
        frames = self.stack(mel, training=training, tape=tape)
        logits = []
        for (w, b), head in zip(self.proj, self.codec.quantizer.heads):
            p = nn.dense(frames, w, b, tape=tape)
            logits.append(nn.neg_sqdist(p, head.codebook.codes, tape=tape))
        return logits

    def predict_indices(self, x) -> np.ndarray:
        """Noisy samples -> predicted code indices (B, T50, heads)."""
        inputs = _as_sample_batch(x)
        mel = Tensor(_batch_mels(self.codec, inputs).astype(self.codec.config.np_dtype))
        logits = self.head_logits(mel, training=False)
        return np.stack([l.data.argmax(axis=-1) for l in logits], axis=-1)


@dataclass
class EnhancerReport:
    ce: float
    accuracy: float


def frozen_code_indices(codec: CompressorEnhancer, s) -> np.ndarray:
    """Per-frame indices the frozen codec assigns to clean speech (B, T, heads)."""
    inputs = _as_sample_batch(s)
    mel = Tensor(_batch_mels(codec, inputs).astype(codec.config.np_dtype))
    frames = codec.speech_encoder(mel, training=False)
    out = []
    for head in codec.quantizer.heads:
        e = head.project(frames)
        idx, _ = head.codebook.quantize(e.data.reshape(-1, e.data.shape[-1]))
        out.append(idx.reshape(e.data.shape[:2]))
    return np.stack(out, axis=-1)


def train_latent_enhancer(frozen_codec: CompressorEnhancer, config: TrainConfig,
                          manifest: DatasetManifest | None = None, fixed_pairs=None,
                          file_read_hook=None, log_fn=None):
    """Two-stage experiment: fit a fresh encoder to the frozen codec's codes.

    The codec's parameters, codebooks, and normalization statistics are never
    touched; targets are the indices it assigns to the clean reference, and
    the enhancer sees only the noisy input. Returns (enhancer, history).
    """
    if not frozen_codec.quantizer.initialized:
        raise ValueError("frozen codec has uninitialized codebooks; train it first")
    enhancer = LatentEnhancer(frozen_codec, seed=config.seed)
    optimizer = Adam(enhancer.parameters(), lr=config.lr, beta1=config.adam_beta1,
                     beta2=config.adam_beta2, eps=config.adam_eps)
    source = _BatchSource(config, manifest, fixed_pairs, file_read_hook)
    dtype = frozen_codec.config.np_dtype
    history: list[EnhancerReport] = []
    for step, (x, s) in source.iter_steps(0, config.steps):
        targets = frozen_code_indices(frozen_codec, s)  # (B, T, heads)
        mel = Tensor(_batch_mels(frozen_codec, _as_sample_batch(x)).astype(dtype))
        tape = Tape()
        logits = enhancer.head_logits(mel, training=True, tape=tape)
        loss = None
        hits = total = 0
        for i, head_logits in enumerate(logits):
            ce = nn.softmax_cross_entropy(head_logits, targets[..., i], tape=tape)
            loss = ce if loss is None else nn.add(loss, ce, tape=tape)
            pred = head_logits.data.argmax(axis=-1)
            hits += int((pred == targets[..., i]).sum())
            total += pred.size
        loss = nn.scale(loss, 1.0 / len(logits), tape=tape)
        if not math.isfinite(float(loss.data)):
            culprit = tape.first_nonfinite() or "loss"
            raise NumericalError(f"non-finite loss; first non-finite tensor from op {culprit!r}")
        optimizer.zero_grad()
        tape.backward(loss)
        if config.grad_clip > 0:
            _clip_gradients(optimizer.params, config.grad_clip)
        optimizer.step()
        report = EnhancerReport(ce=float(loss.data), accuracy=hits / total)
        history.append(report)
        if log_fn and config.log_interval and step % config.log_interval == 0:
            log_fn(f"step {step}  ce {report.ce:.4f}  accuracy {report.accuracy:.3f}")
    return enhancer, history


def segmental_snr(reference, estimate, frame: int = 160,
                  floor_db: float = -10.0, ceil_db: float = 35.0) -> float:
    """Mean per-frame SNR in dB over frames where the reference has energy.

    Frames are non-overlapping `frame`-sample blocks; per-frame values are
    clamped to [floor_db, ceil_db]. A bit-exact match returns +inf.
    """
    ref = _as_sample_batch(reference)[0]
    est = _as_sample_batch(estimate)[0]
    n = min(len(ref), len(est))
    ref, est = ref[:n], est[:n]
    err = ref - est
    if not np.any(err):
        return math.inf
    blocks = n // frame
    if blocks == 0:
        raise ValueError(f"need at least {frame} samples, got {n}")
    ref_e = (ref[: blocks * frame] ** 2).reshape(blocks, frame).sum(axis=1)
    err_e = (err[: blocks * frame] ** 2).reshape(blocks, frame).sum(axis=1)
    voiced = ref_e > 0
    if not voiced.any():
        raise ValueError("reference is silent in every frame")
    with np.errstate(divide="ignore"):
        snr = 10.0 * np.log10(ref_e[voiced] / err_e[voiced])
    return float(np.clip(snr, floor_db, ceil_db).mean())


@dataclass
class EvalPair:
    """One labeled evaluation example; s is the clean reference."""

    x: object
    s: object
    snr_db: float


@dataclass
class EvalReport:
    buckets: tuple
    rows: dict          # metric name -> {bucket: value}
    counts: dict        # bucket -> pairs evaluated

    def format_table(self) -> str:
        header = ["metric".ljust(22)] + [f"{b:>9.1f} dB" for b in self.buckets]
        lines = ["  ".join(header)]
        for name, values in self.rows.items():
            cells = []
            for b in self.buckets:
                v = values.get(b)
                cells.append("        -" if v is None else f"{v:12.4f}")
            lines.append("  ".join([name.ljust(22)] + cells))
        counts = [f"{self.counts.get(b, 0):12d}" for b in self.buckets]
        lines.append("  ".join(["pairs".ljust(22)] + counts))
        return "\n".join(lines)


def evaluate_objective(model: CompressorEnhancer, eval_set,
                       snr_buckets=(17.5, 12.5, 7.5, 2.5),
                       seed: int = 0, temperature: float = 0.0) -> EvalReport:
    """Objective metrics per SNR bucket: teacher-forced ce, mean codebook
    perplexity, and segmental SNR of generated audio against the reference.

    Pairs land in the nearest bucket; pairs without a reference are skipped
    with a warning.
    """
    buckets = tuple(sorted(snr_buckets, reverse=True))
    sums = {b: {"ce": 0.0, "perplexity": 0.0, "seg_snr": 0.0} for b in buckets}
    counts = {b: 0 for b in buckets}
    for pair in eval_set:
        if pair.s is None:
            warnings.warn(f"skipping pair at {pair.snr_db} dB: no clean reference")
            continue
        bucket = min(buckets, key=lambda b: abs(b - pair.snr_db))
        report = total_loss(pair.x, pair.s, model)
        q = model.quantize(model.encode(Waveform(_as_sample_batch(pair.x)[0],
                                                 CODEC_SAMPLE_RATE)))
        cond = model.conditioning_from_indices(q.indices, q.speaker_index)
        codes = model.decoder.generate(cond, seed=seed, temperature=temperature)
        generated = mulaw_decode(codes[0])
        sums[bucket]["ce"] += report.ce
        sums[bucket]["perplexity"] += float(np.mean(report.perplexity[:-1]))
        sums[bucket]["seg_snr"] += segmental_snr(pair.s, generated)
        counts[bucket] += 1
    rows = {
        "teacher-forced ce": {},
        "codebook perplexity": {},
        "segmental snr (dB)": {},
    }
    for b in buckets:
        if counts[b]:
            rows["teacher-forced ce"][b] = sums[b]["ce"] / counts[b]
            rows["codebook perplexity"][b] = sums[b]["perplexity"] / counts[b]
            rows["segmental snr (dB)"][b] = sums[b]["seg_snr"] / counts[b]
    return EvalReport(buckets=buckets, rows=rows, counts=counts)
