"""Training loop: config file format, loss accounting, determinism, resume."""

import math
import warnings
from dataclasses import fields

import numpy as np
import pytest

from conftest import harmonic_clip, make_overfit_pairs, tiny_train_config
from enhancodec.data import read_manifest
from enhancodec.errors import NumericalError
from enhancodec.model import CompressorEnhancer, tiny_config
from enhancodec.nn import Adam
from enhancodec.training import (
    CONFIG_DOC,
    EvalPair,
    LatentEnhancer,
    Trainer,
    TrainConfig,
    build_model_config,
    evaluate_objective,
    frozen_code_indices,
    segmental_snr,
    total_loss,
    train_latent_enhancer,
    train_step,
)


def short_pairs(n=2, seconds=0.1):
    return make_overfit_pairs(n=n, seconds=seconds)


class TestTrainConfig:
    def test_file_round_trip(self, tmp_path):
        cfg = TrainConfig(mode="codec_only", preset="tiny", batch_size=3,
                          lr=5e-4, snr_min=-2.0, log_interval=7, dtype="float64")
        path = tmp_path / "train.cfg"
        cfg.to_file(path)
        assert TrainConfig.from_file(path) == cfg

    def test_comments_and_blanks_ignored(self, tmp_path):
        path = tmp_path / "c.cfg"
        path.write_text("# comment\n\nbatch_size = 5  # trailing\npreset = tiny\n")
        cfg = TrainConfig.from_file(path)
        assert cfg.batch_size == 5
        assert cfg.preset == "tiny"

    def test_unknown_key_names_line(self, tmp_path):
        path = tmp_path / "c.cfg"
        path.write_text("batch_size = 5\nbogus_key = 1\n")
        with pytest.raises(ValueError, match=r"c\.cfg:2: unknown config key 'bogus_key'"):
            TrainConfig.from_file(path)

    def test_bad_value_names_line_and_type(self, tmp_path):
        path = tmp_path / "c.cfg"
        path.write_text("steps = plenty\n")
        with pytest.raises(ValueError, match=r"c\.cfg:1: steps expects int, got 'plenty'"):
            TrainConfig.from_file(path)

    def test_missing_separator_rejected(self, tmp_path):
        path = tmp_path / "c.cfg"
        path.write_text("steps 100\n")
        with pytest.raises(ValueError, match="expected 'key = value'"):
            TrainConfig.from_file(path)

    @pytest.mark.parametrize("bad", [
        dict(mode="denoise"),
        dict(preset="huge"),
        dict(dtype="float16"),
        dict(batch_size=0),
        dict(lr=-1e-3),
        dict(sample_seconds=0.12345),
    ])
    def test_validation(self, bad):
        with pytest.raises(ValueError):
            TrainConfig(**bad)

    def test_sample_count(self):
        assert TrainConfig(sample_seconds=0.2).sample_count == 3200

    def test_help_doc_covers_every_field(self):
        assert set(CONFIG_DOC) == {f.name for f in fields(TrainConfig)}

    def test_build_model_config_defaults_and_overrides(self):
        tiny = build_model_config(tiny_train_config(num_speech_codebooks=0))
        assert tiny.quantizer.num_speech_codebooks == 1
        full = build_model_config(TrainConfig(preset="full", commitment_weight=0.5,
                                              ema_decay=0.9))
        assert full.quantizer.num_speech_codebooks == 3
        assert full.quantizer.commitment == 0.5
        assert full.quantizer.ema_decay == 0.9


class TestLossAccounting:
    def test_total_is_exactly_ce_plus_commitment(self, tiny_model):
        pairs = short_pairs()
        total_loss(pairs[1][0], pairs[1][1], tiny_model)  # seeds books elsewhere
        x, s = pairs[0]
        report = total_loss(x, s, tiny_model)
        assert report.total == report.ce + report.vq_commitment
        assert report.vq_commitment > 0
        assert math.isfinite(report.codebook_error)

    def test_untrained_ce_near_uniform(self, tiny_model):
        x, s = short_pairs()[0]
        report = total_loss(x, s, tiny_model)
        assert abs(report.ce - math.log(256.0)) < 0.7

    def test_perplexity_one_entry_per_book_plus_speaker(self, tiny_model):
        x, s = short_pairs()[0]
        report = total_loss(x, s, tiny_model)
        assert len(report.perplexity) == 2
        assert all(p >= 1.0 for p in report.perplexity)

    def test_describe_mentions_every_term(self, tiny_model):
        x, s = short_pairs()[0]
        line = total_loss(x, s, tiny_model).describe()
        for token in ("total", "ce", "commit", "cb_err", "perplexity"):
            assert token in line

    def test_uninitialized_codebook_without_rng_rejected(self, tiny_model):
        x, s = short_pairs()[0]
        opt = Adam(tiny_model.parameters(), lr=1e-3)
        with pytest.raises(RuntimeError, match="not initialized"):
            train_step((x, s), tiny_model, opt, rng=None)


class TestTrainStep:
    def test_zero_lr_freezes_params_but_ema_moves(self, tiny_model):
        batch = short_pairs()[0]
        opt = Adam(tiny_model.parameters(), lr=0.0)
        rng = np.random.default_rng(0)
        train_step(batch, tiny_model, opt, rng=rng)  # seeds the codebooks
        before_params = {p.name: p.data.copy() for p in tiny_model.parameters()}
        book = tiny_model.quantizer.heads[0].codebook
        before_count = book.ema_count.copy()
        train_step(batch, tiny_model, opt, rng=rng)
        for p in tiny_model.parameters():
            np.testing.assert_array_equal(p.data, before_params[p.name], err_msg=p.name)
        assert not np.array_equal(book.ema_count, before_count)

    def test_non_finite_loss_names_first_bad_op(self, tiny_model):
        batch = short_pairs()[0]
        opt = Adam(tiny_model.parameters(), lr=1e-3)
        tiny_model.speech_encoder.parameters()[0].data[0] = np.nan
        with pytest.raises(NumericalError,
                           match="non-finite loss; first non-finite tensor from op 'conv1d'"):
            train_step(batch, tiny_model, opt, rng=np.random.default_rng(0))

    def test_gradient_clip_shrinks_update(self):
        pairs = short_pairs(n=1)
        cfg_free = tiny_train_config(steps=1, lr=1e-2, grad_clip=0.0)
        cfg_clip = tiny_train_config(steps=1, lr=1e-2, grad_clip=1e-6)
        a = Trainer(cfg_free, fixed_pairs=pairs)
        b = Trainer(cfg_clip, fixed_pairs=pairs)
        start = {p.name: p.data.copy() for p in a.model.parameters()}
        a.run()
        b.run()
        moved_a = sum(float(np.abs(p.data - start[p.name]).sum()) for p in a.model.parameters())
        moved_b = sum(float(np.abs(p.data - start[p.name]).sum()) for p in b.model.parameters())
        assert moved_b < moved_a


class TestTrainer:
    def test_rejects_partial_decoder_frames(self):
        with pytest.raises(ValueError, match="multiple of 320"):
            Trainer(tiny_train_config(sample_seconds=0.01), fixed_pairs=short_pairs())

    def test_requires_exactly_one_source(self):
        cfg = tiny_train_config(steps=1)
        with pytest.raises(ValueError, match="exactly one"):
            Trainer(cfg)

    def test_run_advances_and_reports(self):
        cfg = tiny_train_config(steps=3, batch_size=2)
        trainer = Trainer(cfg, fixed_pairs=short_pairs())
        history = trainer.run()
        assert len(history) == 3
        assert trainer.step_index == 3
        assert all(math.isfinite(r.total) for r in history)

    def test_same_seed_is_bit_identical(self):
        pairs = short_pairs()
        cfg = tiny_train_config(steps=3, batch_size=2)
        a = Trainer(cfg, fixed_pairs=pairs).run()
        b = Trainer(cfg, fixed_pairs=pairs).run()
        assert a == b

    def test_log_fn_fires_on_interval(self):
        cfg = tiny_train_config(steps=2, batch_size=2, log_interval=1)
        lines = []
        Trainer(cfg, fixed_pairs=short_pairs()).run(log_fn=lines.append)
        assert len(lines) == 2
        assert lines[0].startswith("step 0")
        assert "ce" in lines[0]

    def test_lr_schedule_endpoints(self):
        cfg = tiny_train_config(steps=5, lr=1e-3, lr_final=1e-4)
        trainer = Trainer(cfg, fixed_pairs=short_pairs())
        assert trainer._lr_at(0) == pytest.approx(1e-3)
        assert trainer._lr_at(4) == pytest.approx(1e-4)
        assert trainer._lr_at(2) == pytest.approx(5.5e-4)
        flat = Trainer(tiny_train_config(steps=5, lr=1e-3), fixed_pairs=short_pairs())
        assert flat._lr_at(4) == 1e-3

    def test_checkpoint_resume_is_bit_identical(self, tmp_path):
        pairs = short_pairs()
        cfg = tiny_train_config(steps=6, batch_size=2)
        straight = Trainer(cfg, fixed_pairs=pairs)
        full_history = straight.run()

        path = tmp_path / "ckpt.enck"
        head = Trainer(cfg, fixed_pairs=pairs)
        head.run(steps=3, checkpoint_path=path)
        resumed = Trainer.from_checkpoint(path, fixed_pairs=pairs)
        assert resumed.step_index == 3
        tail_history = resumed.run()

        assert full_history[:3] == head.history
        assert full_history[3:] == tail_history

        want = straight.model.state_arrays()
        got = resumed.model.state_arrays()
        assert set(want) == set(got)
        for name in want:
            np.testing.assert_array_equal(want[name], got[name], err_msg=name)
        assert resumed.optimizer.t == straight.optimizer.t
        for name in straight.optimizer.m:
            np.testing.assert_array_equal(resumed.optimizer.m[name],
                                          straight.optimizer.m[name], err_msg=name)
            np.testing.assert_array_equal(resumed.optimizer.v[name],
                                          straight.optimizer.v[name], err_msg=name)

    def test_from_checkpoint_rejects_bare_model_file(self, tmp_path, tiny_model):
        path = tmp_path / "bare.enck"
        tiny_model.save(path)
        with pytest.raises(ValueError, match="no trainer state"):
            Trainer.from_checkpoint(path, fixed_pairs=short_pairs())

    def test_prefetch_depth_does_not_change_data_order(self, wav_dir):
        manifest = read_manifest(wav_dir["speech_manifest"], wav_dir["noise_manifest"])
        histories = []
        for depth in (1, 4):
            cfg = tiny_train_config(steps=2, batch_size=2, sample_seconds=0.2,
                                    queue_depth=depth)
            histories.append(Trainer(cfg, manifest=manifest).run())
        assert histories[0] == histories[1]

    def test_codec_only_never_opens_noise_files(self, wav_dir):
        manifest = read_manifest(wav_dir["speech_manifest"], wav_dir["noise_manifest"])
        opened = []
        cfg = tiny_train_config(mode="codec_only", steps=2, batch_size=2,
                                sample_seconds=0.2)
        Trainer(cfg, manifest=manifest, file_read_hook=opened.append).run()
        assert opened
        noise_paths = {str(p) for p in wav_dir["noise"]}
        speech_paths = {str(p) for p in wav_dir["speech"]}
        assert set(opened) <= speech_paths
        assert not set(opened) & noise_paths


class TestLatentEnhancer:
    def test_requires_trained_codec(self, tiny_model):
        cfg = tiny_train_config(steps=1)
        with pytest.raises(ValueError, match="uninitialized codebooks"):
            train_latent_enhancer(tiny_model, cfg, fixed_pairs=short_pairs())

    def test_codec_stays_frozen_bit_for_bit(self, tiny_model):
        pairs = short_pairs()
        total_loss(pairs[0][0], pairs[0][1], tiny_model)  # seeds the codebooks
        before = {k: v.copy() for k, v in tiny_model.state_arrays().items()}
        cfg = tiny_train_config(steps=3, batch_size=2, lr=1e-3)
        enhancer, history = train_latent_enhancer(tiny_model, cfg, fixed_pairs=pairs)
        after = tiny_model.state_arrays()
        for name in before:
            np.testing.assert_array_equal(after[name], before[name], err_msg=name)
        assert len(history) == 3
        assert all(0.0 <= r.accuracy <= 1.0 for r in history)

    def test_predict_indices_shape_and_range(self, tiny_model):
        pairs = short_pairs()
        total_loss(pairs[0][0], pairs[0][1], tiny_model)
        cfg = tiny_train_config(steps=1, batch_size=2)
        enhancer, _ = train_latent_enhancer(tiny_model, cfg, fixed_pairs=pairs)
        idx = enhancer.predict_indices(np.stack([pairs[0][0], pairs[1][0]]))
        assert idx.shape == (2, 5, 1)
        assert idx.min() >= 0 and idx.max() < 64

    def test_frozen_targets_match_codec_quantization(self, tiny_model):
        from enhancodec.dsp import CODEC_SAMPLE_RATE, Waveform

        clip = harmonic_clip(0.5, 120.0, seed=9)
        total_loss(clip, clip, tiny_model)
        idx = frozen_code_indices(tiny_model, clip)
        q = tiny_model.quantize(tiny_model.encode(Waveform(clip, CODEC_SAMPLE_RATE)))
        np.testing.assert_array_equal(idx[0], q.indices)


class TestSegmentalSNR:
    def test_exact_match_is_infinite(self):
        x = harmonic_clip(0.1, 100.0, seed=0)
        assert segmental_snr(x, x.copy()) == math.inf

    def test_constant_error_hand_value(self):
        ref = np.ones(320)
        assert segmental_snr(ref, ref - 0.1) == pytest.approx(20.0, abs=1e-9)

    def test_floor_and_ceiling(self):
        ref = np.ones(320)
        assert segmental_snr(ref, ref - 10.0) == pytest.approx(-10.0)
        assert segmental_snr(ref, ref - 1e-4) == pytest.approx(35.0)
        half = np.concatenate([np.full(160, 0.1), np.full(160, 1e-4)])
        assert segmental_snr(ref, ref - half) == pytest.approx((20.0 + 35.0) / 2)

    def test_silent_reference_frames_excluded(self):
        ref = np.concatenate([np.zeros(160), np.ones(160)])
        est = ref - 0.1
        assert segmental_snr(ref, est) == pytest.approx(20.0, abs=1e-9)

    def test_length_mismatch_truncates(self):
        ref = np.ones(400)
        est = np.concatenate([np.ones(320) - 0.1, np.zeros(80)])
        assert segmental_snr(ref, est[:320]) == segmental_snr(ref, est)

    def test_too_short_rejected(self):
        with pytest.raises(ValueError, match="need at least 160"):
            segmental_snr(np.ones(100), np.zeros(100))

    def test_fully_silent_reference_rejected(self):
        with pytest.raises(ValueError, match="silent"):
            segmental_snr(np.zeros(320), np.ones(320))


class TestEvaluateObjective:
    def test_buckets_counts_and_skips(self, tiny_model):
        pairs = short_pairs(n=2)
        eval_set = [
            EvalPair(x=pairs[0][0], s=pairs[0][1], snr_db=4.0),
            EvalPair(x=pairs[1][0], s=pairs[1][1], snr_db=18.0),
            EvalPair(x=pairs[0][0], s=None, snr_db=10.0),
        ]
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            report = evaluate_objective(tiny_model, eval_set)
        assert any("no clean reference" in str(w.message) for w in caught)
        assert report.buckets == (17.5, 12.5, 7.5, 2.5)
        assert report.counts == {17.5: 1, 12.5: 0, 7.5: 0, 2.5: 1}
        assert set(report.rows) == {"teacher-forced ce", "codebook perplexity",
                                    "segmental snr (dB)"}
        for values in report.rows.values():
            assert set(values) == {17.5, 2.5}

    def test_format_table_shows_gaps(self, tiny_model):
        pairs = short_pairs(n=1)
        report = evaluate_objective(
            tiny_model, [EvalPair(x=pairs[0][0], s=pairs[0][1], snr_db=0.0)]
        )
        table = report.format_table()
        assert "metric" in table and "pairs" in table
        assert "-" in table  # empty buckets stay blank
        assert "segmental snr (dB)" in table
