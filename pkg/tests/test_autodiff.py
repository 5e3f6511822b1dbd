"""Finite-difference verification of every differentiable operation.

Each check compares the taped backward pass against central finite
differences of the forward value in double precision: the numeric gradient
is the oracle, computed independently of the backward implementation.
"""

import numpy as np
import pytest

from enhancodec import nn
from enhancodec.nn.autodiff import Tape, Tensor
from enhancodec.nn.layers import (
    BatchNormState,
    GRUParams,
    batchnorm,
    conv1d,
    gru_input_gates,
    gru_sequence,
    gru_step,
    same_pad,
)

H = 1e-5
TOL = 1e-4


def numeric_grad(f, x: np.ndarray, coords=None) -> np.ndarray:
    """Central-difference df/dx at the given coordinates (all by default)."""
    g = np.zeros_like(x)
    idx = coords if coords is not None else list(np.ndindex(x.shape))
    for c in idx:
        old = x[c]
        x[c] = old + H
        fp = f()
        x[c] = old - H
        fm = f()
        x[c] = old
        g[c] = (fp - fm) / (2 * H)
    return g


def assert_grads_match(analytic: np.ndarray, numeric: np.ndarray, coords=None):
    idx = coords if coords is not None else list(np.ndindex(analytic.shape))
    for c in idx:
        a, n = analytic[c], numeric[c]
        assert abs(a - n) <= TOL * max(1.0, abs(a), abs(n)), (
            f"coord {c}: analytic {a} vs numeric {n}"
        )


def check_op(build, tensors):
    """FD-check the scalar produced by `build()` against every tensor's grad."""
    tape = Tape()
    out = build(tape)
    tape.backward(out)
    value_fn = lambda: float(build(None).data)
    for t in tensors:
        ng = numeric_grad(value_fn, t.data)
        assert t.grad is not None, "no gradient accumulated"
        assert_grads_match(t.grad, ng)


def rand(shape, seed):
    return np.random.default_rng(seed).uniform(-1.0, 1.0, shape)


def scalarize(x: Tensor, r: np.ndarray, tape) -> Tensor:
    """Project a tensor to a scalar with fixed random weights, on the tape."""
    return nn.mean_all(nn.mul(x, Tensor(r), tape=tape), tape=tape)


class TestElementwiseOps:
    def test_add_sub_mul(self):
        a, b = Tensor(rand((3, 4), 0)), Tensor(rand((3, 4), 1))
        r1, r2, r3 = rand((3, 4), 2), rand((3, 4), 3), rand((3, 4), 4)

        def build(tape):
            s1 = scalarize(nn.add(a, b, tape=tape), r1, tape)
            s2 = scalarize(nn.sub(a, b, tape=tape), r2, tape)
            s3 = scalarize(nn.mul(a, b, tape=tape), r3, tape)
            return nn.add(nn.add(s1, s2, tape=tape), s3, tape=tape)

        check_op(build, [a, b])

    def test_square_scale_mean(self):
        x = Tensor(rand((2, 5), 5))

        def build(tape):
            return nn.scale(nn.mean_all(nn.square(x, tape=tape), tape=tape), 3.7, tape=tape)

        check_op(build, [x])

    def test_relu_away_from_kink(self):
        x = Tensor(rand((4, 4), 6) + np.sign(rand((4, 4), 7)) * 0.2)
        r = rand((4, 4), 8)
        check_op(lambda tape: scalarize(nn.relu(x, tape=tape), r, tape), [x])

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ValueError):
            nn.add(Tensor(np.zeros(3)), Tensor(np.zeros(4)))

    def test_value_reused_in_two_branches(self):
        # gradient must accumulate across both uses of x
        x = Tensor(rand((3, 3), 9))
        a, b = Tensor(rand((3, 3), 10)), Tensor(rand((3, 3), 11))
        r = rand((3, 3), 12)

        def build(tape):
            y = nn.add(nn.mul(x, a, tape=tape), nn.mul(x, b, tape=tape), tape=tape)
            return scalarize(y, r, tape)

        check_op(build, [x, a, b])

    def test_stop_gradient_blocks_flow(self):
        x = Tensor(rand((2, 3), 13))
        tape = Tape()
        out = nn.mean_all(nn.square(nn.stop_gradient(x), tape=tape), tape=tape)
        tape.backward(out)
        assert x.grad is None


class TestDenseAndShapes:
    def test_dense_with_bias(self):
        x, w, b = Tensor(rand((4, 3), 0)), Tensor(rand((3, 5), 1)), Tensor(rand(5, 2))
        r = rand((4, 5), 3)
        check_op(lambda tape: scalarize(nn.dense(x, w, b, tape=tape), r, tape), [x, w, b])

    def test_dense_without_bias_3d(self):
        x, w = Tensor(rand((2, 3, 4), 4)), Tensor(rand((4, 6), 5))
        r = rand((2, 3, 6), 6)
        check_op(lambda tape: scalarize(nn.dense(x, w, tape=tape), r, tape), [x, w])

    def test_dense_value(self):
        x, w, b = rand((4, 3), 7), rand((3, 5), 8), rand(5, 9)
        out = nn.dense(Tensor(x), Tensor(w), Tensor(b)).data
        np.testing.assert_allclose(out, x @ w + b, rtol=1e-12)

    def test_concat_last(self):
        a, b = Tensor(rand((2, 3, 2), 10)), Tensor(rand((2, 3, 4), 11))
        r = rand((2, 3, 6), 12)
        check_op(lambda tape: scalarize(nn.concat_last([a, b], tape=tape), r, tape), [a, b])

    def test_tile_time(self):
        x = Tensor(rand((2, 3), 13))
        r = rand((2, 5, 3), 14)
        check_op(lambda tape: scalarize(nn.tile_time(x, 5, tape=tape), r, tape), [x])

    def test_mean_time(self):
        x = Tensor(rand((2, 6, 3), 15))
        r = rand((2, 3), 16)
        check_op(lambda tape: scalarize(nn.mean_time(x, tape=tape), r, tape), [x])

    def test_embedding_with_repeated_ids(self):
        table = Tensor(rand((7, 4), 17))
        ids = np.array([[1, 3, 1], [0, 6, 1]])
        r = rand((2, 3, 4), 18)
        check_op(lambda tape: scalarize(nn.embedding(table, ids, tape=tape), r, tape), [table])


class TestSoftmaxCrossEntropy:
    def test_gradient(self):
        logits = Tensor(rand((6, 5), 20))
        targets = np.array([0, 3, 4, 1, 1, 2])
        check_op(lambda tape: nn.softmax_cross_entropy(logits, targets, tape=tape), [logits])

    def test_value_against_direct_formula(self):
        logits = rand((4, 3), 21)
        targets = np.array([2, 0, 1, 1])
        p = np.exp(logits) / np.exp(logits).sum(axis=1, keepdims=True)
        expected = float(-np.log(p[np.arange(4), targets]).mean())
        got = float(nn.softmax_cross_entropy(Tensor(logits), targets).data)
        assert abs(got - expected) < 1e-12

    def test_uniform_logits_give_log_k(self):
        out = nn.softmax_cross_entropy(Tensor(np.zeros((8, 256))), np.zeros(8, dtype=int))
        assert abs(float(out.data) - np.log(256.0)) < 1e-12

    def test_rejects_out_of_range_target(self):
        with pytest.raises(ValueError):
            nn.softmax_cross_entropy(Tensor(np.zeros((2, 4))), np.array([0, 4]))

    def test_3d_logits(self):
        logits = Tensor(rand((2, 3, 4), 22))
        targets = np.array([[0, 1, 2], [3, 0, 1]])
        check_op(lambda tape: nn.softmax_cross_entropy(logits, targets, tape=tape), [logits])


class TestNegSqdist:
    def test_gradient(self):
        x = Tensor(rand((3, 4), 23))
        codes = rand((6, 4), 24)
        r = rand((3, 6), 25)
        check_op(lambda tape: scalarize(nn.neg_sqdist(x, codes, tape=tape), r, tape), [x])

    def test_value(self):
        x, codes = rand((3, 4), 26), rand((5, 4), 27)
        out = nn.neg_sqdist(Tensor(x), codes).data
        expected = -((x[:, None, :] - codes[None, :, :]) ** 2).sum(axis=-1)
        np.testing.assert_allclose(out, expected, atol=1e-12)


class TestConv1d:
    def test_value_against_explicit_padding(self):
        # independent evaluation: pad, slide, dot
        x, w, b = rand((2, 7, 3), 30), rand((3, 3, 4), 31), rand(4, 32)
        out = conv1d(Tensor(x), Tensor(w), Tensor(b), stride=1).data
        t_out, left, right = same_pad(7, 1, 3)
        xp = np.pad(x, ((0, 0), (left, right), (0, 0)))
        expected = np.zeros((2, t_out, 4))
        for bi in range(2):
            for t in range(t_out):
                expected[bi, t] = np.einsum("kc,kcd->d", xp[bi, t : t + 3], w) + b
        np.testing.assert_allclose(out, expected, atol=1e-12)

    @pytest.mark.parametrize("stride,kernel,t", [(1, 3, 8), (2, 4, 8), (2, 4, 7), (1, 1, 5)])
    def test_gradient(self, stride, kernel, t):
        x = Tensor(rand((2, t, 3), 33))
        w = Tensor(rand((kernel, 3, 4), 34))
        b = Tensor(rand(4, 35))
        t_out = -(-t // stride)
        r = rand((2, t_out, 4), 36)
        check_op(
            lambda tape: scalarize(conv1d(x, w, b, stride=stride, tape=tape), r, tape),
            [x, w, b],
        )

    def test_gradient_without_bias(self):
        x, w = Tensor(rand((1, 6, 2), 37)), Tensor(rand((3, 2, 3), 38))
        r = rand((1, 6, 3), 39)
        check_op(lambda tape: scalarize(conv1d(x, w, None, tape=tape), r, tape), [x, w])

    def test_output_length_law(self):
        for t in (5, 6, 7, 8):
            out = conv1d(Tensor(np.zeros((1, t, 2))), Tensor(np.zeros((4, 2, 2))), None, stride=2)
            assert out.shape[1] == -(-t // 2)

    def test_rejects_channel_mismatch(self):
        with pytest.raises(ValueError):
            conv1d(Tensor(np.zeros((1, 5, 3))), Tensor(np.zeros((3, 2, 4))), None)


class TestBatchNorm:
    def test_training_mode_gradient(self):
        x = Tensor(rand((3, 4, 5), 40) * 2.0)
        gamma, beta = Tensor(1.0 + 0.1 * rand(5, 41)), Tensor(rand(5, 42))
        r = rand((3, 4, 5), 43)

        def build(tape):
            state = BatchNormState(5)  # fresh stats; training output ignores them
            return scalarize(
                batchnorm(x, gamma, beta, state, training=True, tape=tape), r, tape
            )

        check_op(build, [x, gamma, beta])

    def test_eval_mode_gradient(self):
        x = Tensor(rand((2, 3, 4), 44))
        gamma, beta = Tensor(1.0 + 0.1 * rand(4, 45)), Tensor(rand(4, 46))
        state = BatchNormState(4)
        state.running_mean = rand(4, 47) * 0.1
        state.running_var = 1.0 + 0.2 * rand(4, 48)
        r = rand((2, 3, 4), 49)

        def build(tape):
            return scalarize(
                batchnorm(x, gamma, beta, state, training=False, tape=tape), r, tape
            )

        check_op(build, [x, gamma, beta])

    def test_training_normalizes_batch(self):
        x = Tensor(rand((4, 8, 3), 50) * 3.0 + 1.0)
        out = batchnorm(
            x, Tensor(np.ones(3)), Tensor(np.zeros(3)), BatchNormState(3), training=True
        ).data
        np.testing.assert_allclose(out.mean(axis=(0, 1)), 0.0, atol=1e-10)
        np.testing.assert_allclose(out.var(axis=(0, 1)), 1.0, atol=1e-4)

    def test_running_stats_update(self):
        x = Tensor(np.full((2, 5, 1), 4.0))
        state = BatchNormState(1)
        batchnorm(x, Tensor(np.ones(1)), Tensor(np.zeros(1)), state, training=True)
        # mean: 0 + 0.1 * (4 - 0); var: 1 + 0.1 * (0 - 1)
        np.testing.assert_allclose(state.running_mean, [0.4])
        np.testing.assert_allclose(state.running_var, [0.9])


class TestGRU:
    def test_single_step_matches_documented_equations(self):
        rng = np.random.default_rng(51)
        p = GRUParams("g", 3, 4, rng)
        x = rng.uniform(-1, 1, (2, 3))
        h = rng.uniform(-1, 1, (2, 4))
        sig = lambda v: 1.0 / (1.0 + np.exp(-v))
        gates = x @ p.w.data + p.b.data
        z = sig(gates[:, :4] + h @ p.u_zr.data[:, :4])
        r = sig(gates[:, 4:8] + h @ p.u_zr.data[:, 4:])
        c = np.tanh(gates[:, 8:] + (r * h) @ p.u_c.data)
        expected = (1 - z) * c + z * h
        got = gru_step(p, gru_input_gates(p, x), h)
        np.testing.assert_allclose(got, expected, atol=1e-12)

    def test_sequence_matches_stepwise(self):
        rng = np.random.default_rng(52)
        p = GRUParams("g", 3, 4, rng)
        x = rng.uniform(-1, 1, (2, 6, 3))
        out = gru_sequence(Tensor(x), p).data
        h = np.zeros((2, 4))
        for t in range(6):
            h = gru_step(p, gru_input_gates(p, x[:, t]), h)
            np.testing.assert_allclose(out[:, t], h, atol=1e-12)

    def test_sequence_gradient_all_weights(self):
        rng = np.random.default_rng(53)
        p = GRUParams("g", 3, 4, rng)
        x = Tensor(rng.uniform(-1, 1, (2, 5, 3)))
        r = rand((2, 5, 4), 54)

        def build(tape):
            return scalarize(gru_sequence(x, p, tape=tape), r, tape)

        check_op(build, [x, p.w, p.u_zr, p.u_c, p.b])

    def test_sequence_gradient_with_initial_state(self):
        rng = np.random.default_rng(55)
        p = GRUParams("g", 2, 3, rng)
        x = Tensor(rng.uniform(-1, 1, (3, 4, 2)))
        h0 = rng.uniform(-1, 1, (3, 3))
        r = rand((3, 4, 3), 56)

        def build(tape):
            return scalarize(gru_sequence(x, p, h0=h0, tape=tape), r, tape)

        check_op(build, [x, p.w, p.u_zr, p.u_c, p.b])


class TestStraightThrough:
    def test_composite_gradient(self):
        # The estimator's backward is the true gradient of the substitution
        # with the offset q - e held fixed at the base point. Freezing the
        # offset makes that function explicit and finite-differenceable.
        rng = np.random.default_rng(57)
        e = Tensor(rng.uniform(-1, 1, (5, 4)))
        codes = rng.uniform(-1, 1, (3, 4)) * 3.0  # well-separated from e
        d = ((e.data[:, None, :] - codes[None, :, :]) ** 2).sum(-1)
        q0 = codes[np.argmin(d, axis=1)]
        offset = q0 - e.data.copy()
        r = rand((5, 4), 58)

        def build(tape):
            st = nn.add(e, Tensor(offset), tape=tape)
            recon = scalarize(st, r, tape)
            err = nn.sub(e, Tensor(q0), tape=tape)
            commit = nn.scale(nn.mean_all(nn.square(err, tape=tape), tape=tape), 0.25 * 4, tape=tape)
            return nn.add(recon, commit, tape=tape)

        check_op(build, [e])

    def test_estimator_matches_frozen_offset_gradient(self):
        # straight_through itself must produce the same gradient as the
        # frozen-offset formulation it stands for.
        from enhancodec.quantizer import straight_through

        rng = np.random.default_rng(61)
        base = rng.uniform(-1, 1, (4, 3))
        q0 = rng.uniform(-1, 1, (4, 3))
        r = rand((4, 3), 62)

        e1 = Tensor(base.copy())
        tape1 = Tape()
        tape1.backward(scalarize(straight_through(e1, q0, tape=tape1), r, tape1))

        e2 = Tensor(base.copy())
        tape2 = Tape()
        tape2.backward(scalarize(nn.add(e2, Tensor(q0 - base), tape=tape2), r, tape2))

        np.testing.assert_array_equal(e1.grad, e2.grad)


class TestTapeDiagnostics:
    def test_first_nonfinite_names_culprit(self):
        tape = Tape()
        a = Tensor(np.array([1.0, 2.0]))
        good = nn.square(a, tape=tape)
        bad = nn.scale(good, np.inf, tape=tape)
        nn.mean_all(bad, tape=tape)
        assert tape.first_nonfinite() == "scale"

    def test_all_finite_returns_none(self):
        tape = Tape()
        nn.square(Tensor(np.ones(3)), tape=tape)
        assert tape.first_nonfinite() is None

    def test_forward_only_records_nothing(self):
        tape = Tape()
        nn.square(Tensor(np.ones(3)), tape=None)
        assert len(tape) == 0


class TestFullTinyModel:
    """End-to-end gradient check through the whole codec.

    The training loss uses straight-through substitution, which is by design
    not the local derivative of its own forward value (the substituted code
    is piecewise constant). The check therefore runs in two steps:

    1. the training forward's gradients must equal those of a surrogate
       forward in which the substitution offsets are frozen constants, and
    2. the surrogate, which is an ordinary differentiable function built from
       the same layer ops and parameters, must pass finite differences.

    Together these verify every parameter gradient of the real loss.
    """

    def test_loss_gradient_sampled_coordinates(self):
        from enhancodec.decoder import condition
        from enhancodec.dsp import mulaw_encode
        from enhancodec.model import CompressorEnhancer, tiny_config
        from enhancodec.quantizer import commitment_loss
        from enhancodec.training import _batch_mels, _forward

        model = CompressorEnhancer(tiny_config(dtype="float64"), seed=3)
        rng = np.random.default_rng(59)
        t = np.arange(640) / 16000.0
        clean = np.stack([
            0.5 * np.sin(2 * np.pi * 220 * t),
            0.4 * np.sin(2 * np.pi * 330 * t),
        ])
        x = clean + 0.05 * rng.standard_normal((2, 640))
        targets = mulaw_encode(clean)

        # initialize codebooks once so repeated evaluations are stable
        _forward(model, x, targets, tape=None, training=True,
                 rng=np.random.default_rng(0))

        tape = Tape()
        total, _, _ = _forward(model, x, targets, tape=tape, training=True)
        tape.backward(total)
        real_grads = {}
        for p in model.parameters():
            assert p.grad is not None, f"{p.name}: no gradient"
            real_grads[p.name] = p.grad.copy()
            p.grad = None

        # capture the substitution offsets at the base point
        q = model.quantizer
        mel = Tensor(_batch_mels(model, x).astype(np.float64))
        frames = model.speech_encoder(mel, training=True)
        offsets, fixed_q = [], []
        for head in q.heads:
            e = head.project(frames)
            _, codes = head.codebook.quantize(e.data.reshape(-1, e.data.shape[-1]))
            quantized = codes.reshape(e.data.shape)
            offsets.append(quantized - e.data)
            fixed_q.append(quantized)
        speaker = model.speaker_encoder(mel, training=True)
        se = q.speaker.project(speaker)
        _, scodes = q.speaker.codebook.quantize(se.data)
        s_offset, s_fixed = scodes - se.data, scodes

        weight = model.config.quantizer.commitment

        def surrogate(tape):
            mel_t = Tensor(_batch_mels(model, x).astype(np.float64))
            fr = model.speech_encoder(mel_t, training=True, tape=tape)
            sp = model.speaker_encoder(mel_t, training=True, tape=tape)
            st_heads, commit_terms = [], []
            for head, off, q0 in zip(q.heads, offsets, fixed_q):
                e = head.project(fr, tape=tape)
                st_heads.append(nn.add(e, Tensor(off), tape=tape))
                commit_terms.append(commitment_loss(e, q0, weight, tape=tape))
            se_t = q.speaker.project(sp, tape=tape)
            st_sp = nn.add(se_t, Tensor(s_offset), tape=tape)
            commit_terms.append(commitment_loss(se_t, s_fixed, weight, tape=tape))
            speech = st_heads[0] if len(st_heads) == 1 else nn.concat_last(st_heads, tape=tape)
            cond = condition(speech, st_sp, tape=tape)
            logits = model.decoder.teacher_forced_logits(cond, targets, tape=tape)
            out = nn.softmax_cross_entropy(logits, targets, tape=tape)
            for term in commit_terms:
                out = nn.add(out, term, tape=tape)
            return out

        tape2 = Tape()
        total2 = surrogate(tape2)
        assert abs(float(total2.data) - float(total.data)) < 1e-12
        tape2.backward(total2)

        # step 1: real backward == frozen-offset backward, every parameter
        for p in model.parameters():
            assert p.grad is not None, f"{p.name}: no surrogate gradient"
            np.testing.assert_allclose(
                p.grad, real_grads[p.name], rtol=1e-9, atol=1e-12,
                err_msg=f"{p.name}: training grad != frozen-offset grad",
            )

        # step 2: frozen-offset forward passes finite differences
        def loss_value():
            return float(surrogate(None).data)

        coord_rng = np.random.default_rng(60)
        checked = 0
        for param in model.parameters():
            take = min(3, param.data.size)
            picks = coord_rng.choice(param.data.size, size=take, replace=False)
            coords = [np.unravel_index(i, param.data.shape) for i in picks]
            ng = numeric_grad(loss_value, param.data, coords=coords)
            assert_grads_match(param.grad, ng, coords=coords)
            checked += take
        assert checked >= 30
