import math

import numpy as np
import pytest

from kdalign.autodiff import ParamSet, Tape, bind_params, grad_check
from kdalign.encoders import (
    EncoderSpec,
    HeadSpec,
    bce_loss_tape,
    deviation_loss_tape,
    deviation_prior,
    encode_tape,
    forward_scores,
    init_encoder,
    init_head,
    score_tape,
)
from kdalign.errors import ShapeError


def make_params(enc_spec, head_spec, seed=0):
    rng = np.random.default_rng(seed)
    values = init_encoder(enc_spec, rng)
    values.update(init_head(head_spec, rng))
    return ParamSet(values)


class TestEncode:
    def test_identity_mlp_reproduces_input(self):
        spec = EncoderSpec("mlp", input_dim=3, hidden=(3,))
        params = ParamSet({"enc/w0": np.eye(3), "enc/b0": np.zeros((1, 3))})
        x = np.array([[1.0, -2.0, 0.5], [0.0, 3.0, -1.0]])
        t = Tape()
        ids = bind_params(t, params)
        out = t.value(encode_tape(t, t.leaf(x), spec, ids))
        np.testing.assert_array_equal(out, x)

    def test_eval_mode_deterministic(self):
        spec = EncoderSpec("resnet", input_dim=4, hidden=(8,), blocks=2, main_dim=6,
                           dropout_first=0.5, dropout_second=0.3)
        head = HeadSpec(embed_dim=6)
        params = make_params(spec, head, seed=1)
        x = np.random.default_rng(0).normal(size=(5, 4))
        e1, s1 = forward_scores(x, spec, head, params)
        e2, s2 = forward_scores(x, spec, head, params)
        assert (e1 == e2).all() and (s1 == s2).all()

    def test_resnet_zeroed_blocks_equal_stem(self):
        spec = EncoderSpec("resnet", input_dim=4, hidden=(8,), blocks=1, main_dim=6)
        head = HeadSpec(embed_dim=6)
        params = make_params(spec, head, seed=2)
        params.values["enc/block0/w2"][:] = 0.0
        params.values["enc/block0/b2"][:] = 0.0
        x = np.random.default_rng(1).normal(size=(7, 4))
        e, _ = forward_scores(x, spec, head, params)
        stem = x @ params.values["enc/stem_w"] + params.values["enc/stem_b"]
        np.testing.assert_allclose(e, stem, atol=1e-12)

    def test_dropout_seed_reproducible_and_step_varying(self):
        spec = EncoderSpec("resnet", input_dim=4, hidden=(8,), blocks=1, main_dim=6,
                           dropout_first=0.5)
        head = HeadSpec(embed_dim=6)
        params = make_params(spec, head, seed=3)
        x = np.random.default_rng(2).normal(size=(16, 4))
        _, a = forward_scores(x, spec, head, params, train=True, dropout_seed=7)
        _, b = forward_scores(x, spec, head, params, train=True, dropout_seed=7)
        _, c = forward_scores(x, spec, head, params, train=True, dropout_seed=8)
        assert (a == b).all()
        assert not (a == c).all()

    def test_width_mismatch(self):
        spec = EncoderSpec("mlp", input_dim=3, hidden=(4,))
        params = ParamSet(init_encoder(spec, np.random.default_rng(0)))
        t = Tape()
        ids = bind_params(t, params)
        with pytest.raises(ShapeError):
            encode_tape(t, t.leaf(np.ones((2, 5))), spec, ids)

    def test_row_permutation_equivariance(self):
        spec = EncoderSpec("mlp", input_dim=4, hidden=(6, 3))
        head = HeadSpec(embed_dim=3)
        params = make_params(spec, head, seed=4)
        rng = np.random.default_rng(5)
        x = rng.normal(size=(9, 4))
        perm = rng.permutation(9)
        e, s = forward_scores(x, spec, head, params)
        ep, sp = forward_scores(x[perm], spec, head, params)
        np.testing.assert_allclose(ep, e[perm], atol=1e-12)
        np.testing.assert_allclose(sp, s[perm], atol=1e-12)


class TestScore:
    def test_zero_head_gives_half(self):
        head = HeadSpec(embed_dim=4)
        params = ParamSet({"head/w0": np.zeros((4, 1)), "head/b0": np.zeros((1, 1))})
        t = Tape()
        ids = bind_params(t, params)
        out = t.value(score_tape(t, t.leaf(np.random.default_rng(0).normal(size=(5, 4))), head, ids))
        np.testing.assert_array_equal(out, np.full((5, 1), 0.5))

    def test_single_row(self):
        head = HeadSpec(embed_dim=3, hidden=(4,))
        params = ParamSet(init_head(head, np.random.default_rng(0)))
        t = Tape()
        ids = bind_params(t, params)
        out = t.value(score_tape(t, t.leaf(np.ones((1, 3))), head, ids))
        assert out.shape == (1, 1)
        assert 0.0 < out[0, 0] < 1.0

    def test_row_locality(self):
        # score of row i is unchanged when another row is perturbed
        head = HeadSpec(embed_dim=4, hidden=(5,))
        params = ParamSet(init_head(head, np.random.default_rng(1)))
        rng = np.random.default_rng(2)
        e = rng.normal(size=(6, 4))
        t = Tape()
        ids = bind_params(t, params)
        base = t.value(score_tape(t, t.leaf(e), head, ids)).copy()
        e2 = e.copy()
        e2[3] += rng.normal(size=4)
        t2 = Tape()
        ids2 = bind_params(t2, params)
        out = t2.value(score_tape(t2, t2.leaf(e2), head, ids2))
        keep = [i for i in range(6) if i != 3]
        np.testing.assert_array_equal(out[keep], base[keep])
        assert out[3, 0] != base[3, 0]


class TestBce:
    def test_half_scores_give_ln2(self):
        t = Tape()
        s = t.leaf(np.full((4, 1), 0.5))
        loss = t.value(bce_loss_tape(t, s, np.array([0, 1, 0, 1])))[0, 0]
        assert loss == pytest.approx(math.log(2.0), rel=1e-12)

    def test_perfect_scores_near_zero(self):
        t = Tape()
        s = t.leaf(np.array([[1 - 1e-12], [1e-12]]))
        loss = t.value(bce_loss_tape(t, s, np.array([1, 0])))[0, 0]
        assert loss == pytest.approx(0.0, abs=1e-9)

    def test_scalar_loop_oracle(self):
        rng = np.random.default_rng(3)
        scores = rng.uniform(0.05, 0.95, size=8)
        labels = rng.integers(0, 2, size=8)
        t = Tape()
        loss = t.value(bce_loss_tape(t, t.leaf(scores.reshape(-1, 1)), labels))[0, 0]
        expected = -sum(
            y * math.log(s + 1e-30) + (1 - y) * math.log(1 - s + 1e-30)
            for s, y in zip(scores, labels)
        ) / 8
        assert loss == pytest.approx(expected, rel=1e-12)

    def test_gradient(self):
        rng = np.random.default_rng(4)
        spec = EncoderSpec("mlp", input_dim=3, hidden=(5, 4))
        head = HeadSpec(embed_dim=4)
        params = make_params(spec, head, seed=5)
        x = rng.normal(size=(6, 3))
        y = rng.integers(0, 2, size=6)

        def build(t, ids):
            e = encode_tape(t, t.leaf(x), spec, ids)
            s = score_tape(t, e, head, ids)
            return bce_loss_tape(t, s, y)

        report = grad_check(build, params, tol=1e-4)
        assert report.passed, report.max_rel_error


class TestDeviation:
    def test_prior_is_deterministic_per_step(self):
        assert deviation_prior(3, 10) == deviation_prior(3, 10)
        assert deviation_prior(3, 10) != deviation_prior(3, 11)

    def test_scores_at_prior_mean_give_zero(self):
        mean, std = deviation_prior(0, 0)
        t = Tape()
        s = t.leaf(np.full((5, 1), mean))
        loss = t.value(deviation_loss_tape(t, s, np.zeros(5), mean, std))[0, 0]
        assert loss == pytest.approx(0.0, abs=1e-12)

    def test_saturated_anomaly_contributes_zero(self):
        mean, std = deviation_prior(0, 1)
        t = Tape()
        s = t.leaf(np.array([[mean + 10.0 * std]]))
        loss = t.value(deviation_loss_tape(t, s, np.ones(1), mean, std))[0, 0]
        assert loss == 0.0

    def test_scalar_loop_oracle(self):
        rng = np.random.default_rng(6)
        mean, std = deviation_prior(1, 2)
        scores = rng.normal(size=7)
        labels = rng.integers(0, 2, size=7)
        t = Tape()
        loss = t.value(
            deviation_loss_tape(t, t.leaf(scores.reshape(-1, 1)), labels, mean, std)
        )[0, 0]
        expected = 0.0
        for s, y in zip(scores, labels):
            dev = (s - mean) / std
            expected += (1 - y) * abs(dev) + y * max(0.0, 5.0 - dev)
        expected /= 7
        assert loss == pytest.approx(expected, rel=1e-12)

    def test_gradient_through_raw_head(self):
        rng = np.random.default_rng(7)
        spec = EncoderSpec("mlp", input_dim=3, hidden=(5,))
        head = HeadSpec(embed_dim=5, transform="raw")
        params = make_params(spec, head, seed=8)
        x = rng.normal(size=(6, 3))
        y = rng.integers(0, 2, size=6)
        mean, std = deviation_prior(9, 0)

        def build(t, ids):
            e = encode_tape(t, t.leaf(x), spec, ids)
            s = score_tape(t, e, head, ids)
            return deviation_loss_tape(t, s, y, mean, std)

        report = grad_check(build, params, tol=1e-4)
        assert report.passed, report.max_rel_error
