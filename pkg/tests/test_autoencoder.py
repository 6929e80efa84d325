import io
import math

import numpy as np
import pytest

from arpcluster import autoencoder as ae
from arpcluster.features import FeatureVector

from .oracles import entropy, finite_difference_grads, gradient_relative_error


def random_inputs(rng, n=3):
    X = rng.random((n, 120)) ** 3
    return X / np.linalg.norm(X, axis=1, keepdims=True)


def kink_free_config(rng, seed):
    """Random params/inputs with every ReLU pre-activation clear of zero."""
    while True:
        p = ae.init_params(seed)
        for name, a in p.items():
            if name.startswith("b"):
                a[:] = rng.normal(0, 0.1, a.shape)
        X = random_inputs(rng)
        h_pre, _, z_pre, *_ = ae._forward_cache(p, X)
        if np.abs(h_pre).min() > 1e-4 and np.abs(z_pre).min() > 1e-4:
            return p, X
        seed += 1000


class TestInit:
    def test_deterministic(self):
        a, b = ae.init_params(7), ae.init_params(7)
        assert all(np.array_equal(x, y) for (_, x), (_, y) in zip(a.items(), b.items()))

    def test_glorot_bound(self):
        p = ae.init_params(0)
        assert math.isclose(math.sqrt(6 / 170), 0.18787, abs_tol=1e-5)
        assert np.abs(p.W1).max() <= math.sqrt(6 / 170)
        assert np.abs(p.W2).max() <= math.sqrt(6 / 53)
        assert np.abs(p.W3).max() <= math.sqrt(6 / 123)

    def test_zero_biases_and_shapes(self):
        p = ae.init_params(0)
        for name, shape in ae.LAYER_SHAPES.items():
            assert getattr(p, name).shape == shape
        assert not p.b1.any() and not p.b2.any() and not p.b3.any()


class TestForward:
    def test_zero_params(self):
        z, x_hat = ae.forward(ae.AutoencoderParams.zeros(), np.random.default_rng(0).random(120))
        assert np.array_equal(z, np.zeros(3)) and np.array_equal(x_hat, np.full(120, 0.5))

    def test_latent_nonnegative_and_output_range(self):
        rng = np.random.default_rng(1)
        for seed in range(5):
            z, x_hat = ae.forward(ae.init_params(seed), rng.normal(size=(20, 120)))
            assert (z >= 0).all()
            assert ((x_hat > 0) & (x_hat < 1)).all()

    def test_deterministic(self):
        p, x = ae.init_params(3), np.linspace(0, 1, 120)
        a, b = ae.forward(p, x), ae.forward(p, x)
        assert np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1])


class TestLoss:
    def test_half_is_ln2(self):
        x = np.random.default_rng(0).random(120)
        assert abs(ae.bce_loss(np.full(120, 0.5), x) - math.log(2)) < 1e-12

    def test_hand_case(self):
        x = np.zeros(120)
        x[0] = 1
        x_hat = np.full(120, 0.5)
        x_hat[0], x_hat[1] = 0.9, 0.1
        expected = (2 * -math.log(0.9) + 118 * math.log(2)) / 120
        assert abs(expected - 0.6833507) < 1e-7
        assert abs(ae.bce_loss(x_hat, x) - expected) < 1e-12

    def test_perfect_reconstruction_limit(self):
        x = (np.arange(120) % 2).astype(float)
        x_hat = np.clip(x, 1e-9, 1 - 1e-9)
        assert ae.bce_loss(x_hat, x) < 1e-8

    def test_entropy_lower_bound(self):
        rng = np.random.default_rng(2)
        for _ in range(50):
            x = rng.random(120)
            bound = sum(entropy(v) for v in x) / 120
            assert ae.bce_loss(rng.uniform(0.01, 0.99, 120), x) >= bound
            assert ae.bce_loss(x, x) == pytest.approx(bound, rel=1e-12)

    def test_logit_form_agrees(self):
        rng = np.random.default_rng(3)
        a, x = rng.normal(size=120), rng.random(120)
        assert ae.bce_from_logits(a, x) == pytest.approx(ae.bce_loss(ae.sigmoid(a), x), rel=1e-12)

    def test_duplicated_data_same_loss(self):
        p = ae.init_params(0)
        X = random_inputs(np.random.default_rng(4), 16)
        assert ae.reconstruction_loss(p, np.vstack([X, X])) == pytest.approx(
            ae.reconstruction_loss(p, X), rel=1e-14)


class TestBackward:
    def test_finite_differences(self):
        rng = np.random.default_rng(0)
        for trial in range(3):
            p, X = kink_free_config(rng, trial)
            analytic = dict(ae.backward(p, X).items())
            numeric = finite_difference_grads(lambda q: ae.reconstruction_loss(q, X), p)
            assert gradient_relative_error(analytic, numeric) < 1e-4

    def test_zero_params_decoder_bias(self):
        x = np.random.default_rng(5).random(120)
        g = ae.backward(ae.AutoencoderParams.zeros(), x)
        assert np.allclose(g.b3, (0.5 - x) / 120, rtol=1e-14, atol=0)
        assert not g.W1.any() and not g.W2.any()

    def test_stationary_at_perfect_reconstruction(self):
        p = ae.AutoencoderParams.zeros()
        p.b3[:] = 30.0 * np.where(np.arange(120) % 2, 1, -1)
        x = (np.arange(120) % 2).astype(float)
        g = ae.backward(p, x)
        assert max(np.abs(a).max() for _, a in g.items()) < 1e-14


class TestAdam:
    def test_first_step_magnitude(self):
        p = ae.init_params(0)
        grads = ae.AutoencoderParams(**{k: np.full_like(a, -0.37) for k, a in p.items()})
        new, _ = ae.adam_step(p, grads, ae.AdamState.zeros_like(p), 1)
        for (_, before), (_, after) in zip(p.items(), new.items()):
            delta = after - before
            assert (delta > 0).all()
            assert ((np.abs(delta) >= 0.99e-4) & (np.abs(delta) <= 1e-4)).all()

    def test_zero_gradient_fixed_point(self):
        p = ae.init_params(1)
        zero = ae.AutoencoderParams.zeros()
        state = ae.AdamState.zeros_like(p)
        q = p
        for t in range(1, 20):
            q, state = ae.adam_step(q, zero, state, t)
        assert all(np.array_equal(a, b) for (_, a), (_, b) in zip(p.items(), q.items()))

    def test_step_counter(self):
        p = ae.init_params(0)
        with pytest.raises(ValueError):
            ae.adam_step(p, p, ae.AdamState.zeros_like(p), 0)


def _corpus(n, seed=0):
    rng = np.random.default_rng(seed)
    X = np.zeros((n, 120))
    for i in range(n):
        kind = i % 3
        if kind == 0:
            X[i, :2] = rng.uniform(5, 10, 2)
        elif kind == 1:
            X[i, ::6] = rng.uniform(1, 2, 20)
        else:
            X[i, 60:] = rng.uniform(0.5, 1, 60)
    X /= np.linalg.norm(X, axis=1, keepdims=True)
    return [FeatureVector(f"e{i}", x) for i, x in enumerate(X)]


class TestTrain:
    def test_report_shape_and_progress(self):
        feats = _corpus(200)
        params, report = ae.train(feats, seed=0)
        assert len(report.folds) == 5
        assert all(len(f) == 40 for f in report.folds)
        assert len(report.final) == 40
        assert report.final[-1] < report.final[0]
        assert all(np.isfinite(a).all() for _, a in params.items())

    def test_deterministic(self):
        feats = _corpus(40)
        a, ra = ae.train(feats, seed=3, epochs=3)
        b, rb = ae.train(feats, seed=3, epochs=3)
        assert ra.final == rb.final and ra.folds == rb.folds
        assert all(np.array_equal(x, y) for (_, x), (_, y) in zip(a.items(), b.items()))

    def test_cv_does_not_change_final_model(self):
        feats = _corpus(40)
        a, _ = ae.train(feats, seed=3, epochs=2)
        b, _ = ae.train(feats, seed=3, epochs=2, cross_validate=False)
        assert all(np.array_equal(x, y) for (_, x), (_, y) in zip(a.items(), b.items()))

    def test_too_few(self):
        with pytest.raises(ae.TooFewSamples):
            ae.train(_corpus(4))

    def test_dead_latent_guard_retrains(self, monkeypatch, caplog):
        calls = []
        real = ae._train_once

        def fake(X, seed, *args):
            calls.append(seed)
            params, report = real(X, seed, *args)
            if len(calls) == 1:
                params.b2[:] = -1e6
            return params, report

        monkeypatch.setattr(ae, "_train_once", fake)
        params, report = ae.train(_corpus(20), seed=11, epochs=1)
        assert calls == [11, 12] and report.seed == 12
        assert "retraining" in caplog.text

    def test_encode_all(self):
        feats = _corpus(10) + _corpus(1)
        points = ae.encode_all(ae.init_params(0), feats)
        assert [p.event_id for p in points] == [f.event_id for f in feats]
        assert np.array_equal(points[0].z, points[-1].z)
        assert all((p.z >= 0).all() for p in points)


def test_model_round_trip():
    p = ae.init_params(9)
    buf = io.StringIO()
    ae.save_model(p, buf, seed=9)
    q = ae.load_model(io.StringIO(buf.getvalue()))
    assert all(np.array_equal(x, y) for (_, x), (_, y) in zip(p.items(), q.items()))


def test_model_rejects_bad_shapes():
    p = ae.init_params(0)
    buf = io.StringIO()
    ae.save_model(p, buf)
    doc = buf.getvalue().replace('"W2": [3, 50]', '"W2": [50, 3]')
    with pytest.raises(ValueError):
        ae.load_model(io.StringIO(doc))


def test_latent_csv_round_trip():
    pts = [ae.LatentPoint("a", np.array([0.1, 1 / 3, 2.0])), ae.LatentPoint("b", np.zeros(3))]
    buf = io.StringIO()
    ae.write_latents_csv(pts, buf)
    back = ae.read_latents_csv(io.StringIO(buf.getvalue()))
    assert [p.event_id for p in back] == ["a", "b"]
    assert all(np.array_equal(p.z, q.z) for p, q in zip(pts, back))
