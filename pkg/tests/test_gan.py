import math
from dataclasses import replace

import numpy as np
import pytest

from gazesynth import gan
from gazesynth import neural as nn
from gazesynth.data import CrwParams, DataError, crw_dataset
from gazesynth.neural.tape import Tensor

TINY = gan.GanConfig(seq_len=16, batch_size=4, noise_dim=8, epochs=1, eval_samples=8, seed=11)


@pytest.fixture(scope="module")
def tiny_data():
    data, norm = crw_dataset(CrwParams(), 8, 16, seed=2)
    return data, norm


class TestConfig:
    def test_defaults_mirror_table(self):
        c = gan.GanConfig()
        assert (c.seq_len, c.batch_size, c.lr, c.beta1, c.beta2, c.noise_dim, c.epochs, c.spectral_weight) == \
            (200, 128, 0.0002, 0.5, 0.999, 256, 500, 0.1)
        assert c.window_start == 100

    @pytest.mark.parametrize("change", [dict(spectral_weight=-0.1), dict(epochs=0), dict(batch_size=1),
                                        dict(seq_len=1), dict(noise_dim=0), dict(generator="gru")])
    def test_invalid(self, change):
        with pytest.raises(gan.ConfigError):
            replace(gan.GanConfig(), **change).validate()

    def test_cnn_length_suggestion(self):
        with pytest.raises(gan.ConfigError, match="try 200 or 208"):
            gan.GanConfig(seq_len=201, generator="cnn").validate()

    def test_lstm_any_length(self):
        gan.GanConfig(seq_len=13, generator="lstm", discriminator="lstm").validate()


class TestArchitectures:
    def test_cnn_generator_shape_and_range(self):
        config = gan.GanConfig(generator="cnn", noise_dim=256)
        g = gan.build_generator(config)
        out = g(g.sample_noise(3, np.random.default_rng(0))).data
        assert out.shape == (3, 1, 200)
        assert out.min() >= 0.0 and out.max() <= 1.0

    def test_lstm_generator_zero_weights(self):
        g = gan.build_generator(TINY)
        for p in g.parameters().values():
            p.data[...] = 0.0
        out = g(g.sample_noise(2, np.random.default_rng(0))).data
        np.testing.assert_array_equal(out, np.full((2, 1, 16), 0.5))

    def test_lstm_generator_noise_per_step(self):
        g = gan.build_generator(TINY)
        assert g.sample_noise(2, np.random.default_rng(0)).shape == (2, 16, 8)

    @pytest.mark.parametrize("kind", gan.KINDS)
    def test_generator_deterministic(self, kind):
        config = replace(TINY, generator=kind)
        a, b = gan.build_generator(config, 5), gan.build_generator(config, 5)
        z = a.sample_noise(2, np.random.default_rng(1))
        np.testing.assert_array_equal(a(z).data, b(z).data)

    @pytest.mark.parametrize("kind", gan.KINDS)
    def test_discriminator_range_and_shape(self, kind):
        d = gan.build_discriminator(replace(TINY, discriminator=kind))
        p = d(Tensor(np.random.default_rng(2).uniform(size=(5, 1, 16)))).data
        assert p.shape == (5,)
        assert np.all((p > 0) & (p < 1))

    @pytest.mark.parametrize("kind", gan.KINDS)
    def test_discriminator_zero_output_layer(self, kind):
        d = gan.build_discriminator(replace(TINY, discriminator=kind))
        d.out.weight.data[...] = 0.0
        d.out.bias.data[...] = 0.0
        p = d(Tensor(np.random.default_rng(3).uniform(size=(4, 1, 16)))).data
        np.testing.assert_array_equal(p, 0.5)

    def test_cnn_discriminator_gradient(self):
        config = replace(TINY, discriminator="cnn", seq_len=8)
        d = gan.build_discriminator(config, 4)
        x = Tensor(np.random.default_rng(4).uniform(size=(3, 1, 8)), requires_grad=True, name="x")
        err = nn.gradient_check(lambda: gan.discriminator_loss(d(x), d(x * 0.5)), {"x": x})
        assert err < 1e-4


class TestLosses:
    def test_generator_half(self):
        assert gan.generator_loss(Tensor(np.full(6, 0.5))).item() == pytest.approx(math.log(2), abs=1e-15)

    def test_generator_perfect_fooling(self):
        assert gan.generator_loss(Tensor(np.full(3, 1 - gan.EPS_P))).item() < 1e-6

    def test_generator_oracle(self):
        p = np.random.default_rng(0).uniform(0.01, 0.99, size=9)
        expected = -sum(math.log(v) for v in p) / len(p)
        assert abs(gan.generator_loss(Tensor(p)).item() - expected) / expected < 1e-12

    def test_discriminator_half(self):
        half = Tensor(np.full(4, 0.5))
        assert gan.discriminator_loss(half, half).item() == pytest.approx(2 * math.log(2), abs=1e-15)

    def test_discriminator_perfect(self):
        assert gan.discriminator_loss(Tensor(np.ones(3)), Tensor(np.zeros(3))).item() < 1e-6

    def test_discriminator_oracle(self):
        rng = np.random.default_rng(1)
        r, f = rng.uniform(0.01, 0.99, size=7), rng.uniform(0.01, 0.99, size=5)
        expected = -(sum(math.log(v) for v in r) / 7 + sum(math.log(1 - v) for v in f) / 5)
        assert abs(gan.discriminator_loss(Tensor(r), Tensor(f)).item() - expected) / expected < 1e-12

    def test_losses_finite_at_extremes(self):
        extreme = Tensor(np.array([0.0, 1.0]))
        assert np.isfinite(gan.generator_loss(extreme).item())
        assert np.isfinite(gan.discriminator_loss(extreme, extreme).item())

    def test_empty_batch(self):
        with pytest.raises(ValueError):
            gan.generator_loss(Tensor(np.empty(0)))

    def test_combined(self):
        assert gan.combined_loss(Tensor(1.0), Tensor(2.0), 0.1).item() == pytest.approx(1.2, abs=1e-15)
        assert gan.combined_loss(Tensor(0.7), Tensor(9.0), 0.0).item() == 0.7
        assert gan.combined_loss(Tensor(0.7), Tensor(0.0), 1.0).item() == 0.7
        with pytest.raises(gan.ConfigError):
            gan.combined_loss(Tensor(1.0), Tensor(1.0), -1.0)

    def test_loss_gradients(self):
        rng = np.random.default_rng(2)
        p_real = Tensor(rng.uniform(0.1, 0.9, size=6), requires_grad=True, name="real")
        p_fake = Tensor(rng.uniform(0.1, 0.9, size=6), requires_grad=True, name="fake")
        spec = Tensor(rng.uniform(0.5, 2.0), requires_grad=True, name="spec")
        assert nn.gradient_check(lambda: gan.generator_loss(p_fake), {"fake": p_fake}) < 1e-4
        assert nn.gradient_check(lambda: gan.discriminator_loss(p_real, p_fake), {"r": p_real, "f": p_fake}) < 1e-4
        assert nn.gradient_check(lambda: gan.combined_loss(gan.generator_loss(p_fake), spec * spec, 0.1),
                                 {"f": p_fake, "s": spec}) < 1e-4


class TestTraining:
    def test_one_epoch(self, tiny_data):
        data, norm = tiny_data
        model, history = gan.train(data, TINY, norm)
        assert len(history) == 1
        r = history.records[0]
        assert all(np.isfinite([r.l_g, r.l_d, r.l_spectral, r.d_js])) and r.seconds >= 0

    def test_zero_lambda_history(self, tiny_data):
        _, history = gan.train(tiny_data[0], replace(TINY, spectral_weight=0.0, epochs=2))
        np.testing.assert_array_equal(history.column("l_final"), history.column("l_g"))

    def test_zero_lambda_matches_spectral_free_trajectory(self, tiny_data, monkeypatch):
        config = replace(TINY, spectral_weight=0.0, epochs=2)
        _, with_term = gan.train(tiny_data[0], config)
        monkeypatch.setattr(gan, "combined_loss", lambda l_g, l_spec, w: l_g)
        _, without = gan.train(tiny_data[0], config)
        assert with_term.to_csv() == without.to_csv()

    @pytest.mark.parametrize("pairing", gan.ALL_PAIRINGS)
    def test_deterministic(self, tiny_data, pairing):
        config = replace(TINY, generator=pairing[0], discriminator=pairing[1], epochs=2)
        _, a = gan.train(tiny_data[0], config)
        _, b = gan.train(tiny_data[0], config)
        assert a.to_csv() == b.to_csv()

    def test_length_mismatch(self, tiny_data):
        with pytest.raises(DataError):
            gan.train(tiny_data[0][:, :8], TINY)

    def test_non_finite_loss_aborts(self, tiny_data, monkeypatch):
        monkeypatch.setattr(gan, "spectral_loss", lambda *a, **k: Tensor(np.nan))
        with pytest.raises(gan.TrainingError, match="epoch 1, batch 0"):
            gan.train(tiny_data[0], TINY)

    def test_callback_sees_every_epoch(self, tiny_data):
        seen = []
        gan.train(tiny_data[0], replace(TINY, epochs=3), callback=seen.append)
        assert [r.epoch for r in seen] == [1, 2, 3]


@pytest.fixture(scope="module")
def model(tiny_data):
    return gan.train(tiny_data[0], TINY, tiny_data[1])[0]


class TestGenerate:
    def test_shape_and_bounds(self, model):
        out = gan.generate(model, 3, seed=1)
        assert out.shape == (3, 16) and np.all(np.isfinite(out))
        assert out.min() >= model.normalizer.min and out.max() <= model.normalizer.max

    def test_same_seed(self, model):
        np.testing.assert_array_equal(gan.generate(model, 4, seed=9), gan.generate(model, 4, seed=9))

    def test_missing_normalizer(self, model):
        bare = gan.GanModel(model.generator, model.discriminator, model.config, None, 0)
        with pytest.raises(DataError):
            gan.generate(bare, 2, seed=0)
        assert gan.generate(bare, 2, seed=0, normalized=True).shape == (2, 16)

    def test_payload_round_trip(self, model):
        restored = gan.GanModel.from_payload(model.to_payload())
        np.testing.assert_array_equal(gan.generate(restored, 3, seed=4), gan.generate(model, 3, seed=4))

    def test_cnn_eval_mode_uses_running_stats(self, tiny_data):
        config = replace(TINY, generator="cnn")
        model = gan.train(tiny_data[0], config, tiny_data[1])[0]
        one = gan.generate(model, 1, seed=3)
        many = gan.generate(model, 5, seed=3)
        # eval-mode output of a sample does not depend on the rest of the batch
        np.testing.assert_allclose(one[0], many[0], rtol=1e-12)


class TestSweep:
    def test_trapezoid_constant(self):
        epochs = np.arange(1, 11)
        assert gan.trapezoid_integral(epochs, np.full(10, 2.5), start=5) == pytest.approx(2.5 * 5)

    def test_trapezoid_window(self):
        epochs = np.arange(1, 5)
        assert gan.trapezoid_integral(epochs, [1.0, 2.0, 3.0, 4.0], start=2, end=3) == 2.5

    def test_four_pairings(self, tiny_data):
        config = replace(TINY, epochs=10, window_start=5, seq_len=16)
        report = gan.architecture_sweep(tiny_data[0], config)
        assert set(report.entries) == {"CNN-CNN", "LSTM-CNN", "CNN-LSTM", "LSTM-LSTM"}
        for entry in report.entries.values():
            assert np.sum(entry.history.column("epoch") >= 5) == 6
            assert entry.integral_spectral >= 0 and entry.integral_djs >= 0
        assert report.winner in report.entries and not report.partial

    def test_window_must_precede_end(self, tiny_data):
        with pytest.raises(gan.ConfigError):
            gan.architecture_sweep(tiny_data[0], replace(TINY, epochs=3, window_start=3))

    def test_bad_cnn_length_marks_partial(self):
        data = np.random.default_rng(0).uniform(size=(6, 10))
        config = replace(TINY, seq_len=10, epochs=2, window_start=1)
        report = gan.architecture_sweep(data, config, continue_on_error=True)
        assert report.partial and list(report.entries) == ["LSTM-LSTM"]
        assert set(report.failures) == {"CNN-CNN", "LSTM-CNN", "CNN-LSTM"}

    def test_failure_propagates_with_pairing(self):
        data = np.random.default_rng(0).uniform(size=(6, 10))
        with pytest.raises(gan.TrainingError, match="CNN-CNN"):
            gan.architecture_sweep(data, replace(TINY, seq_len=10, epochs=2, window_start=1))

    def test_ranking(self):
        def entry(s, d, t):
            return gan.SweepEntry("x", s, d, t, (1, 2), gan.TrainingHistory())
        entries = {"a": entry(1.0, 2.0, 3.0), "b": entry(2.0, 1.0, 1.0)}
        scores = gan.rank_entries(entries)
        assert scores == {"a": pytest.approx(0.5 * 1.0 * 1.0), "b": pytest.approx(1.0 * 0.5 * 1 / 3)}
        assert gan.rank_entries(entries, "d_js") == {"a": 2.0, "b": 1.0}
        with pytest.raises(gan.ConfigError):
            gan.rank_entries(entries, "vibes")
