import json

import numpy as np
import pytest

from gazesynth import cli, data, markov
from gazesynth.metrics import EvaluationReport

TINY_GAN = ["--epochs", "2", "--batch-size", "4", "--noise-dim", "8", "--eval-samples", "8"]


def recording(path, n, seed=0):
    steps = np.random.default_rng(seed).normal(size=(n, 4)).cumsum(axis=0)
    lines = ["t_ms,left_x,left_y,right_x,right_y"] + [f"{i},{a},{b},{c},{d}" for i, (a, b, c, d) in enumerate(steps)]
    path.write_text("\n".join(lines) + "\n")
    return path


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("ingest")
    rec = recording(root / "rec.csv", 321)
    assert cli.main(["ingest", str(rec), "--length", "16", "--out", str(root)]) == 0
    return root / "dataset.csv"


@pytest.fixture(scope="module")
def trained(tmp_path_factory, dataset):
    out = tmp_path_factory.mktemp("train")
    assert cli.main(["train", str(dataset), *TINY_GAN, "--seed", "3", "--out", str(out)]) == 0
    return out


class TestIngest:
    def test_counts_and_meta(self, tmp_path):
        rec = recording(tmp_path / "rec.csv", 1000)
        assert cli.main(["ingest", str(rec), "--out", str(tmp_path / "o")]) == 0
        assert data.read_sequences(tmp_path / "o" / "dataset.csv").shape == (4, 200)
        meta = json.loads((tmp_path / "o" / "dataset.meta.json").read_text())
        assert meta["n_sequences"] == 4 and meta["eye"] == "left" and meta["n_velocity"] == [999]
        assert data.read_velocity(tmp_path / "o" / "velocity_left.csv").values.shape == (999,)
        assert (tmp_path / "o" / "provenance.json").exists()

    def test_short_recording_warns(self, tmp_path, caplog):
        rec = recording(tmp_path / "rec.csv", 150)
        assert cli.main(["ingest", str(rec), "--out", str(tmp_path)]) == 0
        assert "shorter than one segment" in caplog.text
        assert data.read_sequences(tmp_path / "dataset.csv").size == 0

    def test_missing_file(self, tmp_path, capsys):
        assert cli.main(["ingest", str(tmp_path / "absent.csv"), "--out", str(tmp_path)]) != 0
        assert "absent.csv" in capsys.readouterr().err

    def test_both_eyes_pool(self, tmp_path):
        rec = recording(tmp_path / "rec.csv", 101)
        assert cli.main(["ingest", str(rec), "--eye", "both", "--length", "50", "--out", str(tmp_path / "o")]) == 0
        assert data.read_sequences(tmp_path / "o" / "dataset.csv").shape == (4, 50)

    def test_config_file_and_override(self, tmp_path):
        rec = recording(tmp_path / "rec.csv", 101)
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"length": 25, "eye": "right"}))
        assert cli.main(["ingest", str(rec), "--config", str(cfg), "--length", "50", "--out", str(tmp_path / "o")]) == 0
        meta = json.loads((tmp_path / "o" / "dataset.meta.json").read_text())
        assert (meta["length"], meta["eye"]) == (50, "right")

    def test_unknown_config_key(self, tmp_path):
        rec = recording(tmp_path / "rec.csv", 101)
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"lenght": 25}))
        assert cli.main(["ingest", str(rec), "--config", str(cfg), "--out", str(tmp_path)]) == cli.EXIT_USAGE


class TestTrain:
    def test_history(self, trained):
        lines = (trained / "history.csv").read_text().splitlines()
        assert lines[0] == "epoch,l_g,l_d,l_spectral,l_final,d_js" and len(lines) == 3
        assert (trained / "timing.csv").read_text().startswith("epoch,seconds\n")
        prov = json.loads((trained / "provenance.json").read_text())
        assert prov["seed"] == 3 and prov["settings"]["epochs"] == 2 and "history.csv" in prov["outputs"]

    def test_rerun_byte_identical(self, trained, dataset, tmp_path):
        assert cli.main(["train", str(dataset), *TINY_GAN, "--seed", "3", "--out", str(tmp_path)]) == 0
        assert (tmp_path / "history.csv").read_bytes() == (trained / "history.csv").read_bytes()
        assert (tmp_path / "model.json").read_bytes() == (trained / "model.json").read_bytes()

    def test_negative_lambda(self, dataset, tmp_path, capsys):
        assert cli.main(["train", str(dataset), "--spectral-weight", "-0.5", "--out", str(tmp_path)]) == 1
        assert "lambda" in capsys.readouterr().err
        assert not (tmp_path / "history.csv").exists()

    def test_partial_history_on_abort(self, dataset, tmp_path, monkeypatch):
        from gazesynth import gan
        real_combined = gan.combined_loss
        calls = {"n": 0}

        def flaky(l_g, l_spec, w):
            calls["n"] += 1
            if calls["n"] > 5:
                return l_g * float("nan")
            return real_combined(l_g, l_spec, w)

        monkeypatch.setattr(gan, "combined_loss", flaky)
        code = cli.main(["train", str(dataset), *TINY_GAN, "--epochs", "5", "--out", str(tmp_path)])
        assert code == 1
        rows = (tmp_path / "history.csv").read_text().splitlines()
        assert rows[0].startswith("epoch") and len(rows) >= 2


class TestGenerate:
    def test_count_and_determinism(self, trained, tmp_path):
        for sub in ("a", "b"):
            assert cli.main(["generate", str(trained / "model.json"), "--count", "5", "--seed", "9",
                             "--out", str(tmp_path / sub)]) == 0
        seqs = data.read_sequences(tmp_path / "a" / "sequences.csv")
        assert seqs.shape == (5, 16)
        assert (tmp_path / "a" / "sequences.csv").read_bytes() == (tmp_path / "b" / "sequences.csv").read_bytes()

    def test_denormalized_within_training_range(self, trained, dataset, tmp_path):
        cli.main(["generate", str(trained / "model.json"), "--count", "20", "--out", str(tmp_path)])
        meta = json.loads(dataset.with_name("dataset.meta.json").read_text())["normalizer"]
        seqs = data.read_sequences(tmp_path / "sequences.csv")
        assert seqs.min() >= meta["min"] and seqs.max() <= meta["max"]

    def test_zero_count(self, trained, tmp_path):
        assert cli.main(["generate", str(trained / "model.json"), "--count", "0", "--out", str(tmp_path)]) == 0
        assert (tmp_path / "sequences.csv").read_text().count("\n") == 1

    def test_corrupt_model(self, trained, tmp_path, capsys):
        doc = json.loads((trained / "model.json").read_text())
        doc["payload"]["seed"] = 12345
        (tmp_path / "model.json").write_text(json.dumps(doc))
        assert cli.main(["generate", str(tmp_path / "model.json"), "--out", str(tmp_path)]) == 1
        assert "checksum" in capsys.readouterr().err


class TestEvaluate:
    def test_self(self, dataset, tmp_path):
        assert cli.main(["evaluate", str(dataset), str(dataset), "--plots", "--out", str(tmp_path)]) == 0
        report = json.loads((tmp_path / "report.json").read_text())
        assert report["d_js"] < 1e-12
        assert EvaluationReport.from_dict(report).to_dict() == report
        assert (tmp_path / "histogram.svg").read_text().startswith("<svg")
        assert "<polyline" in (tmp_path / "acf.svg").read_text()

    def test_disjoint(self, dataset, tmp_path):
        shifted = tmp_path / "far.csv"
        data.write_sequences(shifted, data.read_sequences(dataset) + 50.0)
        assert cli.main(["evaluate", str(dataset), str(shifted), "--out", str(tmp_path / "o")]) == 0
        assert abs(json.loads((tmp_path / "o" / "report.json").read_text())["d_js"] - 1.0) < 1e-8

    def test_denormalize_real(self, dataset, trained, tmp_path):
        cli.main(["generate", str(trained / "model.json"), "--count", "10", "--out", str(tmp_path)])
        assert cli.main(["evaluate", str(dataset), str(tmp_path / "sequences.csv"), "--denormalize-real",
                         "--out", str(tmp_path / "o")]) == 0
        report = json.loads((tmp_path / "o" / "report.json").read_text())
        assert report["settings"]["range"][1] > 1.0

    def test_refuses_to_overwrite_input(self, dataset, tmp_path):
        target = tmp_path / "report.json"
        data.write_sequences(target, data.read_sequences(dataset))
        assert cli.main(["evaluate", str(target), str(dataset), "--out", str(tmp_path)]) == cli.EXIT_USAGE


class TestSweep:
    ARGS = ["--epochs", "3", "--window-start", "1", "--batch-size", "4", "--noise-dim", "8", "--eval-samples", "8"]

    def test_four_pairings_deterministic(self, dataset, tmp_path):
        for sub in ("a", "b"):
            assert cli.main(["sweep", str(dataset), *self.ARGS, "--seed", "1", "--out", str(tmp_path / sub)]) == 0
        report = json.loads((tmp_path / "a" / "sweep.json").read_text())
        assert len(report["entries"]) == 4 and not report["partial"]
        for e in report["entries"]:
            assert e["integral_l_spectral"] >= 0 and e["integral_d_js"] >= 0
            name = f"history_{e['pairing'].lower()}.csv"
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()

    def test_bad_cnn_length_is_partial(self, tmp_path):
        ds = tmp_path / "odd.csv"
        data.write_sequences(ds, np.random.default_rng(0).uniform(size=(8, 12)))
        assert cli.main(["sweep", str(ds), *self.ARGS, "--out", str(tmp_path)]) == cli.EXIT_PARTIAL
        report = json.loads((tmp_path / "sweep.json").read_text())
        assert report["partial"] and len(report["failures"]) == 3 and len(report["entries"]) == 1

    def test_single_pairing_failure(self, dataset, tmp_path, monkeypatch):
        from gazesynth import gan
        real_train = gan.train

        def failing(data_, config, *a, **k):
            if config.pairing == "CNN-LSTM":
                raise gan.TrainingError("injected")
            return real_train(data_, config, *a, **k)

        monkeypatch.setattr(gan, "train", failing)
        assert cli.main(["sweep", str(dataset), *self.ARGS, "--out", str(tmp_path)]) == cli.EXIT_PARTIAL
        report = json.loads((tmp_path / "sweep.json").read_text())
        assert len(report["entries"]) == 3 and list(report["failures"]) == ["CNN-LSTM"]

    def test_bad_pairing_spec(self, dataset, tmp_path):
        assert cli.main(["sweep", str(dataset), "--pairings", "gru-cnn", "--out", str(tmp_path)]) == cli.EXIT_USAGE


@pytest.fixture(scope="module")
def hmm_series(tmp_path_factory):
    model = markov.HmmModel(np.array([0.5, 0.5]), np.array([[0.9, 0.1], [0.1, 0.9]]),
                            np.array([0.0, 4.0]), np.ones(2))
    path = tmp_path_factory.mktemp("hmm") / "v.csv"
    data.write_velocity(path, np.abs(markov.hmm_sample(model, 600, 1)))
    return path


@pytest.fixture(scope="module")
def kde_series(tmp_path_factory):
    path = tmp_path_factory.mktemp("kde") / "v.csv"
    data.write_velocity(path, np.abs(np.random.default_rng(2).normal(size=1000)))
    return path


class TestHmm:
    def test_range(self, hmm_series, tmp_path):
        assert cli.main(["hmm", str(hmm_series), "--states", "2..5", "--max-iter", "30", "--out", str(tmp_path)]) == 0
        rows = (tmp_path / "selection.csv").read_text().splitlines()
        assert rows[0] == "states,d_js" and [r.split(",")[0] for r in rows[1:]] == ["2", "3", "4", "5"]
        model = json.loads((tmp_path / "model.json").read_text())
        assert model["n_states"] == int(min(rows[1:], key=lambda r: float(r.split(",")[1])).split(",")[0])

    def test_single_state(self, hmm_series, tmp_path):
        assert cli.main(["hmm", str(hmm_series), "--states", "1", "--out", str(tmp_path)]) == 0
        model = json.loads((tmp_path / "model.json").read_text())
        assert model["means"][0] == pytest.approx(data.read_velocity(hmm_series).values.mean(), rel=1e-12)
        assert not (tmp_path / "selection.csv").exists()

    def test_empty(self, tmp_path):
        path = tmp_path / "v.csv"
        path.write_text("t_ms,v\n")
        assert cli.main(["hmm", str(path), "--states", "2", "--out", str(tmp_path)]) == 1


class TestKde:
    def test_bandwidth_pass_through(self, kde_series, tmp_path):
        assert cli.main(["kde", str(kde_series), "--order", "1", "--length", "50", "--out", str(tmp_path)]) == 0
        summary = json.loads((tmp_path / "kde.json").read_text())
        assert summary["bandwidth"] == markov.silverman_bandwidth(data.read_velocity(kde_series).values, 1)
        assert len((tmp_path / "sample.csv").read_text().splitlines()) == 51

    def test_zero_length(self, kde_series, tmp_path):
        assert cli.main(["kde", str(kde_series), "--length", "0", "--out", str(tmp_path)]) == 0
        assert (tmp_path / "sample.csv").read_text() == "t_ms,v\n"

    def test_same_seed(self, kde_series, tmp_path):
        for sub in ("a", "b"):
            cli.main(["kde", str(kde_series), "--length", "40", "--seed", "4", "--out", str(tmp_path / sub)])
        assert (tmp_path / "a" / "sample.csv").read_bytes() == (tmp_path / "b" / "sample.csv").read_bytes()

    def test_constant_series(self, tmp_path, capsys):
        path = tmp_path / "c.csv"
        data.write_velocity(path, np.full(20, 1.5))
        assert cli.main(["kde", str(path), "--out", str(tmp_path / "o")]) == 1
        assert "bandwidth" in capsys.readouterr().err


def test_help_lists_commands(capsys):
    with pytest.raises(SystemExit):
        cli.main(["--help"])
    out = capsys.readouterr().out
    for name in ("ingest", "train", "generate", "evaluate", "sweep", "hmm", "kde"):
        assert name in out
