import json

import numpy as np
import pytest

from nesr.cli import main, parse_bands, resolve_config
from nesr.data import io
from nesr.errors import ConfigurationError, UsageError

TINY = ["--set", "model.encoder_channels=4", "--set", "model.embed_channels=4",
        "--set", "model.encoder_blocks=1", "--set", "train.max_iters=3",
        "--set", "train.crop=8", "--set", "train.batch_size=1", "--set", "train.band_min=3",
        "--set", "train.band_max=5", "--set", "train.query_samples=32",
        "--set", "train.log_every=0"]


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    out = tmp_path_factory.mktemp("data")
    assert main(["gen-data", "--out", str(out), "--scenes", "2", "--test-scenes", "2",
                 "--size", "12", "--seed", "3"]) == 0
    return out


@pytest.fixture(scope="module")
def checkpoint(dataset, tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    assert main(["train", "--data", str(dataset), "--out", str(out)] + TINY) == 0
    return out / "checkpoint.nsrk"


class TestParseBands:
    def test_range_includes_stop(self):
        wl = parse_bands("400:5:700")
        assert wl.size == 61 and wl[0] == 400.0 and wl[-1] == 700.0

    def test_count_and_list(self):
        assert parse_bands("31").size == 31
        assert parse_bands("450, 550,600").tolist() == [450.0, 550.0, 600.0]

    @pytest.mark.parametrize("text", ["abc", "400:0:700", "400:10", "300:10:700", "500,450"])
    def test_rejects(self, text):
        with pytest.raises(UsageError):
            parse_bands(text)


class TestConfig:
    def test_precedence_flag_over_env(self, monkeypatch):
        monkeypatch.setenv("NESR_SEED", "11")
        assert resolve_config(None, [], None)["seed"] == 11
        assert resolve_config(None, [], 5)["seed"] == 5
        assert resolve_config(None, ["seed=7"], None)["train"]["seed"] == 7

    def test_default_seed(self, monkeypatch):
        monkeypatch.delenv("NESR_SEED", raising=False)
        assert resolve_config(None, [], None)["seed"] == 0

    def test_unknown_keys_rejected(self, tmp_path):
        p = tmp_path / "c.json"
        p.write_text(json.dumps({"optimizer": {}}))
        with pytest.raises(UsageError, match="unknown config keys"):
            resolve_config(str(p), [], None)
        with pytest.raises(ConfigurationError, match="no_such_field"):
            resolve_config(None, ["train.no_such_field=1"], None)
        with pytest.raises(UsageError):
            resolve_config(None, ["lr=1"], None)

    def test_spectral_mode_sets_input_channels(self):
        doc = resolve_config(None, ["train.input_mode=\"spectral\"", "train.input_bands=16"], None)
        assert doc["model"]["in_channels"] == 16


class TestCommands:
    def test_gen_data_is_deterministic(self, dataset, tmp_path):
        assert main(["gen-data", "--out", str(tmp_path), "--scenes", "2", "--test-scenes", "2",
                     "--size", "12", "--seed", "3"]) == 0
        for name in ("manifest_train.json", "manifest_test.json"):
            assert (tmp_path / name).read_bytes() == (dataset / name).read_bytes()

    def test_train_writes_echo_and_trace(self, checkpoint):
        run = json.loads((checkpoint.parent / "run.json").read_text())
        assert run["command"] == "train" and run["config"]["train"]["max_iters"] == 3
        assert "nesr" in run["version"]
        assert io.read_tensor(checkpoint.parent / "loss_trace.nsrt").shape == (3,)

    def test_reconstruct_61_bands(self, dataset, checkpoint, tmp_path):
        scene_id = io.read_manifest(dataset / "manifest_test.json")["scenes"][0]["id"]
        rc = main(["reconstruct", "--checkpoint", str(checkpoint), "--bands", "400:5:700",
                   "--data", str(dataset), "--scene-id", scene_id, "--out", str(tmp_path)])
        assert rc == 0
        pred = io.read_spectral_image(tmp_path / "prediction.nsrt")
        assert pred.volume.shape[0] == 61
        assert (tmp_path / "error_map.pgm").exists()

    def test_reconstruct_from_input_file(self, checkpoint, tmp_path):
        rgb = np.random.default_rng(0).uniform(size=(3, 8, 8)).astype(np.float32)
        io.write_tensor(tmp_path / "rgb.nsrt", rgb)
        rc = main(["reconstruct", "--checkpoint", str(checkpoint), "--bands", "7",
                   "--input", str(tmp_path / "rgb.nsrt"), "--out", str(tmp_path / "o")])
        assert rc == 0
        assert io.read_spectral_image(tmp_path / "o" / "prediction.nsrt").volume.shape == (7, 8, 8)

    def test_eval_and_bench(self, dataset, checkpoint, tmp_path):
        assert main(["eval", "--checkpoint", str(checkpoint), "--data", str(dataset),
                     "--bands", "11", "--out", str(tmp_path / "e")]) == 0
        report = json.loads((tmp_path / "e" / "report.json").read_text())
        assert report["rows"][0]["bands"] == 11
        assert main(["bench", "--mode", "arbitrary", "--checkpoint", f"arbitrary={checkpoint}",
                     "--data", str(dataset), "--out", str(tmp_path / "b")]) == 0
        rows = json.loads((tmp_path / "b" / "report_arbitrary.json").read_text())["rows"]
        assert {r["bands"] for r in rows} == {31, 16, 11, 7}

    def test_eval_bi_needs_no_checkpoint(self, dataset, tmp_path):
        assert main(["eval", "--method", "bi", "--data", str(dataset), "--out", str(tmp_path)]) == 0


class TestExitCodes:
    def test_missing_subcommand(self, capsys):
        assert main([]) == 1
        assert "missing subcommand" in capsys.readouterr().err

    def test_bad_flag(self):
        assert main(["train", "--nope"]) == 1

    def test_bad_bands(self, checkpoint, tmp_path):
        assert main(["reconstruct", "--checkpoint", str(checkpoint), "--bands", "700:10:400",
                     "--input", "x", "--out", str(tmp_path)]) == 1

    def test_missing_manifest(self, tmp_path):
        assert main(["train", "--data", str(tmp_path), "--out", str(tmp_path / "o")]) == 1

    def test_bench_missing_checkpoint_names_mode(self, dataset, tmp_path, capsys):
        assert main(["bench", "--mode", "ssr", "--data", str(dataset), "--out", str(tmp_path)]) == 1
        assert "ssr" in capsys.readouterr().err

    def test_corrupt_checkpoint_is_runtime_error(self, dataset, checkpoint, tmp_path, capsys):
        bad = tmp_path / "bad.nsrk"
        raw = bytearray(checkpoint.read_bytes())
        raw[40] ^= 0xFF
        bad.write_bytes(bytes(raw[: len(raw) // 2]))
        rc = main(["eval", "--checkpoint", str(bad), "--data", str(dataset), "--out", str(tmp_path)])
        assert rc == 2
        assert "offset" in capsys.readouterr().err
