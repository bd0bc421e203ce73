"""CLI subcommands: file outputs, determinism, exit codes, config schemas."""

import json
import subprocess
import sys
from pathlib import Path

import pytest

from cdformer.cli import (EXIT_CONFIG, EXIT_DATA, _build_train_configs,
                          build_parser, main)


def run_cli(*argv):
    return main(list(argv))


@pytest.fixture
def synth_dir(tmp_path):
    out = tmp_path / "data"
    code = run_cli("synthesize", "--out", str(out), "--batteries", "2",
                   "--cycles", "60", "--seed", "7", "--noise-std", "0.01")
    assert code == 0
    return out


class TestSynthesize:
    def test_writes_requested_number_of_files(self, synth_dir):
        files = sorted(synth_dir.glob("synth_*.csv"))
        assert len(files) == 2
        assert (synth_dir / "manifest.json").exists()

    def test_reproducible_bytes(self, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        for out in (a, b):
            assert run_cli("synthesize", "--out", str(out), "--batteries", "4",
                           "--seed", "7", "--cycles", "60") == 0
        for name in ("synth_000.csv", "synth_003.csv"):
            assert (a / name).read_bytes() == (b / name).read_bytes()

    def test_different_seed_different_bytes(self, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        run_cli("synthesize", "--out", str(a), "--batteries", "1", "--seed", "1",
                "--cycles", "60", "--noise-std", "0.01")
        run_cli("synthesize", "--out", str(b), "--batteries", "1", "--seed", "2",
                "--cycles", "60", "--noise-std", "0.01")
        assert (a / "synth_000.csv").read_bytes() != (b / "synth_000.csv").read_bytes()


class TestIngest:
    def test_valid_data_exit_zero(self, synth_dir, capsys):
        assert run_cli("ingest", "--data", str(synth_dir), "--profile",
                       "synthetic") == 0
        payload = json.loads(capsys.readouterr().out)
        assert len(payload) == 2

    def test_missing_data_dir_exits_data_code(self, tmp_path, capsys):
        code = run_cli("ingest", "--data", str(tmp_path / "nope"), "--profile", "nasa")
        assert code == EXIT_DATA

    def test_malformed_file_exits_data_code(self, tmp_path):
        bad = tmp_path / "bad.csv"
        bad.write_text("battery_id,cycle_index,capacity_ah,voltage_avg_v,"
                       "current_avg_a,temp_avg_c\nb1,1,-2.0,3.6,1.5,24\n")
        assert run_cli("ingest", "--data", str(bad), "--profile", "nasa") == EXIT_DATA


class TestAugmentCommand:
    def test_identity_parameters_reproduce_input(self, synth_dir, tmp_path):
        src = synth_dir / "synth_000.csv"
        out = tmp_path / "aug.csv"
        assert run_cli("augment", "--data", str(src), "--out", str(out),
                       "--alpha", "0", "--rho", "1", "--sigma", "0",
                       "--prob", "1", "--seed", "3") == 0
        assert out.read_bytes() == src.read_bytes()
        sidecar = json.loads((tmp_path / "aug.csv.provenance.json").read_text())
        assert [p["technique"] for p in sidecar["applied"]["synth_000"]] == [
            "time_warp", "time_resample", "gaussian_noise"]

    def test_bad_rho_exits_config_code(self, synth_dir, tmp_path):
        code = run_cli("augment", "--data", str(synth_dir / "synth_000.csv"),
                       "--out", str(tmp_path / "x.csv"), "--rho", "0")
        assert code == EXIT_CONFIG


class TestTrainConfigs:
    def _args(self, **overrides):
        parser = build_parser()
        base = ["train", "--data", "unused", "--profile", "nasa"]
        argv = base + overrides.pop("extra", [])
        args = parser.parse_args(argv)
        for key, value in overrides.items():
            setattr(args, key, value)
        return args

    def test_nasa_profile_presets(self):
        model_cfg, train_cfg = _build_train_configs(self._args())
        assert train_cfg.lr == 0.0005
        assert train_cfg.max_epochs == 200
        assert model_cfg.input_channels == 4
        assert model_cfg.output_relu is True

    def test_calce_profile_presets(self):
        parser = build_parser()
        args = parser.parse_args(["train", "--data", "unused", "--profile", "calce"])
        model_cfg, train_cfg = _build_train_configs(args)
        assert train_cfg.lr == 0.001
        assert train_cfg.max_epochs == 500
        assert model_cfg.input_channels == 3
        assert model_cfg.output_relu is False

    def test_config_file_overrides_profile(self, tmp_path):
        cfg = tmp_path / "t.json"
        cfg.write_text(json.dumps({"lr": 0.01, "max_epochs": 3}))
        args = self._args(config=str(cfg))
        _, train_cfg = _build_train_configs(args)
        assert train_cfg.lr == 0.01
        assert train_cfg.max_epochs == 3

    def test_schema_violation_reports_json_pointer(self, tmp_path, capsys):
        cfg = tmp_path / "t.json"
        cfg.write_text(json.dumps({"lr": "fast"}))
        code = run_cli("train", "--data", "unused", "--profile", "nasa",
                       "--out", str(tmp_path / "o"), "--config", str(cfg))
        assert code == EXIT_CONFIG
        err = capsys.readouterr().err
        assert "/lr" in err

    def test_unknown_key_rejected(self, tmp_path, capsys):
        cfg = tmp_path / "t.json"
        cfg.write_text(json.dumps({"learning_rate": 0.1}))
        code = run_cli("train", "--data", "unused", "--profile", "nasa",
                       "--out", str(tmp_path / "o"), "--config", str(cfg))
        assert code == EXIT_CONFIG


class TestTrainCommand:
    def _train(self, data_dir, out_dir, seed="5"):
        model_cfg = out_dir.parent / "model.json"
        model_cfg.write_text(json.dumps({
            "window_len": 12, "cnn_channels": 6, "drsn_blocks": 1, "d_model": 8,
            "heads": 2, "d_ff": 16, "encoder_layers": 1, "reg_hidden": 8}))
        train_cfg = out_dir.parent / "train.json"
        train_cfg.write_text(json.dumps({"max_epochs": 3, "patience": 3,
                                         "lr": 0.005, "seed": int(seed)}))
        return run_cli("train", "--data", str(data_dir), "--profile", "synthetic",
                       "--out", str(out_dir), "--config", str(train_cfg),
                       "--model-config", str(model_cfg))

    def test_missing_data_dir_no_partial_outputs(self, tmp_path):
        out = tmp_path / "out"
        code = run_cli("train", "--data", str(tmp_path / "missing"),
                       "--profile", "synthetic", "--out", str(out))
        assert code == EXIT_DATA
        assert not out.exists()

    def test_end_to_end_outputs(self, synth_dir, tmp_path, capsys):
        out = tmp_path / "run"
        assert self._train(synth_dir, out) == 0
        assert (out / "summary.json").exists()
        assert (out / "manifest.json").exists()
        for battery in ("synth_000", "synth_001"):
            assert (out / f"checkpoint_{battery}.json").exists()
            assert (out / f"history_{battery}.csv").exists()
            assert (out / f"trajectory_{battery}.csv").exists()
        summary = json.loads((out / "summary.json").read_text())
        assert len(summary["per_battery"]) == 2
        assert summary["aggregate"]["rmse"] > 0

    def test_rerun_identical_metrics_json(self, synth_dir, tmp_path):
        out1, out2 = tmp_path / "r1", tmp_path / "r2"
        assert self._train(synth_dir, out1) == 0
        assert self._train(synth_dir, out2) == 0
        assert (out1 / "summary.json").read_bytes() == (out2 / "summary.json").read_bytes()

    def test_eval_and_predict_from_checkpoint(self, synth_dir, tmp_path, capsys):
        run = tmp_path / "run"
        assert self._train(synth_dir, run) == 0
        capsys.readouterr()
        eval_out = tmp_path / "eval"
        code = run_cli("eval", "--checkpoint", str(run / "checkpoint_synth_000.json"),
                       "--data", str(synth_dir / "synth_000.csv"),
                       "--out", str(eval_out))
        assert code == 0
        payload = json.loads(capsys.readouterr().out)
        entry = payload["per_battery"][0]
        assert set(entry) == {"id", "rmse", "mae", "re"}
        pred_out = tmp_path / "pred"
        code = run_cli("predict", "--checkpoint", str(run / "checkpoint_synth_000.json"),
                       "--data", str(synth_dir / "synth_000.csv"),
                       "--out", str(pred_out), "--mode", "recursive")
        assert code == 0
        assert (pred_out / "pred_synth_000.csv").exists()


class TestEntryPoint:
    def test_console_script_help(self):
        proc = subprocess.run([sys.executable, "-m", "cdformer.cli", "--help"],
                              capture_output=True, text=True)
        assert proc.returncode == 0
        # help text enumerates config keys with their defaults
        for key in ("lr", "weight_decay", "huber_delta", "alpha", "rho", "sigma",
                    "d_model", "window_len"):
            assert key in proc.stdout

    def test_output_root_env_fallback(self, synth_dir, tmp_path, monkeypatch):
        monkeypatch.setenv("CDFORMER_OUT", str(tmp_path / "root"))
        assert run_cli("ingest", "--data", str(synth_dir),
                       "--profile", "synthetic") == 0  # --out optional here
