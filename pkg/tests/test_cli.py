"""
Tests for the artifact file format and the command line.
"""

import numpy as np
import orjson
import pytest

from src.artifacts import load_artifacts, save_artifacts
from src.cli import build_parser, main
from src.netmodel import build_chain_benchmark, save_model
from src.tube import check_rpi_lmis


def emitted(capsys) -> dict:
    return orjson.loads(capsys.readouterr().out)


class TestArtifactFiles:
    """Tests for saving and loading synthesis artifacts."""

    def test_save_and_load(self, chain3, chain3_artifacts, tmp_path):
        """Test that loaded artifacts reproduce tube, tightened sets and terminal levels."""
        path = tmp_path / "artifacts.json"
        save_artifacts(chain3_artifacts, path)
        loaded = load_artifacts(chain3, path)
        assert np.allclose(loaded.tube.P, chain3_artifacts.tube.P)
        assert np.allclose(loaded.tube.K, chain3_artifacts.tube.K)
        assert loaded.tube.tau == pytest.approx(chain3_artifacts.tube.tau)
        for ours, theirs in zip(loaded.tightened.X_bar, chain3_artifacts.tightened.X_bar):
            assert np.allclose(ours.h, theirs.h)
        assert np.allclose(loaded.terminal.alpha0, chain3_artifacts.terminal.alpha0)
        assert check_rpi_lmis(loaded.tube, chain3).ok

    def test_wrong_model_rejected(self, chain3_artifacts, tmp_path):
        """Test that artifacts for three subsystems do not load against five."""
        path = tmp_path / "artifacts.json"
        save_artifacts(chain3_artifacts, path)
        with pytest.raises(ValueError):
            load_artifacts(build_chain_benchmark(M=5), path)


class TestCommandLine:
    """Tests for the dmpsc commands."""

    def test_command_required(self):
        """Test that a subcommand is required."""
        with pytest.raises(SystemExit):
            build_parser().parse_args([])

    def test_benchmark_model(self, tmp_path, capsys):
        """Test that the benchmark command writes a loadable model."""
        out = tmp_path / "chain.json"
        assert main(["benchmark-model", "--out", str(out), "--masses", "3"]) == 0
        payload = emitted(capsys)
        assert payload["subsystems"] == 3
        assert payload["states"] == 6
        assert out.exists()

    def test_debug_logs_keep_stdout_json(self, tmp_path, capsys):
        """Test that debug logging never mixes into the JSON summary."""
        out = tmp_path / "chain.json"
        assert main(["--log-level", "DEBUG", "--log-format", "json", "benchmark-model", "--out", str(out)]) == 0
        captured = capsys.readouterr()
        assert orjson.loads(captured.out)["subsystems"] == 9

    def test_synth_and_verify(self, chain3, tmp_path, capsys):
        """Test synthesis followed by verification of the written artifacts."""
        model_path = tmp_path / "chain.json"
        artifacts_path = tmp_path / "artifacts.json"
        save_model(chain3, model_path)
        assert main(["synth", "--model", str(model_path), "--out", str(artifacts_path), "--tau", "0.055"]) == 0
        payload = emitted(capsys)
        assert payload["tau"] == pytest.approx(0.055)
        assert payload["alpha_bar"] > 0.0

        code = main(
            ["verify-tube", "--model", str(model_path), "--artifacts", str(artifacts_path), "--samples", "500"]
        )
        payload = emitted(capsys)
        assert code == 0
        assert payload["ok"]
        assert payload["rpi_violations"] == 0

    def test_raw_run(self, chain3, chain3_artifacts, tmp_path, capsys):
        """Test that an unfiltered run writes its trace and summary."""
        model_path = tmp_path / "chain.json"
        artifacts_path = tmp_path / "artifacts.json"
        save_model(chain3, model_path)
        save_artifacts(chain3_artifacts, artifacts_path)
        out = tmp_path / "run"
        code = main(
            [
                "certify-run",
                "--model", str(model_path),
                "--artifacts", str(artifacts_path),
                "--policy", "zero",
                "--controller", "raw",
                "--steps", "3",
                "--out", str(out),
            ]
        )
        payload = emitted(capsys)
        assert code == 0
        assert payload["steps"] == 3
        assert (out / "trace.csv").exists()
        assert (out / "summary.json").exists()
