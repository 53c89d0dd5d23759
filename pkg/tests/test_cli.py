"""
End-to-end tests for the ``bigat`` command line on tiny synthetic data.

Every command is driven through ``main(argv)`` so exit codes are checked the
way a shell would see them.
"""

from __future__ import annotations

import io
from pathlib import Path

import httpx
import pandas as pd
import pytest

from bigat import constants as _ct
from bigat.cli import UsageError, exit_code_for, main
from bigat.errors import (
    CheckpointError,
    ConfigError,
    ContractError,
    DatasetFetchError,
    DimensionError,
    NumericError,
    TrackParseError,
)

from .conftest import TINY


def _csv(text: str) -> pd.DataFrame:
    return pd.read_csv(io.StringIO(text))


@pytest.fixture
def tiny_cfg(tmp_path: Path) -> Path:
    path = tmp_path / "tiny.cfg"
    lines = [f"{key} = {', '.join(map(str, value)) if isinstance(value, tuple) else value}" for key, value in TINY.items()]
    path.write_text("\n".join(["# tiny network for fast runs", "seed = 3", *lines]) + "\n")
    return path


@pytest.fixture
def tracks(tmp_path: Path) -> Path:
    path = tmp_path / "cv.txt"
    assert main(["synth", "--scenes", "3", "--max-pedestrians", "2", "--noise", "0.02", "--seed", "1", "-o", str(path)]) == 0
    return path


@pytest.fixture
def checkpoint(tmp_path: Path, tiny_cfg: Path, tracks: Path) -> Path:
    ckpt = tmp_path / "model.ckpt"
    log = tmp_path / "train.csv"
    argv = ["train", "--config", str(tiny_cfg), "--data", str(tracks), "--checkpoint", str(ckpt)]
    assert main([*argv, "--max-steps", "2", "--log", str(log)]) == 0
    assert _csv(log.read_text())["step"].tolist() == [0, 1]
    return ckpt


def test_synth_is_byte_reproducible(tmp_path: Path):
    outputs = []
    for name in ("a.txt", "b.txt"):
        path = tmp_path / name
        assert main(["synth", "--kind", "bimodal-avoidance", "--scenes", "5", "--seed", "4", "-o", str(path)]) == 0
        outputs.append(path.read_bytes())
    assert outputs[0] == outputs[1]
    assert (tmp_path / "a.modes.csv").exists()


def test_train_writes_checkpoint_and_sidecar(checkpoint: Path):
    assert checkpoint.exists()
    sidecar = Path(f"{checkpoint}.cfg").read_text()
    assert "latent_dim = 3" in sidecar
    assert "cnn_channels = 3, 4" in sidecar


def test_evaluate_prints_metrics(checkpoint: Path, tracks: Path, capsys):
    code = main(["evaluate", "--checkpoint", str(checkpoint), "--data", str(tracks), "--k", "3", "--scene-name", "cv"])
    assert code == 0
    table = _csv(capsys.readouterr().out)
    assert list(table.columns) == _ct.METRICS_CSV_COLUMNS
    assert table["scene"].tolist() == ["cv"]
    assert (table["k"] == 3).all()


def test_evaluate_k_list_writes_degradation_table(tmp_path: Path, checkpoint: Path, tracks: Path):
    output = tmp_path / "k.csv"
    argv = ["evaluate", "--checkpoint", str(checkpoint), "--data", str(tracks), "--k-list", "1,4", "-o", str(output)]
    assert main(argv) == 0
    table = _csv(output.read_text())
    assert table["k"].tolist() == [4, 1]
    assert table["ade"].iloc[0] <= table["ade"].iloc[1]


def test_sample_writes_trajectories(checkpoint: Path, tracks: Path, capsys):
    assert main(["sample", "--checkpoint", str(checkpoint), "--data", str(tracks), "--samples", "2"]) == 0
    table = _csv(capsys.readouterr().out)
    assert list(table.columns) == ["scene_id", *_ct.TRAJECTORY_CSV_COLUMNS]
    assert set(table["z_index"]) == {0, 1}
    assert len(table) % (2 * _ct.T_FUT) == 0


def test_sweep_writes_one_path_per_latent_value(checkpoint: Path, tracks: Path, capsys):
    argv = ["sweep", "--checkpoint", str(checkpoint), "--data", str(tracks), "--axis", "2", "--values=-1,0,1"]
    assert main(argv) == 0
    table = _csv(capsys.readouterr().out)
    assert sorted(set(table["z_index"])) == [0, 1, 2]
    assert table["t"].max() == _ct.T_FUT - 1


def test_sweep_svg(tmp_path: Path, checkpoint: Path, tracks: Path):
    pytest.importorskip("matplotlib")
    svg = tmp_path / "sweep.svg"
    argv = ["sweep", "--checkpoint", str(checkpoint), "--data", str(tracks), "--svg", str(svg), "-o", str(tmp_path / "s.csv")]
    assert main(argv) == 0
    assert svg.read_text().lstrip().startswith("<?xml")


def test_sweep_rejects_bad_scene_index(checkpoint: Path, tracks: Path):
    argv = ["sweep", "--checkpoint", str(checkpoint), "--data", str(tracks), "--scene-index", "99"]
    assert main(argv) == _ct.EXIT_USAGE


def test_baseline_on_constant_velocity_is_near_exact(tracks: Path, capsys):
    assert main(["baseline", "--data", str(tracks)]) == 0
    table = _csv(capsys.readouterr().out)
    assert table["ade"].iloc[-1] < 0.15


def test_gradcheck_passes(tmp_path: Path):
    output = tmp_path / "grad.csv"
    assert main(["gradcheck", "--coordinates", "1", "-o", str(output)]) == 0
    assert _csv(output.read_text())["passed"].all()


# ------------------------------------------------------------------- errors


def test_evaluate_without_checkpoint_is_a_usage_error(tracks: Path, capsys):
    assert main(["evaluate", "--data", str(tracks)]) == _ct.EXIT_USAGE
    assert "--checkpoint" in capsys.readouterr().err


def test_unknown_config_key_is_a_usage_error(tmp_path: Path, tracks: Path, capsys):
    argv = ["train", "--data", str(tracks), "--checkpoint", str(tmp_path / "m.ckpt"), "--set", "lamda_z=1"]
    assert main(argv) == _ct.EXIT_USAGE
    assert "lambda_z" in capsys.readouterr().err


def test_train_without_data_is_a_usage_error(tmp_path: Path):
    assert main(["train", "--checkpoint", str(tmp_path / "m.ckpt")]) == _ct.EXIT_USAGE


def test_malformed_track_file_is_a_data_error(tmp_path: Path, capsys):
    bad = tmp_path / "bad.txt"
    bad.write_text("0 1 2.0 3.0\n10 1 oops 3.0\n")
    assert main(["baseline", "--data", str(bad)]) == _ct.EXIT_DATA
    assert "line 2" in capsys.readouterr().err


def test_mismatched_checkpoint_is_a_data_error(tmp_path: Path, checkpoint: Path, tracks: Path):
    other = tmp_path / "other.cfg"
    other.write_text("latent_dim = 5\n")
    argv = ["evaluate", "--checkpoint", str(checkpoint), "--data", str(tracks), "--config", str(other)]
    assert main(argv) == _ct.EXIT_DATA


def test_grid_smaller_than_the_cnn_is_a_data_error(tmp_path: Path, tiny_cfg: Path, tracks: Path, capsys):
    (tmp_path / _ct.GRID_FILE_NAME).write_text("GRID 3 3 1 0.0 0.0 1.0\n" + " ".join(["0.5"] * 9) + "\n")
    argv = ["train", "--config", str(tiny_cfg), "--data", str(tracks), "--checkpoint", str(tmp_path / "m.ckpt")]
    assert main([*argv, "--max-steps", "1"]) == _ct.EXIT_DATA
    assert "DimensionError" in capsys.readouterr().err


@pytest.mark.parametrize(
    "extra",
    [["--k", "0"], ["--k", "two"], ["--k-list", "20,0"], ["--k-list", ","]],
)
def test_bad_k_is_a_usage_error(checkpoint: Path, tracks: Path, extra: list[str]):
    argv = ["evaluate", "--checkpoint", str(checkpoint), "--data", str(tracks), *extra]
    assert main(argv) == _ct.EXIT_USAGE


def test_sample_needs_at_least_one_latent(checkpoint: Path, tracks: Path):
    argv = ["sample", "--checkpoint", str(checkpoint), "--data", str(tracks), "--samples", "0"]
    assert main(argv) == _ct.EXIT_USAGE


@pytest.mark.parametrize("extra", [["--axis", "9"], ["--axis", "-1"], ["--values", "1,x"]])
def test_sweep_rejects_bad_latent_grid(checkpoint: Path, tracks: Path, extra: list[str]):
    argv = ["sweep", "--checkpoint", str(checkpoint), "--data", str(tracks), *extra]
    assert main(argv) == _ct.EXIT_USAGE


@pytest.mark.parametrize(
    "exc, code",
    [
        (UsageError("x"), _ct.EXIT_USAGE),
        (ConfigError("x"), _ct.EXIT_USAGE),
        (TrackParseError("x"), _ct.EXIT_DATA),
        (CheckpointError("x"), _ct.EXIT_DATA),
        (DatasetFetchError("x"), _ct.EXIT_DATA),
        (httpx.ConnectError("x"), _ct.EXIT_DATA),
        (FileNotFoundError("x"), _ct.EXIT_DATA),
        (ContractError("x"), _ct.EXIT_DATA),
        (DimensionError("x"), _ct.EXIT_DATA),
        (NumericError("x"), _ct.EXIT_NUMERIC),
    ],
)
def test_exit_code_for(exc: BaseException, code: int):
    assert exit_code_for(exc) == code
