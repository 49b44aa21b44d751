import json
from pathlib import Path

import click
import numpy as np
import tomlkit
from click.testing import CliRunner

from binauralkit.audio import write_wav
from binauralkit.main import cli

small = {
    "scene": {
        "duration": 0.5,
        "max_order": 1,
        "noise_count": [1, 1],
    },
    "train": {
        "max_epochs": 2,
    },
}


def patch_edit(monkeypatch):
    monkeypatch.setattr(
        click,
        "edit",
        lambda filename, *args, **kwargs: print(f"Edit issued: {filename}"),
    )


def make_workspace(root: Path) -> Path:
    rng = np.random.default_rng(0)
    for kind in ("speech", "noise"):
        write_wav(root / kind / f"{kind}.wav", 0.1 * rng.standard_normal(16000), 16000)
    config_file = root / "binauralkit.toml"
    config_file.write_text(tomlkit.dumps(small))
    return config_file


def test_config(monkeypatch):
    runner = CliRunner()
    with runner.isolated_filesystem() as r:
        config_file = Path(r).joinpath("binauralkit.toml")
        output = runner.invoke(cli, ["-C", str(config_file), "config", "--path"])
        assert "binauralkit.toml" in output.output

        output = runner.invoke(cli, ["-C", str(config_file), "config", "--default"])
        assert "# Configuration for the binauralkit command" in output.output
        assert "lambda_mwild" in output.output

        # Assert we get prompted for non-existent
        output = runner.invoke(cli, ["-C", str(config_file), "config"])
        assert "Do you want to create it with default values" in output.output
        assert "No config file was created" in output.output

        output = runner.invoke(cli, ["-C", str(config_file), "config"], input="y")
        assert "# Configuration for the binauralkit command" in output.output
        assert config_file.exists()

        patch_edit(monkeypatch)
        output = runner.invoke(cli, ["-C", str(config_file), "config", "--edit"])
        assert "Edit issued" in output.output

        output = runner.invoke(cli, ["-C", str(config_file), "config"])
        assert "losses.lambda_mwild:" in output.output
        assert "hrtf.hrir_dir:" in output.output

        output = runner.invoke(cli, ["-C", str(config_file), "config", "--raw"])
        assert "# Configuration for the binauralkit command" in output.output

        output = runner.invoke(cli, ["-C", str(config_file), "config", "--delete"])
        assert "Deleted the config file" in output.output
        assert not config_file.exists()


def test_helps():
    runner = CliRunner()
    with runner.isolated_filesystem():
        # Base help
        output = runner.invoke(cli, ["--help"])
        assert "Usage: " in output.output
        assert "Pipeline:" in output.output
        assert "Tools:" in output.output
        assert "train-toy" in output.output

        output = runner.invoke(cli)
        assert "Usage: " in output.output
        assert "gradcheck" in output.output

        output = runner.invoke(cli, ["simulate", "--help"])
        assert "--speech" in output.output
        assert "--jobs" in output.output


def test_missing_config():
    runner = CliRunner()
    with runner.isolated_filesystem():
        output = runner.invoke(cli, ["-C", "missing.toml", "gradcheck"])
        assert output.exit_code == 2
        assert "does not exist" in output.output

        Path("broken.toml").write_text("[scene\n")
        output = runner.invoke(cli, ["-C", "broken.toml", "gradcheck"])
        assert output.exit_code == 2
        assert "is not valid TOML" in output.output

        Path("typo.toml").write_text(tomlkit.dumps({"losses": {"ild_eps": "abc"}}))
        output = runner.invoke(cli, ["-C", "typo.toml", "gradcheck"])
        assert output.exit_code == 2
        assert "losses.ild_eps was not a number" in output.output
        assert isinstance(output.exception, SystemExit)


def test_malformed_manifest():
    runner = CliRunner()
    with runner.isolated_filesystem() as r:
        config = str(make_workspace(Path(r)))
        output = runner.invoke(
            cli,
            ["-C", config, "simulate", "--count", "1", "--speech", "speech"]
            + ["--noise", "noise", "--out", "data"],
        )
        assert output.exit_code == 0, output.output

        manifest = Path("data/scene_0000/manifest.json")
        data = json.loads(manifest.read_text())
        data["room"]["rt60"] = "long"
        manifest.write_text(json.dumps(data))

        output = runner.invoke(cli, ["-C", config, "baseline", "data/scene_0000"])
        assert output.exit_code == 2
        assert "room.rt60 is not a finite number" in output.output
        assert isinstance(output.exception, SystemExit)


def test_gradcheck():
    runner = CliRunner()
    with runner.isolated_filesystem():
        output = runner.invoke(cli, ["gradcheck"])
        assert output.exit_code == 0
        assert "ri: " in output.output
        assert "mag: " in output.output
        assert "mwild: " in output.output

        output = runner.invoke(cli, ["gradcheck", "--json", "--seed", "3"])
        errors = json.loads(output.output)
        assert set(errors) == {"ri", "mag", "mwild", "composite"}

        output = runner.invoke(cli, ["gradcheck", "--tolerance", "1e-30"])
        assert output.exit_code == 1
        assert "Gradient error above" in output.output


def test_pipeline():
    runner = CliRunner()
    with runner.isolated_filesystem() as r:
        config = str(make_workspace(Path(r)))

        def invoke(*args, **kwargs):
            return runner.invoke(cli, ["-C", config, *args], **kwargs)

        output = invoke(
            "simulate",
            "--count",
            "2",
            "--seed",
            "1",
            "--speech",
            "speech",
            "--noise",
            "noise",
            "--out",
            "data",
        )
        assert output.exit_code == 0, output.output
        assert "Simulated 2 scenes in data" in output.output
        assert Path("data/scene_0001/capture.wav").exists()

        output = invoke("baseline", "data", "--method", "lbh-mvdr", "--out", "lbh")
        assert output.exit_code == 0, output.output
        assert "scene_0000: dITD" in output.output
        assert Path("lbh/metrics.csv").exists()

        output = invoke("evaluate", "lbh", "data", "--out", "scores")
        assert output.exit_code == 0, output.output
        assert "all (2 scenes)" in output.output

        output = invoke("evaluate", "data", "data", "--json", "--out", "scores")
        summary = json.loads(output.output)
        assert summary["overall"]["sd"] == 0

        target = "data/scene_0000/target.wav"
        output = invoke("evaluate", target, target)
        report = json.loads(output.output)
        assert report["delta_itd"] == 0
        assert report["scene_id"] == "target"

        output = invoke("train-toy", "data/scene_0000", env={"BINAURALKIT_OUT": "toy"})
        assert output.exit_code == 0, output.output
        assert "2 epochs" in output.output
        assert Path("toy/filters.json").exists()

        output = invoke("train-toy", "data", "--epochs", "0", "--out", "toy0")
        assert output.exit_code == 0, output.output
        assert "0 epochs" in output.output

        Path("lbh/scene_0001/estimate.wav").unlink()
        output = invoke("evaluate", "lbh", "data", "--out", "scores")
        assert output.exit_code == 2
        assert "missing estimates: scene_0001" in output.output


def test_bad_arguments():
    runner = CliRunner()
    with runner.isolated_filesystem() as r:
        config = str(make_workspace(Path(r)))

        output = runner.invoke(cli, ["-C", config, "baseline", "nowhere"])
        assert output.exit_code == 2

        output = runner.invoke(cli, ["-C", config, "baseline", ".", "-m", "wiener"])
        assert output.exit_code == 2

        Path("empty").mkdir()
        output = runner.invoke(
            cli,
            ["-C", config, "simulate", "--speech", "empty", "--noise", "noise"],
        )
        assert output.exit_code == 1
        assert "empty WAV pool" in output.output

        output = runner.invoke(
            cli,
            [
                "-C",
                config,
                "simulate",
                "--speech",
                "speech",
                "--noise",
                "noise",
                "--count",
                "0",
                "--out",
                "nothing",
            ],
        )
        assert output.exit_code == 0
        assert "Simulated 0 scenes" in output.output
        assert list(Path("nothing").iterdir()) == []
