import json
from pathlib import Path

import pytest

from zoomrl.cli import main
from zoomrl.config import RunConfig, dump_toml, load_toml


@pytest.fixture
def tiny_toml(tmp_path):
    text = dump_toml(RunConfig())
    text = (
        text.replace("total_iterations = 600", "total_iterations = 2")
        .replace("eval_every = 20", "eval_every = 2")
        .replace("eval_set_size = 500", "eval_set_size = 4")
        .replace("train_set_size = 512", "train_set_size = 8")
        .replace("group_size = 8", "group_size = 2")
        .replace("groups_per_batch = 32", "groups_per_batch = 2")
        .replace("width = 1024", "width = 256")
        .replace("height = 1024", "height = 256")
        .replace("width = 1152", "width = 288")
        .replace("height = 1152", "height = 288")
        .replace("glyph_side = 32", "glyph_side = 16")
        .replace("glyph_side = 36", "glyph_side = 18")
        .replace("distractor_count = 12", "distractor_count = 3")
        .replace("max_pixels = 16384", "max_pixels = 1024")
        .replace('output_dir = "runs/default"', f'output_dir = "{tmp_path}/out"')
    )
    path = tmp_path / "tiny.toml"
    path.write_text(text)
    return path


def test_config_dump_round_trips(tmp_path, capsys):
    assert main(["config", "--dump"]) == 0
    dumped = capsys.readouterr().out
    path = tmp_path / "dumped.toml"
    path.write_text(dumped)
    cfg = load_toml(path)
    assert dump_toml(cfg) == dump_toml(RunConfig())


def test_config_error_exit_code(tmp_path, capsys):
    bad = tmp_path / "bad.toml"
    bad.write_text("[train]\ngroup_size = 1\n")
    assert main(["config", "--dump", "--config", str(bad)]) == 2


def test_unreadable_config_is_io_error(tmp_path):
    assert main(["train", "--config", str(tmp_path / "missing.toml")]) == 3


def test_gen_data_and_train_and_replay(tiny_toml, tmp_path, capsys):
    assert main(["gen-data", "--config", str(tiny_toml), "--split", "eval_id", "--count", "2"]) == 0
    out = capsys.readouterr().out
    data_dir = Path(out.strip().split()[-1])
    assert (data_dir / "manifest.jsonl").exists()

    assert main(["train", "--config", str(tiny_toml)]) == 0
    capsys.readouterr()
    run_dir = Path(f"{tmp_path}/out")
    assert (run_dir / "metrics.jsonl").exists()
    assert (run_dir / "training.png").exists()
    ckpt = run_dir / "checkpoints" / "ckpt_2.json"
    assert ckpt.exists()

    task_id = json.loads((data_dir / "manifest.jsonl").read_text().splitlines()[0])["task_id"]
    assert (
        main(
            [
                "replay",
                "--config",
                str(tiny_toml),
                str(ckpt),
                task_id,
                "--data",
                str(data_dir),
                "--out",
                str(tmp_path / "rep"),
            ]
        )
        == 0
    )
    capsys.readouterr()
    assert (tmp_path / "rep" / "transcript.txt").exists()

    assert main(["eval", "--config", str(tiny_toml), str(ckpt), "--set", "id"]) == 0
    result = json.loads(capsys.readouterr().out)
    assert 0.0 <= result["accuracy"] <= 1.0

    assert main(["compare", str(run_dir), str(run_dir), "--out", str(tmp_path / "cmp")]) == 0
    capsys.readouterr()
    assert (tmp_path / "cmp" / "compare.csv").exists()


def test_mode_flag_overrides(tiny_toml, tmp_path, capsys):
    assert main(["train", "--config", str(tiny_toml), "--mode", "singleturn", "--out", str(tmp_path / "st")]) == 0
    capsys.readouterr()
    assert (tmp_path / "st" / "metrics.jsonl").exists()


def test_missing_checkpoint_io_error(tiny_toml, capsys):
    assert main(["eval", "--config", str(tiny_toml), "/nonexistent/ckpt.json"]) == 3
