import subprocess
import sys

import pytest
import yaml

from appearance_transfer.cli import EXIT_INVALID, EXIT_OK, EXIT_STAGE, main
from appearance_transfer.imaging import load_png, save_png
from appearance_transfer.synthetic import smooth_texture, write_toy_dataset


@pytest.fixture(scope="module")
def toy(tmp_path_factory):
    root = tmp_path_factory.mktemp("toy")
    manifest = write_toy_dataset(root)
    config = root / "config.yaml"
    config.write_text(yaml.safe_dump({"atlas_size": 32, "jobs": 1, "transfer": {"K": 8, "n_control": 8, "max_iters": 100}}))
    return manifest, config


def cli(toy, *args):
    manifest, config = toy
    return main([args[0], "--manifest", str(manifest), "--config", str(config), *args[1:]])


def test_validate(toy, capsys):
    assert cli(toy, "validate") == EXIT_OK
    assert "4 low-res cameras" in capsys.readouterr().out


def test_missing_file_exits_1(toy, tmp_path, capsys):
    data = yaml.safe_load(toy[0].read_text())
    data["hr_stills"][0]["image"] = "hr/gone.png"
    bad = toy[0].parent / "bad.yaml"
    bad.write_text(yaml.safe_dump(data))
    assert main(["validate", "--manifest", str(bad)]) == EXIT_INVALID
    assert "gone.png" in capsys.readouterr().err


def test_bad_usage_exits_1(toy):
    assert main(["run", "--manifest", str(toy[0]), "--ordering", "cfg9"]) == EXIT_INVALID
    assert main(["frobnicate"]) == EXIT_INVALID
    assert main(["validate"]) == EXIT_INVALID


def test_bad_config_exits_1(toy, tmp_path):
    (tmp_path / "c.yaml").write_text("atlas_size: -4\n")
    assert main(["validate", "--manifest", str(toy[0]), "--config", str(tmp_path / "c.yaml")]) == EXIT_INVALID


def test_stage_failure_exits_2(toy, tmp_path, capsys):
    (tmp_path / "c.yaml").write_text(f"atlas_size: 32\njobs: 1\nsr:\n  kind: external\n  command: {sys.executable} -c 'import sys; sys.exit(1)' {{in}} {{out}}\n")
    code = main(["run", "--manifest", str(toy[0]), "--config", str(tmp_path / "c.yaml"), "--ordering", "cfg2", "--out", str(tmp_path / "o")])
    assert code == EXIT_STAGE
    assert "sr" in capsys.readouterr().err


def test_pair_fit_apply_bake(toy, tmp_path):
    out = tmp_path / "o"
    assert cli(toy, "pair", "--out", str(out)) == EXIT_OK
    assert (out / "pairing.csv").is_file()
    assert cli(toy, "fit", "--out", str(out)) == EXIT_OK
    assert (out / "transfer.tps").is_file()
    assert cli(toy, "apply", "--out", str(out / "a"), "--theta", str(out / "transfer.tps")) == EXIT_OK
    assert len(list((out / "a" / "frames").glob("*.png"))) == 8
    assert cli(toy, "bake", "--out", str(out / "b")) == EXIT_OK
    assert len(list((out / "b" / "atlas").glob("frame_????.png"))) == 2


def test_apply_with_unreadable_theta(toy, tmp_path):
    (tmp_path / "t.tps").write_text("garbage")
    assert cli(toy, "apply", "--out", str(tmp_path), "--theta", str(tmp_path / "t.tps")) == EXIT_INVALID


def test_sr(toy, tmp_path):
    save_png(smooth_texture(16), tmp_path / "t.png")
    assert main(["sr", "--input", str(tmp_path / "t.png"), "--out", str(tmp_path / "up")]) == EXIT_OK
    assert load_png(tmp_path / "up" / "t.png").shape == (32, 32, 3)
    assert main(["sr", "--input", str(tmp_path / "empty"), "--out", str(tmp_path / "up")]) == EXIT_INVALID


def test_run_and_eval(toy, tmp_path, capsys):
    out = tmp_path / "run"
    assert cli(toy, "run", "--ordering", "cfg3", "--out", str(out)) == EXIT_OK
    assert "total" in capsys.readouterr().out
    assert yaml.safe_load((out / "run.yaml").read_text())["ordering"] == "cfg3"
    save_png(smooth_texture(32), tmp_path / "gt.png")
    assert main(["eval", "--out", str(out), "--ground-truth", str(tmp_path / "gt.png")]) == EXIT_OK
    assert (out / "correction.csv").is_file() and (out / "sr.csv").is_file()
    assert main(["eval", "--out", str(tmp_path / "nowhere")]) == EXIT_STAGE


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "appearance_transfer", "--help"], capture_output=True, text=True)
    assert proc.returncode == 0 and "validate" in proc.stdout
