import json

import numpy as np
import pytest
import yaml

import depthstyle as ds
from depthstyle.cli import load_train_config, main
from depthstyle.errors import ConfigurationError

from conftest import save_photo, synth_photo


class TestConfigLoading:
    def test_yaml_file(self, tmp_path):
        path = tmp_path / "cfg.yaml"
        path.write_text("style_image: s.png\ndepth_weight: 500\nimage_size: 128\n")
        cfg = load_train_config(path)
        assert cfg.style_image == "s.png"
        assert cfg.depth_weight == 500
        assert cfg.image_size == 128

    def test_json_file(self, tmp_path):
        path = tmp_path / "cfg.json"
        path.write_text(json.dumps({"style_image": "s.png", "iterations": 7}))
        assert load_train_config(path).iterations == 7

    def test_flags_override_file(self, tmp_path):
        path = tmp_path / "cfg.yaml"
        path.write_text("style_image: file.png\ndepth_weight: 1\n")
        cfg = load_train_config(path, {"depth_weight": 42.0, "style_image": None})
        assert cfg.depth_weight == 42.0
        assert cfg.style_image == "file.png"  # None override is ignored

    def test_unknown_key_rejected(self, tmp_path):
        path = tmp_path / "cfg.yaml"
        path.write_text("no_such_field: 3\n")
        with pytest.raises(ConfigurationError):
            load_train_config(path)


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    data = root / "data"
    data.mkdir()
    for s in range(12):
        save_photo(data / f"img_{s:02d}.png", synth_photo(s, 80, 80))
    held = root / "held"
    held.mkdir()
    for s in range(2):
        save_photo(held / f"held_{s}.png", synth_photo(200 + s, 80, 80))
    save_photo(root / "style.png", synth_photo(300, 80, 80))
    cfg = {"style_image": str(root / "style.png"), "dataset_root": str(data),
           "image_size": 64, "iterations": 3, "feature_backbone": "stub",
           "depth_backend": "blur", "checkpoint_interval": 10}
    (root / "config.yaml").write_text(yaml.safe_dump(cfg))
    return root


class TestCommands:
    def test_train_writes_artifacts(self, workdir):
        out = workdir / "run"
        code = main(["train", "--config", str(workdir / "config.yaml"),
                     "--out", str(out)])
        assert code == 0
        assert (out / "model.npz").is_file()
        assert (out / "training_log.csv").is_file()
        assert (out / "training_log.png").is_file()

    def test_stylize_directory(self, workdir):
        out = workdir / "stylized"
        code = main(["stylize", "--model", str(workdir / "run" / "model.npz"),
                     "--input", str(workdir / "held"), "--output", str(out)])
        assert code == 0
        assert len(list(out.iterdir())) == 2

    def test_eval_pair_with_report(self, workdir, capsys):
        report = workdir / "row.json"
        content = workdir / "held" / "held_0.png"
        stylized = workdir / "stylized" / "held_0.png"
        code = main(["eval", "--content", str(content), "--stylized", str(stylized),
                     "--report", str(report)])
        assert code == 0
        printed = capsys.readouterr().out
        assert "ssim:" in printed and "depth_ssim:" in printed
        payload = json.loads(report.read_text())
        assert payload["schema_version"] == 1
        assert 0.0 <= payload["ahash_sim"] <= 1.0

    def test_eval_table_with_figure(self, workdir, capsys):
        content = workdir / "held" / "held_0.png"
        stylized = workdir / "stylized" / "held_0.png"
        manifest = workdir / "manifest.csv"
        manifest.write_text(
            "method,content_path,stylized_path\n"
            f"identity,{content},{content}\n"
            f"styled,{content},{stylized}\n")
        out = workdir / "table.csv"
        code = main(["eval-table", "--manifest", str(manifest), "--out", str(out)])
        assert code == 0
        assert out.is_file()
        assert (workdir / "table.png").is_file()
        printed = capsys.readouterr().out
        assert "best ssim: identity" in printed

    def test_depth_compare_figure(self, workdir):
        fig = workdir / "depthfig.png"
        export = workdir / "depthmaps"
        code = main(["depth-compare", "--images", str(workdir / "held" / "held_0.png"),
                     str(workdir / "held" / "held_1.png"), "--backends", "blur",
                     "--size", "64", "--out", str(fig), "--export-dir", str(export)])
        assert code == 0
        assert fig.is_file()
        assert len(list(export.iterdir())) == 2

    def test_sweep_writes_summary_and_figure(self, workdir):
        out = workdir / "sweep"
        code = main(["sweep", "--config", str(workdir / "config.yaml"),
                     "--depth-weights", "10,0", "--held-out", str(workdir / "held"),
                     "--iterations", "2", "--out", str(out)])
        assert code == 0
        assert (out / "sweep_summary.csv").is_file()
        assert (out / "sweep_tradeoff.png").is_file()
        lines = (out / "sweep_summary.csv").read_text().strip().splitlines()
        assert len(lines) == 3  # header + two gamma rows
        first = [float(v) for v in lines[1].split(",")]
        second = [float(v) for v in lines[2].split(",")]
        assert first[0] == 0.0 and second[0] == 10.0  # ascending order

    def test_stylize_failure_exit_code(self, workdir, tmp_path):
        src = tmp_path / "input"
        src.mkdir()
        (src / "bad.png").write_bytes(b"nope")
        code = main(["stylize", "--model", str(workdir / "run" / "model.npz"),
                     "--input", str(src), "--output", str(tmp_path / "out")])
        assert code == 1

    def test_config_error_exit_code(self, workdir, tmp_path, capsys):
        bad = tmp_path / "bad.yaml"
        bad.write_text("unknown_knob: 1\n")
        code = main(["train", "--config", str(bad), "--out", str(tmp_path / "o")])
        assert code == 2
        assert "error:" in capsys.readouterr().err
