import numpy as np
import pytest
from PIL import Image

from salmap.cli import main
from salmap.config import config_to_text


@pytest.fixture(scope="module")
def cli_artifacts(trained, tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    cfg_path = root / "lean.cfg"
    cfg_path.write_text(config_to_text(trained.config))
    return root, cfg_path


class TestTrain:
    def test_matches_api_training_bytes(self, trained, cli_artifacts):
        root, cfg_path = cli_artifacts
        out = root / "cli.bundle"
        code = main(
            [
                "train",
                "--data",
                str(trained.manifest),
                "--out",
                str(out),
                "--config",
                str(cfg_path),
                "--quiet",
            ]
        )
        assert code == 0
        assert out.read_bytes() == trained.path.read_bytes()
        assert (root / "cli.bundle.log").exists()

    def test_missing_manifest_is_data_error(self, tmp_path, cli_artifacts):
        _, cfg_path = cli_artifacts
        code = main(
            [
                "train",
                "--data",
                str(tmp_path / "none.tsv"),
                "--out",
                str(tmp_path / "m.bundle"),
                "--config",
                str(cfg_path),
            ]
        )
        assert code == 3

    def test_seed_override_changes_bundle(self, trained, cli_artifacts, tmp_path):
        root, cfg_path = cli_artifacts
        out = tmp_path / "other.bundle"
        code = main(
            [
                "train",
                "--data",
                str(trained.manifest),
                "--out",
                str(out),
                "--config",
                str(cfg_path),
                "--seed",
                "5",
                "--quiet",
            ]
        )
        assert code == 0
        assert out.read_bytes() != trained.path.read_bytes()


class TestPredict:
    def test_writes_maps_and_times(self, trained, tmp_path, capsys):
        img_dir = trained.manifest.parent / "images"
        inputs = sorted(str(p) for p in img_dir.glob("img_00[89].png"))
        out_dir = tmp_path / "maps"
        code = main(["predict", "--model", str(trained.path), "--out", str(out_dir), *inputs])
        assert code == 0
        lines = capsys.readouterr().out.strip().splitlines()
        assert len(lines) == len(inputs)
        for line in lines:
            assert line.endswith("s") and ": " in line
        for p in inputs:
            stem = p.rsplit("/", 1)[1].replace(".png", "")
            png = out_dir / f"{stem}.png"
            arr = np.asarray(Image.open(png))
            assert arr.shape == (128, 160)

    def test_per_path_outputs(self, trained, tmp_path):
        img = next(iter((trained.manifest.parent / "images").glob("*.png")))
        out_dir = tmp_path / "pp"
        code = main(
            ["predict", "--model", str(trained.path), "--out", str(out_dir), "--per-path", str(img)]
        )
        assert code == 0
        names = {p.name for p in out_dir.iterdir()}
        stem = img.stem
        assert f"{stem}.png" in names
        for key in ("d8", "d16", "d32", "d64", "d32+rp", "d64+rp", "ensemble"):
            assert f"{stem}.{key}.png" in names

    def test_missing_bundle_is_model_error(self, tmp_path):
        code = main(
            ["predict", "--model", str(tmp_path / "no.bundle"), "--out", str(tmp_path), "x.png"]
        )
        assert code == 4

    def test_corrupt_bundle_is_model_error(self, tmp_path):
        bad = tmp_path / "bad.bundle"
        bad.write_bytes(b"garbage here")
        code = main(["predict", "--model", str(bad), "--out", str(tmp_path), "x.png"])
        assert code == 4

    def test_bad_image_is_data_error(self, trained, tmp_path):
        bad = tmp_path / "broken.png"
        bad.write_bytes(b"not a png")
        code = main(["predict", "--model", str(trained.path), "--out", str(tmp_path), str(bad)])
        assert code == 3


class TestEvaluate:
    def test_csv_report(self, trained, tmp_path, capsys):
        out = tmp_path / "report.csv"
        code = main(
            [
                "evaluate",
                "--model",
                str(trained.path),
                "--data",
                str(trained.manifest),
                "--split",
                "test",
                "--out",
                str(out),
            ]
        )
        assert code == 0
        lines = out.read_text().strip().splitlines()
        assert lines[0] == "image,auc_j,s_auc,cc,sim,nss"
        assert len(lines) == 1 + 4 + 1  # header, four test images, mean
        assert lines[-1].startswith("mean,")
        assert capsys.readouterr().out.startswith("mean ")

    def test_stdout_csv(self, trained, capsys):
        code = main(
            ["evaluate", "--model", str(trained.path), "--data", str(trained.manifest)]
        )
        assert code == 0
        captured = capsys.readouterr()
        assert captured.out.startswith("image,auc_j")
        assert captured.err.startswith("mean ")

    def test_empty_split_is_data_error(self, trained, capsys):
        code = main(
            [
                "evaluate",
                "--model",
                str(trained.path),
                "--data",
                str(trained.manifest),
                "--split",
                "val",
            ]
        )
        assert code == 3
        assert "salmap: error: data:" in capsys.readouterr().err


class TestInspect:
    def test_summary(self, trained, capsys):
        code = main(["inspect", "--model", str(trained.path)])
        assert code == 0
        out = capsys.readouterr().out
        assert "bundle format 1" in out
        assert "feature channels" in out
        assert "seed = 0" in out

    def test_shapes_and_curves(self, trained, capsys):
        assert main(["inspect", "--model", str(trained.path), "--shapes"]) == 0
        out = capsys.readouterr().out
        assert "layer  path" in out
        assert "d64" in out
        assert main(["inspect", "--model", str(trained.path), "--rft-curves"]) == 0
        out = capsys.readouterr().out
        assert "forward d8 3x3" in out
        assert "map d32" in out

    def test_tree_dump(self, trained, capsys):
        assert main(["inspect", "--model", str(trained.path), "--trees", "1"]) == 0
        out = capsys.readouterr().out
        assert "== map d8 ==" in out
        assert "== ensemble ==" in out
        assert "tree 0" in out

    def test_per_path_requires_data(self, trained, capsys):
        code = main(["inspect", "--model", str(trained.path), "--per-path"])
        assert code == 2
        assert "usage" in capsys.readouterr().err

    def test_per_path_table(self, trained, capsys):
        code = main(
            [
                "inspect",
                "--model",
                str(trained.path),
                "--per-path",
                "--data",
                str(trained.manifest),
            ]
        )
        assert code == 0
        out = capsys.readouterr().out
        for row in ("d8 ", "d32+rp", "d64+rp", "ensemble"):
            assert row in out


class TestParser:
    def test_version(self, capsys):
        with pytest.raises(SystemExit) as exc:
            main(["--version"])
        assert exc.value.code == 0
        assert capsys.readouterr().out.startswith("salmap ")

    def test_unknown_split_choice(self, trained):
        with pytest.raises(SystemExit) as exc:
            main(
                [
                    "evaluate",
                    "--model",
                    str(trained.path),
                    "--data",
                    str(trained.manifest),
                    "--split",
                    "holdout",
                ]
            )
        assert exc.value.code == 2
