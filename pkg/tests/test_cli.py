import numpy as np
import pytest

from foilnet.cli import main
from foilnet.data import read_manifest, read_sample
from foilnet.unet import UNetConfig, build, count_parameters


@pytest.fixture(scope="module")
def workspace(tmp_path_factory, airfoil_dir):
    """One gen-data + train round trip shared by the command tests."""
    ws = tmp_path_factory.mktemp("cliws")
    rc = main(["gen-data", "--airfoils", str(airfoil_dir),
               "--out", str(ws / "ds"), "--count", "8", "--seed", "13",
               "--jobs", "1"])
    assert rc == 0
    manifest = ws / "ds" / "manifest.txt"
    rc = main(["train", "--data", str(manifest), "--ci", "1", "--iters", "3",
               "--batch", "4", "--seed", "1", "--out", str(ws / "run")])
    assert rc == 0
    return {"ws": ws, "manifest": manifest, "ckpt": ws / "run" / "final.ckpt"}


class TestGenData:
    def test_artifacts(self, workspace):
        m = read_manifest(workspace["manifest"])
        assert len(m.entries) == 8
        assert m.norms is not None
        for e in m.entries:
            assert (workspace["manifest"].parent / e.path).is_file()

    def test_stdout(self, tmp_path, airfoil_dir, capsys):
        rc = main(["gen-data", "--airfoils", str(airfoil_dir),
                   "--out", str(tmp_path / "d"), "--count", "2",
                   "--seed", "3", "--jobs", "1"])
        out = capsys.readouterr().out
        assert rc == 0
        assert "wrote 2 samples" in out
        assert out.strip().endswith("manifest.txt")


class TestTrain:
    def test_artifacts(self, workspace):
        run = workspace["ws"] / "run"
        assert (run / "final.ckpt").is_file()
        assert (run / "best.ckpt").is_file()
        assert (run / "record.txt").is_file()

    def test_multi_run_stdout(self, workspace, tmp_path, capsys):
        rc = main(["train", "--data", str(workspace["manifest"]), "--ci", "1",
                   "--iters", "2", "--batch", "4", "--seed", "1", "--runs", "2",
                   "--out", str(tmp_path / "ms")])
        out = capsys.readouterr().out
        assert rc == 0
        assert "seed 1: final train" in out
        assert "seed 2: final train" in out
        assert "mean" in out and "sem" in out


class TestEval:
    def test_stdout_and_report(self, workspace, tmp_path, capsys):
        report = tmp_path / "report.txt"
        rc = main(["eval", "--ckpt", str(workspace["ckpt"]),
                   "--data", str(workspace["manifest"]), "--split", "val",
                   "--out", str(report)])
        out = capsys.readouterr().out
        assert rc == 0
        assert out.startswith("split val\nvariant C\n")
        assert "average relative_error" in out
        assert "mean_abs_denorm" in out
        assert report.read_text() == out

    def test_images(self, workspace, tmp_path, capsys):
        rc = main(["eval", "--ckpt", str(workspace["ckpt"]),
                   "--data", str(workspace["manifest"]), "--split", "train",
                   "--images", str(tmp_path / "img"), "--image-count", "2"])
        capsys.readouterr()
        assert rc == 0
        assert len(list(tmp_path.glob("img_*.pgm"))) == 18

    def test_missing_args(self, capsys):
        rc = main(["eval"])
        assert rc == 1
        assert capsys.readouterr().err.startswith("error:")

    def test_missing_checkpoint_file(self, workspace, capsys):
        rc = main(["eval", "--ckpt", "/nonexistent.ckpt",
                   "--data", str(workspace["manifest"])])
        assert rc == 1
        assert "error:" in capsys.readouterr().err


class TestInfer:
    def test_round_trip(self, workspace, tmp_path, capsys):
        m = read_manifest(workspace["manifest"])
        src = workspace["manifest"].parent / m.entries[0].path
        pred = tmp_path / "pred.dfp"
        rc = main(["infer", "--ckpt", str(workspace["ckpt"]),
                   "--sample", str(src), "--out", str(pred),
                   "--images", str(tmp_path / "inf")])
        out = capsys.readouterr().out
        assert rc == 0
        assert out.strip() == str(pred)
        original = read_sample(src, m.variant)
        predicted = read_sample(pred, m.variant)
        np.testing.assert_array_equal(predicted.input, original.input)
        assert predicted.freestream.vx == pytest.approx(original.freestream.vx)
        assert np.all(np.isfinite(predicted.target))
        assert len(list(tmp_path.glob("inf_*.pgm"))) == 9

    def test_missing_args(self, capsys):
        rc = main(["infer", "--ckpt", "x.ckpt"])
        assert rc == 1
        assert "error:" in capsys.readouterr().err


class TestBench:
    def test_table(self, capsys):
        rc = main(["bench", "--ci", "1", "--resolution", "16",
                   "--batches", "1,2", "--repeats", "2"])
        out = capsys.readouterr().out.splitlines()
        assert rc == 0
        want = count_parameters(build(UNetConfig(channel_exponent=1, resolution=16)))
        assert out[0] == f"parameters {want}"
        assert out[1].startswith("batch_size")
        assert out[2].startswith("1 ") and out[3].startswith("2 ")

    def test_from_checkpoint(self, workspace, capsys):
        rc = main(["bench", "--ckpt", str(workspace["ckpt"]),
                   "--batches", "1", "--repeats", "1"])
        out = capsys.readouterr().out
        assert rc == 0
        assert out.startswith("parameters ")


class TestInspect:
    def test_checkpoint(self, workspace, capsys):
        rc = main(["inspect", "--ckpt", str(workspace["ckpt"])])
        out = capsys.readouterr().out
        assert rc == 0
        assert "channel_exponent 1" in out
        assert "resolution 128" in out
        assert "parameters " in out
        assert "meta.variant C" in out
        assert "meta.seed 1" in out

    def test_manifest(self, workspace, capsys):
        rc = main(["inspect", "--data", str(workspace["manifest"])])
        out = capsys.readouterr().out
        assert rc == 0
        assert "variant C" in out
        assert "seed 13" in out
        assert "train 7" in out and "val 1" in out and "test 0" in out
        assert "norm_pressure" in out

    def test_needs_something(self, capsys):
        rc = main(["inspect"])
        assert rc == 1
        assert "error:" in capsys.readouterr().err


class TestConfigFile:
    def test_config_supplies_defaults(self, tmp_path, capsys):
        cfg = tmp_path / "bench.cfg"
        cfg.write_text("ci = 1\nresolution = 16\nbatches = 1\nrepeats = 1\n")
        rc = main(["bench", "--config", str(cfg)])
        out = capsys.readouterr().out.splitlines()
        assert rc == 0
        assert len(out) == 3 and out[2].startswith("1 ")

    def test_flags_beat_config(self, tmp_path, capsys):
        cfg = tmp_path / "bench.cfg"
        cfg.write_text("ci = 1\nresolution = 16\nbatches = 1\nrepeats = 1\n")
        rc = main(["bench", "--config", str(cfg), "--batches", "2"])
        out = capsys.readouterr().out.splitlines()
        assert rc == 0
        assert out[2].startswith("2 ")

    def test_comments_and_dashes(self, workspace, tmp_path, capsys):
        cfg = tmp_path / "eval.cfg"
        cfg.write_text("# image budget\nimage-count = 2\nsplit = train\n")
        rc = main(["eval", "--ckpt", str(workspace["ckpt"]),
                   "--data", str(workspace["manifest"]),
                   "--images", str(tmp_path / "im"), "--config", str(cfg)])
        capsys.readouterr()
        assert rc == 0
        assert len(list(tmp_path.glob("im_*.pgm"))) == 18

    def test_unknown_key(self, tmp_path, capsys):
        cfg = tmp_path / "bad.cfg"
        cfg.write_text("walrus = 9\n")
        rc = main(["bench", "--config", str(cfg)])
        assert rc == 1
        assert "unknown config keys" in capsys.readouterr().err

    def test_unparseable_line(self, tmp_path, capsys):
        cfg = tmp_path / "bad.cfg"
        cfg.write_text("just some words\n")
        rc = main(["bench", "--config", str(cfg)])
        assert rc == 1
        assert "error:" in capsys.readouterr().err

    def test_missing_config(self, capsys):
        rc = main(["bench", "--config", "/nope.cfg"])
        assert rc == 1
        assert "error:" in capsys.readouterr().err


class TestUsageErrors:
    def test_unknown_flag(self):
        with pytest.raises(SystemExit) as exc:
            main(["bench", "--warp-speed", "9"])
        assert exc.value.code == 2

    def test_unknown_command(self):
        with pytest.raises(SystemExit) as exc:
            main(["transmogrify"])
        assert exc.value.code == 2

    def test_no_command(self):
        with pytest.raises(SystemExit) as exc:
            main([])
        assert exc.value.code == 2
