import json
import os
import subprocess
import sys

import pytest

from boundseg.cli import main
from boundseg.imaging import read_pgm, read_ppm

SMALL = {"image_size": 32, "channels": [4, 6, 8], "stem_channels": [3, 4], "embed_dim": 8,
         "decoder_rounds": 1, "epochs": 1, "batch_size": 4, "train_size": 4, "val_size": 2,
         "test_size": 2, "seed": 2}


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    cfg = dict(SMALL, data_dir=str(root / "data"), out_dir=str(root / "out"))
    path = root / "c.json"
    path.write_text(json.dumps(cfg))
    assert main(["gen-data", "--config", str(path)]) == 0
    assert main(["train", "--config", str(path)]) == 0
    return root, path


def eval_json(capsys, *argv):
    capsys.readouterr()
    assert main(["eval", *argv]) == 0
    return json.loads(capsys.readouterr().out)


class TestDispatch:
    def test_unknown_command(self, capsys):
        assert main(["frobnicate"]) == 2
        assert "usage" in capsys.readouterr().err

    def test_no_command(self):
        assert main([]) == 2

    def test_help(self, capsys):
        assert main(["--help"]) == 0
        out = capsys.readouterr().out
        for cmd in ("gen-data", "train", "eval", "infer", "bench", "verify"):
            assert cmd in out

    def test_unknown_config_key(self, tmp_path, capsys):
        (tmp_path / "c.json").write_text(json.dumps({"epochz": 3}))
        assert main(["gen-data", "--config", str(tmp_path / "c.json")]) == 1
        assert "epochz" in capsys.readouterr().err

    def test_module_entry_point(self):
        proc = subprocess.run([sys.executable, "-m", "boundseg", "verify", "sobel"], capture_output=True, text=True)
        assert proc.returncode == 0
        assert proc.stdout.startswith("[PASS]")


class TestCommands:
    def test_train_outputs(self, trained):
        root, _ = trained
        for name in ("loss.csv", "best.ckpt", "final.ckpt", "config.json"):
            assert (root / "out" / name).exists()
        assert len(open(root / "data" / "manifest.txt").read().splitlines()) == 8

    def test_eval_fields_and_repeatability(self, trained, capsys):
        root, path = trained
        ckpt = str(root / "out" / "best.ckpt")
        a = eval_json(capsys, "--checkpoint", ckpt, "--split", "val", "--warmup", "1", "--timed", "2")
        b = eval_json(capsys, "--checkpoint", ckpt, "--config", str(path), "--warmup", "0", "--timed", "1")
        for key in ("miou", "mdice", "mrecall", "boundary_f1", "fps", "per_class"):
            assert key in a
        assert a["fps"] > 0
        a.pop("fps"), b.pop("fps"), a.pop("bench"), b.pop("bench")
        assert a == b

    def test_eval_missing_checkpoint(self, trained, capsys):
        _, path = trained
        assert main(["eval", "--checkpoint", "/nonexistent/x.ckpt", "--config", str(path)]) == 1

    def test_infer(self, trained, tmp_path):
        root, _ = trained
        assert main(["infer", "--checkpoint", str(root / "out" / "final.ckpt"), "--out-dir", str(tmp_path),
                     "--limit", "2"]) == 0
        names = sorted(os.listdir(tmp_path))
        assert names == ["test_00000_boundary.pgm", "test_00000_pred.ppm", "test_00001_boundary.pgm",
                         "test_00001_pred.ppm"]
        assert read_ppm(tmp_path / names[1]).shape == (32, 32, 3)
        assert set(read_pgm(tmp_path / names[0]).ravel()) <= {0.0, 1.0}

    def test_infer_explicit_input(self, trained, tmp_path):
        root, _ = trained
        src = str(root / "data" / "val" / "00000.ppm")
        assert main(["infer", "--checkpoint", str(root / "out" / "final.ckpt"), "--out-dir", str(tmp_path), src]) == 0
        assert (tmp_path / "00000_pred.ppm").exists()

    def test_bench(self, trained, capsys):
        _, path = trained
        capsys.readouterr()
        assert main(["bench", "--config", str(path), "--warmup", "1", "--timed", "3"]) == 0
        out = json.loads(capsys.readouterr().out)
        assert out["fps"] > 0 and out["element_type"] == "float64" and out["input_size"] == [32, 32]


class TestVerify:
    def test_fast_suites_pass(self, capsys):
        assert main(["verify", "conv", "sobel", "metrics"]) == 0
        assert capsys.readouterr().out.count("PASS") == 3

    def test_injected_fault_fails(self, capsys):
        assert main(["verify", "ops", "--inject-fault", "sigmoid"]) == 3
        assert "FAIL" in capsys.readouterr().out

    def test_unknown_fault_op(self):
        assert main(["verify", "sobel", "--inject-fault", "nope"]) == 2

    def test_unknown_suite(self):
        assert main(["verify", "everything"]) == 2
