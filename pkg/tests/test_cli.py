import os

import numpy as np
import pytest

from lednet import checkpoint, data
from lednet.cli import main
from lednet.model import build_lednet


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    """One small dataset plus a 2-iteration training run shared by the tests."""
    root = tmp_path_factory.mktemp("cli")
    ds = root / "ds"
    run = root / "run"
    assert main(["gen-data", "--out", str(ds), "--count", "3", "--classes", "4",
                 "--height", "64", "--width", "64", "--seed", "0"]) == 0
    assert main(["train", "--data", str(ds), "--out", str(run), "--iters", "2",
                 "--batch-size", "2", "--eval-every", "2", "--seed", "0"]) == 0
    return ds, run


class TestSummarize:
    def test_table1_conformance_exit_zero(self, capsys):
        assert main(["summarize", "--classes", "20", "--height", "512",
                     "--width", "1024", "--table1"]) == 0
        out = capsys.readouterr().out
        assert "table1: all stage shapes conform" in out

    def test_total_params_in_band(self, capsys):
        assert main(["summarize", "--classes", "20"]) == 0
        out = capsys.readouterr().out
        total = next(int(l.split("\t")[1]) for l in out.splitlines()
                     if l.startswith("total_params\t"))
        assert 800_000 <= total <= 1_100_000

    def test_indivisible_size_exits_2(self, capsys):
        assert main(["summarize", "--classes", "20", "--height", "100",
                     "--width", "100"]) == 2
        assert "divisible" in capsys.readouterr().err

    def test_output_deterministic(self, capsys):
        main(["summarize", "--classes", "4", "--height", "64", "--width", "64"])
        a = capsys.readouterr().out
        main(["summarize", "--classes", "4", "--height", "64", "--width", "64"])
        assert capsys.readouterr().out == a

    def test_outdir_writes_report_and_figure(self, tmp_path, capsys):
        out = tmp_path / "rep"
        assert main(["summarize", "--classes", "4", "--height", "64",
                     "--width", "64", "--outdir", str(out)]) == 0
        assert (out / "summary.tsv").exists()
        assert (out / "params_by_layer.png").read_bytes()[:8] == b"\x89PNG\r\n\x1a\n"


class TestGradcheck:
    def test_default_passes(self, capsys):
        assert main(["gradcheck", "--trials", "1"]) == 0
        out = capsys.readouterr().out
        assert "all passed" in out and "FAIL" not in out

    def test_corrupted_backward_fails(self, capsys):
        assert main(["gradcheck", "--trials", "1", "--corrupt", "relu"]) == 1
        assert "FAIL" in capsys.readouterr().out

    def test_report_deterministic(self, capsys):
        main(["gradcheck", "--seed", "3", "--trials", "1"])
        a = capsys.readouterr().out
        main(["gradcheck", "--seed", "3", "--trials", "1"])
        assert capsys.readouterr().out == a


class TestTrainEvalPredict:
    def test_train_outputs(self, workspace):
        _, run = workspace
        assert (run / "checkpoint.lednet").exists()
        lines = (run / "metrics.log").read_text().splitlines()
        assert lines[0].startswith("iter=0 lr=")
        assert (run / "training_curves.png").read_bytes()[:8] == b"\x89PNG\r\n\x1a\n"

    def test_zero_iters_checkpoint_equals_fresh_init(self, tmp_path, workspace):
        ds, _ = workspace
        run = tmp_path / "run0"
        assert main(["train", "--data", str(ds), "--out", str(run),
                     "--iters", "0", "--seed", "0"]) == 0
        entries = checkpoint.load(run / "checkpoint.lednet")
        fresh = build_lednet(4, 64, 64, seed=0).named_parameters()
        assert set(entries) == set(fresh)
        for name, arr in entries.items():
            assert arr.tobytes() == fresh[name].data.tobytes()

    def test_eval_prints_metrics(self, workspace, capsys, tmp_path):
        ds, run = workspace
        outdir = tmp_path / "evalout"
        assert main(["eval", "--data", str(ds), "--checkpoint",
                     str(run / "checkpoint.lednet"), "--outdir", str(outdir)]) == 0
        out = capsys.readouterr().out
        assert out.startswith("miou=") and "pixacc=" in out
        assert sum(l.startswith("class_iou") for l in out.splitlines()) == 4
        assert (outdir / "eval.tsv").exists()
        assert (outdir / "per_class_iou.png").exists()

    def test_predict_writes_valid_p6(self, workspace, tmp_path):
        ds, run = workspace
        out = tmp_path / "preds"
        assert main(["predict", "--data", str(ds), "--checkpoint",
                     str(run / "checkpoint.lednet"), "--out", str(out)]) == 0
        files = sorted(os.listdir(out))
        assert files == ["pred_00000.ppm", "pred_00001.ppm", "pred_00002.ppm"]
        img = data.read_ppm(out / files[0])
        assert img.shape == (3, 64, 64)

    def test_missing_dataset_exits_2(self, tmp_path, capsys):
        assert main(["train", "--data", str(tmp_path / "none"),
                     "--out", str(tmp_path / "r"), "--iters", "1"]) == 2
        assert "error" in capsys.readouterr().err

    def test_wrong_checkpoint_architecture_exits_2(self, workspace, tmp_path, capsys):
        ds, _ = workspace
        bad = tmp_path / "bad.lednet"
        checkpoint.save(bad, build_lednet(6, 64, 64, seed=0).named_parameters())
        assert main(["eval", "--data", str(ds), "--checkpoint", str(bad)]) == 2
        assert "fingerprint" in capsys.readouterr().err

    def test_nonfinite_loss_exits_3(self, workspace, tmp_path, capsys, monkeypatch):
        ds, _ = workspace
        from lednet import cli

        def poisoned(classes, h, w, seed):
            net = build_lednet(classes, h, w, seed=seed)
            net.apn.pool.bias.data[...] = np.inf
            return net

        monkeypatch.setattr(cli, "_build_net", poisoned)
        with np.errstate(invalid="ignore"):
            code = main(["train", "--data", str(ds), "--out",
                         str(tmp_path / "r3"), "--iters", "1"])
        assert code == 3
        assert "iteration 0" in capsys.readouterr().err


class TestBench:
    def test_single_repeat_report(self, capsys):
        assert main(["bench", "--classes", "4", "--height", "64", "--width", "64",
                     "--repeats", "1"]) == 0
        out = capsys.readouterr().out
        assert "output shape: (1, 4, 64, 64)" in out
        assert "repeats=1" in out and "fps=" in out

    def test_fps_is_inverse_mean(self, capsys):
        main(["bench", "--classes", "4", "--height", "64", "--width", "64",
              "--repeats", "2"])
        line = capsys.readouterr().out.splitlines()[-1]
        fields = dict(kv.split("=") for kv in line.split())
        assert float(fields["fps"]) == pytest.approx(1000.0 / float(fields["mean_ms"]), rel=1e-3)


class TestUsage:
    def test_unknown_flag_rejected(self):
        with pytest.raises(SystemExit) as exc:
            main(["summarize", "--bogus"])
        assert exc.value.code == 2

    def test_missing_subcommand_rejected(self):
        with pytest.raises(SystemExit) as exc:
            main([])
        assert exc.value.code == 2
