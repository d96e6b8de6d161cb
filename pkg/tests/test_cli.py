import importlib.resources
import json

import numpy as np
import pytest

from boolnet.cli import EXIT_CONFIG, EXIT_IO, EXIT_OK, EXIT_VERIFY, main
from tests.test_io import make_mnist_dir


def config_path(name):
    return str(importlib.resources.files("boolnet") / "configs" / name)


def run(capsys, *argv):
    code = main(list(argv))
    captured = capsys.readouterr()
    return code, captured.out, captured.err


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    """train -> export on a tiny synthetic dataset; shared by tests."""
    root = tmp_path_factory.mktemp("pipeline")
    data = make_mnist_dir(root, n_train=40, n_test=20)
    ckpt = root / "desk.ckpt"
    model = root / "desk.bnn"
    code = main(["train", "--config", config_path("desk_mnist.cfg"),
                 "--data", str(data), "--out", str(ckpt),
                 "--epochs", "1", "--batch", "20", "--seed", "0"])
    assert code == EXIT_OK
    code = main(["export", "--ckpt", str(ckpt), "--out", str(model)])
    assert code == EXIT_OK
    return root, data, ckpt, model


class TestCost:
    def test_ops_table_values(self, capsys):
        code, out, err = run(capsys, "cost",
                             "--config", config_path("boolnet_k4_fullscale.cfg"),
                             "--table", "ops")
        assert code == EXIT_OK
        vals = dict(line.split() for line in out.splitlines()
                    if not line.startswith("#"))
        assert float(vals["ops"]) == pytest.approx(1.65e8, rel=0.03)
        assert float(vals["flops"]) == pytest.approx(1.26e8, rel=0.03)
        assert float(vals["bops"]) == pytest.approx(2.50e9, rel=0.03)
        assert float(vals["model_size_mb"]) == pytest.approx(3.84, rel=0.03)

    def test_memory_table(self, capsys):
        code, out, _ = run(capsys, "cost",
                           "--config", config_path("boolnet_k1_fullscale.cfg"),
                           "--table", "memory")
        assert code == EXIT_OK
        rows = [l.split() for l in out.splitlines()
                if l and not l.startswith(("#", "stage "))]
        totals = [int(r[-1]) for r in rows]
        assert totals == [638976, 448512, 740352, 2434560]

    def test_energy_compare_ordering(self, capsys):
        code, out, _ = run(
            capsys, "cost",
            "--config", config_path("basenet_k1_fullscale.cfg"),
            "--compare", config_path("boolnet_k4_fullscale.cfg"),
            "--table", "energy")
        assert code == EXIT_OK
        ordering = [l for l in out.splitlines() if l.startswith("# ordering")]
        assert ordering == ["# ordering basenet_k1 < boolnet_k4"]

    def test_cost_out_file(self, capsys, tmp_path):
        rpt = tmp_path / "report.txt"
        code, out, _ = run(capsys, "cost",
                           "--config", config_path("desk_mnist.cfg"),
                           "--table", "ops", "--out", str(rpt))
        assert code == EXIT_OK
        assert rpt.read_text() == out

    def test_missing_config_exits_io(self, capsys):
        code, _, err = run(capsys, "cost", "--config", "/nonexistent.cfg")
        assert code == EXIT_IO
        assert err.startswith("error io ")
        assert "\n" not in err.rstrip("\n") + ""

    def test_invalid_config_exits_config(self, capsys, tmp_path):
        bad = tmp_path / "bad.cfg"
        bad.write_text("variant = boolnet\nk = 0\n")
        code, _, err = run(capsys, "cost", "--config", str(bad))
        assert code == EXIT_CONFIG
        assert err.startswith("error config ")


class TestTrainExport:
    def test_train_prints_progress(self, pipeline, capsys):
        # re-train one epoch to inspect stdout (pipeline fixture consumed its
        # own captured output)
        root, data, _, _ = pipeline
        out_ckpt = root / "again.ckpt"
        code, out, _ = run(capsys, "train",
                           "--config", config_path("desk_mnist.cfg"),
                           "--data", str(data), "--out", str(out_ckpt),
                           "--epochs", "1", "--batch", "20")
        assert code == EXIT_OK
        assert "lambda" in out and "test_acc" in out
        assert out_ckpt.exists()

    def test_train_missing_data_exits_io(self, capsys, tmp_path):
        code, _, err = run(capsys, "train",
                           "--config", config_path("desk_mnist.cfg"),
                           "--data", str(tmp_path / "nope"),
                           "--out", str(tmp_path / "x.ckpt"))
        assert code == EXIT_IO
        assert err.startswith("error io ")

    def test_export_missing_ckpt_exits_io(self, capsys, tmp_path):
        code, _, err = run(capsys, "export",
                           "--ckpt", str(tmp_path / "nope.ckpt"),
                           "--out", str(tmp_path / "m.bnn"))
        assert code == EXIT_IO

    def test_export_rejects_model_file(self, pipeline, capsys, tmp_path):
        _, _, _, model = pipeline
        code, _, err = run(capsys, "export", "--ckpt", str(model),
                           "--out", str(tmp_path / "m.bnn"))
        assert code == EXIT_IO
        assert "checkpoint" in err


class TestVerify:
    def test_verify_ok(self, pipeline, capsys):
        _, _, ckpt, model = pipeline
        code, out, _ = run(capsys, "verify", "--ckpt", str(ckpt),
                           "--model", str(model), "--trials", "20")
        assert code == EXIT_OK
        assert "bit_mismatches 0" in out
        assert "verify ok" in out

    def test_verify_detects_tampering(self, pipeline, capsys, tmp_path):
        from boolnet import bittensor as bt
        from boolnet import io as bio

        _, _, ckpt, model = pipeline
        inf = bio.load_model(str(model))
        # flip one exported weight bit and re-save through the honest writer
        name = next(n for n, p in inf.params.items() if "weights" in p)
        bits = bt.unpack(inf.params[name]["weights"])
        bits[0, 0, 0, 0] = -bits[0, 0, 0, 0]
        inf.params[name]["weights"] = bt.pack(bits)
        tampered = tmp_path / "tampered.bnn"
        bio.save_model(inf, tampered)
        code, out, err = run(capsys, "verify", "--ckpt", str(ckpt),
                             "--model", str(tampered), "--trials", "10")
        assert code == EXIT_VERIFY
        assert err.startswith("error verify ")

    def test_verify_corrupt_model_exits_io(self, pipeline, capsys, tmp_path):
        _, _, ckpt, model = pipeline
        data = bytearray(model.read_bytes())
        data[100] ^= 0xFF
        bad = tmp_path / "corrupt.bnn"
        bad.write_bytes(bytes(data))
        code, _, err = run(capsys, "verify", "--ckpt", str(ckpt),
                           "--model", str(bad))
        assert code == EXIT_IO


class TestInfer:
    def test_infer_single_image(self, pipeline, capsys, tmp_path):
        _, _, _, model = pipeline
        rng = np.random.default_rng(0)
        x = rng.normal(size=(1, 32, 32))
        npy = tmp_path / "x.npy"
        np.save(npy, x)
        code, out, _ = run(capsys, "infer", "--model", str(model),
                           "--input", str(npy), "--topk", "3")
        assert code == EXIT_OK
        lines = [l for l in out.splitlines() if l.startswith("top3")]
        assert len(lines) == 1
        # three class:logit pairs, descending by logit
        pairs = [p.split(":") for p in lines[0].split()[1:]]
        logits = [float(v) for _, v in pairs]
        assert logits == sorted(logits, reverse=True)

    def test_infer_batch(self, pipeline, capsys, tmp_path):
        _, _, _, model = pipeline
        x = np.random.default_rng(1).normal(size=(5, 1, 32, 32))
        npy = tmp_path / "xb.npy"
        np.save(npy, x)
        code, out, _ = run(capsys, "infer", "--model", str(model),
                           "--input", str(npy))
        assert code == EXIT_OK
        assert len([l for l in out.splitlines() if l.startswith("top")]) == 5

    def test_infer_wrong_shape_exits_config(self, pipeline, capsys, tmp_path):
        _, _, _, model = pipeline
        npy = tmp_path / "bad.npy"
        np.save(npy, np.zeros((1, 3, 32, 32)))
        code, _, err = run(capsys, "infer", "--model", str(model),
                           "--input", str(npy))
        assert code == EXIT_CONFIG

    def test_infer_missing_input_exits_io(self, pipeline, capsys, tmp_path):
        _, _, _, model = pipeline
        code, _, _ = run(capsys, "infer", "--model", str(model),
                         "--input", str(tmp_path / "nope.npy"))
        assert code == EXIT_IO


class TestErrorFormat:
    def test_errors_are_single_line(self, capsys, tmp_path):
        bad = tmp_path / "bad.cfg"
        bad.write_text("variant = boolnet\nstage_channels = 3, 5\n")
        code, _, err = run(capsys, "cost", "--config", str(bad))
        assert code in (EXIT_CONFIG, EXIT_IO)
        assert err.endswith("\n")
        assert err.count("\n") == 1
