import json

import numpy as np
import pytest

from antgan import kernels
from antgan import phantoms as P
from antgan.cli import main
from antgan.trainer import TrainConfig

TINY_FLAGS = ["--image-size", "16", "--base-channels", "4", "--res-blocks", "1"]


@pytest.fixture
def data16(tmp_path):
    out = tmp_path / "d.antd"
    assert main(["gen-data", "--seed", "1", "--normal", "5", "--abnormal", "5", "--size", "16", "--out", str(out)]) == 0
    return out


@pytest.fixture
def trained(data16, tmp_path):
    out = tmp_path / "run"
    assert main(["train", "--dataset", str(data16), "--out-dir", str(out), "--iterations", "2", *TINY_FLAGS]) == 0
    return out


def test_gen_data_is_deterministic(data16, tmp_path):
    other = tmp_path / "e.antd"
    main(["gen-data", "--seed", "1", "--normal", "5", "--abnormal", "5", "--size", "16", "--out", str(other)])
    assert other.read_bytes() == data16.read_bytes()
    man = json.loads((tmp_path / "d.antd.manifest.json").read_text())
    assert man["command"] == "gen-data" and man["seed"] == 1


def test_train_outputs_and_manifest(trained, data16):
    for name in ("model_final.antw", "losses.csv", "manifest.json"):
        assert (trained / name).exists()
    man = json.loads((trained / "manifest.json").read_text())
    assert man["kernel_backend"] == kernels.BACKEND
    assert man["config"]["iterations"] == 2
    assert man["config"]["scale"] == {"image_size": 16, "base_channels": 4, "n_res_blocks": 1}
    assert len(man["dataset_sha256"]) == 64
    assert "losses.csv" in man["outputs"]


def test_manifest_config_reproduces_run(trained, tmp_path):
    man = json.loads((trained / "manifest.json").read_text())
    cfg = dict(man["config"], out_dir=str(tmp_path / "again"))
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(cfg))
    assert main(["train", "--config", str(path)]) == 0
    assert (tmp_path / "again" / "losses.csv").read_bytes() == (trained / "losses.csv").read_bytes()
    assert (tmp_path / "again" / "model_final.antw").read_bytes() == (trained / "model_final.antw").read_bytes()


def test_flags_override_config(tmp_path, data16):
    cfg = TrainConfig(iterations=9, seed=4, dataset_path=str(data16)).to_dict()
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(cfg))
    out = tmp_path / "o"
    assert main(["train", "--config", str(path), "--iterations", "1", "--no-am", "--out-dir", str(out), *TINY_FLAGS]) == 0
    man = json.loads((out / "manifest.json").read_text())
    assert man["config"]["iterations"] == 1 and man["config"]["seed"] == 4
    assert man["config"]["enable_am"] is False


def test_translate_and_evaluate(trained, data16, tmp_path):
    ck = str(trained / "model_final.antw")
    out = tmp_path / "tr"
    assert main(["translate", "--checkpoint", ck, "--dataset", str(data16), "--split", "test-normal",
                 "--out-dir", str(out)]) == 0
    assert sorted(p.name for p in out.glob("*.pgm")) == ["diff_0000.pgm", "out_0000.pgm"]
    assert P.read_pgm(out / "out_0000.pgm").shape == (16, 16)

    ev = tmp_path / "ev"
    assert main(["evaluate", "--checkpoint", ck, "--dataset", str(data16), "--out-dir", str(ev)]) == 0
    rep = json.loads((ev / "report.json").read_text())
    assert {"masked_psnr_abnormal", "identity_psnr_normal", "dice_threshold_seg"} <= set(rep)


def test_translate_pgm_inputs(trained, tmp_path):
    img = tmp_path / "in.pgm"
    P.write_pgm(img, np.arange(256, dtype=np.uint8).reshape(16, 16))
    out = tmp_path / "tr"
    assert main(["translate", "--checkpoint", str(trained / "model_final.antw"), "--images", str(img),
                 "--direction", "n2a", "--out-dir", str(out)]) == 0
    assert (out / "diff_0000.pgm").exists()


def test_dump_activations(trained, data16, tmp_path):
    out = tmp_path / "act"
    assert main(["dump-activations", "--checkpoint", str(trained / "model_final.antw"), "--dataset", str(data16),
                 "--layer", "Conv2", "--out-dir", str(out)]) == 0
    assert len(list(out.glob("Conv2_ch*.pgm"))) == 8


def test_ablate(data16, tmp_path):
    out = tmp_path / "abl"
    assert main(["ablate", "--dataset", str(data16), "--out-dir", str(out), "--iterations", "1",
                 "--variants", "gan,full", *TINY_FLAGS]) == 0
    assert (out / "ablation.txt").exists() and (out / "gan" / "report.json").exists()


def test_grad_check_ops(capsys):
    assert main(["grad-check", "--ops-only"]) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert lines and all(line.endswith("PASS") for line in lines)


@pytest.mark.parametrize("argv", [["bogus"], ["train", "--nope"], []])
def test_usage_errors_exit_1(argv, capsys):
    with pytest.raises(SystemExit) as exc:
        main(argv)
    assert exc.value.code == 1
    assert capsys.readouterr().err


def test_validation_error_exit_1(tmp_path, data16):
    assert main(["ablate", "--dataset", str(data16), "--variants", "bogus", "--out-dir", str(tmp_path)]) == 1
    assert main(["gen-data", "--size", "30", "--out", str(tmp_path / "x.antd")]) == 1


def test_missing_file_exit_3(tmp_path):
    assert main(["train", "--dataset", str(tmp_path / "none.antd"), "--out-dir", str(tmp_path / "o"),
                 "--iterations", "1"]) == 3


def test_corrupt_dataset_exit_1(tmp_path):
    bad = tmp_path / "bad.antd"
    bad.write_bytes(b"NOPE")
    assert main(["evaluate", "--checkpoint", str(bad), "--dataset", str(bad), "--out-dir", str(tmp_path)]) == 1


def test_divergence_exit_2(data16, tmp_path, monkeypatch):
    from antgan import trainer
    from antgan.errors import NumericError

    def boom(*a, **k):
        raise NumericError("injected")

    monkeypatch.setattr(trainer.L, "loss_gan_g", boom)
    out = tmp_path / "o"
    assert main(["train", "--dataset", str(data16), "--out-dir", str(out), "--iterations", "1", *TINY_FLAGS]) == 2
    assert (out / "model_diverged.antw").exists()
