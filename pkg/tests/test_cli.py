import csv

import numpy as np
import pytest

from raediff.cli import main
from raediff.io import encode_image, protected_path

from conftest import checker_trigger, toy_images


def _files(root):
    return {p.relative_to(root).as_posix(): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    data = root / "data"
    data.mkdir()
    for i, x in enumerate(toy_images(n=4, size=8, seed=5)):
        (data / f"img_{i:02d}.pgm").write_bytes(encode_image(x))
    (root / "trigger.pgm").write_bytes(encode_image(checker_trigger(8)))
    wrong = checker_trigger(8)
    wrong[0, 0, 0] = -wrong[0, 0, 0]
    (root / "wrong.pgm").write_bytes(encode_image(wrong))
    ckpt = root / "model.ckpt"
    assert main(["train", "--in", str(data), "--trigger", str(root / "trigger.pgm"), "--checkpoint", str(ckpt),
                 "--iterations", "50", "--hidden", "16", "--lr", "0.05", "--log-every", "0"]) == 0
    prot = root / "prot"
    assert main(["protect", "--in", str(data), "--trigger", str(root / "trigger.pgm"), "--checkpoint", str(ckpt),
                 "--out", str(prot), "--seed", "11"]) == 0
    return root


def test_train_outputs(workspace):
    ckpt = workspace / "model.ckpt"
    assert ckpt.read_bytes()[:8] == b"RAEDIFF1"
    rows = list(csv.reader(open(f"{ckpt}.loss.csv")))
    assert rows[0] == ["iteration", "loss"] and len(rows) == 51


def test_train_same_seed_is_identical(workspace, tmp_path):
    args = ["train", "--in", str(workspace / "data"), "--trigger", str(workspace / "trigger.pgm"),
            "--iterations", "20", "--hidden", "8", "--log-every", "0", "--seed", "4", "--checkpoint"]
    assert main(args + [str(tmp_path / "a.ckpt")]) == 0
    assert main(args + [str(tmp_path / "b.ckpt")]) == 0
    assert (tmp_path / "a.ckpt").read_bytes() == (tmp_path / "b.ckpt").read_bytes()
    zero = ["train", "--in", str(workspace / "data"), "--trigger", str(workspace / "trigger.pgm"),
            "--iterations", "0", "--hidden", "8", "--seed", "4", "--checkpoint"]
    assert main(zero + [str(tmp_path / "z.ckpt")]) == 0
    assert (tmp_path / "z.ckpt").read_bytes() != (tmp_path / "a.ckpt").read_bytes()


def test_trigger_dimension_mismatch(workspace, tmp_path):
    (tmp_path / "t.pgm").write_bytes(encode_image(np.zeros((1, 4, 4))))
    rc = main(["train", "--in", str(workspace / "data"), "--trigger", str(tmp_path / "t.pgm"),
               "--checkpoint", str(tmp_path / "m.ckpt"), "--iterations", "1"])
    assert rc == 2


def test_protect_layout(workspace):
    prot = workspace / "prot"
    for m in (1, 2, 3):
        for i in range(4):
            assert protected_path(prot, m, f"img_{i:02d}.pgm").is_file()
            assert protected_path(prot, m, f"img_{i:02d}.pgm", "slight_noise").is_file()
    assert (prot / "manifest.json").is_file()


def test_protect_replay_is_byte_identical(workspace, tmp_path):
    out = tmp_path / "replay"
    rc = main(["protect", "--in", str(workspace / "data"), "--trigger", str(workspace / "trigger.pgm"),
               "--checkpoint", str(workspace / "model.ckpt"), "--out", str(out),
               "--manifest", str(workspace / "prot" / "manifest.json")])
    assert rc == 0
    assert _files(out) == _files(workspace / "prot")


def test_zero_adverse_steps_keeps_slight_noise(workspace, tmp_path):
    out = tmp_path / "tr0"
    assert main(["protect", "--in", str(workspace / "data"), "--trigger", str(workspace / "trigger.pgm"),
                 "--checkpoint", str(workspace / "model.ckpt"), "--out", str(out), "--t-r", "0",
                 "--levels", "1"]) == 0
    for i in range(4):
        name = f"img_{i:02d}.pgm"
        assert protected_path(out, 1, name).read_bytes() == protected_path(out, 1, name, "slight_noise").read_bytes()


def test_restore_refuses_wrong_trigger(workspace, tmp_path):
    out = tmp_path / "restored"
    rc = main(["restore", "--in", str(workspace / "prot"), "--trigger", str(workspace / "wrong.pgm"),
               "--checkpoint", str(workspace / "model.ckpt"), "--out", str(out)])
    assert rc == 2
    assert not out.exists()


def test_restore_reports_step_count(workspace, tmp_path, capsys):
    out = tmp_path / "restored"
    rc = main(["restore", "--in", str(workspace / "prot"), "--trigger", str(workspace / "trigger.pgm"),
               "--checkpoint", str(workspace / "model.ckpt"), "--out", str(out)])
    assert rc == 0
    assert "with 28 steps" in capsys.readouterr().out
    assert len(list((out / "level_2").glob("*.pgm"))) == 4


def test_evaluate_identical_dirs(workspace, tmp_path, capsys):
    report = tmp_path / "r.csv"
    rc = main(["evaluate", str(workspace / "data"), str(workspace / "data"), "--csv", str(report)])
    assert rc == 0
    text = capsys.readouterr().out
    assert "mean SSIM 1.000000" in text and "mean PSNR inf" in text
    rows = list(csv.reader(open(report)))
    assert len(rows) == 5 and all(r[2] == "inf" for r in rows[1:])


def test_evaluate_misaligned(workspace, tmp_path):
    other = tmp_path / "other"
    other.mkdir()
    (other / "img_00.pgm").write_bytes((workspace / "data" / "img_00.pgm").read_bytes())
    assert main(["evaluate", str(workspace / "data"), str(other)]) == 2


def test_sample_reproducible(workspace, tmp_path):
    base = ["sample", "--trigger", str(workspace / "trigger.pgm"), "--checkpoint", str(workspace / "model.ckpt"),
            "-n", "2", "--seed", "3", "--out"]
    assert main(base + [str(tmp_path / "a")]) == 0
    assert main(base + [str(tmp_path / "b")]) == 0
    assert _files(tmp_path / "a") == _files(tmp_path / "b")
    assert len(_files(tmp_path / "a")) == 3


def test_missing_checkpoint_and_usage_errors(workspace, tmp_path):
    assert main(["sample", "--trigger", str(workspace / "trigger.pgm"), "--checkpoint",
                 str(tmp_path / "nope.ckpt"), "--out", str(tmp_path / "s")]) == 2
    assert main(["train", "--in", str(workspace / "data")]) == 1
    with pytest.raises(SystemExit) as exc:
        main(["frobnicate"])
    assert exc.value.code == 1
