import json

import numpy as np
import pytest

from endosim import cli
from endosim.dataset import load_manifest, save_depth
from endosim.errors import DatasetError


@pytest.fixture(scope="module")
def gen_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("cli") / "data"
    assert cli.main(["gen", "--scene-seed", "3", "--frames", "2", "--out", str(out),
                     "--intrinsics", "30,30,31.5,31.5,64,64"]) == 0
    return out


def run(capsys, argv):
    code = cli.main(argv)
    cap = capsys.readouterr()
    return code, cap.out, cap.err


def test_gen_writes_manifest(gen_dir):
    m = load_manifest(gen_dir)
    assert len(m.frames) == 2 and m.intrinsics.width == 64


def test_fit_state_record(gen_dir, capsys, tmp_path):
    out = tmp_path / "fit.json"
    code, text, _ = run(capsys, ["fit-state", "--frame", "0", "--dataset", str(gen_dir),
                                 "--instrument", "left", "--restarts", "2", "--out", str(out)])
    assert code == 0
    rec = json.loads(text)
    assert rec["frame"] == 0 and rec["instrument"] == "left"
    assert set(rec["state"]) == {"alpha", "beta", "gamma", "delta", "insertion"}
    assert json.loads(out.read_text()) == rec
    code, csv_text, _ = run(capsys, ["eval-state", "--pred", str(out), "--gt", str(gen_dir)])
    assert code == 0
    lines = csv_text.splitlines()
    assert lines[0] == "metric,value,units" and lines[-1] == "pairs,1,1"


def test_eval_depth_identity(gen_dir, capsys):
    gt = str(gen_dir / "frames" / "0000_depth.png")
    code, text, _ = run(capsys, ["eval-depth", "--pred", gt, "--gt", gt])
    assert code == 0
    rows = dict(line.split(",")[:2] for line in text.splitlines()[1:])
    assert float(rows["abs_rel"]) == 0 and float(rows["rmse"]) == 0
    assert float(rows["eta1"]) == 1


def test_eval_depth_npy_and_median_alignment(tmp_path, capsys):
    gt = np.linspace(5, 50, 64).reshape(8, 8)
    np.save(tmp_path / "gt.npy", gt)
    np.save(tmp_path / "pred.npy", 2 * gt)
    code, text, _ = run(capsys, ["eval-depth", "--pred", str(tmp_path / "pred.npy"),
                                 "--gt", str(tmp_path / "gt.npy"), "--align", "median"])
    assert code == 0 and "abs_rel,0," in text


def test_recover_depth_outputs(gen_dir, capsys, tmp_path):
    out = tmp_path / "d.png"
    code, text, _ = run(capsys, ["recover-depth", "--frame", str(gen_dir / "frames" / "0001_rgb.png"),
                                 "--out", str(out), "--iters", "20", "--grid", "6x6"])
    assert code == 0
    rec = json.loads(text)
    assert rec["frame"] == 1 and out.is_file()
    loss = (tmp_path / "d_loss.csv").read_text().splitlines()
    assert loss[0] == "iteration,loss"
    vals = [float(line.split(",")[1]) for line in loss[1:]]
    assert all(b <= a for a, b in zip(vals, vals[1:]))


def test_eval_seg_and_track(gen_dir, capsys):
    m = str(gen_dir / "frames" / "0000_mask_left.png")
    code, text, _ = run(capsys, ["eval-seg", "--pred", m, "--gt", m])
    assert code == 0 and "dice,100,%" in text
    code, text, _ = run(capsys, ["track-bbox", "--masks", str(gen_dir / "frames")])
    lines = text.splitlines()
    assert code == 0 and lines[0] == "frame,left,right,top,bottom" and len(lines) == 3


def test_fisher_concentration(capsys):
    _, a, _ = run(capsys, ["fisher", "--psi", "10,0,0,0,10,0,0,0,10", "--mc", "200000"])
    _, b, _ = run(capsys, ["fisher", "--psi", "1,0,0,0,1,0,0,0,1", "--mc", "200000"])
    a, b = json.loads(a), json.loads(b)
    assert a["uncertainty"] < b["uncertainty"]
    assert np.allclose(a["mode"], np.eye(3))
    code, _, _ = run(capsys, ["fisher", "--psi=-1,0,0,0,1,0,0,0,1", "--mc", "200000"])
    assert code == 0


def test_errors_exit_nonzero(tmp_path, capsys):
    code, _, err = run(capsys, ["fit-state", "--frame", str(tmp_path / "nope" / "frames" / "0000_rgb.png"),
                                "--instrument", "left"])
    assert code == 1 and "missing file" in err
    with pytest.raises(SystemExit):
        cli.main(["recover-depth", "--frame", "0", "--out", "x.png", "--grid", "16"])
    code, _, err = run(capsys, ["eval-depth", "--pred", str(tmp_path / "a.png"), "--gt", str(tmp_path / "b.png")])
    assert code == 1


def test_depth_beyond_scale_is_rejected(tmp_path):
    with pytest.raises(DatasetError, match="does not fit"):
        save_depth(tmp_path / "x.png", np.array([[300.0]]), 128.0)
