import json
import subprocess
import sys

import numpy as np
import pytest

from semianchor.cli import main


def write_annotations(path):
    path.write_text(json.dumps({
        "images": [{"id": 1, "width": 128, "height": 96}, {"id": 2, "width": 64, "height": 64}],
        "annotations": [
            {"image_id": 1, "category_id": 3, "bbox": [10, 10, 40, 30]},
            {"image_id": 1, "category_id": 5, "bbox": [60, 20, 50, 60]},
            {"image_id": 2, "category_id": 3, "bbox": [5, 5, 30, 30]},
        ],
        "categories": [{"id": 3, "name": "a"}, {"id": 5, "name": "b"}],
    }))
    return path


def test_no_arguments_prints_usage(capsys):
    assert main([]) == 2
    assert "usage" in capsys.readouterr().err


def test_unknown_command_exits_2(capsys):
    with pytest.raises(SystemExit) as e:
        main(["frobnicate"])
    assert e.value.code == 2


def test_unknown_flag_exits_2():
    with pytest.raises(SystemExit) as e:
        main(["prop1", "--colour"])
    assert e.value.code == 2


def test_module_entry_point():
    r = subprocess.run([sys.executable, "-m", "semianchor"], capture_output=True, text=True)
    assert r.returncode == 2 and "usage" in r.stderr


def test_prop1(capsys):
    assert main(["prop1", "--K", "3", "--C", "2"]) == 0
    out = capsys.readouterr().out
    assert "PASS K=3 C=2 gamma=0.25" in out and "FAIL" not in out


def test_prop1_reports_counterexample(capsys):
    assert main(["prop1", "--K", "2", "--C", "1", "--gamma", "3/5"]) == 0  # premise not met: not a failure
    assert "counterexample" in capsys.readouterr().out


def test_eval_perfect(tmp_path, capsys):
    ann = write_annotations(tmp_path / "a.json")
    det = tmp_path / "d.txt"
    det.write_text("1 3 10 10 40 30 0.9\n1 5 60 20 50 60 0.8\n2 3 5 5 30 30 0.7\n")
    out = tmp_path / "r.txt"
    assert main(["eval", "--detections", str(det), "--annotations", str(ann), "--out", str(out)]) == 0
    assert "AP50" in capsys.readouterr().out
    assert out.read_text().splitlines()[0] == "ap = 1"


def test_eval_missing_file(tmp_path, capsys):
    assert main(["eval", "--detections", str(tmp_path / "no"), "--annotations", str(tmp_path / "no")]) == 1
    assert "error" in capsys.readouterr().err


def test_assign_and_stats(tmp_path, capsys):
    ann = write_annotations(tmp_path / "a.json")
    cfg = tmp_path / "run.cfg"
    cfg.write_text("anchor_levels = single\nnum_scales = 3\nnum_aspects = 3\n")
    out = tmp_path / "t.txt"
    assert main(["assign", "--annotations", str(ann), "--config", str(cfg), "--out", str(out)]) == 0
    lines = out.read_text().splitlines()
    assert any(line.startswith("L 1 ") for line in lines) and any(line.startswith("A 2 ") for line in lines)
    first = out.read_bytes()
    assert main(["assign", "--annotations", str(ann), "--config", str(cfg), "--out", str(out)]) == 0
    assert out.read_bytes() == first
    st = tmp_path / "s.txt"
    assert main(["stats", "--annotations", str(ann), "--config", str(cfg), "--out", str(st)]) == 0
    assert "anchor_ratio" in st.read_text()


def test_bad_config_reports_key(tmp_path, capsys):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("sigma = 1.5\n")
    ann = write_annotations(tmp_path / "a.json")
    assert main(["assign", "--annotations", str(ann), "--config", str(cfg)]) == 1
    assert "sigma" in capsys.readouterr().err


def test_infer_then_eval(tmp_path, capsys):
    ann = write_annotations(tmp_path / "a.json")
    heads = tmp_path / "h.npz"
    refined = np.array([[[10, 10, 50, 40], [0, 0, 5, 5]], [[60, 20, 110, 80], [0, 0, 5, 5]]], dtype=float)
    np.savez(heads, loc_probs=np.array([[0.9, 0.01], [0.01, 0.8]]), anchor_probs=np.array([[0.9, 0.1], [0.7, 0.2]]),
             refined=refined, image_ids=np.array(1))
    det = tmp_path / "d.txt"
    assert main(["infer", "--heads", str(heads), "--annotations", str(ann), "--out", str(det)]) == 0
    assert det.read_text().splitlines()[0].startswith("1 3 10 10 40 30")


def test_train_toy_outputs(tmp_path, capsys):
    out = tmp_path / "run"
    args = ["train-toy", "--steps", "4", "--images", "2", "--test-images", "1", "--K", "9", "--out-dir", str(out)]
    assert main(args) == 0
    text = capsys.readouterr().out
    assert "step=4 " in text and "AP50" in text
    assert sorted(p.name for p in out.iterdir()) == ["eval.txt", "loss.log", "model.ckpt"]
    assert len((out / "loss.log").read_text().splitlines()) == 4


def test_check_grad(capsys):
    assert main(["check-grad", "--points", "3"]) == 0
    assert capsys.readouterr().out.count("PASS") == 5
