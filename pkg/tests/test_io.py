import json

import numpy as np
import pytest
from hypothesis import given, strategies as st

from semianchor import io
from semianchor.inference import Detections


def doc(**over):
    d = {
        "images": [{"id": 1, "width": 64, "height": 48}],
        "annotations": [{"image_id": 1, "category_id": 7, "bbox": [10, 10, 20, 30]}],
        "categories": [{"id": 7, "name": "cat"}],
    }
    d.update(over)
    return d


def test_minimal_file(tmp_path):
    p = tmp_path / "a.json"
    p.write_text(json.dumps(doc()))
    aset = io.load_annotations(p)
    gt = aset.ground_truth()
    assert len(gt[1]) == 1
    assert gt[1].boxes.tolist() == [[10, 10, 30, 40]]
    assert gt[1].classes.tolist() == [1] and aset.category_of(1) == 7


def test_missing_image_named():
    bad = doc(annotations=[{"image_id": 5, "category_id": 7, "bbox": [0, 0, 1, 1]}])
    with pytest.raises(io.AnnotationError, match=r"annotations\[0\].*image id 5"):
        io.parse_annotations(bad)


@pytest.mark.parametrize("mutate,needle", [
    (lambda d: d["annotations"][0].pop("bbox"), "bbox"),
    (lambda d: d["annotations"][0].update(category_id=3), "category id 3"),
    (lambda d: d["annotations"][0].update(bbox=[0, 0, "x", 1]), "bbox"),
    (lambda d: d["images"].append({"id": 1, "width": 2, "height": 2}), "duplicate image"),
    (lambda d: d["images"][0].update(width=0), "non-positive size"),
    (lambda d: d.pop("categories"), "categories"),
])
def test_validation_errors(mutate, needle):
    d = doc()
    mutate(d)
    with pytest.raises(io.AnnotationError, match=needle):
        io.parse_annotations(d)


def test_degenerate_boxes_dropped(caplog):
    d = doc(annotations=[
        {"image_id": 1, "category_id": 7, "bbox": [0, 0, 0, 5]},
        {"image_id": 1, "category_id": 7, "bbox": [0, 0, 4, -1]},
        {"image_id": 1, "category_id": 7, "bbox": [0, 0, 4, 4]},
    ])
    with caplog.at_level("WARNING", logger="semianchor"):
        aset = io.parse_annotations(d)
    assert aset.dropped == 2 and len(aset.annotations) == 1
    assert "dropped 2" in caplog.text


def test_invalid_json(tmp_path):
    p = tmp_path / "a.json"
    p.write_text("{")
    with pytest.raises(io.AnnotationError, match="not valid JSON"):
        io.load_annotations(p)


@given(st.integers(0, 10_000))
def test_annotation_order_independent(seed):
    rng = np.random.default_rng(seed)
    images = [{"id": i, "width": 100, "height": 100} for i in range(4)]
    cats = [{"id": c, "name": str(c)} for c in (3, 9, 1)]
    anns = [{"image_id": int(rng.integers(4)), "category_id": int(rng.choice([3, 9, 1])),
             "bbox": [float(v) for v in rng.uniform(1, 30, 4)]} for _ in range(8)]
    a = io.parse_annotations({"images": images, "annotations": anns, "categories": cats})
    shuffle = lambda xs: [xs[i] for i in rng.permutation(len(xs))]
    b = io.parse_annotations({"images": shuffle(images), "annotations": shuffle(anns), "categories": shuffle(cats)})
    assert a == b
    assert [c.id for c in a.categories] == [1, 3, 9]


# --- config ---------------------------------------------------------------------

def test_empty_config_is_defaults():
    cfg = io.parse_config("")
    assert cfg == io.RunConfig()
    assert (cfg.num_scales * cfg.num_aspects, cfg.sigma, cfg.gamma, cfg.strategy, cfg.k) == (25, 0.9, None, "top_k", 1)
    assert (cfg.lambda_reg, cfg.lambda_ac) == (2.0, 1.0)


def test_sigma_out_of_range():
    with pytest.raises(io.ConfigError, match="sigma"):
        io.parse_config("sigma = 1.5")


@pytest.mark.parametrize("text,needle", [
    ("bogus = 1", "bogus"), ("k = two", "k"), ("tau", "line 1"), ("k = 1\nk = 2", "given twice"),
    ("gamma = 0", "gamma"), ("fg_thresh = nan", "fg_thresh"),
])
def test_config_errors(text, needle):
    with pytest.raises(io.ConfigError, match=needle):
        io.parse_config(text)


def test_config_comments_and_gamma():
    cfg = io.parse_config("# header\nlambda_reg = 1  # override\ngamma = 0.2\n\n")
    assert cfg.lambda_reg == 1.0 and cfg.gamma == 0.2
    assert io.parse_config("gamma = simplified").gamma is None


def test_config_round_trip_file(tmp_path):
    p = tmp_path / "run.cfg"
    p.write_text("lambda_reg = 2\n")
    cfg = io.load_config(p)
    io.save_config(cfg, p)
    assert io.load_config(p) == cfg and cfg.lambda_reg == 2


@given(st.builds(
    io.RunConfig,
    num_scales=st.integers(1, 6), num_aspects=st.sampled_from([1, 3, 5]),
    gamma=st.one_of(st.none(), st.floats(0.001, 0.999)), sigma=st.floats(0.01, 0.99),
    lambda_reg=st.floats(0, 10), tau=st.floats(0, 1), seed=st.integers(0, 10 ** 6),
    strategy=st.sampled_from(["top_k", "pos"]), output=st.sampled_from(["", "out.txt"]),
))
def test_config_round_trip(cfg):
    assert io.parse_config(io.format_config(cfg)) == cfg


def test_config_builds_components():
    cfg = io.RunConfig(anchor_levels="single", num_scales=3, num_aspects=3, strategy="pos", tau=0.3)
    assert cfg.anchor_spec().K == 9 and cfg.anchor_spec().num_levels == 1
    assert io.RunConfig().anchor_spec().num_levels == 5
    assert cfg.inference_config().tau == 0.3
    assert cfg.loss_config().sigma == 0.9


# --- artifacts ------------------------------------------------------------------

def test_detection_text_round_trip(tmp_path):
    aset = io.parse_annotations(doc())
    dets = Detections.build([[10, 10, 30, 40]], [0.75], [1], image_id=1)
    p = tmp_path / "d.txt"
    io.write_detections(p, dets, aset)
    assert p.read_text() == "1 7 10 10 20 30 0.75\n"
    back = io.read_detections(p, aset)
    assert back.boxes.tolist() == [[10, 10, 30, 40]] and back.classes.tolist() == [1]


def test_detection_json(tmp_path):
    aset = io.parse_annotations(doc())
    p = tmp_path / "d.json"
    p.write_text(json.dumps([{"image_id": 1, "category_id": 7, "bbox": [1, 2, 3, 4], "score": 0.5}]))
    d = io.read_detections(p, aset)
    assert d.boxes.tolist() == [[1, 2, 4, 6]] and d.scores.tolist() == [0.5]


def test_detection_file_errors(tmp_path):
    p = tmp_path / "d.txt"
    p.write_text("1 7 0 0 1\n")
    with pytest.raises(io.AnnotationError, match="7 columns"):
        io.read_detections(p)
    p.write_text("1 8 0 0 1 1 0.5\n")
    with pytest.raises(io.AnnotationError, match="category id 8"):
        io.read_detections(p, io.parse_annotations(doc()))


def test_target_lines():
    loc = np.array([0, 2])
    alab = np.array([[0, 0], [2, 0]])
    miou = np.array([[0.1, 0.0], [0.6543219, 0.3]])
    assert io.format_targets(4, loc, alab, miou) == ["L 4 1 2", "A 4 1 0 2 0.654322"]


def test_head_outputs(tmp_path):
    p = tmp_path / "h.npz"
    np.savez(p, loc_probs=np.full((2, 1), 0.5), anchor_probs=np.full((2, 3), 0.5), refined=np.zeros((2, 3, 4)))
    (img, lp, ap, rb), = io.load_head_outputs(p)
    assert img == 0 and lp.shape == (2, 1) and rb.shape == (2, 3, 4)
    np.savez(p, loc_probs=np.full((2, 1), 1.5), anchor_probs=np.full((2, 3), 0.5), refined=np.zeros((2, 3, 4)))
    with pytest.raises(ValueError, match="loc_probs"):
        io.load_head_outputs(p)


def test_atomic_write_leaves_no_temp_files(tmp_path):
    p = tmp_path / "x.txt"
    io.atomic_write_text(p, "a")
    io.atomic_write_text(p, "b")
    assert p.read_text() == "b" and [f.name for f in tmp_path.iterdir()] == ["x.txt"]


def test_log_level_env(monkeypatch):
    import logging
    monkeypatch.setenv(io.LOG_ENV, "debug")
    io.configure_logging()
    assert logging.getLogger("semianchor").level == logging.DEBUG
    monkeypatch.setenv(io.LOG_ENV, "loud")
    with pytest.raises(ValueError):
        io.configure_logging()
    io.configure_logging("WARNING")
