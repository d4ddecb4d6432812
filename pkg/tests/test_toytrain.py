from dataclasses import replace

import numpy as np
import pytest

from semianchor.gradcheck import check_model, tiny_instance
from semianchor.inference import InferenceConfig
from semianchor.toytrain import checkpoint
from semianchor.toytrain.ablation import run_ablation
from semianchor.toytrain.data import (
    MAX_OBJECTS, dataset_summary, default_toy_spec, generate_dataset, make_scene, sample_layout,
)
from semianchor.toytrain.model import ToyModel, forward
from semianchor.toytrain.train import (
    SGD, TrainConfig, detect, objective, static_targets, train, train_step,
)

SMALL = TrainConfig(steps=20, num_images=3, num_test_images=2, num_scales=3, num_aspects=3)


def test_dataset_deterministic():
    a = generate_dataset(3, 4)
    b = generate_dataset(3, 4)
    for x, y in zip(a, b):
        assert np.array_equal(x.gt.boxes, y.gt.boxes)
        assert np.array_equal(x.x, y.x) and np.array_equal(x.z, y.z)


def test_dataset_contents():
    for s in generate_dataset(1, 20):
        assert 1 <= len(s.gt) <= MAX_OBJECTS
        assert np.all(s.gt.boxes[:, 2:] > s.gt.boxes[:, :2])
        assert np.all(np.isfinite(s.x)) and np.all(np.isfinite(s.z))


def test_difficulty_zero_is_single_centred_object():
    for s in generate_dataset(0, 5, difficulty=0):
        assert len(s.gt) == 1
        b = s.gt.boxes[0]
        assert np.allclose([(b[0] + b[2]) / 2, (b[1] + b[3]) / 2], [s.width / 2, s.height / 2])


def test_summary_reproduced_by_regeneration():
    scenes = generate_dataset(5, 12)
    summary = dataset_summary(scenes)
    # independent pass: rebuild each scene on its own
    counts, hist = [], np.zeros(3, dtype=int)
    for i in range(12):
        gt = make_scene(5, i).gt
        counts.append(len(gt))
        for c in gt.classes:
            hist[c - 1] += 1
    assert summary == {"mean_gt": float(np.mean(counts)), "class_hist": hist.tolist()}


def test_ground_truth_independent_of_anchor_layout():
    a = generate_dataset(2, 3, spec=default_toy_spec(1, 1))
    b = generate_dataset(2, 3, spec=default_toy_spec(5, 5))
    for x, y in zip(a, b):
        assert np.array_equal(x.gt.boxes, y.gt.boxes)


def test_dataset_validation():
    with pytest.raises(ValueError):
        generate_dataset(0, 0)
    with pytest.raises(ValueError):
        generate_dataset(0, 1, num_classes=6)


def test_layout_sampler():
    gt = sample_layout(0, 1)
    assert gt.boxes.shape[1] == 4 and np.all(gt.boxes[:, 2:] > gt.boxes[:, :2])
    assert np.array_equal(gt.boxes, sample_layout(0, 1).boxes)


def test_zero_model_is_identity():
    s = make_scene(0, 0)
    out = forward(ToyModel.zeros(3), s)
    assert np.all(out.loc_probs == 0.5) and np.all(out.anchor_probs == 0.5)
    assert np.array_equal(out.refined, s.grid.anchors)


def test_output_shapes():
    s = make_scene(0, 0)
    out = forward(ToyModel.init(3), s)
    n, k = s.grid.num_locations, s.grid.K
    assert out.loc_probs.shape == (n, 3)
    assert out.refined.shape == (n, k, 4)
    assert out.anchor_probs.shape == (n, k)


def test_forward_rejects_mismatched_model():
    with pytest.raises(ValueError):
        forward(ToyModel.init(2), make_scene(0, 0))


def test_handcrafted_location_weights():
    cfg = TrainConfig(difficulty=0)
    m = ToyModel.init(3)
    w = np.zeros_like(m.W_loc)
    for c in range(3):
        w[c, c] = 10.0  # class evidence
        w[c, 3] = 6.0  # objectness
    m = replace(m, W_loc=w, b_loc=np.full(3, -3.0))
    for s in generate_dataset(0, 6, difficulty=0):
        t = static_targets(s, cfg)
        pos = t.location_labels > 0
        assert pos.any()
        p = forward(m, s).loc_probs[pos, t.location_labels[pos] - 1]
        assert p.min() > 0.9


def test_min_extent_clamp():
    s = tiny_instance(1)
    m = ToyModel.init(1)
    m = replace(m, b_reg=np.array([0.0, 0.0, -10.0, -10.0]))
    out = forward(m, s)
    assert np.all(out.refined[..., 2] > out.refined[..., 0])
    assert np.all(out.refined[..., 3] > out.refined[..., 1])


def test_end_to_end_gradient_small():
    res = check_model(points=5, full_points=5)
    assert res.passed, res.summary()


def test_end_to_end_gradient_through_clamp():
    # push every box into the min-extent clamp; the far-corner gradient must reroute
    from semianchor.gradcheck import central_diff, rel_err

    cfg = TrainConfig(num_classes=1)
    for seed in range(1, 20):
        s = tiny_instance(seed)
        t = [static_targets(s, cfg)]
        if (t[0].location_labels > 0).any():
            break
    m = replace(ToyModel.init(1), b_reg=np.array([0.0, 0.0, -3.0, -3.0]))
    obj = objective(m, [s], t, cfg)
    theta = m.flat()
    analytic = np.concatenate([np.ravel(obj.grads[k]) for k in m.params()])
    numeric = central_diff(lambda th: objective(m.with_flat(th), [s], t, cfg, obj.ac_targets).report.total, theta)
    assert rel_err(analytic, numeric).max() <= 1e-4


def test_training_deterministic():
    a = train(SMALL)
    b = train(SMALL)
    assert np.array_equal(a.model.flat(), b.model.flat())
    assert [r.format(i) for i, r in enumerate(a.reports)] == [r.format(i) for i, r in enumerate(b.reports)]


def test_minibatch_training_deterministic():
    cfg = replace(SMALL, batch_size=2, steps=5)
    assert np.array_equal(train(cfg).model.flat(), train(cfg).model.flat())


def test_loss_decreases_on_fixed_batch():
    cfg = replace(SMALL, steps=50)
    reports = train(cfg).reports
    assert reports[-1].total < 0.7 * reports[0].total


def test_train_step_matches_objective_gradient():
    scenes = generate_dataset(0, 2, spec=SMALL.anchor_spec)
    m = ToyModel.init(3)
    new, report = train_step(m, scenes, SMALL, SGD(0.1, 0.0))
    obj = objective(m, scenes, [static_targets(s, SMALL) for s in scenes], SMALL)
    assert report == obj.report
    assert np.allclose(new.W_reg, m.W_reg - 0.1 * obj.grads["W_reg"])


def test_non_finite_loss_aborts():
    s = generate_dataset(0, 1, spec=SMALL.anchor_spec)
    m = replace(ToyModel.init(3), W_reg=np.full((4, 17), np.nan))
    with pytest.raises((FloatingPointError, ValueError)):
        objective(m, s, [static_targets(s[0], SMALL)], SMALL)


def test_regression_set_rule():
    s = make_scene(0, 0, spec=SMALL.anchor_spec)
    t = static_targets(s, SMALL)
    assert not t.reg_mask[t.location_labels == 0].any()
    assert t.reg_mask[t.location_labels > 0].any()


@pytest.mark.parametrize("assigner", ["fcos", "fcos-shrink"])
def test_fcos_assigners_train(assigner):
    r = train(replace(SMALL, assigner=assigner, steps=3))
    assert np.isfinite(r.reports[-1].total)


def test_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(steps=0)
    with pytest.raises(ValueError):
        TrainConfig(assigner="atss")


def test_shared_mode_reproduces_random_baseline_scores():
    model = train(SMALL).model
    scenes = generate_dataset(7, 2, spec=SMALL.anchor_spec)
    cfg = InferenceConfig("pos", tau=0.0)
    shared = detect(model, scenes, cfg, "shared", pre_nms=True)
    rnd = detect(model, scenes, cfg, "random", np.random.default_rng(0), pre_nms=True)
    assert rnd.keys() <= shared.keys()


def test_checkpoint_round_trip(tmp_path):
    model = train(replace(SMALL, steps=3)).model
    path = tmp_path / "m.ckpt"
    checkpoint.save(model, path)
    again = checkpoint.load(path)
    assert np.array_equal(again.flat(), model.flat())
    assert checkpoint.dumps(again) == path.read_text()


def test_checkpoint_rejects_garbage():
    with pytest.raises(checkpoint.CheckpointError):
        checkpoint.loads("hello\n")
    with pytest.raises(checkpoint.CheckpointError):
        checkpoint.loads("semianchor-toy-checkpoint 9\n")


def test_ablation_table():
    res = run_ablation("strategy", replace(SMALL, steps=5), seeds=(0,))
    assert res.settings[0] == "Top-1"
    assert "Top-1" in res.table()
    assert len(res.rows) == len(res.settings)
    with pytest.raises(ValueError):
        run_ablation("depth")


def test_sgd_clips_global_norm():
    model = ToyModel.init(3)
    grads = {k: np.full(np.shape(v), 1.0) for k, v in model.params().items()}
    size = sum(np.size(v) for v in grads.values())
    clipped = SGD(1.0, 0.0, clip_norm=1.0).step(model, grads)
    step = model.flat() - clipped.flat()
    assert np.linalg.norm(step) == pytest.approx(1.0)
    assert np.allclose(step, 1 / np.sqrt(size))
    free = SGD(1.0, 0.0).step(model, grads)
    assert np.allclose(model.flat() - free.flat(), 1.0)
    with pytest.raises(ValueError):
        TrainConfig(clip_norm=0.0)
