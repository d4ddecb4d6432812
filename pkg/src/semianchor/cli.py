"""Command-line entry point: ``python -m semianchor <command> ...``."""
from __future__ import annotations

import argparse
import logging
import os
import sys
from dataclasses import replace
from fractions import Fraction

import numpy as np

from . import io
from .assignment import assign_locations, label_anchors, verify_proposition_1
from .evaluation import imbalance_stats, map_report
from .geometry import grid_for_image
from .inference import Detections, postprocess

logger = logging.getLogger(__name__)

# K -> (scales, aspect ratios)
K_LAYOUTS = {1: (1, 1), 3: (1, 3), 5: (1, 5), 9: (3, 3), 15: (3, 5), 25: (5, 5)}


def _run_config(args) -> io.RunConfig:
    return io.load_config(args.config) if getattr(args, "config", None) else io.RunConfig()


def _annotation_path(args, cfg):
    path = args.annotations or cfg.annotations
    if not path:
        raise ValueError("no annotation file given (use --annotations or the 'annotations' config key)")
    return path


def _image_targets(cfg: io.RunConfig, aset: io.AnnotationSet):
    spec = cfg.anchor_spec()
    gt = aset.ground_truth()
    for img in aset.images:
        grid = grid_for_image(spec, img.width, img.height)
        alab = label_anchors(grid, gt[img.id], cfg.fg_thresh, cfg.bg_thresh)
        loc = assign_locations(alab, aset.num_classes, cfg.gamma)
        yield img, alab, loc


def cmd_assign(args) -> int:
    cfg = _run_config(args)
    aset = io.load_annotations(_annotation_path(args, cfg))
    lines = ["# L image_id location label", "# A image_id location anchor label max_iou"]
    for img, alab, loc in _image_targets(cfg, aset):
        lines += io.format_targets(img.id, loc.labels, alab.labels, alab.max_iou)
    out = args.out or cfg.output
    text = "\n".join(lines) + "\n"
    if out:
        io.atomic_write_text(out, text)
        print(f"wrote targets for {len(aset.images)} image(s) to {out}")
    else:
        sys.stdout.write(text)
    return 0


def _stats_lines(stats) -> list:
    return [
        f"anchor_pos = {stats.anchor_pos}",
        f"anchor_neg = {stats.anchor_neg}",
        f"location_pos = {stats.location_pos}",
        f"location_neg = {stats.location_neg}",
        f"anchor_ratio = {stats.anchor_ratio:.6g}",
        f"location_ratio = {stats.location_ratio:.6g}",
    ]


def cmd_stats(args) -> int:
    cfg = _run_config(args)
    total = None
    if args.synthetic:
        from .toytrain.data import LAYOUT_IMAGE_SIZE, NUM_CLASSES, sample_layout

        grid = grid_for_image(cfg.anchor_spec(), LAYOUT_IMAGE_SIZE, LAYOUT_IMAGE_SIZE)
        for i in range(args.synthetic):
            gt = sample_layout(cfg.seed, i)
            alab = label_anchors(grid, gt, cfg.fg_thresh, cfg.bg_thresh)
            loc = assign_locations(alab, NUM_CLASSES, cfg.gamma)
            s = imbalance_stats(alab.labels, loc.labels)
            total = s if total is None else total + s
    else:
        aset = io.load_annotations(_annotation_path(args, cfg))
        for _, alab, loc in _image_targets(cfg, aset):
            s = imbalance_stats(alab.labels, loc.labels)
            total = s if total is None else total + s
    if total is None:
        raise ValueError("no images")
    print(total.summary())
    out = args.out or cfg.output
    if out:
        io.atomic_write_text(out, "\n".join(_stats_lines(total)) + "\n")
    return 0


def _train_config(args):
    from .losses import LossConfig
    from .inference import InferenceConfig
    from .toytrain.train import TrainConfig

    scales, aspects = args.scales, args.aspects
    if args.K is not None:
        scales, aspects = K_LAYOUTS[args.K]
    return TrainConfig(
        seed=args.seed, steps=args.steps, lr=args.lr, momentum=args.momentum,
        clip_norm=args.clip_norm or None,
        batch_size=args.batch_size, num_images=args.images, num_test_images=args.test_images,
        difficulty=args.difficulty, num_classes=args.classes, num_scales=scales, num_aspects=aspects,
        assigner=args.assigner, gamma=args.gamma, ac_head=not args.no_ac,
        loss=LossConfig(sigma=args.sigma),
        inference=InferenceConfig(args.strategy, args.k, args.tau),
    )


def cmd_train_toy(args) -> int:
    from .toytrain import checkpoint
    from .toytrain.train import evaluate, test_scenes, train

    cfg = _train_config(args)
    log_lines = []

    def log(step, report):
        line = report.format(step)
        log_lines.append(line)
        if step % args.log_every == 0 or step == cfg.steps:
            print(line, flush=True)

    result = train(cfg, log=log)
    scenes = test_scenes(cfg)
    if cfg.ac_head:
        report = evaluate(result.model, scenes, cfg.inference)
    else:
        # no anchor classifier: best of 10 random anchor draws per location
        reports = [evaluate(result.model, scenes, cfg.inference, "random", np.random.default_rng([cfg.seed, r]))
                   for r in range(10)]
        report = max(reports, key=lambda r: r.ap)
    print(report.table())
    if args.out_dir:
        os.makedirs(args.out_dir, exist_ok=True)
        io.atomic_write_text(os.path.join(args.out_dir, "loss.log"), "\n".join(log_lines) + "\n")
        checkpoint.save(result.model, os.path.join(args.out_dir, "model.ckpt"))
        io.atomic_write_text(os.path.join(args.out_dir, "eval.txt"), "\n".join(report.to_lines()) + "\n")
        print(f"wrote loss.log, model.ckpt, eval.txt to {args.out_dir}")
    return 0


def cmd_infer(args) -> int:
    cfg = _run_config(args)
    infer = cfg.inference_config()
    if args.strategy:
        infer = replace(infer, strategy=args.strategy)
    if args.k is not None:
        infer = replace(infer, k=args.k)
    if args.tau is not None:
        infer = replace(infer, tau=args.tau)
    cats = io.load_annotations(args.annotations) if args.annotations else None
    parts = [postprocess(lp, ap, rb, infer, img) for img, lp, ap, rb in io.load_head_outputs(args.heads)]
    dets = Detections.concat(parts)
    out = args.out or cfg.output
    if out:
        io.write_detections(out, dets, cats)
        print(f"wrote {len(dets)} detection(s) to {out}")
    else:
        sys.stdout.write(io.format_detections(dets, cats))
    return 0


def cmd_eval(args) -> int:
    aset = io.load_annotations(args.annotations)
    dets = io.read_detections(args.detections, aset)
    report = map_report(dets, aset.ground_truth())
    print(report.table())
    if args.out:
        io.atomic_write_text(args.out, "\n".join(report.to_lines()) + "\n")
    return 0


def cmd_check_grad(args) -> int:
    from .gradcheck import run_all

    results = run_all(args.points, args.seed)
    for r in results:
        print(r.summary())
    return 0 if all(r.passed for r in results) else 1


def cmd_prop1(args) -> int:
    ok = True
    for k in range(1, args.K + 1):
        for c in range(1, args.C + 1):
            gammas = [Fraction(args.gamma)] if args.gamma is not None else sorted({Fraction(1, k + 1), Fraction(1, 2 * k)})
            for g in gammas:
                res = verify_proposition_1(k, c, g)
                print(res.summary())
                # only configurations meeting the premise are expected to pass
                ok &= res.passed or not res.premise
    print("all premise-satisfying cases hold" if ok else "proposition violated")
    return 0 if ok else 1


def cmd_ablate(args) -> int:
    from .toytrain.ablation import run_ablation
    from .toytrain.train import TrainConfig

    cfg = TrainConfig(steps=args.steps, lr=args.lr)
    result = run_ablation(args.axis, cfg, seeds=tuple(range(args.seeds)))
    print(result.table())
    print(f"elapsed {result.seconds:.1f}s")
    return 0


def _fraction(text):
    try:
        return Fraction(text)
    except (ValueError, ZeroDivisionError):
        raise argparse.ArgumentTypeError(f"not a number or fraction: {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="semianchor", description="Semi-anchored detection toolkit.")
    p.add_argument("--log-level", help=f"logging level (default: ${io.LOG_ENV} or WARNING)")
    sub = p.add_subparsers(dest="command", metavar="command")

    a = sub.add_parser("assign", help="dump location and anchor targets for an annotation file")
    a.add_argument("--annotations")
    a.add_argument("--config")
    a.add_argument("--out")
    a.set_defaults(func=cmd_assign)

    s = sub.add_parser("stats", help="positive/negative balance of anchors vs locations")
    s.add_argument("--annotations")
    s.add_argument("--synthetic", type=int, metavar="N", help="use N synthetic scenes instead")
    s.add_argument("--config")
    s.add_argument("--out")
    s.set_defaults(func=cmd_stats)

    t = sub.add_parser("train-toy", help="train the toy detector on synthetic scenes")
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--steps", type=int, default=300)
    t.add_argument("--lr", type=float, default=0.05)
    t.add_argument("--momentum", type=float, default=0.9)
    t.add_argument("--clip-norm", type=float, default=2.0, help="global gradient norm cap; 0 disables")
    t.add_argument("--batch-size", type=int)
    t.add_argument("--images", type=int, default=16)
    t.add_argument("--test-images", type=int, default=16)
    t.add_argument("--difficulty", type=int, default=1)
    t.add_argument("--classes", type=int, default=3)
    t.add_argument("--K", type=int, choices=sorted(K_LAYOUTS), help="anchors per location")
    t.add_argument("--scales", type=int, default=5)
    t.add_argument("--aspects", type=int, default=5, choices=(1, 3, 5))
    t.add_argument("--assigner", default="semi", choices=("semi", "fcos", "fcos-shrink"))
    t.add_argument("--gamma", type=float, help="threshold-moving gamma (default: simplified rule)")
    t.add_argument("--sigma", type=float, default=0.9)
    t.add_argument("--strategy", default="top_k", choices=("top_k", "pos"))
    t.add_argument("--k", type=int, default=1)
    t.add_argument("--tau", type=float, default=0.1)
    t.add_argument("--no-ac", action="store_true", help="disable the anchor classification head")
    t.add_argument("--log-every", type=int, default=50)
    t.add_argument("--out-dir")
    t.set_defaults(func=cmd_train_toy)

    i = sub.add_parser("infer", help="turn head outputs (.npz) into detections")
    i.add_argument("--heads", required=True)
    i.add_argument("--annotations", help="map classes back to category ids")
    i.add_argument("--config")
    i.add_argument("--strategy", choices=("top_k", "pos"))
    i.add_argument("--k", type=int)
    i.add_argument("--tau", type=float)
    i.add_argument("--out")
    i.set_defaults(func=cmd_infer)

    e = sub.add_parser("eval", help="score detections against annotations")
    e.add_argument("--detections", required=True)
    e.add_argument("--annotations", required=True)
    e.add_argument("--out")
    e.set_defaults(func=cmd_eval)

    g = sub.add_parser("check-grad", help="finite-difference checks of all gradients")
    g.add_argument("--points", type=int, default=100)
    g.add_argument("--seed", type=int, default=0)
    g.set_defaults(func=cmd_check_grad)

    r = sub.add_parser("prop1", help="check that any foreground anchor makes its location positive")
    r.add_argument("--K", type=int, default=4)
    r.add_argument("--C", type=int, default=3)
    r.add_argument("--gamma", type=_fraction, help="single gamma (default: 1/(K+1) and 1/(2K))")
    r.set_defaults(func=cmd_prop1)

    b = sub.add_parser("ablate", help="paired-seed ablation on the synthetic benchmark")
    b.add_argument("axis", choices=("ac_head", "strategy", "sigma", "gamma", "K", "assigner"))
    b.add_argument("--seeds", type=int, default=3, help="number of paired seeds, starting at 0")
    b.add_argument("--steps", type=int, default=300)
    b.add_argument("--lr", type=float, default=0.05)
    b.set_defaults(func=cmd_ablate)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command is None:
        parser.print_usage(sys.stderr)
        return 2
    io.configure_logging(args.log_level)
    try:
        return args.func(args)
    except (ValueError, OSError, KeyError) as e:
        print(f"semianchor {args.command}: error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
