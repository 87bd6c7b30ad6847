"""Command-line entry point.

Subcommands: summarize, gradcheck, gen-data, train, eval, predict, bench.
Exit codes: 0 success, 2 usage/input error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import os
import sys
import time

import numpy as np

from . import checkpoint, data, figures, gradcheck, model, train as training
from .tensor import NumericError, ShapeError, Tensor


def _build_net(classes, height, width, seed):
    return model.build_lednet(classes, height, width, seed=seed)


def cmd_summarize(args):
    net = _build_net(args.classes, args.height, args.width, args.seed)
    trace = net.shape_trace(args.height, args.width)
    report = model.count_params(net, args.height, args.width)

    print("stage\tchannels\theight\twidth")
    for label, (c, h, w) in trace:
        print(f"{label}\t{c}\t{h}\t{w}")
    print()
    print("layer\tparams\tmacs")
    for row in report.rows:
        print(f"{row.name}\t{row.params}\t{row.macs}")
    print()
    print(f"total_params\t{report.total_params}")
    print(f"total_macs\t{report.total_macs}")
    print(f"pointwise_macs\t{report.pointwise_macs}")

    if args.outdir:
        os.makedirs(args.outdir, exist_ok=True)
        with open(os.path.join(args.outdir, "summary.tsv"), "w") as f:
            f.write("layer\tparams\tmacs\n")
            for row in report.rows:
                f.write(f"{row.name}\t{row.params}\t{row.macs}\n")
            f.write(f"total\t{report.total_params}\t{report.total_macs}\n")
        figures.save_cost_chart(report.rows, os.path.join(args.outdir, "params_by_layer.png"))

    if args.table1:
        mismatches = model.check_table1(net, args.classes)
        if mismatches:
            for m in mismatches:
                print(f"table1 mismatch: {m}", file=sys.stderr)
            return 1
        print("table1: all stage shapes conform")
    return 0


def cmd_gradcheck(args):
    results = gradcheck.run_suite(seed=args.seed, trials=args.trials, corrupt=args.corrupt)
    ok = True
    for name, err in results:
        status = "PASS" if err < gradcheck.TOLERANCE else "FAIL"
        ok = ok and err < gradcheck.TOLERANCE
        print(f"{status}\t{name}\tmax_rel_err={err:.3e}")
    print(f"gradcheck: {'all passed' if ok else 'FAILURES detected'} (tolerance {gradcheck.TOLERANCE:g})")
    return 0 if ok else 1


def cmd_gen_data(args):
    cfg = data.SceneConfig(num_classes=args.classes, height=args.height,
                           width=args.width, noise_std=args.noise_std, seed=args.seed)
    data.save_dataset(args.out, cfg, args.count)
    print(f"wrote {args.count} samples to {args.out}")
    return 0


def cmd_train(args):
    cfg_scene, samples = data.load_dataset(args.data)
    net = _build_net(cfg_scene.num_classes, cfg_scene.height, cfg_scene.width, args.seed)
    cfg = training.TrainConfig(max_iter=args.max_iter or max(args.iters, 1),
                               batch_size=args.batch_size,
                               eval_every=args.eval_every)
    os.makedirs(args.out, exist_ok=True)
    log_path = os.path.join(args.out, "metrics.log")
    with open(log_path, "w") as log_file:
        lines = training.train(net, samples, args.iters, args.seed, cfg,
                               log=lambda line: print(line, file=log_file))
    checkpoint.save(os.path.join(args.out, "checkpoint.lednet"), net.named_parameters())
    if lines:
        figures.save_training_curves(lines, os.path.join(args.out, "training_curves.png"))
    print(f"trained {args.iters} iterations; wrote {args.out}")
    return 0


def cmd_eval(args):
    cfg_scene, samples = data.load_dataset(args.data)
    net = _build_net(cfg_scene.num_classes, cfg_scene.height, cfg_scene.width, 0)
    checkpoint.load_into(args.checkpoint, net)
    cm = training.evaluate(net, samples, cfg_scene.num_classes)
    per_class, miou = cm.iou()
    print(f"miou={miou:.6f} pixacc={cm.pixel_accuracy():.6f}")
    for c, iou in enumerate(per_class):
        print(f"class_iou {c}={'absent' if iou is None else f'{iou:.6f}'}")
    if args.outdir:
        os.makedirs(args.outdir, exist_ok=True)
        with open(os.path.join(args.outdir, "eval.tsv"), "w") as f:
            f.write("class\tiou\n")
            for c, iou in enumerate(per_class):
                f.write(f"{c}\t{'' if iou is None else f'{iou:.6f}'}\n")
        figures.save_iou_bars(per_class, os.path.join(args.outdir, "per_class_iou.png"))
    return 0


def cmd_predict(args):
    cfg_scene, samples = data.load_dataset(args.data)
    net = _build_net(cfg_scene.num_classes, cfg_scene.height, cfg_scene.width, 0)
    checkpoint.load_into(args.checkpoint, net)
    training.calibrate_bn(net, np.stack([s[0] for s in samples[:16]]))
    palette = data.palette_for(cfg_scene)
    os.makedirs(args.out, exist_ok=True)
    for i, (image, _) in enumerate(samples):
        pred = training.predict_labels(net, image[None])[0]
        data.write_ppm(os.path.join(args.out, f"pred_{i:05d}.ppm"),
                       data.colorize(pred, palette))
    print(f"wrote {len(samples)} predictions to {args.out}")
    return 0


def cmd_bench(args):
    net = _build_net(args.classes, args.height, args.width, args.seed)
    x = Tensor(np.random.default_rng(args.seed).uniform(
        0, 1, size=(1, 3, args.height, args.width)).astype(np.float32))
    out = net.forward(x)  # warmup
    print(f"output shape: {tuple(out.shape)}")
    times = []
    for _ in range(args.repeats):
        t0 = time.perf_counter()
        net.forward(x)
        times.append((time.perf_counter() - t0) * 1000.0)
    mean_ms = sum(times) / len(times)
    print(f"repeats={args.repeats} mean_ms={mean_ms:.2f} min_ms={min(times):.2f} "
          f"fps={1000.0 / mean_ms:.2f}")
    return 0


def build_parser():
    parser = argparse.ArgumentParser(prog="lednet")
    sub = parser.add_subparsers(dest="command", required=True)

    def size_args(p):
        p.add_argument("--classes", type=int, default=20)
        p.add_argument("--height", type=int, default=512)
        p.add_argument("--width", type=int, default=1024)
        p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("summarize", help="stage shapes, parameter and MAC counts")
    size_args(p)
    p.add_argument("--table1", action="store_true",
                   help="verify the 512x1024 shape plan against the built-in expectation")
    p.add_argument("--outdir", help="also write summary.tsv and a layer-cost figure")
    p.set_defaults(fn=cmd_summarize)

    p = sub.add_parser("gradcheck", help="finite-difference check of every op")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--trials", type=int, default=5)
    p.add_argument("--corrupt", help=argparse.SUPPRESS)
    p.set_defaults(fn=cmd_gradcheck)

    p = sub.add_parser("gen-data", help="generate a synthetic dataset directory")
    p.add_argument("--out", required=True)
    p.add_argument("--count", type=int, default=10)
    p.add_argument("--classes", type=int, default=4)
    p.add_argument("--height", type=int, default=64)
    p.add_argument("--width", type=int, default=128)
    p.add_argument("--noise-std", type=float, default=0.02)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=cmd_gen_data)

    p = sub.add_parser("train", help="train on a dataset directory")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--iters", type=int, default=500)
    p.add_argument("--max-iter", type=int, default=None)
    p.add_argument("--batch-size", type=int, default=5)
    p.add_argument("--eval-every", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a dataset")
    p.add_argument("--data", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--outdir", help="also write eval.tsv and a per-class IoU figure")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("predict", help="write colorized predictions")
    p.add_argument("--data", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_predict)

    p = sub.add_parser("bench", help="forward-pass latency of this implementation")
    size_args(p)
    p.add_argument("--repeats", type=int, default=5)
    p.set_defaults(fn=cmd_bench)

    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 3
    except (ShapeError, ValueError, FileNotFoundError, checkpoint.CheckpointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
