"""Command-line interface.

Subcommands: generate (synthetic dataset), train (feature extractor),
explain (heatmap + red ratio for one image), features (dataset -> CSV),
fit (CSV -> classifier file), benchmark (experiment grid -> report).
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from . import dataset as ds
from . import pipeline as pl
from .classifiers import load_classifier, read_feature_csv, save_classifier
from .config import ExperimentConfig
from .gradcam import heatmap_to_csv, heatmap_to_pgm
from .heatmap_analysis import colorize, overlay, rgb_to_ppm
from .models import (ModelSpec, TrainConfig, build_model, freeze, history_to_csv,
                     load_frozen, predict_scores, train)
from .netpbm import read_ppm
from .optim import OptimizerConfig
from .report import render_all


def _cmd_generate(args):
    variant = pl.VARIANTS[args.variant]
    cfg = ds.DatasetConfig(total=args.count, nok_fraction=args.nok_fraction,
                           kind_mix=variant.kind_mix, split_ratio=args.split_ratio,
                           master_seed=args.seed, geometry=variant.geometry,
                           defect_contrast=variant.defect_contrast)
    images = ds.generate(cfg)
    train_set, test_set = ds.split(images, cfg)
    if variant.bias_plan is not None:
        train_set, test_set = pl.apply_bias_plan(train_set, test_set,
                                                 variant.bias_plan, args.seed)
    ordered = train_set + test_set
    splits = {i: ("train" if i < len(train_set) else "test") for i in range(len(ordered))}
    ds.export_dataset(ordered, args.out, splits=splits)
    print(f"wrote {len(train_set)} train / {len(test_set)} test images to {args.out}")
    return 0


def _load_split(data_dir, split):
    images = ds.import_dataset(data_dir, split_filter=split if split != "all" else None)
    if not images:
        raise SystemExit(f"no {split!r} images found in {data_dir}")
    return images


def _cmd_train(args):
    images = _load_split(args.data, "train")
    if args.balance > 1:
        images = ds.oversample_nok(images, args.balance, args.seed)
    x = np.stack([img.pixels for img in images])
    y = np.array([1 if img.label == ds.NOK else 0 for img in images])
    extractor = build_model(ModelSpec(family=args.family), seed=args.seed)
    extractor.dataset_digest = ds.dataset_digest(images)
    optimizer = OptimizerConfig(kind=args.optimizer, learning_rate=args.lr)
    history = train(extractor, x, y,
                    TrainConfig(optimizer=optimizer, batch_size=args.batch_size,
                                epochs=args.epochs, seed=args.seed))
    freeze(extractor, args.out)
    history_to_csv(history, args.out + ".history.csv")
    last = history[-1]
    print(f"trained {args.family}: final loss {last.loss:.4f}, "
          f"accuracy {last.accuracy:.3f}; model -> {args.out}")
    return 0


def _cmd_explain(args):
    extractor = load_frozen(args.model)
    pixels = read_ppm(args.image)
    scores, rcr, heat = pl.image_features(extractor, pixels)
    os.makedirs(args.out_dir, exist_ok=True)
    stem = os.path.join(args.out_dir, os.path.splitext(os.path.basename(args.image))[0])
    heatmap_to_pgm(heat, stem + "_heat.pgm")
    heatmap_to_csv(heat, stem + "_heat.csv")
    rgb = colorize(heat)
    rgb_to_ppm(rgb, stem + "_heat.ppm")
    rgb_to_ppm(overlay(rgb, pixels), stem + "_overlay.ppm")
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    plt.imsave(stem + "_heat.png", rgb.pixels)
    decided = pl.decide_old(scores)
    print(f"scores: OK={scores.score_ok:.4f} NOK={scores.score_nok:.4f} "
          f"({scores.kind}); red ratio {rcr:.2f}%; argmax decision {decided}")
    return 0


def _cmd_features(args):
    extractor = load_frozen(args.model)
    images = _load_split(args.data, args.split)
    table = pl.extract_features(extractor, images, split=args.split)
    table.to_csv(args.out)
    print(f"wrote {len(images)} feature rows to {args.out}")
    return 0


def _cmd_fit(args):
    x, y = read_feature_csv(args.features)
    table = pl.FeatureTable(ids=[str(i) for i in range(len(x))], x=x, y=y)
    exp = ExperimentConfig(gbt_rounds=args.gbt_rounds, svm_c=args.svm_c)
    hybrid = pl.fit_hybrid(args.kind, table, exp)
    meta = {"classifier": args.kind}
    if hybrid.scaler is not None:
        meta["scaler_mean"] = hybrid.scaler.mean.tolist()
        meta["scaler_std"] = hybrid.scaler.std.tolist()
    save_classifier(hybrid.model, args.out, extra_meta=meta)
    hits = sum(1 for row, label in zip(x, y) if hybrid.classify_row(row)[0] == label)
    print(f"fit {args.kind} on {len(x)} rows; training accuracy {hits / len(x):.3f}; "
          f"model -> {args.out}")
    return 0


def _cmd_benchmark(args):
    exp = ExperimentConfig.from_file(args.config) if args.config else ExperimentConfig()
    report = pl.run_experiment(exp)
    paths = render_all(report, args.out_dir)
    sys.stdout.write(open(paths[2]).read())
    print(f"artifacts: {', '.join(paths)}")
    if args.check:
        failures = pl.check_report(report)
        if failures:
            for f in failures:
                print(f"CHECK FAIL: {f}")
            return 1
        print("CHECK PASS: hybrid path matched or beat the argmax path on every "
              "seed and improved on average where the confounder was injected")
    return 0


def main(argv=None):
    parser = argparse.ArgumentParser(prog="weldsight",
                                     description="weld-seam inspection pipeline")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="render a synthetic weld dataset")
    p.add_argument("--variant", default="weld1", choices=sorted(pl.VARIANTS))
    p.add_argument("--count", type=int, default=200)
    p.add_argument("--nok-fraction", type=float, default=0.1)
    p.add_argument("--split-ratio", type=float, default=0.8)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_generate)

    p = sub.add_parser("train", help="train a feature extractor on a dataset directory")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--family", default="mini_mobilenet",
                   choices=["mini_mobilenet", "mini_resnet"])
    p.add_argument("--epochs", type=int, default=8)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--optimizer", default="rmsprop", choices=["sgd", "adam", "rmsprop"])
    p.add_argument("--lr", type=float, default=0.003)
    p.add_argument("--balance", type=int, default=4,
                   help="oversample defective images by this factor")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("explain", help="heatmap and red ratio for one image")
    p.add_argument("--model", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--out-dir", default=".")
    p.set_defaults(func=_cmd_explain)

    p = sub.add_parser("features", help="extract (score, score, rcr) rows to CSV")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", default="all", choices=["train", "test", "all"])
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_features)

    p = sub.add_parser("fit", help="fit a decision-stage classifier from a feature CSV")
    p.add_argument("--features", required=True)
    p.add_argument("--kind", required=True,
                   choices=["tree", "gbt", "svm_linear", "svm_poly5"])
    p.add_argument("--out", required=True)
    p.add_argument("--gbt-rounds", type=int, default=30)
    p.add_argument("--svm-c", type=float, default=5.0)
    p.set_defaults(func=_cmd_fit)

    p = sub.add_parser("benchmark", help="run the experiment grid and render the report")
    p.add_argument("--config", default=None)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--check", action="store_true",
                   help="exit nonzero unless the hybrid path holds its gate")
    p.set_defaults(func=_cmd_benchmark)

    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
