"""Command-line front end over the library; one subcommand per pipeline stage."""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from . import experiments, merge, metrics, model as model_mod, sieve
from .baseseg import SlicConfig, grid_segmentation, slic
from .loop import (
    LoopError,
    QueryRecord,
    load_engine,
    load_run_config,
    loop_status,
    resume,
    run_loop,
)
from .oracle import oracle_superpixels
from .raster import (
    load_dataset,
    load_image,
    load_label_map,
    load_prob_map,
    load_segmentation,
    save_prob_map,
    save_segmentation,
)


def _cmd_segment(args) -> int:
    dataset = load_dataset(args.manifest)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for entry in dataset.images:
        img = load_image(entry.image_path)
        if args.algo == "grid":
            cell = max(1, round(args.size ** 0.5))
            seg = grid_segmentation(img.shape[1], img.shape[0], cell)
        else:
            seg = slic(
                img,
                SlicConfig(
                    target_region_size=args.size,
                    compactness=args.compactness,
                    iterations=args.iters,
                ),
            )
        path = out / f"{entry.image_id:04d}.seg"
        save_segmentation(seg, path)
        print(f"{entry.image_id}\t{seg.num_regions} regions\t{path}")
    return 0


def _cmd_merge(args) -> int:
    seg = load_segmentation(args.seg)
    probs = load_prob_map(args.probs)
    merged = merge.adaptive_merge(
        seg, probs, merge.MergeConfig(epsilon=args.epsilon, merge_fraction=args.fraction)
    )
    save_segmentation(merged, args.out)
    print(f"{seg.num_regions} -> {merged.num_regions} regions\t{args.out}")
    return 0


def _cmd_select(args) -> int:
    engine = load_engine(Path(args.run_dir) / "state.json")
    t = args.round
    if t != engine.state.round + 1:
        raise LoopError(
            f"round {t} not selectable from completed round {engine.state.round}"
        )
    engine.ensure_base_segmentations()
    engine.round_dir(t).mkdir(parents=True, exist_ok=True)
    probs = engine._round_probs(t, strict=False)
    if engine.cfg.strategy == "amsp_s":
        _, ranked = engine._ranked_amsp(t, probs, resuming=False)
    else:
        _, ranked = engine._ranked_random(t)
    segs = engine.base_segs if engine.cfg.strategy == "random" else None
    batch = []
    for image_id, region_id in ranked[: args.budget]:
        if segs is not None:
            size = int(np.count_nonzero(segs[image_id].region_ids == region_id))
        else:
            seg = load_segmentation(engine._merged_path(t, image_id))
            size = int(np.count_nonzero(seg.region_ids == region_id))
        batch.append(
            {"image_id": image_id, "region_id": region_id, "pixel_count": size}
        )
    text = json.dumps(batch, indent=2)
    if args.out:
        Path(args.out).write_text(text)
    else:
        print(text)
    return 0


def _cmd_sieve(args) -> int:
    queries = [
        QueryRecord.from_json(doc)
        for doc in json.loads(Path(args.queries).read_text())
    ]
    probs_dir = Path(args.probs_dir)
    probs = {}
    for q in queries:
        if q.image_id not in probs:
            path = probs_dir / f"probs_{q.image_id:04d}.ppf"
            if not path.exists():
                raise LoopError(f"missing probability map {path}")
            probs[q.image_id] = load_prob_map(path)
    dataset = sieve.build_sieved_dataset(
        queries,
        probs,
        sieve.SieveConfig(
            sample_count=args.sample_count, min_pixels_for_knee=args.min_pixels
        ),
        num_classes=args.num_classes,
    )
    sieve.save_sieved(dataset, args.out)
    print(f"{len(dataset)} records\t{args.out}")
    return 0


def _cmd_oracle(args) -> int:
    gt_dir = Path(args.gt_dir)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for path in sorted(gt_dir.glob("*.png")):
        gt = load_label_map(path, args.num_classes, args.ignore_id)
        seg = oracle_superpixels(gt)
        target = out / (path.stem + ".seg")
        save_segmentation(seg, target)
        print(f"{path.name}\t{seg.num_regions} regions\t{target}")
    return 0


def _cmd_evaluate(args) -> int:
    if len(args.seg) != len(args.oracle):
        raise SystemExit("need as many --seg as --oracle")
    names = ["image", *experiments.METRIC_COLUMNS]
    rows = []
    triples = []
    for seg_path, oracle_path in zip(args.seg, args.oracle):
        s = load_segmentation(seg_path)
        g = load_segmentation(oracle_path)
        triples.append((s, g, None))
        values = metrics.achievable_metrics(s, g)
        rows.append({"image": Path(seg_path).stem, **values})
    agg = metrics.dataset_achievable_metrics(triples)
    rows.append({"image": "aggregate", **agg})
    with open(args.report, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=names)
        writer.writeheader()
        writer.writerows(rows)
    print(f"{len(rows) - 1} image(s) + aggregate\t{args.report}")
    return 0


def _cmd_correlate(args) -> int:
    rows = experiments.read_sweep_csv(args.csv)
    correlations = experiments.metric_correlations(rows)
    ranked = sorted(correlations.items(), key=lambda kv: -kv[1])
    for name, value in ranked:
        print(f"{name}\t{value:+.4f}")
    if args.report:
        with open(args.report, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["metric", "correlation"])
            writer.writerows(ranked)
    return 0


def _cmd_train(args) -> int:
    dataset = sieve.load_sieved(args.dataset, num_classes=args.num_classes)
    manifest = load_dataset(args.manifest)
    images = {e.image_id: load_image(e.image_path) for e in manifest.images}
    cfg = model_mod.TrainConfig(
        learning_rate=args.learning_rate,
        epochs=args.epochs,
        batch_size=args.batch_size,
        seed=args.seed,
    )
    params = model_mod.train(dataset, images, cfg=cfg)
    model_mod.save_model(params, args.out)
    print(f"{len(dataset)} samples -> {args.out}")
    return 0


def _cmd_predict(args) -> int:
    params = model_mod.load_model(args.model)
    img = load_image(args.image)
    save_prob_map(model_mod.predict(params, img), args.out)
    print(f"{args.out}")
    return 0


def _cmd_loop(args) -> int:
    if args.loop_cmd == "run":
        cfg = load_run_config(args.config)
        if args.partial:
            from dataclasses import replace

            cfg = replace(cfg, partial=True)
        if cfg.oracle == "human":
            from .service import serve_loop

            serve_loop(cfg)
            return 0
        state = run_loop(cfg)
        print(f"completed round {state.round}, clicks {state.clicks_spent}")
        return 0
    if args.loop_cmd == "resume":
        state = resume(args.state)
        print(f"completed round {state.round}, clicks {state.clicks_spent}")
        return 0
    status = loop_status(args.run_dir)
    print(json.dumps(status, indent=2))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="segal", description="superpixel active-labeling toolkit"
    )
    sub = parser.add_subparsers(dest="cmd", required=True)

    p = sub.add_parser("segment", help="base superpixels for a dataset manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--algo", choices=("slic", "grid"), default="slic")
    p.add_argument("--size", type=int, default=64, help="target region size, pixels")
    p.add_argument("--compactness", type=float, default=10.0)
    p.add_argument("--iters", type=int, default=5)
    p.add_argument("-o", "--out", required=True, help="output directory for .seg files")
    p.set_defaults(fn=_cmd_segment)

    p = sub.add_parser("merge", help="merge prediction-similar adjacent regions")
    p.add_argument("--seg", required=True)
    p.add_argument("--probs", required=True)
    p.add_argument("--epsilon", type=float, required=True)
    p.add_argument("--fraction", type=float, default=1.0)
    p.add_argument("-o", "--out", required=True)
    p.set_defaults(fn=_cmd_merge)

    p = sub.add_parser("select", help="rank and pick the next query batch of a run")
    p.add_argument("--run-dir", required=True)
    p.add_argument("--round", type=int, required=True)
    p.add_argument("--budget", type=int, required=True)
    p.add_argument("-o", "--out")
    p.set_defaults(fn=_cmd_select)

    p = sub.add_parser("sieve", help="confidence-filter answered queries")
    p.add_argument("--queries", required=True, help="queries.json from a run")
    p.add_argument("--probs-dir", required=True)
    p.add_argument("--num-classes", type=int, required=True)
    p.add_argument("--sample-count", type=int, default=20)
    p.add_argument("--min-pixels", type=int, default=5)
    p.add_argument("-o", "--out", required=True)
    p.set_defaults(fn=_cmd_sieve)

    p = sub.add_parser("oracle", help="ground-truth connected components as SEG1")
    p.add_argument("--gt-dir", required=True)
    p.add_argument("--num-classes", type=int, required=True)
    p.add_argument("--ignore-id", type=int, default=255)
    p.add_argument("-o", "--out", required=True)
    p.set_defaults(fn=_cmd_oracle)

    p = sub.add_parser("evaluate", help="achievable metrics of segmentations vs oracle")
    p.add_argument("--seg", action="append", required=True)
    p.add_argument("--oracle", action="append", required=True)
    p.add_argument("--report", required=True, help="output CSV")
    p.set_defaults(fn=_cmd_evaluate)

    p = sub.add_parser("correlate", help="rank metrics by correlation with mIoU")
    p.add_argument("--csv", required=True, help="sweep CSV with metric and miou columns")
    p.add_argument("--report")
    p.set_defaults(fn=_cmd_correlate)

    p = sub.add_parser("train", help="fit the pixel classifier on a sieved dataset")
    p.add_argument("--dataset", required=True, help="SVD1 file")
    p.add_argument("--manifest", required=True)
    p.add_argument("--num-classes", type=int, required=True)
    p.add_argument("--learning-rate", type=float, default=0.5)
    p.add_argument("--epochs", type=int, default=60)
    p.add_argument("--batch-size", type=int, default=256)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("-o", "--out", required=True)
    p.set_defaults(fn=_cmd_train)

    p = sub.add_parser("predict", help="write a PPF1 probability map for an image")
    p.add_argument("--model", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("-o", "--out", required=True)
    p.set_defaults(fn=_cmd_predict)

    p = sub.add_parser("loop", help="run, resume, or inspect an annotation loop")
    loop_sub = p.add_subparsers(dest="loop_cmd", required=True)
    q = loop_sub.add_parser("run")
    q.add_argument("--config", required=True)
    q.add_argument("--partial", action="store_true", help="accept smaller batches on skips")
    q.set_defaults(fn=_cmd_loop)
    q = loop_sub.add_parser("resume")
    q.add_argument("--state", required=True)
    q.set_defaults(fn=_cmd_loop)
    q = loop_sub.add_parser("status")
    q.add_argument("--run-dir", required=True)
    q.set_defaults(fn=_cmd_loop)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (LoopError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
