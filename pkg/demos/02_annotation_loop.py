"""Run the whole annotation loop against a simulated annotator.

Generates a small labelled dataset on disk, spends a fixed click budget
per round, and reports how validation mIoU moves as rounds complete.
Artifacts land under demos/out/loop so you can poke at them afterwards:
state.json, queries.json, and per-round probability maps, merged
segmentations, sieved datasets, and model checkpoints.
"""

import shutil
from pathlib import Path

from segal.loop import AnnotationLoop, RunConfig, loop_status, resume
from segal.model import predict
from segal.raster import LabelMap, load_image, save_label_map
from segal.synthetic import ShapesConfig, generate_shapes

OUT = Path(__file__).parent / "out" / "loop"


def main() -> None:
    shutil.rmtree(OUT, ignore_errors=True)
    data_dir = OUT / "shapes"
    train_manifest, val_manifest = generate_shapes(
        data_dir, ShapesConfig(num_train=8, num_val=3, size=48, seed=1)
    )
    print(f"dataset: 8 train + 3 val images under {data_dir}")

    cfg = RunConfig(
        run_dir=OUT / "run",
        train_manifest=train_manifest,
        val_manifest=val_manifest,
        budget=20,
        rounds=2,
        seed=1,
    )
    engine = AnnotationLoop(cfg)

    print(f"\nwarm-up: {cfg.budget} random superpixels, no sieving")
    engine.warmup()
    print(f"  validation mIoU after warm-up: {engine.validation_miou():.4f}")

    for t in range(1, cfg.rounds + 1):
        engine.run_round(t)
        print(f"round {t}: {cfg.budget} more clicks -> mIoU {engine.validation_miou():.4f}")

    print("\nrun status:", loop_status(cfg.run_dir))

    # a finished run resumes as a no-op; an interrupted one picks up mid-round
    state = resume(cfg.run_dir / "state.json")
    print(f"resume on a finished run: still at round {state.round}, nothing redone")

    # render the final model's prediction for the first training image
    image = load_image(data_dir / "images" / "train_000.png")
    probs = predict(engine.state.model, image)
    pred = probs.planes.argmax(axis=0)
    out_png = OUT / "prediction_train_000.png"
    save_label_map(
        LabelMap(width=48, height=48, data=pred, ignore_id=255, num_classes=4),
        out_png,
    )
    print(f"wrote {out_png} (class ids as grayscale)")


if __name__ == "__main__":
    main()
