"""Walk one image through the query pipeline, stage by stage.

Segment an image into base superpixels, train a quick classifier on a
handful of randomly chosen regions, merge regions whose predicted class
distributions agree, and rank the survivors by how much a label for them
would help.  Everything stays in memory; run it and read the printout.
"""

import numpy as np

from segal import acquisition, merge
from segal.baseseg import SlicConfig, slic
from segal.experiments import train_on_random_regions
from segal.model import TrainConfig, predict
from segal.raster import LabelMap
from segal.sieve import KEEP_ALL, sieve_superpixel
from segal.synthetic import ShapesConfig, in_memory_shapes


def main() -> None:
    cfg = ShapesConfig(num_train=1, num_val=1, seed=3)
    train, _ = in_memory_shapes(cfg)
    image, labels = train[0]

    print("== base segmentation ==")
    base = slic(image, SlicConfig(target_region_size=64))
    print(f"{cfg.size}x{cfg.size} image -> {base.num_regions} superpixels")

    print("\n== a deliberately under-trained classifier ==")
    gt = LabelMap(
        width=cfg.size, height=cfg.size, data=labels,
        ignore_id=255, num_classes=cfg.num_classes,
    )
    params = train_on_random_regions(
        images={0: image}, gts={0: gt}, segs={0: base},
        budget=12, seed=0, num_classes=cfg.num_classes,
        tcfg=TrainConfig(epochs=60, seed=0),
    )
    probs = predict(params, image)
    print(f"trained on 12 of {base.num_regions} regions; the rest is guesswork")

    print("\n== merging prediction-similar neighbors ==")
    merged = merge.adaptive_merge(base, probs, merge.MergeConfig(epsilon=0.10))
    print(f"epsilon=0.10 folds {base.num_regions} regions into {merged.num_regions}")

    print("\n== ranking candidate queries ==")
    stats = merge.region_stats(merged, probs)
    popularity = acquisition.class_popularity([stats], cfg.num_classes)
    print("predicted class share:", np.round(popularity.values, 3))
    candidates = acquisition.rank_candidates(
        acquisition.score_candidates({0: stats}, popularity)
    )
    print("top five queries (uncertain regions of under-represented classes):")
    for cand in candidates[:5]:
        st = cand.stats
        print(
            f"  region {cand.region_id:3d}  score={cand.score:.3f}"
            f"  uncertainty={st.uncertainty:.3f}"
            f"  dominant=class_{st.predicted_dominant}  {st.pixel_count}px"
        )

    print("\n== sieving one noisy region ==")
    best = candidates[0]
    pixels = np.flatnonzero(merged.region_ids.ravel() == best.region_id)
    result = sieve_superpixel(pixels, best.stats.predicted_dominant, probs)
    if result.threshold is KEEP_ALL:
        print(f"region {best.region_id}: confidence curve has no knee, kept whole")
    else:
        print(
            f"region {best.region_id}: kept {result.kept_pixels.size}"
            f"/{pixels.size} pixels above confidence {result.threshold:.3f}"
        )


if __name__ == "__main__":
    main()
