"""Which achievable metric predicts downstream accuracy?

Sweeps base-segmentation granularity (grid and slic at several target
region sizes), trains a classifier from dominant-label annotations at a
fixed click budget under each configuration, and correlates the achievable
metrics of the segmentation with the resulting validation mIoU.

Coarse regions are cheap to label but smear multiple objects into one
dominant label; fine regions are faithful but starve the classifier at a
fixed budget.  The interesting question is which segmentation-quality
metric tracks that trade-off -- the study prints the full ranking.
"""

from pathlib import Path

from segal.experiments import (
    METRIC_COLUMNS,
    granularity_sweep,
    metric_correlations,
    write_sweep_csv,
)

OUT = Path(__file__).parent / "out"
SEEDS = (0, 1, 2)


def main() -> None:
    OUT.mkdir(parents=True, exist_ok=True)
    rows = []
    for seed in SEEDS:
        print(f"sweeping 11 segmentation configs on dataset seed {seed} ...")
        rows.extend(granularity_sweep(seed))

    csv_path = OUT / "sweep.csv"
    write_sweep_csv(rows, csv_path)
    print(f"\nwrote {len(rows)} rows to {csv_path}")

    print("\nper-config accuracy (seed 0):")
    print(f"  {'config':>12}  {'asa_sg':>7}  {'af_gs':>7}  {'miou':>7}")
    for row in rows[: len(rows) // len(SEEDS)]:
        name = f"{row['algo']}/{int(row['region_size'])}"
        print(
            f"  {name:>12}  {row['asa_sg']:7.3f}  {row['af_gs']:7.3f}"
            f"  {row['miou']:7.3f}"
        )

    print("\ncorrelation of each achievable metric with mIoU:")
    ranked = sorted(metric_correlations(rows).items(), key=lambda kv: -kv[1])
    for name, value in ranked:
        bar = "#" * max(0, int(round((value + 1) * 12)))
        print(f"  {name:>7}  {value:+.3f}  {bar}")

    best = ranked[0][0]
    print(
        f"\n'{best}' tracks downstream accuracy best here; plain ASA rewards"
        "\ncoarse segmentations that hit their accuracy ceiling early."
    )


if __name__ == "__main__":
    main()
