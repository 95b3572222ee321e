import math

import numpy as np
import pytest

from segal.acquisition import (
    Candidate,
    ClassPopularity,
    acquisition_score,
    class_popularity,
    eligible_region_mask,
    pixel_uncertainty,
    rank_candidates,
    score_candidates,
    select_batch,
)
from segal.merge import RegionStats
from segal.raster import segmentation_from_ids


def make_stats(region_id, pixel_count, uncertainty, dominant, c=3):
    mean = np.full(c, 0.1)
    mean[dominant] = 1.0
    mean /= mean.sum()
    return RegionStats(
        region_id=region_id,
        pixel_count=pixel_count,
        mean_prob=mean,
        uncertainty=uncertainty,
        predicted_dominant=dominant,
    )


class TestClassPopularity:
    def test_pixel_weighted_shares(self):
        stats = [
            [make_stats(0, 30, 0.2, 0), make_stats(1, 10, 0.5, 1)],
            [make_stats(0, 60, 0.9, 0)],
        ]
        pop = class_popularity(stats, num_classes=3)
        assert pop.of(0) == pytest.approx(0.9)
        assert pop.of(1) == pytest.approx(0.1)
        assert pop.of(2) == pytest.approx(0.0)

    def test_needs_regions(self):
        with pytest.raises(ValueError):
            class_popularity([], num_classes=2)

    def test_values_must_sum_to_one(self):
        with pytest.raises(ValueError):
            ClassPopularity(values=np.array([0.5, 0.4]))


class TestScore:
    def test_formula(self):
        pop = ClassPopularity(values=np.array([0.75, 0.25]))
        s = make_stats(0, 5, 0.4, 1, c=2)
        assert acquisition_score(s, pop) == pytest.approx(0.4 * math.exp(-0.25))

    def test_popularity_discounts(self):
        pop = ClassPopularity(values=np.array([0.9, 0.1]))
        popular = make_stats(0, 5, 0.5, 0, c=2)
        rare = make_stats(1, 5, 0.5, 1, c=2)
        assert acquisition_score(rare, pop) > acquisition_score(popular, pop)

    def test_pixel_uncertainty_scalar(self):
        assert pixel_uncertainty(np.array([0.6, 0.3, 0.1])) == pytest.approx(0.5)

    def test_score_candidates_orders_by_image(self):
        pop = ClassPopularity(values=np.array([1.0, 0.0]))
        per_image = {
            4: [make_stats(0, 5, 0.1, 0, c=2)],
            1: [make_stats(0, 5, 0.9, 0, c=2)],
        }
        cands = score_candidates(per_image, pop)
        assert [c.image_id for c in cands] == [1, 4]


class TestRanking:
    def test_descending_score_then_ids(self):
        cands = [
            Candidate(image_id=1, region_id=5, stats=None, score=0.5),
            Candidate(image_id=0, region_id=9, stats=None, score=0.5),
            Candidate(image_id=0, region_id=2, stats=None, score=0.5),
            Candidate(image_id=2, region_id=0, stats=None, score=0.9),
        ]
        ranked = rank_candidates(cands)
        assert [(c.image_id, c.region_id) for c in ranked] == [
            (2, 0), (0, 2), (0, 9), (1, 5),
        ]


class TestEligibility:
    def test_mask_excludes_touched_regions(self):
        seg = segmentation_from_ids(np.array([[0, 0, 1], [2, 2, 1]]))
        excluded = np.zeros(6, dtype=bool)
        excluded[5] = True  # pixel in region 1
        mask = eligible_region_mask(seg, excluded)
        assert mask.tolist() == [True, False, True]

    def test_accepts_2d_mask(self):
        seg = segmentation_from_ids(np.array([[0, 1], [0, 1]]))
        excluded = np.array([[True, False], [False, False]])
        mask = eligible_region_mask(seg, excluded)
        assert mask.tolist() == [False, True]


class TestSelectBatch:
    def test_takes_top_by_budget(self):
        cands = [
            Candidate(image_id=0, region_id=i, stats=None, score=float(i))
            for i in range(5)
        ]
        picked = select_batch(cands, budget=2)
        assert [c.region_id for c in picked] == [4, 3]

    def test_applies_exclusions(self):
        seg = segmentation_from_ids(np.array([[0, 1]]))
        excluded = np.array([False, True])
        cands = [
            Candidate(image_id=0, region_id=0, stats=None, score=0.1),
            Candidate(image_id=0, region_id=1, stats=None, score=0.9),
        ]
        picked = select_batch(
            cands, budget=2, excluded_pixels={0: excluded}, segmentations={0: seg}
        )
        assert [c.region_id for c in picked] == [0]

    def test_budget_must_be_positive(self):
        with pytest.raises(ValueError, match="budget"):
            select_batch([], budget=0)

    def test_empty_pool_raises(self):
        with pytest.raises(ValueError):
            select_batch([], budget=3)

    def test_all_excluded_raises(self):
        seg = segmentation_from_ids(np.array([[0]]))
        cands = [Candidate(image_id=0, region_id=0, stats=None, score=1.0)]
        with pytest.raises(ValueError):
            select_batch(
                cands, budget=1,
                excluded_pixels={0: np.array([True])}, segmentations={0: seg},
            )
