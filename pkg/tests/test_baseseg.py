import numpy as np
import pytest

from segal.baseseg import (
    SlicConfig,
    component_labels,
    enforce_connectivity,
    grid_segmentation,
    slic,
)
from segal.merge import build_region_graph
from segal.raster import segmentation_from_ids
from segal.synthetic import ShapesConfig, make_shapes_image

from reference import flood_fill_components, naive_adjacency, random_partition_ids


def components_of(seg):
    """Number of 4-connected components over all regions of a segmentation."""
    comp = component_labels(np.asarray(seg.region_ids))
    return int(comp.max()) + 1


class TestGrid:
    def test_covers_and_counts(self):
        seg = grid_segmentation(10, 7, 4)
        assert seg.width == 10 and seg.height == 7
        # 3 columns x 2 rows of cells
        assert seg.num_regions == 6
        assert seg.region_sizes().sum() == 70

    def test_row_major_cell_order(self):
        seg = grid_segmentation(4, 4, 2)
        ids = np.asarray(seg.region_ids)
        assert ids[0, 0] == 0 and ids[0, 2] == 1
        assert ids[2, 0] == 2 and ids[2, 2] == 3

    def test_cells_are_rectangles(self):
        seg = grid_segmentation(9, 5, 3)
        sizes = seg.region_sizes()
        assert sizes.tolist() == [9, 9, 9, 6, 6, 6]

    def test_rejects_bad_cell(self):
        with pytest.raises(ValueError):
            grid_segmentation(8, 8, 0)


class TestComponentLabels:
    def test_matches_flood_fill_on_random_grids(self, rng):
        for _ in range(25):
            ids = rng.integers(0, 4, size=(9, 9))
            got = component_labels(ids)
            want = flood_fill_components(ids)
            # same partition: bijection between label sets
            pairs = {(int(a), int(b)) for a, b in zip(got.ravel(), want.ravel())}
            assert len(pairs) == int(got.max()) + 1 == int(want.max()) + 1

    def test_diagonal_is_not_connected(self):
        ids = np.array([[1, 0], [0, 1]])
        comp = component_labels(ids)
        assert int(comp.max()) + 1 == 4


class TestEnforceConnectivity:
    def test_splits_disconnected_region(self):
        ids = np.array([[0, 1, 0]])
        seg = enforce_connectivity(segmentation_from_ids(ids))
        assert seg.num_regions == 3

    def test_noop_on_connected(self):
        seg = grid_segmentation(6, 6, 3)
        out = enforce_connectivity(seg)
        np.testing.assert_array_equal(out.region_ids, seg.region_ids)


@pytest.fixture(scope="module")
def shapes_image():
    rng = np.random.default_rng(3)
    img, _ = make_shapes_image(rng, ShapesConfig(size=64, seed=3))
    return img


class TestSlic:
    def test_regions_are_connected(self, shapes_image):
        seg = slic(shapes_image, SlicConfig(target_region_size=64))
        assert components_of(seg) == seg.num_regions

    def test_region_count_near_target(self, shapes_image):
        seg = slic(shapes_image, SlicConfig(target_region_size=64))
        expect = (64 * 64) / 64
        assert 0.5 * expect <= seg.num_regions <= 2.0 * expect

    def test_no_tiny_fragments(self, shapes_image):
        seg = slic(shapes_image, SlicConfig(target_region_size=64))
        assert int(seg.region_sizes().min()) >= 64 // 4

    def test_deterministic(self, shapes_image):
        a = slic(shapes_image, SlicConfig(target_region_size=100))
        b = slic(shapes_image, SlicConfig(target_region_size=100))
        np.testing.assert_array_equal(a.region_ids, b.region_ids)

    def test_rejects_bad_config(self):
        with pytest.raises(ValueError):
            SlicConfig(target_region_size=0)
        with pytest.raises(ValueError):
            SlicConfig(target_region_size=16, compactness=-1.0)


class TestRegionGraph:
    def test_matches_naive_adjacency(self, rng):
        for _ in range(20):
            ids = random_partition_ids(rng, 12, 12, 6)
            seg = segmentation_from_ids(ids)
            graph = build_region_graph(seg)
            got = {
                (a, b)
                for a in range(graph.num_regions)
                for b in graph.neighbors(a)
                if a < b
            }
            assert got == naive_adjacency(np.asarray(seg.region_ids, dtype=np.int64))

    def test_grid_neighbor_counts(self):
        seg = grid_segmentation(6, 6, 2)  # 3x3 cells
        graph = build_region_graph(seg)
        degree = {r: len(graph.neighbors(r)) for r in range(9)}
        # corners 2, edges 3, center 4
        assert sorted(degree.values()) == [2, 2, 2, 2, 3, 3, 3, 3, 4]
