import numpy as np
import pytest

from gaussvdb.extract import (
    ExtractConfig,
    extract,
    leaf_to_gaussian_low,
    leaf_to_gaussians_high,
    leaf_to_gaussians_medium,
    merge_pass,
    positional_variance,
    tile_to_gaussian,
    variance_split,
)
from gaussvdb.sparse_grid import (
    Coord,
    GridTransform,
    LeafNode,
    SparseGrid,
    sparsify_from_dense,
)

IDENTITY = GridTransform.from_voxel_size(1.0)


def dense_leaf(value=0.5, origin=(0, 0, 0)):
    leaf = LeafNode(Coord(*origin))
    leaf.values[:] = value
    leaf.active_mask[:] = True
    return leaf


def dense_grid(n=64, value=0.5, voxel_size=1.0):
    data = np.full(n**3, value, dtype=np.float32)
    return sparsify_from_dense(data, (n, n, n), background=0.0, tolerance=0.0,
                               transform=GridTransform.from_voxel_size(voxel_size))


def random_sparse_grid(rng, n=32, density=0.05):
    data = np.zeros((n, n, n), dtype=np.float32)
    k = max(1, int(density * n**3))
    idx = rng.choice(n**3, size=k, replace=False)
    data.ravel()[idx] = rng.uniform(0.1, 1.0, size=k).astype(np.float32)
    return sparsify_from_dense(data.ravel(), (n, n, n), 0.0, 0.0)


# -- per-leaf conversions ----------------------------------------------------

def test_low_dense_leaf():
    g = leaf_to_gaussian_low(dense_leaf(0.5), IDENTITY)
    assert g.position == (4.0, 4.0, 4.0)
    assert g.radii == (4.0, 4.0, 4.0)
    assert g.opacity == pytest.approx(0.5)
    assert g.shape == "sphere"


def test_low_single_voxel():
    leaf = LeafNode(Coord(0, 0, 0))
    off = (3 << 6) | (3 << 3) | 3
    leaf.values[off] = 0.8
    leaf.active_mask[off] = True
    g = leaf_to_gaussian_low(leaf, IDENTITY)
    assert g.position == (3.5, 3.5, 3.5)
    assert g.radii == (0.5, 0.5, 0.5)
    assert g.opacity == pytest.approx(0.8)


def test_low_two_voxels_matches_bbox_scan():
    leaf = LeafNode(Coord(0, 0, 0))
    for (x, y, z), v in [((0, 0, 0), 0.2), ((3, 1, 0), 0.4)]:
        off = (x << 6) | (y << 3) | z
        leaf.values[off] = v
        leaf.active_mask[off] = True
    g = leaf_to_gaussian_low(leaf, IDENTITY)
    assert g.position == (2.0, 1.0, 0.5)
    assert g.radii == (2.0, 1.0, 0.5)
    assert g.opacity == pytest.approx(0.3)
    assert g.shape == "ellipsoid"

    # oracle: brute-force bbox scan over the 8^3 block
    lo = np.array([8, 8, 8])
    hi = np.array([-1, -1, -1])
    for x in range(8):
        for y in range(8):
            for z in range(8):
                if leaf.active_mask[(x << 6) | (y << 3) | z]:
                    lo = np.minimum(lo, (x, y, z))
                    hi = np.maximum(hi, (x, y, z))
    hi = hi + 1
    assert np.allclose(g.position, (lo + hi) / 2)
    assert np.allclose(g.radii, (hi - lo) / 2)


def test_low_none_when_empty():
    assert leaf_to_gaussian_low(LeafNode(Coord(0, 0, 0)), IDENTITY) is None


def test_extent_scaling_multiplies_by_occupancy():
    leaf = LeafNode(Coord(0, 0, 0))
    for (x, y, z), v in [((0, 0, 0), 0.2), ((3, 1, 0), 0.4)]:
        off = (x << 6) | (y << 3) | z
        leaf.values[off] = v
        leaf.active_mask[off] = True
    scaled = leaf_to_gaussian_low(leaf, IDENTITY, ExtractConfig(opacity_extent_scaling=True))
    # 2 active voxels in a 4x2x1 bbox
    assert scaled.opacity == pytest.approx(0.3 * 2 / 8)


def test_tile_to_gaussian():
    g = tile_to_gaussian(((0, 0, 0), (8, 8, 8)), 0.7, IDENTITY)
    assert g.position == (4.0, 4.0, 4.0)
    assert g.radii == (4.0, 4.0, 4.0)
    assert g.opacity == pytest.approx(0.7)

    big = tile_to_gaussian(((0, 0, 0), (128, 128, 128)), 0.7, IDENTITY)
    assert big.radii == (64.0, 64.0, 64.0)

    aniso = tile_to_gaussian(((0, 0, 0), (8, 8, 8)), 0.7,
                             GridTransform.from_voxel_size((1.0, 2.0, 1.0)))
    assert aniso.radii == (4.0, 8.0, 4.0)
    assert aniso.shape == "ellipsoid"


def test_medium_dense_blocks():
    gs = leaf_to_gaussians_medium(dense_leaf(0.25), IDENTITY)
    assert len(gs) == 8
    expected = {(2.0 + 4 * i, 2.0 + 4 * j, 2.0 + 4 * k)
                for i in range(2) for j in range(2) for k in range(2)}
    assert {g.position for g in gs} == expected
    assert all(g.radii == (2.0, 2.0, 2.0) for g in gs)
    assert all(g.opacity == pytest.approx(0.25) for g in gs)


def test_medium_sparse_full_block():
    leaf = LeafNode(Coord(0, 0, 0))
    for x in range(2):
        for y in range(2):
            for z in range(2):
                off = (x << 6) | (y << 3) | z
                leaf.values[off] = 0.5
                leaf.active_mask[off] = True
    gs = leaf_to_gaussians_medium(leaf, IDENTITY)
    assert len(gs) == 1
    assert gs[0].radii == (1.0, 1.0, 1.0)
    assert gs[0].position == (1.0, 1.0, 1.0)


def test_medium_sparse_scattered_fallback():
    leaf = LeafNode(Coord(0, 0, 0))
    for x, y, z in [(0, 0, 0), (4, 4, 4), (7, 0, 7)]:
        off = (x << 6) | (y << 3) | z
        leaf.values[off] = 0.5
        leaf.active_mask[off] = True
    gs = leaf_to_gaussians_medium(leaf, IDENTITY)
    assert len(gs) == 3
    assert all(g.radii == (0.5, 0.5, 0.5) for g in gs)


def test_high_dense_blocks():
    gs = leaf_to_gaussians_high(dense_leaf(), IDENTITY)
    assert len(gs) == 64
    assert all(g.radii == (1.0, 1.0, 1.0) for g in gs)


def test_high_sparse_one_per_voxel():
    rng = np.random.default_rng(0)
    leaf = LeafNode(Coord(0, 0, 0))
    offs = rng.choice(512, size=17, replace=False)
    leaf.values[offs] = 0.5
    leaf.active_mask[offs] = True
    gs = leaf_to_gaussians_high(leaf, IDENTITY)
    assert len(gs) == 17


def test_high_voxel_center_offset():
    leaf = LeafNode(Coord(0, 0, 0))
    off = 5 << 6
    leaf.values[off] = 0.9
    leaf.active_mask[off] = True
    (g,) = leaf_to_gaussians_high(leaf, IDENTITY)
    assert g.position == (5.5, 0.5, 0.5)
    assert g.radii == (0.5, 0.5, 0.5)
    assert g.opacity == pytest.approx(0.9)


# -- whole-grid extraction -----------------------------------------------------

def test_extract_empty_grid():
    assert len(extract(SparseGrid())) == 0


def test_extract_dense_counts():
    grid = dense_grid(64)
    assert len(extract(grid, ExtractConfig(lod="low"))) == 512
    assert len(extract(grid, ExtractConfig(lod="medium"))) == 4096
    assert len(extract(grid, ExtractConfig(lod="high"))) == 32768


def test_extract_includes_tiles_after_leaves():
    from gaussvdb.sparse_grid import _set_l4_tile

    g = SparseGrid()
    g.set_voxel((0, 0, 0), 0.5)
    _set_l4_tile(g, Coord(64, 0, 0), 0.7)
    s = extract(g, ExtractConfig(lod="low"))
    assert len(s) == 2
    assert s[1].opacity == pytest.approx(0.7)
    assert s[1].radii == (4.0, 4.0, 4.0)
    assert s.leaf_ranges.tolist() == [[0, 1], [1, 1]]


def test_extract_deterministic_across_workers():
    grid = random_sparse_grid(np.random.default_rng(5), n=32, density=0.04)
    base = extract(grid, ExtractConfig(lod="medium"), threads=1)
    for threads in (2, 8):
        other = extract(grid, ExtractConfig(lod="medium"), threads=threads)
        assert np.array_equal(base.positions, other.positions)
        assert np.array_equal(base.radii, other.radii)
        assert np.array_equal(base.opacities, other.opacities)
        assert np.array_equal(base.shapes, other.shapes)
        assert np.array_equal(base.leaf_ranges, other.leaf_ranges)


def test_leaf_ranges_partition():
    grid = random_sparse_grid(np.random.default_rng(11), n=32, density=0.03)
    s = extract(grid, ExtractConfig(lod="medium"))
    offsets = s.leaf_ranges[:, 0]
    counts = s.leaf_ranges[:, 1]
    assert offsets[0] == 0
    assert np.all(offsets[1:] == offsets[:-1] + counts[:-1])
    assert offsets[-1] + counts[-1] == len(s)


def test_source_boxes_disjoint_and_cover():
    rng = np.random.default_rng(2)
    grid = random_sparse_grid(rng, n=24, density=0.06)
    active = {
        (x, y, z)
        for x in range(24) for y in range(24) for z in range(24)
        if grid.get_voxel((x, y, z))[1]
    }
    for lod in ("low", "medium", "high"):
        s = extract(grid, ExtractConfig(lod=lod))
        boxes = list(zip(s.src_bbox_min.tolist(), s.src_bbox_max.tolist()))
        for i in range(len(boxes)):
            for j in range(i + 1, len(boxes)):
                (amin, amax), (bmin, bmax) = boxes[i], boxes[j]
                overlap = all(amin[k] < bmax[k] and bmin[k] < amax[k] for k in range(3))
                assert not overlap, f"boxes {i} and {j} overlap at lod={lod}"
        if lod == "high":
            covered = set()
            for bmin, bmax in boxes:
                for x in range(bmin[0], bmax[0]):
                    for y in range(bmin[1], bmax[1]):
                        for z in range(bmin[2], bmax[2]):
                            covered.add((x, y, z))
            assert covered == active


def test_opacity_within_source_range():
    rng = np.random.default_rng(9)
    grid = random_sparse_grid(rng, n=16, density=0.2)
    values = [grid.get_voxel((x, y, z))[0]
              for x in range(16) for y in range(16) for z in range(16)
              if grid.get_voxel((x, y, z))[1]]
    lo, hi = min(values), max(values)
    for lod in ("low", "medium", "high"):
        s = extract(grid, ExtractConfig(lod=lod))
        assert float(s.opacities.min()) >= lo - 1e-7
        assert float(s.opacities.max()) <= hi + 1e-7


def test_mass_conservation_exact_dyadic():
    rng = np.random.default_rng(21)
    # dyadic values make every block mean exact in float arithmetic
    data = (rng.integers(1, 256, size=64**3).astype(np.float64) / 256.0).astype(np.float32)
    grid = sparsify_from_dense(data, (64, 64, 64), 0.0, 0.0)
    total = float(np.sum(data.astype(np.float64)))
    for lod in ("low", "medium", "high"):
        s = extract(grid, ExtractConfig(lod=lod))
        mass = float((s.opacities.astype(np.float64) * s.src_counts).sum())
        assert mass == total


def test_mass_conservation_sparse_constant():
    grid = random_sparse_grid(np.random.default_rng(13), n=32, density=0.05)
    # overwrite all active values with a constant so means are exact
    for leaf in grid.leaf_iter():
        leaf.values[leaf.active_mask] = 0.5
    total = 0.5 * grid.active_voxel_count()
    for lod in ("low", "medium", "high"):
        s = extract(grid, ExtractConfig(lod=lod))
        mass = float((s.opacities.astype(np.float64) * s.src_counts).sum())
        assert mass == total


# -- variance split ---------------------------------------------------------------

def test_positional_variance_formula():
    assert positional_variance([(0, 0, 0), (4, 0, 0)]) == pytest.approx(4.0)


def test_variance_split_threshold_branch():
    pts = [(0, 0, 0), (4, 0, 0)]
    vals = [0.2, 0.4]
    assert len(variance_split(pts, vals, threshold=5.0)) == 1
    two = variance_split(pts, vals, threshold=1.0)
    assert len(two) == 2
    xs = sorted(g.position[0] for g in two)
    assert xs == [0.0, 4.0]


def test_variance_split_single_sample():
    for threshold in (0.0, 100.0):
        out = variance_split([(1, 2, 3)], [0.5], threshold, point_extent=(1, 1, 1))
        assert len(out) == 1
        assert out[0].radii == (0.5, 0.5, 0.5)


def test_variance_split_extraction_path():
    grid = random_sparse_grid(np.random.default_rng(4), n=16, density=0.05)
    cfg = ExtractConfig(enable_variance_split=True, variance_threshold=0.0)
    s = extract(grid, cfg)
    # zero threshold splits into one Gaussian per voxel (depth limit permitting)
    assert len(s) == grid.active_voxel_count()


# -- merge pass -------------------------------------------------------------------

def uniform_leaf_block(n_leaves_per_axis, value=0.5):
    n = 8 * n_leaves_per_axis
    data = np.full(n**3, value, dtype=np.float32)
    return sparsify_from_dense(data, (n, n, n), background=-1.0, tolerance=0.0)


def test_merge_pass_3x3x3_collapses_to_one():
    grid = uniform_leaf_block(3)
    s = extract(grid, ExtractConfig(lod="low"))
    assert len(s) == 27
    centers = s.positions.astype(np.float64)
    var = positional_variance(centers)
    merged = merge_pass(s, grid, threshold=var + 1.0)
    assert len(merged) == 1
    assert merged.src_bbox_min[0].tolist() == [0, 0, 0]
    assert merged.src_bbox_max[0].tolist() == [24, 24, 24]
    assert merged[0].position == (12.0, 12.0, 12.0)
    assert merged[0].radii == (12.0, 12.0, 12.0)
    assert merged[0].opacity == pytest.approx(0.5)


def test_merge_pass_isolated_leaf_unchanged():
    g = SparseGrid()
    g.set_voxel((0, 0, 0), 0.5)
    s = extract(g, ExtractConfig(lod="low"))
    merged = merge_pass(s, g, threshold=1e9)
    assert len(merged) == 1
    assert merged[0] == s[0]


def test_merge_pass_bbox_min_max_formula():
    # leaf A active [0,2)^3, leaf B active [8,10)x[0,2)x[0,2)
    g = SparseGrid()
    for x in range(2):
        for y in range(2):
            for z in range(2):
                g.set_voxel((x, y, z), 0.5)
                g.set_voxel((x + 8, y, z), 0.5)
    s = extract(g, ExtractConfig(lod="low"))
    assert len(s) == 2
    merged = merge_pass(s, g, threshold=1e9)
    assert len(merged) == 1
    expect_min = np.minimum(s.src_bbox_min[0], s.src_bbox_min[1])
    expect_max = np.maximum(s.src_bbox_max[0], s.src_bbox_max[1])
    assert merged.src_bbox_min[0].tolist() == expect_min.tolist()
    assert merged.src_bbox_max[0].tolist() == expect_max.tolist()
    assert merged.src_bbox_min[0].tolist() == [0, 0, 0]
    assert merged.src_bbox_max[0].tolist() == [10, 2, 2]


def test_merge_pass_high_threshold_zero_is_noop():
    grid = uniform_leaf_block(2)
    s = extract(grid, ExtractConfig(lod="low"))
    merged = merge_pass(s, grid, threshold=0.0)
    assert len(merged) == len(s)
    assert np.array_equal(merged.positions, s.positions)


def test_merge_pass_weighted_opacity():
    g = SparseGrid()
    # leaf A: 2 voxels at 0.2; leaf B: 6 voxels at 0.6
    for i in range(2):
        g.set_voxel((i, 0, 0), 0.2)
    for i in range(6):
        g.set_voxel((8 + i, 0, 0), 0.6)
    s = extract(g, ExtractConfig(lod="low"))
    merged = merge_pass(s, g, threshold=1e9)
    assert len(merged) == 1
    expected = (2 * np.float32(0.2) + 6 * np.float32(0.6)) / 8
    assert merged[0].opacity == pytest.approx(float(expected))
