import numpy as np

from gaussvdb.extract import ExtractConfig, GaussianSet, extract
from gaussvdb.formats import GAUSSIAN_HEADER_SIZE, write_gaussians
from gaussvdb.report import footprint, format_lod_cell, format_table, grid_stats
from gaussvdb.sparse_grid import GridTransform, SparseGrid, sparsify_from_dense

T = GridTransform.from_voxel_size(1.0)


def make_set(n, shape_code, grid_class):
    radii = np.ones((n, 3), dtype=np.float32)
    if shape_code == 1:
        radii[:, 1] = 2.0
    return GaussianSet(
        positions=np.zeros((n, 3), dtype=np.float32),
        radii=radii,
        opacities=np.full(n, 0.5, dtype=np.float32),
        shapes=np.full(n, shape_code, dtype=np.uint8),
        lod="low",
        grid_class=grid_class,
        transform=T,
    )


def test_footprint_volume_ellipsoids():
    r = footprint(make_set(10, 1, "volume"))
    assert r.payload_bytes == 280
    assert r.ellipsoid_count == 10
    assert r.sphere_count == 0


def test_footprint_levelset_spheres():
    r = footprint(make_set(10, 0, "levelset"))
    assert r.payload_bytes == 160
    assert r.sphere_count == 10


def test_footprint_empty():
    r = footprint(make_set(0, 0, "volume"))
    assert r.payload_bytes == 0
    assert r.gaussian_count == 0


def test_footprint_matches_file_payload():
    rng = np.random.default_rng(3)
    data = np.zeros((24, 24, 24), dtype=np.float32)
    data[rng.random(data.shape) < 0.15] = 0.7
    grid = sparsify_from_dense(data.ravel(), (24, 24, 24), 0.0, 0.0)
    for lod in ("low", "medium", "high"):
        s = extract(grid, ExtractConfig(lod=lod))
        blob = write_gaussians(s)
        r = footprint(s)
        assert len(blob) - GAUSSIAN_HEADER_SIZE == r.payload_bytes + len(s)
        assert r.sphere_count + r.ellipsoid_count == r.gaussian_count


def test_per_lod_count_monotonicity():
    rng = np.random.default_rng(8)
    data = np.zeros((32, 32, 32), dtype=np.float32)
    data[rng.random(data.shape) < 0.3] = 0.4
    grid = sparsify_from_dense(data.ravel(), (32, 32, 32), 0.0, 0.0)
    counts = [len(extract(grid, ExtractConfig(lod=lod))) for lod in ("low", "medium", "high")]
    assert counts[0] <= counts[1] <= counts[2]


def test_grid_stats_dense():
    data = np.full(64**3, 0.5, dtype=np.float32)
    grid = sparsify_from_dense(data, (64, 64, 64), 0.0, 0.0)
    stats = grid_stats(grid)
    assert stats.dense_leaf_count == 512
    assert stats.leaf_count == 512
    assert stats.dense_ratio == 1.0


def test_grid_stats_single_voxel():
    g = SparseGrid()
    g.set_voxel((0, 0, 0), 1.0)
    stats = grid_stats(g)
    assert stats.leaf_count == 1
    assert stats.dense_leaf_count == 0
    assert stats.active_voxels == 1


def test_table_cell_layout():
    # mirrors the "MB / count" presentation of the summary table
    assert format_lod_cell(2_800_000, 66_000) == "2.8MB / 66.0K"
    assert format_lod_cell(778_000_000, 12_000_000) == "778.0MB / 12.0M"


def test_format_table_contains_rows():
    g = SparseGrid()
    g.set_voxel((0, 0, 0), 1.0)
    s = extract(g, ExtractConfig(lod="low"))
    text = format_table("demo", grid_stats(g), {"low": footprint(s)})
    assert "demo" in text
    assert "low" in text and "MB / " in text
