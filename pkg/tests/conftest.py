import json

import numpy as np
import pytest

from gaussvdb.formats import write_grid_file
from gaussvdb.sparse_grid import GridTransform, sparsify_from_dense


def make_dense_grid(n=64, value=0.5, voxel_size=1.0):
    data = np.full(n**3, value, dtype=np.float32)
    return sparsify_from_dense(data, (n, n, n), background=0.0, tolerance=0.0,
                               transform=GridTransform.from_voxel_size(voxel_size))


@pytest.fixture(scope="session")
def dense64_grid():
    return make_dense_grid(64)


@pytest.fixture()
def dense64_svdb(tmp_path, dense64_grid):
    path = tmp_path / "dense64.svdb"
    write_grid_file(dense64_grid, path)
    return path


def write_raw_volume(dirpath, name="vol", n=16, sphere_radius=6.0):
    """Raw u8 volume with a centered solid sphere; returns (header, data) paths."""
    zi, yi, xi = np.meshgrid(np.arange(n), np.arange(n), np.arange(n), indexing="ij")
    c = (n - 1) / 2
    inside = (xi - c) ** 2 + (yi - c) ** 2 + (zi - c) ** 2 <= sphere_radius**2
    data = (inside * 200).astype(np.uint8)
    header = {
        "dims": [n, n, n],
        "value_type": "u8",
        "voxel_size": [1.0, 1.0, 1.0],
        "background": 0.0,
        "threshold": 0.0,
        "grid_class": "volume",
    }
    hp = dirpath / f"{name}.json"
    dp = dirpath / f"{name}.raw"
    hp.write_text(json.dumps(header))
    dp.write_bytes(data.tobytes())
    return hp, dp


CAMERA_DOC = {
    "eye": [32.0, 40.0, -96.0],
    "target": [32.0, 32.0, 32.0],
    "up": [0.0, 1.0, 0.0],
    "fov_deg": 45.0,
    "width": 32,
    "height": 32,
}

CONFIG_DOC = {
    "tf": "viridis",
    "density_scale": 4.0,
    "samples_per_segment": 4,
    "t_min": 0.01,
    "max_segments": 256,
    "background": [0.0, 0.0, 0.0],
}
