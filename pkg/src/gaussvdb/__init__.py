"""Sparse voxel grids, LOD Gaussian extraction, and a CPU Gaussian renderer."""

import os as _os

# allow worker counts above the physical core count (must precede numba import)
_os.environ.setdefault("NUMBA_NUM_THREADS", str(max(_os.cpu_count() or 1, 16)))

from .sparse_grid import (  # noqa: E402
    Coord,
    GridTransform,
    InternalNode,
    LeafNode,
    SparseGrid,
    get_voxel,
    index_to_world,
    leaf_active_bbox,
    leaf_iter,
    set_voxel,
    sparsify_from_dense,
    tile_iter,
    world_to_index,
)
from .extract import (  # noqa: E402
    ExtractConfig,
    Gaussian,
    GaussianSet,
    extract,
    leaf_to_gaussian_low,
    leaf_to_gaussians_high,
    leaf_to_gaussians_medium,
    merge_pass,
    tile_to_gaussian,
    variance_split,
)
from .formats import (  # noqa: E402
    FormatError,
    read_gaussians,
    read_gaussians_file,
    read_grid,
    read_grid_file,
    read_raw,
    write_gaussians,
    write_gaussians_file,
    write_grid,
    write_grid_file,
)
from .bvh import Bvh, build_bvh  # noqa: E402
from .render import (  # noqa: E402
    Aabb,
    Camera,
    Framebuffer,
    Ray,
    RenderConfig,
    gaussian_density,
    integrate_segment,
    ray_aabb,
    ray_gaussian,
    render,
    trace_ray,
)
from .colormaps import tf_lookup  # noqa: E402
from .report import FootprintReport, footprint, grid_stats  # noqa: E402

__version__ = "0.1.0"
