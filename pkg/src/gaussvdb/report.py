"""Memory-footprint accounting and grid statistics.

Payload bytes count, per Gaussian: a 3-float position, one radius float
for spheres or three for ellipsoids, and one opacity float for volume
sets (level sets render with uniform opacity, so it is omitted). Shape
tag bytes used by the .gpts container are reported separately.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from typing import Optional

from .extract import GaussianSet
from .sparse_grid import LEAF_SIZE, SparseGrid

FLOAT_BYTES = 4


@dataclass
class GridStats:
    active_voxels: int = 0
    leaf_count: int = 0
    tile_count: int = 0
    dense_leaf_count: int = 0

    @property
    def dense_ratio(self) -> float:
        return self.dense_leaf_count / self.leaf_count if self.leaf_count else 0.0


@dataclass
class FootprintReport:
    gaussian_count: int
    sphere_count: int
    ellipsoid_count: int
    payload_bytes: int
    grid_class: str
    lod: str
    grid_stats: Optional[GridStats] = field(default=None)

    def to_dict(self) -> dict:
        d = asdict(self)
        if self.grid_stats is None:
            d.pop("grid_stats")
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


def footprint_bytes(gaussian_count: int, sphere_count: int, ellipsoid_count: int,
                    grid_class: str) -> int:
    opacity_floats = gaussian_count if grid_class == "volume" else 0
    return FLOAT_BYTES * (3 * gaussian_count + sphere_count + 3 * ellipsoid_count + opacity_floats)


def footprint(gset: GaussianSet, grid: Optional[SparseGrid] = None) -> FootprintReport:
    spheres = gset.sphere_count()
    ellipsoids = gset.ellipsoid_count()
    return FootprintReport(
        gaussian_count=len(gset),
        sphere_count=spheres,
        ellipsoid_count=ellipsoids,
        payload_bytes=footprint_bytes(len(gset), spheres, ellipsoids, gset.grid_class),
        grid_class=gset.grid_class,
        lod=gset.lod,
        grid_stats=grid_stats(grid) if grid is not None else None,
    )


def grid_stats(grid: SparseGrid) -> GridStats:
    stats = GridStats()
    for leaf in grid.leaf_iter():
        stats.leaf_count += 1
        n = leaf.active_count()
        stats.active_voxels += n
        if n == LEAF_SIZE:
            stats.dense_leaf_count += 1
    for (lo, hi), _, _ in grid.tile_iter():
        stats.tile_count += 1
        stats.active_voxels += (hi[0] - lo[0]) * (hi[1] - lo[1]) * (hi[2] - lo[2])
    return stats


def _format_count(n: int) -> str:
    if n >= 1_000_000:
        return f"{n / 1_000_000:.1f}M"
    if n >= 1_000:
        return f"{n / 1_000:.1f}K" if n < 100_000 else f"{n // 1000}K"
    return str(n)


def _format_mb(n_bytes: int) -> str:
    return f"{n_bytes / 1_000_000:.1f}MB"


def format_lod_cell(payload_bytes: int, gaussian_count: int) -> str:
    """One dataset/LOD cell in the summary table, e.g. '2.8MB / 66K'."""
    return f"{_format_mb(payload_bytes)} / {_format_count(gaussian_count)}"


def format_table(name: str, stats: GridStats, reports: dict[str, FootprintReport]) -> str:
    """Aligned-text summary row set: voxel count plus one cell per LOD."""
    lines = [
        f"dataset: {name or '(unnamed)'}",
        f"  voxels: {_format_count(stats.active_voxels)}  leaves: {stats.leaf_count}"
        f"  tiles: {stats.tile_count}  dense leaves: {stats.dense_leaf_count}"
        f"  dense ratio: {stats.dense_ratio:.2f}",
    ]
    for lod in ("low", "medium", "high"):
        if lod in reports:
            r = reports[lod]
            cell = format_lod_cell(r.payload_bytes, r.gaussian_count)
            lines.append(f"  {lod:<7s} {cell}  (spheres {r.sphere_count}, ellipsoids {r.ellipsoid_count})")
    return "\n".join(lines)
