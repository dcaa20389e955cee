"""Grid-to-Gaussian conversion at three levels of detail.

Every leaf (and tile) maps to axis-aligned Gaussians whose radii follow
the half-extent rule: sigma = 0.5 * (bbox_max - bbox_min) * voxel_size,
with position at the bbox centroid and opacity the mean of the source
voxel values. LOD picks the granularity: whole leaf, 4x4x4 / 2x2x2
blocks, or individual voxels.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Iterator, NamedTuple, Optional, Sequence

import numpy as np

from .sparse_grid import (
    LEAF_COORDS,
    LEAF_DIM,
    GridTransform,
    LeafNode,
    SparseGrid,
)

LODS = ("low", "medium", "high")
SHAPES = ("sphere", "ellipsoid")
SHAPE_SPHERE = 0
SHAPE_ELLIPSOID = 1


@dataclass(frozen=True)
class Gaussian:
    """Axis-aligned Gaussian particle in world space."""

    position: tuple[float, float, float]
    radii: tuple[float, float, float]
    opacity: float
    shape: str

    def covariance_diagonal(self) -> tuple[float, float, float]:
        return (self.radii[0] ** 2, self.radii[1] ** 2, self.radii[2] ** 2)


class _Record(NamedTuple):
    position: tuple[float, float, float]
    radii: tuple[float, float, float]
    opacity: float
    shape: int
    bbox_min: tuple[int, int, int]
    bbox_max: tuple[int, int, int]
    count: int


@dataclass
class ExtractConfig:
    lod: str = "low"
    opacity_extent_scaling: bool = False
    variance_threshold: float = 1.0
    enable_variance_split: bool = False
    enable_merge_pass: bool = False
    merge_threshold: Optional[float] = None  # falls back to variance_threshold

    def __post_init__(self):
        if self.lod not in LODS:
            raise ValueError(f"lod must be one of {LODS}, got {self.lod!r}")
        if self.variance_threshold < 0:
            raise ValueError("variance_threshold must be non-negative")
        if self.merge_threshold is not None and self.merge_threshold < 0:
            raise ValueError("merge_threshold must be non-negative")


class GaussianSet:
    """Ordered Gaussian particles stored as flat arrays.

    ``leaf_ranges`` records the (offset, count) slice each source leaf or
    tile contributed; source index bboxes and voxel counts are kept for
    merging and validation and are not serialized.
    """

    def __init__(self, positions, radii, opacities, shapes, lod: str, grid_class: str,
                 transform: GridTransform, leaf_ranges=None,
                 src_bbox_min=None, src_bbox_max=None, src_counts=None):
        self.positions = np.asarray(positions, dtype=np.float32).reshape(-1, 3)
        n = len(self.positions)
        self.radii = np.asarray(radii, dtype=np.float32).reshape(n, 3)
        self.opacities = np.asarray(opacities, dtype=np.float32).reshape(n)
        self.shapes = np.asarray(shapes, dtype=np.uint8).reshape(n)
        self.lod = lod
        self.grid_class = grid_class
        self.transform = transform
        self.leaf_ranges = None if leaf_ranges is None else np.asarray(leaf_ranges, dtype=np.int64).reshape(-1, 2)
        self.src_bbox_min = None if src_bbox_min is None else np.asarray(src_bbox_min, dtype=np.int32).reshape(n, 3)
        self.src_bbox_max = None if src_bbox_max is None else np.asarray(src_bbox_max, dtype=np.int32).reshape(n, 3)
        self.src_counts = None if src_counts is None else np.asarray(src_counts, dtype=np.int64).reshape(n)

    def __len__(self) -> int:
        return len(self.positions)

    def __getitem__(self, i: int) -> Gaussian:
        return Gaussian(
            position=tuple(float(v) for v in self.positions[i]),
            radii=tuple(float(v) for v in self.radii[i]),
            opacity=float(self.opacities[i]),
            shape=SHAPES[self.shapes[i]],
        )

    def __iter__(self) -> Iterator[Gaussian]:
        for i in range(len(self)):
            yield self[i]

    def sphere_count(self) -> int:
        return int((self.shapes == SHAPE_SPHERE).sum())

    def ellipsoid_count(self) -> int:
        return int((self.shapes == SHAPE_ELLIPSOID).sum())

    @classmethod
    def from_records(cls, records: Sequence[_Record], lod: str, grid_class: str,
                     transform: GridTransform, leaf_ranges=None) -> "GaussianSet":
        if records:
            pos = np.array([r.position for r in records], dtype=np.float32)
            rad = np.array([r.radii for r in records], dtype=np.float32)
            opa = np.array([r.opacity for r in records], dtype=np.float32)
            shp = np.array([r.shape for r in records], dtype=np.uint8)
            bmin = np.array([r.bbox_min for r in records], dtype=np.int32)
            bmax = np.array([r.bbox_max for r in records], dtype=np.int32)
            cnt = np.array([r.count for r in records], dtype=np.int64)
        else:
            pos = np.zeros((0, 3), dtype=np.float32)
            rad = np.zeros((0, 3), dtype=np.float32)
            opa = np.zeros(0, dtype=np.float32)
            shp = np.zeros(0, dtype=np.uint8)
            bmin = np.zeros((0, 3), dtype=np.int32)
            bmax = np.zeros((0, 3), dtype=np.int32)
            cnt = np.zeros(0, dtype=np.int64)
        return cls(pos, rad, opa, shp, lod, grid_class, transform, leaf_ranges, bmin, bmax, cnt)


def _record_from_bbox(bbox_min, bbox_max, opacity: float, count: int,
                      transform: GridTransform) -> _Record:
    bmin = np.asarray(bbox_min, dtype=np.int64)
    bmax = np.asarray(bbox_max, dtype=np.int64)
    centroid = (bmin + bmax) / 2.0
    mu = transform.index_to_world(centroid)
    r = 0.5 * (bmax - bmin) * transform.voxel_size
    r32 = r.astype(np.float32)
    shape = SHAPE_SPHERE if r32[0] == r32[1] == r32[2] else SHAPE_ELLIPSOID
    return _Record(
        position=(float(mu[0]), float(mu[1]), float(mu[2])),
        radii=(float(r[0]), float(r[1]), float(r[2])),
        opacity=float(opacity),
        shape=shape,
        bbox_min=(int(bmin[0]), int(bmin[1]), int(bmin[2])),
        bbox_max=(int(bmax[0]), int(bmax[1]), int(bmax[2])),
        count=int(count),
    )


def _to_gaussian(rec: _Record) -> Gaussian:
    return Gaussian(rec.position, rec.radii, rec.opacity, SHAPES[rec.shape])


def _mean(values: np.ndarray) -> float:
    return float(values.astype(np.float64).mean())


def _scaled(opacity: float, count: int, bbox_min, bbox_max, cfg: ExtractConfig) -> float:
    if not cfg.opacity_extent_scaling:
        return opacity
    volume = 1
    for lo, hi in zip(bbox_min, bbox_max):
        volume *= hi - lo
    return opacity * (count / volume)


# -- low LOD ---------------------------------------------------------------

def leaf_to_gaussian_low(leaf: LeafNode, transform: GridTransform,
                         cfg: Optional[ExtractConfig] = None) -> Optional[Gaussian]:
    """One Gaussian for the whole leaf, or None when nothing is active."""
    rec = _leaf_record_low(leaf, transform, cfg or ExtractConfig())
    return None if rec is None else _to_gaussian(rec)


def _leaf_record_low(leaf: LeafNode, transform: GridTransform, cfg: ExtractConfig) -> Optional[_Record]:
    bbox = leaf.active_bbox()
    if bbox is None:
        return None
    lo, hi = bbox
    count = leaf.active_count()
    alpha = _mean(leaf.values[leaf.active_mask])
    alpha = _scaled(alpha, count, lo, hi, cfg)
    return _record_from_bbox(lo, hi, alpha, count, transform)


def tile_to_gaussian(bbox_index, value: float, transform: GridTransform) -> Gaussian:
    """A tile converts exactly like a fully uniform region."""
    return _to_gaussian(_tile_record(bbox_index, value, transform))


def _tile_record(bbox_index, value: float, transform: GridTransform) -> _Record:
    lo, hi = bbox_index
    count = (hi[0] - lo[0]) * (hi[1] - lo[1]) * (hi[2] - lo[2])
    return _record_from_bbox(lo, hi, float(value), count, transform)


# -- medium LOD --------------------------------------------------------------

def leaf_to_gaussians_medium(leaf: LeafNode, transform: GridTransform,
                             cfg: Optional[ExtractConfig] = None) -> list[Gaussian]:
    return [_to_gaussian(r) for r in _leaf_records_medium(leaf, transform, cfg or ExtractConfig())]


def _leaf_records_medium(leaf: LeafNode, transform: GridTransform, cfg: ExtractConfig) -> list[_Record]:
    if leaf.is_dense():
        return _dense_blocks(leaf, transform, block=4)
    return _sparse_blocks(leaf, transform, block=2)


# -- high LOD ----------------------------------------------------------------

def leaf_to_gaussians_high(leaf: LeafNode, transform: GridTransform,
                           cfg: Optional[ExtractConfig] = None) -> list[Gaussian]:
    return [_to_gaussian(r) for r in _leaf_records_high(leaf, transform, cfg or ExtractConfig())]


def _leaf_records_high(leaf: LeafNode, transform: GridTransform, cfg: ExtractConfig) -> list[_Record]:
    if leaf.is_dense():
        return _dense_blocks(leaf, transform, block=2)
    # one Gaussian per active voxel, centered at the voxel midpoint
    records = []
    ox, oy, oz = leaf.origin
    for off in np.flatnonzero(leaf.active_mask):
        x, y, z = LEAF_COORDS[off]
        v = (ox + int(x), oy + int(y), oz + int(z))
        records.append(_record_from_bbox(
            v, (v[0] + 1, v[1] + 1, v[2] + 1), float(leaf.values[off]), 1, transform))
    return records


def _dense_blocks(leaf: LeafNode, transform: GridTransform, block: int) -> list[_Record]:
    values = leaf.values.reshape(LEAF_DIM, LEAF_DIM, LEAF_DIM)
    n = LEAF_DIM // block
    ox, oy, oz = leaf.origin
    records = []
    for bx in range(n):
        for by in range(n):
            for bz in range(n):
                sub = values[bx * block:(bx + 1) * block,
                             by * block:(by + 1) * block,
                             bz * block:(bz + 1) * block]
                lo = (ox + bx * block, oy + by * block, oz + bz * block)
                hi = (lo[0] + block, lo[1] + block, lo[2] + block)
                records.append(_record_from_bbox(lo, hi, _mean(sub.ravel()), block**3, transform))
    return records


def _sparse_blocks(leaf: LeafNode, transform: GridTransform, block: int) -> list[_Record]:
    """Greedy ascending scan: full even-anchored blocks first, voxel fallback."""
    mask = leaf.active_mask
    values = leaf.values
    consumed = np.zeros(LEAF_DIM**3, dtype=bool)
    ox, oy, oz = leaf.origin
    records = []
    for off in np.flatnonzero(mask):
        off = int(off)
        if consumed[off]:
            continue
        x, y, z = (int(c) for c in LEAF_COORDS[off])
        if x % block == 0 and y % block == 0 and z % block == 0 and x + block <= LEAF_DIM \
                and y + block <= LEAF_DIM and z + block <= LEAF_DIM:
            offs = [((x + dx) << 6) | ((y + dy) << 3) | (z + dz)
                    for dx in range(block) for dy in range(block) for dz in range(block)]
            if all(mask[o] and not consumed[o] for o in offs):
                consumed[offs] = True
                lo = (ox + x, oy + y, oz + z)
                hi = (lo[0] + block, lo[1] + block, lo[2] + block)
                records.append(_record_from_bbox(lo, hi, _mean(values[offs]), block**3, transform))
                continue
        consumed[off] = True
        v = (ox + x, oy + y, oz + z)
        records.append(_record_from_bbox(
            v, (v[0] + 1, v[1] + 1, v[2] + 1), float(values[off]), 1, transform))
    return records


# -- variance-based clustering -------------------------------------------------

def _positional_variance(points: np.ndarray) -> float:
    centroid = points.mean(axis=0)
    return float(((points - centroid) ** 2).sum(axis=1).mean())


def _variance_groups(points: np.ndarray, threshold: float, depth_limit: int) -> list[np.ndarray]:
    """Recursive median split along the most-varying axis until homogeneous."""
    groups: list[np.ndarray] = []

    def recurse(idx: np.ndarray, depth: int) -> None:
        if len(idx) == 1 or depth >= depth_limit or _positional_variance(points[idx]) <= threshold:
            groups.append(idx)
            return
        sub = points[idx]
        axis = int(sub.var(axis=0).argmax())
        order = np.argsort(sub[:, axis], kind="stable")
        half = len(idx) // 2
        recurse(idx[order[:half]], depth + 1)
        recurse(idx[order[half:]], depth + 1)

    recurse(np.arange(len(points)), 0)
    return groups


def variance_split(points, values, threshold: float, depth_limit: int = 16,
                   point_extent=None) -> list[Gaussian]:
    """Adaptively cluster world-space samples by positional variance.

    Each emitted Gaussian covers one group's bounding box (padded by half
    of ``point_extent`` per side so single samples keep positive radii)
    with opacity the group's mean value.
    """
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    if len(points) == 0:
        raise ValueError("variance_split requires at least one sample")
    values = np.asarray(values, dtype=np.float64).reshape(len(points))
    extent = np.zeros(3) if point_extent is None else np.broadcast_to(
        np.asarray(point_extent, dtype=np.float64), (3,))

    out = []
    for idx in _variance_groups(points, threshold, depth_limit):
        sub = points[idx]
        lo = sub.min(axis=0) - extent / 2
        hi = sub.max(axis=0) + extent / 2
        mu = (lo + hi) / 2
        r = (hi - lo) / 2
        r32 = r.astype(np.float32)
        shape = SHAPES[SHAPE_SPHERE] if r32[0] == r32[1] == r32[2] else SHAPES[SHAPE_ELLIPSOID]
        out.append(Gaussian(tuple(mu), tuple(r), float(values[idx].mean()), shape))
    return out


def positional_variance(points) -> float:
    """Population variance (1/N) sum ||x_i - centroid||^2."""
    return _positional_variance(np.asarray(points, dtype=np.float64).reshape(-1, 3))


def _leaf_records_variance(leaf: LeafNode, transform: GridTransform, cfg: ExtractConfig) -> list[_Record]:
    active = np.flatnonzero(leaf.active_mask)
    if len(active) == 0:
        return []
    origin = np.array(leaf.origin, dtype=np.int64)
    coords = origin + LEAF_COORDS[active]
    centers = coords + 0.5
    world = (transform.matrix[:3, :3] @ centers.T).T + transform.matrix[:3, 3]
    values = leaf.values[active]
    records = []
    for idx in _variance_groups(world, cfg.variance_threshold, depth_limit=16):
        sub = coords[idx]
        lo = sub.min(axis=0)
        hi = sub.max(axis=0) + 1
        alpha = _mean(values[idx])
        alpha = _scaled(alpha, len(idx), lo, hi, cfg)
        records.append(_record_from_bbox(lo, hi, alpha, len(idx), transform))
    return records


# -- whole-grid extraction ------------------------------------------------------

def _leaf_records(leaf: LeafNode, transform: GridTransform, cfg: ExtractConfig) -> list[_Record]:
    if cfg.enable_variance_split:
        return _leaf_records_variance(leaf, transform, cfg)
    if cfg.lod == "low":
        rec = _leaf_record_low(leaf, transform, cfg)
        return [] if rec is None else [rec]
    if cfg.lod == "medium":
        return _leaf_records_medium(leaf, transform, cfg)
    return _leaf_records_high(leaf, transform, cfg)


def extract(grid: SparseGrid, cfg: Optional[ExtractConfig] = None, threads: int = 1) -> GaussianSet:
    """Convert a grid's leaves and tiles into an ordered GaussianSet.

    Worker count never changes the output: leaves are processed in
    per-worker buffers and concatenated back in leaf_iter order, with
    tile Gaussians appended after all leaf Gaussians.
    """
    cfg = cfg or ExtractConfig()
    leaves = list(grid.leaf_iter())
    transform = grid.transform

    if threads > 1 and len(leaves) > 1:
        chunks = np.array_split(np.arange(len(leaves)), threads)
        results: list[list[list[_Record]]] = [[] for _ in chunks]

        def work(ci: int) -> None:
            results[ci] = [_leaf_records(leaves[i], transform, cfg) for i in chunks[ci]]

        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(work, range(len(chunks))))
        per_leaf = [recs for chunk in results for recs in chunk]
    else:
        per_leaf = [_leaf_records(leaf, transform, cfg) for leaf in leaves]

    records: list[_Record] = []
    ranges: list[tuple[int, int]] = []
    for recs in per_leaf:
        ranges.append((len(records), len(recs)))
        records.extend(recs)
    for bbox, value, _level in grid.tile_iter():
        rec = _tile_record(bbox, value, transform)
        ranges.append((len(records), 1))
        records.append(rec)

    out = GaussianSet.from_records(records, cfg.lod, grid.grid_class, transform, ranges)
    if cfg.enable_merge_pass:
        threshold = cfg.merge_threshold if cfg.merge_threshold is not None else cfg.variance_threshold
        out = merge_pass(out, grid, threshold)
    return out


# -- inter-leaf merging ----------------------------------------------------------

def merge_pass(gset: GaussianSet, grid: SparseGrid, threshold: float) -> GaussianSet:
    """Merge clusters of neighboring leaves whose Gaussians sit close together.

    Each leaf and its up-to-26 face/edge/corner neighbors form a candidate
    group; when the positional variance of the group's Gaussian centers is
    at or below the threshold the whole group collapses into one Gaussian
    spanning the member bboxes. Groups are attempted from the most-connected
    leaf outward and consumed members are never reused. Tile Gaussians are
    left untouched.
    """
    if gset.leaf_ranges is None or gset.src_bbox_min is None:
        raise ValueError("merge_pass requires extraction metadata (leaf_ranges, source bboxes)")

    leaves = list(grid.leaf_iter())
    n_leaves = len(leaves)
    origin_to_leaf = {tuple(leaf.origin): i for i, leaf in enumerate(leaves)}

    neighbor_lists: list[list[int]] = []
    for leaf in leaves:
        ox, oy, oz = leaf.origin
        nbrs = []
        for dx in (-LEAF_DIM, 0, LEAF_DIM):
            for dy in (-LEAF_DIM, 0, LEAF_DIM):
                for dz in (-LEAF_DIM, 0, LEAF_DIM):
                    if dx == dy == dz == 0:
                        continue
                    j = origin_to_leaf.get((ox + dx, oy + dy, oz + dz))
                    if j is not None:
                        nbrs.append(j)
        neighbor_lists.append(nbrs)

    # most-connected leaves first so uniform blocks collapse around their center
    order = sorted(range(n_leaves), key=lambda i: (-len(neighbor_lists[i]), i))

    ranges = gset.leaf_ranges
    consumed = np.zeros(n_leaves, dtype=bool)
    merged_records: list[tuple[int, _Record]] = []  # (position of first member gaussian, record)
    gaussian_consumed = np.zeros(len(gset), dtype=bool)

    for i in order:
        if consumed[i]:
            continue
        members = [i] + [j for j in neighbor_lists[i] if not consumed[j]]
        if len(members) == 1:
            continue
        idx = np.concatenate([
            np.arange(ranges[m][0], ranges[m][0] + ranges[m][1]) for m in members
        ])
        if len(idx) < 2:
            continue
        if _positional_variance(gset.positions[idx].astype(np.float64)) > threshold:
            continue
        bmin = gset.src_bbox_min[idx].min(axis=0)
        bmax = gset.src_bbox_max[idx].max(axis=0)
        counts = gset.src_counts[idx].astype(np.float64)
        alpha = float((gset.opacities[idx].astype(np.float64) * counts).sum() / counts.sum())
        rec = _record_from_bbox(bmin, bmax, alpha, int(counts.sum()), gset.transform)
        merged_records.append((int(idx.min()), rec))
        for m in members:
            consumed[m] = True
        gaussian_consumed[idx] = True

    # survivors keep their original relative order; merged groups sit at the
    # position of their earliest member
    entries: list[tuple[int, _Record]] = list(merged_records)
    for gi in np.flatnonzero(~gaussian_consumed):
        gi = int(gi)
        rec = _Record(
            position=tuple(float(v) for v in gset.positions[gi]),
            radii=tuple(float(v) for v in gset.radii[gi]),
            opacity=float(gset.opacities[gi]),
            shape=int(gset.shapes[gi]),
            bbox_min=tuple(int(v) for v in gset.src_bbox_min[gi]),
            bbox_max=tuple(int(v) for v in gset.src_bbox_max[gi]),
            count=int(gset.src_counts[gi]),
        )
        entries.append((gi, rec))
    entries.sort(key=lambda e: e[0])
    records = [rec for _, rec in entries]
    ranges_out = [(k, 1) for k in range(len(records))]
    return GaussianSet.from_records(records, gset.lod, gset.grid_class, gset.transform, ranges_out)
