"""Bounding-volume hierarchy over per-Gaussian world AABBs."""

from __future__ import annotations

import numpy as np

from .extract import GaussianSet
from .kernels import build_bvh_arrays, collect_box_candidates

LEAF_SIZE = 2


class Bvh:
    """Median-split BVH; traversal visits every AABB a ray overlaps."""

    def __init__(self, aabb_min: np.ndarray, aabb_max: np.ndarray, leaf_size: int = LEAF_SIZE):
        self.aabb_min = np.ascontiguousarray(aabb_min, dtype=np.float64).reshape(-1, 3)
        self.aabb_max = np.ascontiguousarray(aabb_max, dtype=np.float64).reshape(-1, 3)
        if self.aabb_min.shape != self.aabb_max.shape:
            raise ValueError("aabb_min and aabb_max must have matching shapes")
        if np.any(self.aabb_min > self.aabb_max):
            raise ValueError("aabb min must not exceed max")
        (self.node_min, self.node_max, self.node_left, self.node_count,
         self.prim_index, self.n_nodes) = build_bvh_arrays(self.aabb_min, self.aabb_max, leaf_size)

    def __len__(self) -> int:
        return len(self.aabb_min)

    @property
    def root_bounds(self) -> tuple[np.ndarray, np.ndarray]:
        if self.n_nodes == 0:
            raise ValueError("empty BVH has no bounds")
        return self.node_min[0].copy(), self.node_max[0].copy()

    def candidates(self, origin, direction) -> np.ndarray:
        """Primitive indices whose AABB the ray (t >= 0) overlaps, sorted."""
        origin = np.asarray(origin, dtype=np.float64)
        direction = np.asarray(direction, dtype=np.float64)
        out = np.empty(max(len(self), 1), dtype=np.int64)
        n = collect_box_candidates(
            origin[0], origin[1], origin[2], direction[0], direction[1], direction[2],
            self.node_min, self.node_max, self.node_left, self.node_count, self.prim_index,
            self.aabb_min, self.aabb_max, out)
        return np.sort(out[:n])

    def validate(self) -> None:
        """Structural checks: index permutation and child containment."""
        assert sorted(self.prim_index.tolist()) == list(range(len(self)))
        seen = np.zeros(len(self), dtype=bool)
        for nid in range(self.n_nodes):
            if self.node_count[nid] > 0:
                s = self.node_left[nid]
                e = s + self.node_count[nid]
                assert not seen[self.prim_index[s:e]].any(), "primitive in two leaves"
                seen[self.prim_index[s:e]] = True
                for p in self.prim_index[s:e]:
                    assert np.all(self.aabb_min[p] >= self.node_min[nid] - 1e-12)
                    assert np.all(self.aabb_max[p] <= self.node_max[nid] + 1e-12)
            else:
                for child in (self.node_left[nid], self.node_left[nid] + 1):
                    assert np.all(self.node_min[child] >= self.node_min[nid] - 1e-12)
                    assert np.all(self.node_max[child] <= self.node_max[nid] + 1e-12)
        if len(self):
            assert seen.all(), "primitive missing from every leaf"


def gaussian_aabbs(gset: GaussianSet) -> tuple[np.ndarray, np.ndarray]:
    mu = gset.positions.astype(np.float64)
    r = gset.radii.astype(np.float64)
    return mu - r, mu + r


def build_bvh(gset: GaussianSet, leaf_size: int = LEAF_SIZE) -> Bvh:
    lo, hi = gaussian_aabbs(gset)
    return Bvh(lo, hi, leaf_size)
