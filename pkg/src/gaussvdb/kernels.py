"""Compiled kernels for BVH construction, traversal, and ray marching.

Everything here operates on flat float64 arrays so the hot loops stay in
machine code. Rays are processed independently (one pixel never reads
another pixel's state), which makes frames bit-identical for any worker
count.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit, prange

STACK_DEPTH = 128


@njit(cache=True)
def ray_box_interval(ox, oy, oz, dx, dy, dz, bminx, bminy, bminz, bmaxx, bmaxy, bmaxz):
    """Slab intersection clipped to t >= 0; returns (hit, t0, t1)."""
    tmin = 0.0
    tmax = math.inf
    o = (ox, oy, oz)
    d = (dx, dy, dz)
    bmin = (bminx, bminy, bminz)
    bmax = (bmaxx, bmaxy, bmaxz)
    for axis in range(3):
        if d[axis] == 0.0:
            if o[axis] < bmin[axis] or o[axis] > bmax[axis]:
                return False, 0.0, 0.0
        else:
            inv = 1.0 / d[axis]
            t1 = (bmin[axis] - o[axis]) * inv
            t2 = (bmax[axis] - o[axis]) * inv
            if t1 > t2:
                t1, t2 = t2, t1
            if t1 > tmin:
                tmin = t1
            if t2 < tmax:
                tmax = t2
            if tmin > tmax:
                return False, 0.0, 0.0
    return True, tmin, tmax


@njit(cache=True)
def ray_gaussian_interval(ox, oy, oz, dx, dy, dz, mx, my, mz, ir2x, ir2y, ir2z):
    """Entry/exit parameters on the unit-Mahalanobis boundary, t >= 0.

    Solves A t^2 + B t + C = 0 with A = d^T S^-1 d, B = 2 (o-mu)^T S^-1 d,
    C = (o-mu)^T S^-1 (o-mu) - 1 using the numerically stable form.
    """
    ex = ox - mx
    ey = oy - my
    ez = oz - mz
    a = dx * dx * ir2x + dy * dy * ir2y + dz * dz * ir2z
    b = 2.0 * (ex * dx * ir2x + ey * dy * ir2y + ez * dz * ir2z)
    c = ex * ex * ir2x + ey * ey * ir2y + ez * ez * ir2z - 1.0
    disc = b * b - 4.0 * a * c
    if disc < 0.0 or a == 0.0:
        return False, 0.0, 0.0
    sq = math.sqrt(disc)
    if b >= 0.0:
        q = -0.5 * (b + sq)
    else:
        q = -0.5 * (b - sq)
    if q == 0.0:
        t0 = 0.0
        t1 = 0.0
    else:
        t0 = q / a
        t1 = c / q
        if t0 > t1:
            t0, t1 = t1, t0
    if t1 < 0.0:
        return False, 0.0, 0.0
    if t0 < 0.0:
        t0 = 0.0
    return True, t0, t1


# -- BVH construction ------------------------------------------------------------

@njit(cache=True)
def build_bvh_arrays(aabb_min, aabb_max, leaf_size):
    """Median-split BVH; returns (node_min, node_max, node_left, node_count, prim_idx, n_nodes).

    node_count > 0 marks a leaf holding prim_idx[node_left : node_left+node_count];
    internal nodes store their first child in node_left (children are adjacent).
    """
    n = aabb_min.shape[0]
    max_nodes = max(2 * n, 1)
    node_min = np.empty((max_nodes, 3), dtype=np.float64)
    node_max = np.empty((max_nodes, 3), dtype=np.float64)
    node_left = np.zeros(max_nodes, dtype=np.int64)
    node_count = np.zeros(max_nodes, dtype=np.int64)
    prim_idx = np.arange(n)
    if n == 0:
        return node_min[:0], node_max[:0], node_left[:0], node_count[:0], prim_idx, 0

    centroids = (aabb_min + aabb_max) * 0.5
    stack = np.empty((STACK_DEPTH, 3), dtype=np.int64)
    stack[0] = (0, 0, n)
    top = 1
    n_nodes = 1
    while top > 0:
        top -= 1
        nid, start, end = stack[top]
        bmin = aabb_min[prim_idx[start]].copy()
        bmax = aabb_max[prim_idx[start]].copy()
        cmin = centroids[prim_idx[start]].copy()
        cmax = centroids[prim_idx[start]].copy()
        for i in range(start + 1, end):
            p = prim_idx[i]
            for axis in range(3):
                if aabb_min[p, axis] < bmin[axis]:
                    bmin[axis] = aabb_min[p, axis]
                if aabb_max[p, axis] > bmax[axis]:
                    bmax[axis] = aabb_max[p, axis]
                if centroids[p, axis] < cmin[axis]:
                    cmin[axis] = centroids[p, axis]
                if centroids[p, axis] > cmax[axis]:
                    cmax[axis] = centroids[p, axis]
        node_min[nid] = bmin
        node_max[nid] = bmax

        count = end - start
        extent = cmax - cmin
        axis = 0
        if extent[1] > extent[axis]:
            axis = 1
        if extent[2] > extent[axis]:
            axis = 2
        if count <= leaf_size or extent[axis] == 0.0 or top + 2 > STACK_DEPTH:
            node_left[nid] = start
            node_count[nid] = count
            continue

        keys = np.empty(count, dtype=np.float64)
        for i in range(count):
            keys[i] = centroids[prim_idx[start + i], axis]
        order = np.argsort(keys, kind="mergesort")
        scratch = prim_idx[start:end].copy()
        for i in range(count):
            prim_idx[start + i] = scratch[order[i]]
        mid = start + count // 2

        left = n_nodes
        n_nodes += 2
        node_left[nid] = left
        node_count[nid] = 0
        stack[top] = (left, start, mid)
        top += 1
        stack[top] = (left + 1, mid, end)
        top += 1
    return node_min[:n_nodes], node_max[:n_nodes], node_left[:n_nodes], node_count[:n_nodes], prim_idx, n_nodes


@njit(cache=True)
def collect_box_candidates(ox, oy, oz, dx, dy, dz,
                           node_min, node_max, node_left, node_count, prim_idx,
                           aabb_min, aabb_max, out_idx):
    """Indices of every primitive AABB the ray overlaps (t >= 0)."""
    n_out = 0
    if node_min.shape[0] == 0:
        return 0
    stack = np.empty(STACK_DEPTH, dtype=np.int64)
    stack[0] = 0
    top = 1
    while top > 0:
        top -= 1
        nid = stack[top]
        hit, _, _ = ray_box_interval(ox, oy, oz, dx, dy, dz,
                                     node_min[nid, 0], node_min[nid, 1], node_min[nid, 2],
                                     node_max[nid, 0], node_max[nid, 1], node_max[nid, 2])
        if not hit:
            continue
        if node_count[nid] > 0:
            for i in range(node_left[nid], node_left[nid] + node_count[nid]):
                p = prim_idx[i]
                phit, _, _ = ray_box_interval(ox, oy, oz, dx, dy, dz,
                                              aabb_min[p, 0], aabb_min[p, 1], aabb_min[p, 2],
                                              aabb_max[p, 0], aabb_max[p, 1], aabb_max[p, 2])
                if phit and n_out < out_idx.shape[0]:
                    out_idx[n_out] = p
                    n_out += 1
        else:
            stack[top] = node_left[nid]
            top += 1
            stack[top] = node_left[nid] + 1
            top += 1
    return n_out


@njit(cache=True)
def _push_hit(t0, t1, p, hit_t0, hit_t1, hit_idx, n_hits):
    cap = hit_t0.shape[0]
    if n_hits < cap:
        hit_t0[n_hits] = t0
        hit_t1[n_hits] = t1
        hit_idx[n_hits] = p
        return n_hits + 1
    # buffer full: keep the nearest entries (far ones are unreachable anyway)
    worst = 0
    for i in range(1, cap):
        if hit_t0[i] > hit_t0[worst]:
            worst = i
    if t0 < hit_t0[worst]:
        hit_t0[worst] = t0
        hit_t1[worst] = t1
        hit_idx[worst] = p
    return n_hits


@njit(cache=True)
def collect_gaussian_hits(ox, oy, oz, dx, dy, dz,
                          node_min, node_max, node_left, node_count, prim_idx,
                          mu, inv_r2, hit_t0, hit_t1, hit_idx):
    n_hits = 0
    if node_min.shape[0] == 0:
        return 0
    stack = np.empty(STACK_DEPTH, dtype=np.int64)
    stack[0] = 0
    top = 1
    while top > 0:
        top -= 1
        nid = stack[top]
        bhit, _, _ = ray_box_interval(ox, oy, oz, dx, dy, dz,
                                      node_min[nid, 0], node_min[nid, 1], node_min[nid, 2],
                                      node_max[nid, 0], node_max[nid, 1], node_max[nid, 2])
        if not bhit:
            continue
        if node_count[nid] > 0:
            for i in range(node_left[nid], node_left[nid] + node_count[nid]):
                p = prim_idx[i]
                ghit, t0, t1 = ray_gaussian_interval(
                    ox, oy, oz, dx, dy, dz,
                    mu[p, 0], mu[p, 1], mu[p, 2],
                    inv_r2[p, 0], inv_r2[p, 1], inv_r2[p, 2])
                if ghit:
                    n_hits = _push_hit(t0, t1, p, hit_t0, hit_t1, hit_idx, n_hits)
        else:
            stack[top] = node_left[nid]
            top += 1
            stack[top] = node_left[nid] + 1
            top += 1
    return n_hits


@njit(cache=True)
def collect_gaussian_hits_brute(ox, oy, oz, dx, dy, dz,
                                mu, inv_r2, hit_t0, hit_t1, hit_idx):
    """Reference path: test every Gaussian on every ray, no acceleration."""
    n_hits = 0
    for p in range(mu.shape[0]):
        ghit, t0, t1 = ray_gaussian_interval(
            ox, oy, oz, dx, dy, dz,
            mu[p, 0], mu[p, 1], mu[p, 2],
            inv_r2[p, 0], inv_r2[p, 1], inv_r2[p, 2])
        if ghit:
            n_hits = _push_hit(t0, t1, p, hit_t0, hit_t1, hit_idx, n_hits)
    return n_hits


@njit(cache=True)
def integrate_hits(ox, oy, oz, dx, dy, dz, n_hits, hit_t0, hit_t1, hit_idx,
                   mu, inv_r2, alpha, volfac, colors,
                   n_samples, density_scale, t_floor, max_segments, sample_at_entry,
                   bg_r, bg_g, bg_b):
    """Front-to-back march over sorted hits; returns (r, g, b, transmittance)."""
    col_r = 0.0
    col_g = 0.0
    col_b = 0.0
    T = 1.0
    order = np.argsort(hit_t0[:n_hits], kind="mergesort")
    segments = 0
    for oi in range(n_hits):
        if T < t_floor or segments >= max_segments:
            break
        h = order[oi]
        p = hit_idx[h]
        t0 = hit_t0[h]
        t1 = hit_t1[h]
        if t1 <= t0:
            continue
        cr = colors[p, 0]
        cg = colors[p, 1]
        cb = colors[p, 2]
        vf = volfac[p]
        a = alpha[p]
        if sample_at_entry:
            dt = t1 - t0
            n_sub = 1
        else:
            dt = (t1 - t0) / n_samples
            n_sub = n_samples
        for k in range(n_sub):
            if sample_at_entry:
                t = t0
            else:
                t = t0 + (k + 0.5) * dt
            px = ox + t * dx - mu[p, 0]
            py = oy + t * dy - mu[p, 1]
            pz = oz + t * dz - mu[p, 2]
            d2 = px * px * inv_r2[p, 0] + py * py * inv_r2[p, 1] + pz * pz * inv_r2[p, 2]
            rho = a * math.exp(-0.5 * d2)
            absorb = density_scale * rho * dt * vf
            col_r += T * cr * absorb
            col_g += T * cg * absorb
            col_b += T * cb * absorb
            T *= math.exp(-absorb)
            if T < t_floor:
                break
        segments += 1
    col_r += T * bg_r
    col_g += T * bg_g
    col_b += T * bg_b
    return col_r, col_g, col_b, T


@njit(cache=True, parallel=True)
def render_frame(origin, dirs,
                 node_min, node_max, node_left, node_count, prim_idx,
                 mu, inv_r2, alpha, volfac, colors,
                 n_samples, density_scale, t_floor, max_segments, sample_at_entry,
                 bg, hit_cap, use_bvh, out):
    height = dirs.shape[0]
    width = dirs.shape[1]
    ox = origin[0]
    oy = origin[1]
    oz = origin[2]
    for row in prange(height):
        hit_t0 = np.empty(hit_cap, dtype=np.float64)
        hit_t1 = np.empty(hit_cap, dtype=np.float64)
        hit_idx = np.empty(hit_cap, dtype=np.int64)
        for col in range(width):
            dx = dirs[row, col, 0]
            dy = dirs[row, col, 1]
            dz = dirs[row, col, 2]
            if use_bvh:
                n_hits = collect_gaussian_hits(ox, oy, oz, dx, dy, dz,
                                               node_min, node_max, node_left, node_count,
                                               prim_idx, mu, inv_r2, hit_t0, hit_t1, hit_idx)
            else:
                n_hits = collect_gaussian_hits_brute(ox, oy, oz, dx, dy, dz,
                                                     mu, inv_r2, hit_t0, hit_t1, hit_idx)
            r, g, b, T = integrate_hits(ox, oy, oz, dx, dy, dz, n_hits,
                                        hit_t0, hit_t1, hit_idx,
                                        mu, inv_r2, alpha, volfac, colors,
                                        n_samples, density_scale, t_floor, max_segments,
                                        sample_at_entry, bg[0], bg[1], bg[2])
            out[row, col, 0] = r
            out[row, col, 1] = g
            out[row, col, 2] = b
            out[row, col, 3] = 1.0 - T
