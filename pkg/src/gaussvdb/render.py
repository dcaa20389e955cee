"""Deterministic CPU ray marcher for Gaussian particle sets.

Primary rays go through pixel centers of a pinhole camera. Each ray
collects the Gaussians it crosses (via the BVH), sorts them by entry
distance, and integrates absorption front to back with Beer-Lambert
transmittance updates. Identical inputs give identical bytes, whatever
the worker count.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from PIL import Image

from . import kernels
from .bvh import Bvh, build_bvh
from .colormaps import TF_NAMES, get_lut, tf_lookup
from .extract import Gaussian, GaussianSet

CAMERA_FIELDS = ("eye", "target", "up", "fov_deg", "width", "height")
CONFIG_FIELDS = ("lod", "tf", "tf_range", "density_scale", "samples_per_segment",
                 "t_min", "max_segments", "background")


@dataclass
class Ray:
    origin: np.ndarray
    direction: np.ndarray

    def __init__(self, origin, direction):
        self.origin = np.asarray(origin, dtype=np.float64).reshape(3)
        d = np.asarray(direction, dtype=np.float64).reshape(3)
        norm = float(np.linalg.norm(d))
        if norm == 0.0:
            raise ValueError("ray direction must be non-zero")
        self.direction = d / norm

    def at(self, t: float) -> np.ndarray:
        return self.origin + t * self.direction


@dataclass(frozen=True)
class Aabb:
    min: tuple[float, float, float]
    max: tuple[float, float, float]

    def __post_init__(self):
        if any(lo > hi for lo, hi in zip(self.min, self.max)):
            raise ValueError(f"invalid box: min {self.min} exceeds max {self.max}")

    @classmethod
    def of_gaussian(cls, g: Gaussian) -> "Aabb":
        return cls(tuple(p - r for p, r in zip(g.position, g.radii)),
                   tuple(p + r for p, r in zip(g.position, g.radii)))


@dataclass
class Camera:
    eye: tuple[float, float, float]
    target: tuple[float, float, float]
    up: tuple[float, float, float] = (0.0, 1.0, 0.0)
    fov_deg: float = 45.0
    width: int = 512
    height: int = 512

    def __post_init__(self):
        self.eye = tuple(float(v) for v in self.eye)
        self.target = tuple(float(v) for v in self.target)
        self.up = tuple(float(v) for v in self.up)
        if self.eye == self.target:
            raise ValueError("camera eye and target coincide")
        if not 0.0 < self.fov_deg < 180.0:
            raise ValueError(f"vertical fov must be in (0, 180), got {self.fov_deg}")
        self.width = int(self.width)
        self.height = int(self.height)
        if self.width < 1 or self.height < 1:
            raise ValueError(f"image size must be positive, got {self.width}x{self.height}")

    def basis(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        forward = np.asarray(self.target, dtype=np.float64) - np.asarray(self.eye, dtype=np.float64)
        forward /= np.linalg.norm(forward)
        right = np.cross(forward, np.asarray(self.up, dtype=np.float64))
        norm = np.linalg.norm(right)
        if norm < 1e-12:
            raise ValueError("camera up vector is parallel to the view direction")
        right /= norm
        true_up = np.cross(right, forward)
        return forward, right, true_up

    def ray_directions(self) -> np.ndarray:
        """Unit directions through every pixel center, shape (height, width, 3)."""
        forward, right, true_up = self.basis()
        tan_v = math.tan(math.radians(self.fov_deg) / 2.0)
        tan_h = tan_v * self.width / self.height
        u = ((np.arange(self.width) + 0.5) / self.width * 2.0 - 1.0) * tan_h
        v = (1.0 - 2.0 * (np.arange(self.height) + 0.5) / self.height) * tan_v
        dirs = (forward[None, None, :]
                + u[None, :, None] * right[None, None, :]
                + v[:, None, None] * true_up[None, None, :])
        dirs /= np.linalg.norm(dirs, axis=2, keepdims=True)
        return dirs

    def primary_ray(self, col: int, row: int) -> Ray:
        return Ray(self.eye, self.ray_directions()[row, col])


@dataclass
class RenderConfig:
    samples_per_segment: int = 8
    density_scale: float = 1.0
    volume_factor_cap: float = 1e4
    t_min: float = 0.01
    max_segments: int = 512
    tf: str = "viridis"
    tf_range: Optional[tuple[float, float]] = None
    background: tuple[float, float, float] = (0.0, 0.0, 0.0)
    sample_at_entry: bool = False
    lod: Optional[str] = None

    def __post_init__(self):
        if self.samples_per_segment < 1:
            raise ValueError("samples_per_segment must be >= 1")
        if not 0.0 < self.t_min < 1.0:
            raise ValueError("t_min must lie in (0, 1)")
        if self.max_segments < 1:
            raise ValueError("max_segments must be >= 1")
        if self.tf not in TF_NAMES:
            raise ValueError(f"tf must be one of {TF_NAMES}, got {self.tf!r}")
        if self.tf_range is not None:
            lo, hi = self.tf_range
            if not lo < hi:
                raise ValueError(f"tf_range must satisfy lo < hi, got {self.tf_range}")
        if len(self.background) != 3:
            raise ValueError("background must be an RGB triple")


@dataclass
class Framebuffer:
    width: int
    height: int
    pixels: np.ndarray  # (height, width, 4) uint8

    @classmethod
    def from_float(cls, rgba: np.ndarray) -> "Framebuffer":
        q = (np.clip(rgba, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)
        return cls(rgba.shape[1], rgba.shape[0], q)

    def to_png_bytes(self) -> bytes:
        buf = io.BytesIO()
        Image.fromarray(self.pixels, "RGBA").save(buf, format="PNG")
        return buf.getvalue()

    def write_png(self, path) -> None:
        with open(path, "wb") as f:
            f.write(self.to_png_bytes())


def camera_from_json(doc: dict) -> Camera:
    unknown = set(doc) - set(CAMERA_FIELDS)
    if unknown:
        raise ValueError(f"unknown camera fields: {sorted(unknown)}")
    missing = {"eye", "target"} - set(doc)
    if missing:
        raise ValueError(f"camera document missing fields: {sorted(missing)}")
    kwargs = {k: doc[k] for k in CAMERA_FIELDS if k in doc}
    return Camera(**kwargs)


def config_from_json(doc: dict) -> RenderConfig:
    unknown = set(doc) - set(CONFIG_FIELDS)
    if unknown:
        raise ValueError(f"unknown render config fields: {sorted(unknown)}")
    kwargs = dict(doc)
    if "tf_range" in kwargs and kwargs["tf_range"] is not None:
        kwargs["tf_range"] = tuple(float(v) for v in kwargs["tf_range"])
    if "background" in kwargs:
        kwargs["background"] = tuple(float(v) for v in kwargs["background"])
    return RenderConfig(**kwargs)


# -- scalar geometry ---------------------------------------------------------

def ray_aabb(ray: Ray, box: Aabb) -> Optional[tuple[float, float]]:
    """Slab-test interval clipped to t >= 0, or None when disjoint."""
    o, d = ray.origin, ray.direction
    hit, t0, t1 = kernels.ray_box_interval(
        o[0], o[1], o[2], d[0], d[1], d[2],
        box.min[0], box.min[1], box.min[2], box.max[0], box.max[1], box.max[2])
    return (t0, t1) if hit else None


def _inv_r2(radii) -> tuple[float, float, float]:
    if any(r <= 0 for r in radii):
        raise ValueError(f"Gaussian radii must be strictly positive, got {radii}")
    return (1.0 / radii[0] ** 2, 1.0 / radii[1] ** 2, 1.0 / radii[2] ** 2)


def ray_gaussian(ray: Ray, g: Gaussian) -> Optional[tuple[float, float]]:
    """Entry/exit distances where the Mahalanobis distance equals one."""
    o, d = ray.origin, ray.direction
    ir = _inv_r2(g.radii)
    hit, t0, t1 = kernels.ray_gaussian_interval(
        o[0], o[1], o[2], d[0], d[1], d[2],
        g.position[0], g.position[1], g.position[2], ir[0], ir[1], ir[2])
    return (t0, t1) if hit else None


def mahalanobis_sq(x, g: Gaussian) -> float:
    ir = _inv_r2(g.radii)
    return sum((float(x[i]) - g.position[i]) ** 2 * ir[i] for i in range(3))


def gaussian_density(x, g: Gaussian) -> float:
    """Opacity-weighted density alpha * exp(-D^2 / 2) at a world point."""
    return g.opacity * math.exp(-0.5 * mahalanobis_sq(x, g))


def _volume_factor(g: Gaussian, cfg: RenderConfig) -> float:
    det = (g.radii[0] * g.radii[1] * g.radii[2]) ** 2
    return min(1.0 / det, cfg.volume_factor_cap)


def integrate_segment(ray: Ray, g: Gaussian, t0: float, t1: float, cfg: RenderConfig,
                      state: tuple[tuple[float, float, float], float],
                      color: Optional[tuple[float, float, float]] = None,
                      ) -> tuple[tuple[float, float, float], float]:
    """March one Gaussian chord, updating (accumulated color, transmittance).

    Samples sit at sub-interval midpoints (or at t0 alone when
    sample_at_entry is set); each contributes absorption
    density_scale * rho * dt * volume_factor.
    """
    if not t0 < t1:
        raise ValueError("integrate_segment requires t0 < t1")
    (col_r, col_g, col_b), T = state
    if T <= 0.0:
        raise ValueError("transmittance must be positive on entry")
    if color is None:
        if cfg.tf_range is None:
            raise ValueError("cfg.tf_range must be resolved before integration")
        color = tf_lookup(cfg.tf, g.opacity, cfg.tf_range)
    vf = _volume_factor(g, cfg)
    if cfg.sample_at_entry:
        n_sub, dt = 1, t1 - t0
    else:
        n_sub, dt = cfg.samples_per_segment, (t1 - t0) / cfg.samples_per_segment
    for k in range(n_sub):
        t = t0 if cfg.sample_at_entry else t0 + (k + 0.5) * dt
        rho = gaussian_density(ray.at(t), g)
        absorb = cfg.density_scale * rho * dt * vf
        col_r += T * color[0] * absorb
        col_g += T * color[1] * absorb
        col_b += T * color[2] * absorb
        T *= math.exp(-absorb)
        if T < cfg.t_min:
            break
    return (col_r, col_g, col_b), T


def resolve_tf_range(gset: GaussianSet, cfg: RenderConfig) -> tuple[float, float]:
    if cfg.tf_range is not None:
        return tuple(cfg.tf_range)
    if len(gset) == 0:
        return (0.0, 1.0)
    lo = float(gset.opacities.min())
    hi = float(gset.opacities.max())
    if lo == hi:
        return (lo - 0.5, hi + 0.5)
    return (lo, hi)


def _scene_arrays(gset: GaussianSet, cfg: RenderConfig):
    """Per-Gaussian render inputs: centers, 1/r^2, alpha, volume factor, color."""
    mu = gset.positions.astype(np.float64)
    r = gset.radii.astype(np.float64)
    if np.any(r <= 0):
        raise ValueError("all Gaussian radii must be strictly positive")
    inv_r2 = 1.0 / (r * r)
    det = (r[:, 0] * r[:, 1] * r[:, 2]) ** 2
    volfac = np.minimum(1.0 / det, cfg.volume_factor_cap)
    lut = get_lut(cfg.tf)
    if gset.grid_class == "levelset":
        # surface sets: uniform opacity, fixed mid-map color
        alpha = np.ones(len(gset), dtype=np.float64)
        colors = np.tile(lut[len(lut) // 2], (len(gset), 1))
    else:
        alpha = gset.opacities.astype(np.float64)
        lo, hi = resolve_tf_range(gset, cfg)
        t = np.clip((alpha - lo) / (hi - lo), 0.0, 1.0)
        idx = np.rint(t * (len(lut) - 1)).astype(np.int64)
        colors = lut[idx]
    return mu, inv_r2, alpha, volfac, colors


def trace_ray(ray: Ray, bvh: Bvh, gset: GaussianSet, cfg: RenderConfig,
              collect_trace: bool = False):
    """Reference single-ray integration; returns (r, g, b, alpha).

    With collect_trace the per-segment transmittance trajectory is
    returned as a second value.
    """
    mu, inv_r2, alpha, volfac, colors = _scene_arrays(gset, cfg)
    o, d = ray.origin, ray.direction
    hits = []
    for p in bvh.candidates(o, d):
        hit, t0, t1 = kernels.ray_gaussian_interval(
            o[0], o[1], o[2], d[0], d[1], d[2],
            mu[p, 0], mu[p, 1], mu[p, 2], inv_r2[p, 0], inv_r2[p, 1], inv_r2[p, 2])
        if hit:
            hits.append((t0, t1, int(p)))
    hits.sort(key=lambda h: h[0])

    color = (0.0, 0.0, 0.0)
    T = 1.0
    trajectory = [T]
    segments = 0
    for t0, t1, p in hits:
        if T < cfg.t_min or segments >= cfg.max_segments:
            break
        if not t0 < t1:
            continue
        g = Gaussian(position=tuple(mu[p]), radii=tuple(gset.radii[p].astype(np.float64)),
                     opacity=float(alpha[p]), shape="ellipsoid")
        color, T = integrate_segment(ray, g, t0, t1, cfg, (color, T), color=tuple(colors[p]))
        trajectory.append(T)
        segments += 1
    bg = cfg.background
    rgba = (color[0] + T * bg[0], color[1] + T * bg[1], color[2] + T * bg[2], 1.0 - T)
    return (rgba, trajectory) if collect_trace else rgba


def _apply_threads(threads: Optional[int]) -> None:
    import numba

    if threads is None:
        return
    cap = numba.config.NUMBA_NUM_THREADS
    numba.set_num_threads(max(1, min(int(threads), cap)))


def render(gset: GaussianSet, camera: Camera, cfg: Optional[RenderConfig] = None,
           threads: Optional[int] = None, bvh: Optional[Bvh] = None,
           use_bvh: bool = True) -> Framebuffer:
    """Render one frame; output bytes depend only on the inputs."""
    cfg = cfg or RenderConfig()
    mu, inv_r2, alpha, volfac, colors = _scene_arrays(gset, cfg)
    if bvh is None and use_bvh:
        bvh = build_bvh(gset)
    if bvh is None:
        empty = np.zeros((0, 3), dtype=np.float64)
        node_min = node_max = empty
        node_left = node_count = prim_idx = np.zeros(0, dtype=np.int64)
    else:
        node_min, node_max = bvh.node_min, bvh.node_max
        node_left, node_count, prim_idx = bvh.node_left, bvh.node_count, bvh.prim_index

    dirs = camera.ray_directions()
    out = np.zeros((camera.height, camera.width, 4), dtype=np.float64)
    _apply_threads(threads)
    hit_cap = max(2 * cfg.max_segments, 1024)
    kernels.render_frame(
        np.asarray(camera.eye, dtype=np.float64), dirs,
        node_min, node_max, node_left, node_count, prim_idx,
        mu, inv_r2, alpha, volfac, colors,
        cfg.samples_per_segment, cfg.density_scale, cfg.t_min, cfg.max_segments,
        cfg.sample_at_entry, np.asarray(cfg.background, dtype=np.float64),
        hit_cap, bool(use_bvh and len(gset) > 0), out)
    return Framebuffer.from_float(out)


__all__ = [
    "Aabb", "Camera", "Framebuffer", "Ray", "RenderConfig",
    "camera_from_json", "config_from_json", "gaussian_density", "integrate_segment",
    "mahalanobis_sq", "ray_aabb", "ray_gaussian", "render", "resolve_tf_range",
    "tf_lookup", "trace_ray",
]
