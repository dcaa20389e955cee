"""HTTP render service: dataset listing, extraction reports, frame rendering.

Stateless request/response over a server-side cache. Grids are loaded
from the data directory at startup; extracted sets and their BVHs are
cached by (dataset, lod, options) and immutable once inserted, so
concurrent identical requests return byte-identical frames.
"""

from __future__ import annotations

import threading
from pathlib import Path
from typing import Optional

from fastapi import FastAPI, Response
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse
from fastapi.staticfiles import StaticFiles

from .bvh import build_bvh
from .extract import LODS, ExtractConfig, extract
from .formats import FormatError, read_grid_file
from .render import camera_from_json, config_from_json, render
from .report import footprint, grid_stats

LOD_ALIASES = {"low": "low", "med": "medium", "medium": "medium", "high": "high"}


def _options_key(options: dict) -> tuple:
    return tuple(sorted(options.items()))


class DatasetStore:
    """Grids plus extraction/BVH caches; insertion is first-writer-wins."""

    def __init__(self, data_dir):
        self.data_dir = Path(data_dir)
        self.grids = {}
        self.errors = {}
        self._sets = {}
        self._bvhs = {}
        self._lock = threading.Lock()
        self.scan()

    def scan(self) -> None:
        if not self.data_dir.is_dir():
            raise FileNotFoundError(f"data directory {self.data_dir} does not exist")
        for path in sorted(self.data_dir.glob("*.svdb")):
            try:
                self.grids[path.stem] = read_grid_file(path)
            except (FormatError, OSError) as e:
                self.errors[path.stem] = str(e)

    def listing(self) -> list[dict]:
        out = []
        for name in sorted(set(self.grids) | set(self.errors)):
            if name in self.errors:
                out.append({"id": name, "error": self.errors[name]})
                continue
            stats = grid_stats(self.grids[name])
            out.append({
                "id": name,
                "voxels": stats.active_voxels,
                "leaf_count": stats.leaf_count,
                "grid_class": self.grids[name].grid_class,
            })
        return out

    def get_set(self, dataset: str, lod: str, options: dict):
        """(GaussianSet, cache_hit) for a dataset/LOD/options combination."""
        key = (dataset, lod, _options_key(options))
        with self._lock:
            if key in self._sets:
                return self._sets[key], True
        cfg = ExtractConfig(
            lod=lod,
            opacity_extent_scaling=bool(options.get("extent_scaling", False)),
            variance_threshold=float(options.get("variance_split") or 1.0),
            enable_variance_split=options.get("variance_split") is not None,
            enable_merge_pass=options.get("merge") is not None,
            merge_threshold=options.get("merge"),
        )
        gset = extract(self.grids[dataset], cfg)
        with self._lock:
            gset = self._sets.setdefault(key, gset)
        return gset, False

    def get_bvh(self, dataset: str, lod: str, options: dict):
        key = (dataset, lod, _options_key(options))
        with self._lock:
            if key in self._bvhs:
                return self._bvhs[key]
        gset, _ = self.get_set(dataset, lod, options)
        bvh = build_bvh(gset)
        with self._lock:
            return self._bvhs.setdefault(key, bvh)


def _error(status: int, reason: str) -> JSONResponse:
    return JSONResponse({"error": reason}, status_code=status)


def create_app(data_dir, viewer_dir: Optional[str] = None) -> FastAPI:
    app = FastAPI(title="gaussvdb render service")
    app.add_middleware(
        CORSMiddleware,
        allow_origins=["*"],
        allow_methods=["*"],
        allow_headers=["*"],
    )
    store = DatasetStore(data_dir)
    app.state.store = store

    @app.get("/api/datasets")
    def datasets():
        return store.listing()

    def _resolve(payload: dict):
        dataset = payload.get("dataset")
        if dataset not in store.grids:
            return None, _error(404, f"unknown dataset {dataset!r}")
        lod = LOD_ALIASES.get(str(payload.get("lod", "")))
        if lod is None:
            return None, _error(400, f"bad lod {payload.get('lod')!r}; expected one of {LODS}")
        options = payload.get("options") or {}
        unknown = set(options) - {"variance_split", "merge", "extent_scaling"}
        if unknown:
            return None, _error(400, f"unknown extract options: {sorted(unknown)}")
        return (dataset, lod, options), None

    @app.post("/api/extract")
    def extract_endpoint(payload: dict, response: Response):
        resolved, err = _resolve(payload)
        if err is not None:
            return err
        dataset, lod, options = resolved
        gset, hit = store.get_set(dataset, lod, options)
        response.headers["X-Cache"] = "hit" if hit else "miss"
        report = footprint(gset, store.grids[dataset])
        return report.to_dict()

    @app.post("/api/render")
    def render_endpoint(payload: dict):
        resolved, err = _resolve(payload)
        if err is not None:
            return err
        dataset, lod, options = resolved
        try:
            camera = camera_from_json(payload.get("camera") or {})
            cfg = config_from_json(payload.get("config") or {})
        except (ValueError, TypeError) as e:
            return _error(400, f"invalid camera or config: {e}")
        gset, _ = store.get_set(dataset, lod, options)
        bvh = store.get_bvh(dataset, lod, options)
        fb = render(gset, camera, cfg, bvh=bvh)
        return Response(content=fb.to_png_bytes(), media_type="image/png")

    if viewer_dir:
        app.mount("/", StaticFiles(directory=viewer_dir, html=True), name="viewer")
    return app
