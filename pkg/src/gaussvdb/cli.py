"""Command-line front door: ingest, extract, render, stats, serve.

Exit codes: 0 success, 1 usage error, 2 I/O or format error. Every
failure prints a single ``error: <reason>`` line on stderr.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from .extract import ExtractConfig, extract
from .formats import (
    FormatError,
    read_gaussians_file,
    read_grid_file,
    read_raw,
    write_gaussians_file,
    write_grid_file,
)
from .render import camera_from_json, config_from_json, render
from .report import footprint, format_table, grid_stats

LOD_ALIASES = {"low": "low", "med": "medium", "medium": "medium", "high": "high"}


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits 2 on usage problems; this tool reserves 2 for I/O errors
    def error(self, message):
        raise _UsageError(message)


def resolve_threads(flag_value):
    if flag_value is not None:
        return max(1, int(flag_value))
    env = os.environ.get("GAUSSVDB_THREADS")
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


def build_parser() -> _Parser:
    parser = _Parser(prog="gaussvdb", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="convert a raw volume into an .svdb grid")
    p.add_argument("--header", required=True, help="JSON sidecar describing the raw volume")
    p.add_argument("--data", required=True, help="binary voxel data (x fastest)")
    p.add_argument("--out", required=True, help="output .svdb path")
    p.add_argument("--collapse-tiles", action="store_true",
                   help="collapse uniform dense leaves into tiles")

    p = sub.add_parser("extract", help="extract Gaussians from an .svdb grid")
    p.add_argument("--grid", required=True)
    p.add_argument("--lod", required=True, choices=sorted(LOD_ALIASES))
    p.add_argument("--variance-split", type=float, metavar="THRESHOLD",
                   help="cluster by positional variance instead of fixed blocks")
    p.add_argument("--merge", type=float, metavar="THRESHOLD",
                   help="merge homogeneous neighboring leaves in a second pass")
    p.add_argument("--scale-opacity", action="store_true",
                   help="scale opacity by bbox occupancy")
    p.add_argument("--threads", type=int)
    p.add_argument("--out", required=True, help="output .gpts path")

    p = sub.add_parser("render", help="render a .gpts set to a PNG")
    p.add_argument("--gaussians", required=True)
    p.add_argument("--camera", required=True, help="camera JSON document")
    p.add_argument("--config", help="render config JSON document")
    p.add_argument("--threads", type=int)
    p.add_argument("--out", required=True, help="output .png path")

    p = sub.add_parser("stats", help="print grid statistics and footprints")
    p.add_argument("--grid", required=True)
    p.add_argument("--gaussians", action="append", default=[],
                   help=".gpts file to report on (repeatable)")
    p.add_argument("--json", action="store_true", dest="as_json")

    p = sub.add_parser("serve", help="run the HTTP render service")
    p.add_argument("--port", type=int, default=8000)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--data-dir", required=True)
    p.add_argument("--viewer-dir", help="static viewer bundle to serve at /")
    return parser


def _cmd_ingest(args) -> int:
    grid = read_raw(args.header, args.data, collapse_tiles=args.collapse_tiles)
    write_grid_file(grid, args.out)
    stats = grid_stats(grid)
    print(f"ingested {stats.active_voxels} active voxels into {args.out} "
          f"({stats.leaf_count} leaves, {stats.tile_count} tiles)")
    return 0


def _cmd_extract(args) -> int:
    grid = read_grid_file(args.grid)
    cfg = ExtractConfig(
        lod=LOD_ALIASES[args.lod],
        opacity_extent_scaling=args.scale_opacity,
        variance_threshold=args.variance_split if args.variance_split is not None else 1.0,
        enable_variance_split=args.variance_split is not None,
        enable_merge_pass=args.merge is not None,
        merge_threshold=args.merge,
    )
    gset = extract(grid, cfg, threads=resolve_threads(args.threads))
    write_gaussians_file(gset, args.out)
    print(f"extracted {len(gset)} gaussians ({cfg.lod}) into {args.out}")
    return 0


def _cmd_render(args) -> int:
    gset = read_gaussians_file(args.gaussians)
    camera = camera_from_json(json.loads(Path(args.camera).read_text()))
    if args.config:
        cfg = config_from_json(json.loads(Path(args.config).read_text()))
    else:
        cfg = config_from_json({})
    fb = render(gset, camera, cfg, threads=resolve_threads(args.threads))
    fb.write_png(args.out)
    print(f"rendered {camera.width}x{camera.height} frame into {args.out}")
    return 0


def _cmd_stats(args) -> int:
    grid = read_grid_file(args.grid)
    stats = grid_stats(grid)
    reports = {}
    for path in args.gaussians:
        gset = read_gaussians_file(path)
        reports[gset.lod] = footprint(gset)
    if args.as_json:
        doc = {
            "grid": {
                "name": grid.name,
                "grid_class": grid.grid_class,
                "active_voxels": stats.active_voxels,
                "leaf_count": stats.leaf_count,
                "tile_count": stats.tile_count,
                "dense_leaf_count": stats.dense_leaf_count,
            },
            "footprints": {lod: r.to_dict() for lod, r in reports.items()},
        }
        print(json.dumps(doc, indent=2))
    else:
        print(format_table(grid.name or Path(args.grid).stem, stats, reports))
    return 0


def _cmd_serve(args) -> int:
    import uvicorn

    from .service import create_app

    app = create_app(args.data_dir, viewer_dir=args.viewer_dir)
    uvicorn.run(app, host=args.host, port=args.port, log_level="info")
    return 0


_COMMANDS = {
    "ingest": _cmd_ingest,
    "extract": _cmd_extract,
    "render": _cmd_render,
    "stats": _cmd_stats,
    "serve": _cmd_serve,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as e:
        print(f"error: usage: {e}", file=sys.stderr)
        return 1
    try:
        return _COMMANDS[args.command](args)
    except (FormatError, json.JSONDecodeError) as e:
        print(f"error: format: {e}", file=sys.stderr)
        return 2
    except OSError as e:
        print(f"error: io: {e}", file=sys.stderr)
        return 2
    except ValueError as e:
        print(f"error: invalid: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
