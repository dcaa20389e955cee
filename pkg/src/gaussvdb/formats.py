"""Binary containers and raw-volume ingestion.

Two little-endian formats, built for bit-exact round trips rather than
compactness:

* ``.svdb`` -- the sparse grid: header, then per top node the packed
  child/value masks, tile values and leaf payloads in ascending slot order.
* ``.gpts`` -- a Gaussian set: fixed header, then one record per Gaussian
  (tag byte, position, one or three radii, opacity unless the set is a
  level set).

Raw volumes arrive as a JSON header sidecar plus a flat binary array with
x varying fastest.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .extract import SHAPE_ELLIPSOID, SHAPE_SPHERE, GaussianSet, LODS
from .sparse_grid import (
    GRID_CLASSES,
    L4_SLOTS,
    L5_SLOTS,
    LEAF_SIZE,
    Coord,
    GridTransform,
    InternalNode,
    LeafNode,
    SparseGrid,
    sparsify_from_dense,
)

GRID_MAGIC = b"SVDB1\x00"
GAUSSIAN_MAGIC = b"GPTS1\x00"

RAW_VALUE_TYPES = {"f32": np.dtype("<f4"), "u8": np.dtype("u1"), "u16": np.dtype("<u2")}


class FormatError(ValueError):
    """Raised for bad magic bytes, truncated streams, or inconsistent counts."""


# -- raw volume ingestion -----------------------------------------------------

def read_raw_header(header_path) -> dict:
    try:
        header = json.loads(Path(header_path).read_text())
    except json.JSONDecodeError as e:
        raise FormatError(f"malformed raw header: {e}") from e
    required = {"dims", "value_type", "voxel_size", "background", "threshold", "grid_class"}
    missing = required - set(header)
    if missing:
        raise FormatError(f"raw header missing fields: {sorted(missing)}")
    if header["value_type"] not in RAW_VALUE_TYPES:
        raise FormatError(f"unknown value_type {header['value_type']!r}")
    if header["grid_class"] not in GRID_CLASSES:
        raise FormatError(f"unknown grid_class {header['grid_class']!r}")
    dims = header["dims"]
    if len(dims) != 3 or any(int(d) <= 0 for d in dims):
        raise FormatError(f"dims must be three positive integers, got {dims}")
    if float(header["threshold"]) < 0:
        raise FormatError("threshold must be non-negative")
    return header


def read_raw(header_path, data_path, collapse_tiles: bool = False) -> SparseGrid:
    """Load a raw volume described by its JSON sidecar into a sparse grid.

    Integer voxel types are normalized to [0, 1]; the header's background
    and threshold are interpreted in the normalized domain.
    """
    header = read_raw_header(header_path)
    dims = tuple(int(d) for d in header["dims"])
    dtype = RAW_VALUE_TYPES[header["value_type"]]
    raw = np.frombuffer(Path(data_path).read_bytes(), dtype=dtype)
    expected = dims[0] * dims[1] * dims[2]
    if raw.size != expected:
        raise FormatError(f"raw data holds {raw.size} values, header implies {expected}")
    if header["value_type"] == "u8":
        data = raw.astype(np.float32) / np.float32(255)
    elif header["value_type"] == "u16":
        data = raw.astype(np.float32) / np.float32(65535)
    else:
        data = raw.astype(np.float32)
    transform = GridTransform.from_voxel_size([float(v) for v in header["voxel_size"]])
    return sparsify_from_dense(
        data, dims,
        background=float(header["background"]),
        tolerance=float(header["threshold"]),
        transform=transform,
        collapse_tiles=collapse_tiles,
        grid_class=header["grid_class"],
        name=str(header.get("name", "")),
    )


# -- grid container -----------------------------------------------------------

def _pack_mask(mask: np.ndarray) -> bytes:
    return np.packbits(mask, bitorder="little").tobytes()


def _unpack_mask(buf: bytes, n_bits: int) -> np.ndarray:
    return np.unpackbits(np.frombuffer(buf, dtype=np.uint8), bitorder="little")[:n_bits].astype(bool)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise FormatError(f"truncated stream: needed {n} bytes at offset {self.pos}")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack("<" + fmt, self.take(struct.calcsize("<" + fmt)))

    def done(self) -> bool:
        return self.pos == len(self.data)


def write_grid(grid: SparseGrid) -> bytes:
    out = bytearray()
    out += GRID_MAGIC
    name = grid.name.encode("utf-8")
    out += struct.pack("<H", len(name)) + name
    out += struct.pack("<B", GRID_CLASSES.index(grid.grid_class))
    out += struct.pack("<f", np.float32(grid.background))
    out += grid.transform.matrix.astype("<f8").tobytes()
    out += grid.transform.voxel_size.astype("<f8").tobytes()
    out += struct.pack("<IQQ", len(grid.top_nodes), grid.leaf_count(), grid.active_voxel_count())

    for origin in sorted(grid.top_nodes):
        top = grid.top_nodes[origin]
        out += struct.pack("<3i", *origin)
        out += _pack_mask(top.child_mask)
        out += _pack_mask(top.value_mask)
        out += top.tile_values[top.value_mask].astype("<f4").tobytes()
        for slot5 in np.flatnonzero(top.child_mask):
            l4: InternalNode = top.children[int(slot5)]
            out += _pack_mask(l4.child_mask)
            out += _pack_mask(l4.value_mask)
            out += l4.tile_values[l4.value_mask].astype("<f4").tobytes()
            for slot4 in np.flatnonzero(l4.child_mask):
                leaf: LeafNode = l4.children[int(slot4)]
                out += _pack_mask(leaf.active_mask)
                out += leaf.values.astype("<f4").tobytes()
    return bytes(out)


def read_grid(data: bytes) -> SparseGrid:
    r = _Reader(data)
    if r.take(len(GRID_MAGIC)) != GRID_MAGIC:
        raise FormatError("bad magic: not an SVDB container")
    (name_len,) = r.unpack("H")
    name = r.take(name_len).decode("utf-8")
    (class_code,) = r.unpack("B")
    if class_code >= len(GRID_CLASSES):
        raise FormatError(f"unknown grid class code {class_code}")
    (background,) = r.unpack("f")
    matrix = np.frombuffer(r.take(16 * 8), dtype="<f8").reshape(4, 4).copy()
    voxel_size = np.frombuffer(r.take(3 * 8), dtype="<f8").copy()
    top_count, leaf_count, active_count = r.unpack("IQQ")

    grid = SparseGrid(
        background=background,
        transform=GridTransform(matrix, voxel_size),
        grid_class=GRID_CLASSES[class_code],
        name=name,
    )
    for _ in range(top_count):
        origin = Coord(*r.unpack("3i"))
        top = InternalNode(5, origin)
        top.child_mask = _unpack_mask(r.take(L5_SLOTS // 8), L5_SLOTS)
        top.value_mask = _unpack_mask(r.take(L5_SLOTS // 8), L5_SLOTS)
        if (top.child_mask & top.value_mask).any():
            raise FormatError("corrupt node: child and value masks overlap")
        n_tiles = int(top.value_mask.sum())
        tiles = np.frombuffer(r.take(4 * n_tiles), dtype="<f4")
        top.tile_values[top.value_mask] = tiles
        for slot5 in np.flatnonzero(top.child_mask):
            l4 = InternalNode(4, top.slot_origin(int(slot5)))
            l4.child_mask = _unpack_mask(r.take(L4_SLOTS // 8), L4_SLOTS)
            l4.value_mask = _unpack_mask(r.take(L4_SLOTS // 8), L4_SLOTS)
            if (l4.child_mask & l4.value_mask).any():
                raise FormatError("corrupt node: child and value masks overlap")
            n_tiles = int(l4.value_mask.sum())
            l4.tile_values[l4.value_mask] = np.frombuffer(r.take(4 * n_tiles), dtype="<f4")
            for slot4 in np.flatnonzero(l4.child_mask):
                mask = _unpack_mask(r.take(LEAF_SIZE // 8), LEAF_SIZE)
                values = np.frombuffer(r.take(4 * LEAF_SIZE), dtype="<f4").copy()
                leaf = LeafNode(l4.slot_origin(int(slot4)), values, mask)
                l4.children[int(slot4)] = leaf
            top.children[int(slot5)] = l4
        grid.top_nodes[origin] = top

    if not r.done():
        raise FormatError(f"{len(data) - r.pos} trailing bytes after grid payload")
    if grid.leaf_count() != leaf_count or grid.active_voxel_count() != active_count:
        raise FormatError("header counts do not match decoded payload")
    return grid


def write_grid_file(grid: SparseGrid, path) -> None:
    Path(path).write_bytes(write_grid(grid))


def read_grid_file(path) -> SparseGrid:
    return read_grid(Path(path).read_bytes())


# -- Gaussian container ---------------------------------------------------------

GAUSSIAN_HEADER = struct.Struct("<6sIBB")
GAUSSIAN_HEADER_SIZE = GAUSSIAN_HEADER.size + 16 * 8 + 3 * 8


def gaussian_record_size(shape: int, grid_class: str) -> int:
    n_floats = 3 + (1 if shape == SHAPE_SPHERE else 3) + (1 if grid_class == "volume" else 0)
    return 1 + 4 * n_floats


def write_gaussians(gset: GaussianSet) -> bytes:
    n = len(gset)
    out = bytearray()
    out += GAUSSIAN_HEADER.pack(GAUSSIAN_MAGIC, n, GRID_CLASSES.index(gset.grid_class),
                                LODS.index(gset.lod))
    out += gset.transform.matrix.astype("<f8").tobytes()
    out += gset.transform.voxel_size.astype("<f8").tobytes()
    if n == 0:
        return bytes(out)

    volume = gset.grid_class == "volume"
    sizes = np.where(gset.shapes == SHAPE_SPHERE,
                     gaussian_record_size(SHAPE_SPHERE, gset.grid_class),
                     gaussian_record_size(SHAPE_ELLIPSOID, gset.grid_class))
    offsets = np.zeros(n, dtype=np.int64)
    np.cumsum(sizes[:-1], out=offsets[1:])
    body = np.zeros(int(sizes.sum()), dtype=np.uint8)

    body[offsets] = gset.shapes
    pos_bytes = gset.positions.astype("<f4").view(np.uint8).reshape(n, 12)
    for b in range(12):
        body[offsets + 1 + b] = pos_bytes[:, b]
    rad_bytes = gset.radii.astype("<f4").view(np.uint8).reshape(n, 12)
    sphere = gset.shapes == SHAPE_SPHERE
    for b in range(4):
        body[offsets[sphere] + 13 + b] = rad_bytes[sphere, b]
    for b in range(12):
        body[offsets[~sphere] + 13 + b] = rad_bytes[~sphere, b]
    if volume:
        opa_off = offsets + np.where(sphere, 17, 25)
        opa_bytes = gset.opacities.astype("<f4").view(np.uint8).reshape(n, 4)
        for b in range(4):
            body[opa_off + b] = opa_bytes[:, b]
    return bytes(out) + body.tobytes()


def read_gaussians(data: bytes) -> GaussianSet:
    r = _Reader(data)
    magic, n, class_code, lod_code = GAUSSIAN_HEADER.unpack(r.take(GAUSSIAN_HEADER.size))
    if magic != GAUSSIAN_MAGIC:
        raise FormatError("bad magic: not a GPTS container")
    if class_code >= len(GRID_CLASSES) or lod_code >= len(LODS):
        raise FormatError("unknown grid class or lod code")
    grid_class = GRID_CLASSES[class_code]
    matrix = np.frombuffer(r.take(16 * 8), dtype="<f8").reshape(4, 4).copy()
    voxel_size = np.frombuffer(r.take(3 * 8), dtype="<f8").copy()
    transform = GridTransform(matrix, voxel_size)

    body = np.frombuffer(r.take(len(data) - r.pos), dtype=np.uint8)
    volume = grid_class == "volume"
    sphere_size = gaussian_record_size(SHAPE_SPHERE, grid_class)
    ell_size = gaussian_record_size(SHAPE_ELLIPSOID, grid_class)

    offsets = np.zeros(n, dtype=np.int64)
    shapes = np.zeros(n, dtype=np.uint8)
    pos = 0
    for i in range(n):
        if pos >= len(body):
            raise FormatError(f"truncated record {i} of {n}")
        tag = body[pos]
        if tag not in (SHAPE_SPHERE, SHAPE_ELLIPSOID):
            raise FormatError(f"unknown shape tag {tag} in record {i}")
        offsets[i] = pos
        shapes[i] = tag
        pos += sphere_size if tag == SHAPE_SPHERE else ell_size
    if pos != len(body):
        raise FormatError(f"record payload is {len(body)} bytes, expected {pos}")

    def gather_f32(starts: np.ndarray, count: int) -> np.ndarray:
        cols = [body[starts + b] for b in range(4 * count)]
        raw = np.stack(cols, axis=1).tobytes() if len(starts) else b""
        return np.frombuffer(raw, dtype="<f4").reshape(len(starts), count)

    positions = gather_f32(offsets + 1, 3)
    radii = np.zeros((n, 3), dtype=np.float32)
    sphere = shapes == SHAPE_SPHERE
    radii[sphere] = gather_f32(offsets[sphere] + 13, 1)
    radii[~sphere] = gather_f32(offsets[~sphere] + 13, 3)
    if volume:
        opa_off = offsets + np.where(sphere, 17, 25)
        opacities = gather_f32(opa_off, 1).reshape(n)
    else:
        opacities = np.ones(n, dtype=np.float32)
    return GaussianSet(positions, radii, opacities, shapes, LODS[lod_code], grid_class, transform)


def write_gaussians_file(gset: GaussianSet, path) -> None:
    Path(path).write_bytes(write_gaussians(gset))


def read_gaussians_file(path) -> GaussianSet:
    return read_gaussians(Path(path).read_bytes())
