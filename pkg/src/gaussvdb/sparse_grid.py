"""VDB-style sparse voxel grid with the fixed 5-4-3 topology.

The tree has three levels below the root map: top-level nodes spanning
4096 voxels per axis (32^3 children), internal nodes spanning 128 voxels
per axis (16^3 children), and leaf nodes of 8^3 = 512 voxels. Each
internal slot is either a subtree (child mask), a tile holding one value
for the whole sub-region (value mask), or empty.
"""

from __future__ import annotations

from typing import Iterator, NamedTuple, Optional, Sequence

import numpy as np

GRID_CLASSES = ("volume", "levelset")

LEAF_DIM = 8
LEAF_SIZE = LEAF_DIM**3  # 512
L4_DIM = 16
L4_SLOTS = L4_DIM**3  # 4096
L4_CHILD_SPAN = LEAF_DIM  # 8 voxels per slot
L4_SPAN = L4_DIM * L4_CHILD_SPAN  # 128
L5_DIM = 32
L5_SLOTS = L5_DIM**3  # 32768
L5_CHILD_SPAN = L4_SPAN  # 128 voxels per slot
L5_SPAN = L5_DIM * L5_CHILD_SPAN  # 4096


class Coord(NamedTuple):
    """Signed index-space voxel coordinate."""

    x: int
    y: int
    z: int


def _leaf_offset(x: int, y: int, z: int) -> int:
    # x-major linearization within the 8x8x8 block (z varies fastest)
    return ((x & 7) << 6) | ((y & 7) << 3) | (z & 7)


def _slot_index(lx: int, ly: int, lz: int, dim: int) -> int:
    return (lx * dim + ly) * dim + lz


def _leaf_local_coords() -> np.ndarray:
    offs = np.arange(LEAF_SIZE)
    return np.stack([(offs >> 6) & 7, (offs >> 3) & 7, offs & 7], axis=1).astype(np.int64)


#: local (x, y, z) for every leaf linear offset, shape (512, 3)
LEAF_COORDS = _leaf_local_coords()


class GridTransform:
    """Affine index-to-world map (4x4 matrix) plus per-axis voxel size."""

    def __init__(self, matrix: np.ndarray, voxel_size: Optional[Sequence[float]] = None):
        matrix = np.asarray(matrix, dtype=np.float64)
        if matrix.shape != (4, 4):
            raise ValueError(f"transform matrix must be 4x4, got {matrix.shape}")
        linear = matrix[:3, :3]
        column_norms = np.linalg.norm(linear, axis=0)
        if voxel_size is None:
            voxel_size = column_norms
        voxel_size = np.asarray(voxel_size, dtype=np.float64)
        if voxel_size.shape != (3,) or np.any(voxel_size <= 0):
            raise ValueError("voxel_size must be three strictly positive floats")
        if not np.allclose(column_norms, voxel_size, rtol=1e-6, atol=1e-12):
            raise ValueError(
                f"voxel_size {voxel_size} inconsistent with matrix column norms {column_norms}"
            )
        if abs(np.linalg.det(linear)) < 1e-30:
            raise ValueError("transform matrix is singular")
        self.matrix = matrix
        self.voxel_size = voxel_size
        self._inverse = np.linalg.inv(matrix)

    @classmethod
    def from_voxel_size(
        cls, voxel_size: float | Sequence[float], translation: Sequence[float] = (0.0, 0.0, 0.0)
    ) -> "GridTransform":
        vs = np.broadcast_to(np.asarray(voxel_size, dtype=np.float64), (3,)).copy()
        m = np.eye(4)
        m[0, 0], m[1, 1], m[2, 2] = vs
        m[:3, 3] = translation
        return cls(m, vs)

    def index_to_world(self, p) -> np.ndarray:
        p = np.asarray(p, dtype=np.float64)
        return self.matrix[:3, :3] @ p + self.matrix[:3, 3]

    def world_to_index(self, p) -> np.ndarray:
        p = np.asarray(p, dtype=np.float64)
        return self._inverse[:3, :3] @ p + self._inverse[:3, 3]

    def __eq__(self, other) -> bool:
        return isinstance(other, GridTransform) and np.array_equal(self.matrix, other.matrix) and np.array_equal(
            self.voxel_size, other.voxel_size
        )

    def __repr__(self) -> str:
        return f"GridTransform(voxel_size={self.voxel_size.tolist()})"


def index_to_world(transform: GridTransform, p) -> np.ndarray:
    return transform.index_to_world(p)


def world_to_index(transform: GridTransform, p) -> np.ndarray:
    return transform.world_to_index(p)


class LeafNode:
    """8x8x8 block of voxel values with a 512-bit activity mask."""

    __slots__ = ("origin", "values", "active_mask")

    def __init__(self, origin: Coord, values: Optional[np.ndarray] = None,
                 active_mask: Optional[np.ndarray] = None, background: float = 0.0):
        if any(o % LEAF_DIM for o in origin):
            raise ValueError(f"leaf origin {origin} is not a multiple of {LEAF_DIM}")
        self.origin = Coord(*origin)
        if values is None:
            values = np.full(LEAF_SIZE, background, dtype=np.float32)
        if active_mask is None:
            active_mask = np.zeros(LEAF_SIZE, dtype=bool)
        self.values = values
        self.active_mask = active_mask

    def active_count(self) -> int:
        return int(self.active_mask.sum())

    def is_dense(self) -> bool:
        return bool(self.active_mask.all())

    def active_bbox(self) -> Optional[tuple[Coord, Coord]]:
        """Tight half-open index bbox of active voxels, or None if empty."""
        if not self.active_mask.any():
            return None
        local = LEAF_COORDS[self.active_mask]
        lo = local.min(axis=0)
        hi = local.max(axis=0) + 1
        o = np.array(self.origin, dtype=np.int64)
        return Coord(*(o + lo)), Coord(*(o + hi))


def leaf_active_bbox(leaf: LeafNode) -> Optional[tuple[Coord, Coord]]:
    return leaf.active_bbox()


class InternalNode:
    """Level-4 or level-5 node: children, tiles, and their disjoint masks."""

    __slots__ = ("level", "origin", "child_mask", "value_mask", "tile_values", "children")

    def __init__(self, level: int, origin: Coord):
        if level == 4:
            n_slots, align = L4_SLOTS, L4_SPAN
        elif level == 5:
            n_slots, align = L5_SLOTS, L5_SPAN
        else:
            raise ValueError(f"internal node level must be 4 or 5, got {level}")
        if any(o % align for o in origin):
            raise ValueError(f"level-{level} origin {origin} is not a multiple of {align}")
        self.level = level
        self.origin = Coord(*origin)
        self.child_mask = np.zeros(n_slots, dtype=bool)
        self.value_mask = np.zeros(n_slots, dtype=bool)
        self.tile_values = np.zeros(n_slots, dtype=np.float32)
        self.children: dict[int, object] = {}

    @property
    def dim(self) -> int:
        return L4_DIM if self.level == 4 else L5_DIM

    @property
    def child_span(self) -> int:
        return L4_CHILD_SPAN if self.level == 4 else L5_CHILD_SPAN

    def slot_of(self, c: Coord) -> int:
        span = self.child_span
        lx = (c[0] - self.origin[0]) // span
        ly = (c[1] - self.origin[1]) // span
        lz = (c[2] - self.origin[2]) // span
        return _slot_index(lx, ly, lz, self.dim)

    def slot_origin(self, slot: int) -> Coord:
        dim, span = self.dim, self.child_span
        lz = slot % dim
        ly = (slot // dim) % dim
        lx = slot // (dim * dim)
        return Coord(self.origin[0] + lx * span, self.origin[1] + ly * span, self.origin[2] + lz * span)

    def set_tile(self, slot: int, value: float) -> None:
        if self.child_mask[slot]:
            raise ValueError("slot already holds a child subtree")
        self.value_mask[slot] = True
        self.tile_values[slot] = value

    def fill_tiles(self, value: float) -> None:
        """Mark every slot as a tile of the given value (tile expansion)."""
        if self.child_mask.any():
            raise ValueError("cannot fill a node that already has children")
        self.value_mask[:] = True
        self.tile_values[:] = value


def _top_origin(c: Coord) -> Coord:
    return Coord((c[0] // L5_SPAN) * L5_SPAN, (c[1] // L5_SPAN) * L5_SPAN, (c[2] // L5_SPAN) * L5_SPAN)


class SparseGrid:
    """Sparse 5-4-3 voxel tree with a background value and world transform."""

    def __init__(self, background: float = 0.0, transform: Optional[GridTransform] = None,
                 grid_class: str = "volume", name: str = ""):
        if grid_class not in GRID_CLASSES:
            raise ValueError(f"grid_class must be one of {GRID_CLASSES}, got {grid_class!r}")
        self.top_nodes: dict[Coord, InternalNode] = {}
        self.background = float(np.float32(background))
        self.transform = transform if transform is not None else GridTransform.from_voxel_size(1.0)
        self.grid_class = grid_class
        self.name = name

    # -- write path ------------------------------------------------------

    def set_voxel(self, c, value: float) -> None:
        """Activate the voxel at c, creating intermediate nodes on demand.

        A tile covering c is expanded into a dense child first so the
        remaining 511 (or 4095) tile voxels keep their value.
        """
        c = Coord(int(c[0]), int(c[1]), int(c[2]))
        top_origin = _top_origin(c)
        top = self.top_nodes.get(top_origin)
        if top is None:
            top = InternalNode(5, top_origin)
            self.top_nodes[top_origin] = top

        slot5 = top.slot_of(c)
        if top.value_mask[slot5]:
            # expand level-5 tile: dense level-4 child whose slots all tile the value
            child = InternalNode(4, top.slot_origin(slot5))
            child.fill_tiles(float(top.tile_values[slot5]))
            top.value_mask[slot5] = False
            top.child_mask[slot5] = True
            top.children[slot5] = child
        elif not top.child_mask[slot5]:
            top.child_mask[slot5] = True
            top.children[slot5] = InternalNode(4, top.slot_origin(slot5))
        l4: InternalNode = top.children[slot5]  # type: ignore[assignment]

        slot4 = l4.slot_of(c)
        if l4.value_mask[slot4]:
            # expand level-4 tile into a fully active leaf
            leaf = LeafNode(l4.slot_origin(slot4))
            leaf.values[:] = l4.tile_values[slot4]
            leaf.active_mask[:] = True
            l4.value_mask[slot4] = False
            l4.child_mask[slot4] = True
            l4.children[slot4] = leaf
        elif not l4.child_mask[slot4]:
            l4.child_mask[slot4] = True
            l4.children[slot4] = LeafNode(l4.slot_origin(slot4), background=self.background)
        leaf: LeafNode = l4.children[slot4]  # type: ignore[assignment]

        off = _leaf_offset(c[0], c[1], c[2])
        leaf.values[off] = value
        leaf.active_mask[off] = True

    # -- read path -------------------------------------------------------

    def get_voxel(self, c) -> tuple[float, bool]:
        """Value and activity at c; (background, False) when no path exists."""
        c = Coord(int(c[0]), int(c[1]), int(c[2]))
        top = self.top_nodes.get(_top_origin(c))
        if top is None:
            return self.background, False
        slot5 = top.slot_of(c)
        if top.value_mask[slot5]:
            return float(top.tile_values[slot5]), True
        if not top.child_mask[slot5]:
            return self.background, False
        l4: InternalNode = top.children[slot5]  # type: ignore[assignment]
        slot4 = l4.slot_of(c)
        if l4.value_mask[slot4]:
            return float(l4.tile_values[slot4]), True
        if not l4.child_mask[slot4]:
            return self.background, False
        leaf: LeafNode = l4.children[slot4]  # type: ignore[assignment]
        off = _leaf_offset(c[0], c[1], c[2])
        return float(leaf.values[off]), bool(leaf.active_mask[off])

    # -- traversal -------------------------------------------------------

    def _sorted_tops(self) -> list[InternalNode]:
        return [self.top_nodes[k] for k in sorted(self.top_nodes)]

    def leaf_iter(self) -> Iterator[LeafNode]:
        """Every stored leaf, ordered by top origin then ascending slot."""
        for top in self._sorted_tops():
            for slot5 in np.flatnonzero(top.child_mask):
                l4: InternalNode = top.children[int(slot5)]  # type: ignore[assignment]
                for slot4 in np.flatnonzero(l4.child_mask):
                    yield l4.children[int(slot4)]  # type: ignore[misc]

    def tile_iter(self) -> Iterator[tuple[tuple[Coord, Coord], float, int]]:
        """Every tile as (half-open index bbox, value, node level)."""
        for top in self._sorted_tops():
            for slot5 in np.flatnonzero(top.value_mask):
                o = top.slot_origin(int(slot5))
                hi = Coord(o[0] + L5_CHILD_SPAN, o[1] + L5_CHILD_SPAN, o[2] + L5_CHILD_SPAN)
                yield (o, hi), float(top.tile_values[int(slot5)]), 5
            for slot5 in np.flatnonzero(top.child_mask):
                l4: InternalNode = top.children[int(slot5)]  # type: ignore[assignment]
                for slot4 in np.flatnonzero(l4.value_mask):
                    o = l4.slot_origin(int(slot4))
                    hi = Coord(o[0] + L4_CHILD_SPAN, o[1] + L4_CHILD_SPAN, o[2] + L4_CHILD_SPAN)
                    yield (o, hi), float(l4.tile_values[int(slot4)]), 4

    # -- statistics ------------------------------------------------------

    def leaf_count(self) -> int:
        return sum(1 for _ in self.leaf_iter())

    def tile_count(self) -> int:
        return sum(1 for _ in self.tile_iter())

    def active_voxel_count(self) -> int:
        n = sum(leaf.active_count() for leaf in self.leaf_iter())
        for (lo, hi), _, _ in self.tile_iter():
            n += (hi[0] - lo[0]) * (hi[1] - lo[1]) * (hi[2] - lo[2])
        return n

    def validate(self) -> None:
        """Check structural invariants; raises AssertionError on violation."""
        for origin, top in self.top_nodes.items():
            assert top.level == 5 and top.origin == origin
            assert all(o % L5_SPAN == 0 for o in origin)
            assert not (top.child_mask & top.value_mask).any(), "child/value masks overlap"
            assert set(top.children) == set(np.flatnonzero(top.child_mask).tolist())
            for slot5, l4 in top.children.items():
                assert isinstance(l4, InternalNode) and l4.level == 4
                assert l4.origin == top.slot_origin(slot5)
                assert not (l4.child_mask & l4.value_mask).any(), "child/value masks overlap"
                assert set(l4.children) == set(np.flatnonzero(l4.child_mask).tolist())
                for slot4, leaf in l4.children.items():
                    assert isinstance(leaf, LeafNode)
                    assert leaf.origin == l4.slot_origin(slot4)
                    assert leaf.active_mask.any(), "empty leaves must be pruned"
                    bg = np.float32(self.background)
                    assert (leaf.values[~leaf.active_mask] == bg).all(), \
                        "inactive voxels must hold the background value"


def set_voxel(grid: SparseGrid, c, value: float) -> None:
    grid.set_voxel(c, value)


def get_voxel(grid: SparseGrid, c) -> tuple[float, bool]:
    return grid.get_voxel(c)


def leaf_iter(grid: SparseGrid) -> Iterator[LeafNode]:
    return grid.leaf_iter()


def tile_iter(grid: SparseGrid) -> Iterator[tuple[tuple[Coord, Coord], float, int]]:
    return grid.tile_iter()


def sparsify_from_dense(
    data,
    dims: Sequence[int],
    background: float,
    tolerance: float,
    transform: Optional[GridTransform] = None,
    collapse_tiles: bool = False,
    grid_class: str = "volume",
    name: str = "",
) -> SparseGrid:
    """Build a sparse grid from a dense scalar array.

    ``data`` is flat with x varying fastest, i.e. index = x + dims[0]*(y + dims[1]*z).
    Voxels within ``tolerance`` of ``background`` become inactive. With
    ``collapse_tiles``, a fully active leaf whose values all sit within
    tolerance of their mean collapses to a level-4 tile holding the mean.
    """
    dims = tuple(int(d) for d in dims)
    if len(dims) != 3 or any(d <= 0 for d in dims):
        raise ValueError(f"dims must be three positive integers, got {dims}")
    flat = np.asarray(data, dtype=np.float32).ravel()
    expected = dims[0] * dims[1] * dims[2]
    if flat.size != expected:
        raise ValueError(f"data length {flat.size} does not match dims product {expected}")
    if tolerance < 0:
        raise ValueError("tolerance must be non-negative")

    arr = flat.reshape(dims[2], dims[1], dims[0]).transpose(2, 1, 0)
    grid = SparseGrid(background=background, transform=transform, grid_class=grid_class, name=name)
    bg = np.float32(grid.background)
    active_all = np.abs(arr.astype(np.float64) - float(bg)) > tolerance

    for ox in range(0, dims[0], LEAF_DIM):
        for oy in range(0, dims[1], LEAF_DIM):
            for oz in range(0, dims[2], LEAF_DIM):
                block_active = active_all[ox:ox + LEAF_DIM, oy:oy + LEAF_DIM, oz:oz + LEAF_DIM]
                if not block_active.any():
                    continue
                block = arr[ox:ox + LEAF_DIM, oy:oy + LEAF_DIM, oz:oz + LEAF_DIM]
                if block.shape != (LEAF_DIM, LEAF_DIM, LEAF_DIM):
                    pad = [(0, LEAF_DIM - s) for s in block.shape]
                    block = np.pad(block, pad, constant_values=bg)
                    block_active = np.pad(block_active, pad, constant_values=False)
                origin = Coord(ox, oy, oz)
                mask = block_active.ravel()  # x-major matches the leaf layout
                values = np.where(mask, block.ravel(), bg).astype(np.float32)
                if collapse_tiles and mask.all():
                    mean = np.float32(values.astype(np.float64).mean())
                    if np.abs(values.astype(np.float64) - float(mean)).max() <= tolerance:
                        _set_l4_tile(grid, origin, float(mean))
                        continue
                _insert_leaf(grid, LeafNode(origin, values, mask.copy()))
    return grid


def _get_or_create_l4(grid: SparseGrid, c: Coord) -> InternalNode:
    top_origin = _top_origin(c)
    top = grid.top_nodes.get(top_origin)
    if top is None:
        top = InternalNode(5, top_origin)
        grid.top_nodes[top_origin] = top
    slot5 = top.slot_of(c)
    if top.value_mask[slot5]:
        raise ValueError("slot is covered by a level-5 tile")
    if not top.child_mask[slot5]:
        top.child_mask[slot5] = True
        top.children[slot5] = InternalNode(4, top.slot_origin(slot5))
    return top.children[slot5]  # type: ignore[return-value]


def _insert_leaf(grid: SparseGrid, leaf: LeafNode) -> None:
    l4 = _get_or_create_l4(grid, leaf.origin)
    slot4 = l4.slot_of(leaf.origin)
    if l4.child_mask[slot4] or l4.value_mask[slot4]:
        raise ValueError(f"leaf slot at {leaf.origin} already occupied")
    l4.child_mask[slot4] = True
    l4.children[slot4] = leaf


def _set_l4_tile(grid: SparseGrid, origin: Coord, value: float) -> None:
    l4 = _get_or_create_l4(grid, origin)
    slot4 = l4.slot_of(origin)
    if l4.child_mask[slot4]:
        raise ValueError(f"tile slot at {origin} already holds a leaf")
    l4.set_tile(slot4, value)
