"""Per-axis coordinate interval trees and the combined global index.

Each axis owns a red-black tree whose nodes are disjoint, fixed-width
coordinate slabs of width ``2 * half_width``.  A point belongs to exactly
one slab per axis, so the slab boxes formed by intersecting one slab from
each axis tile space; the neighborhood of a query is the point set of the
single box containing it, and the extended neighborhood is the 3x3x3
block of boxes around it.

Slab intervals are snapped to a lattice anchored at the first coordinate
inserted on that axis (the first point sits at its slab center).  Snapping
keeps dynamically created intervals disjoint, which ad-hoc ``[c-h, c+h]``
creation cannot guarantee.  Intervals are half-open, ``[lo, hi)``, so a
boundary coordinate belongs to exactly one slab; membership is decided by
the integer lattice index, making boundary handling exact.

Alongside the trees, the index keeps a box-grid view: a packed box key
per point plus a lazily sorted copy, so 3x3x3 candidate pools for whole
batches of queries come out of vectorized searchsorted range lookups.
It is derived data (identical populations to the trees); per-query set
intersection over the per-axis slab sets costs O(points per slab) and is
far too slow for streaming frames.
"""

from __future__ import annotations

import math
from typing import Iterator, Optional

import numpy as np

from .errors import DomainError, DuplicatePointError, UnknownPointError

DEFAULT_HALF_WIDTH = 0.04
DEFAULT_MERGE_DIST = 0.01

RED = True
BLACK = False

_AXIS_NAMES = {"x": 0, "y": 1, "z": 2, 0: 0, 1: 1, 2: 2}

# Box keys pack the three slab indices into one int64: 21 bits per axis,
# biased to stay non-negative.  Covers slab indices in (-2^20, 2^20).
_KEY_BIAS = np.int64(1 << 20)
_KEY_SHIFT = np.int64(21)

_BLOCK_OFFSETS = np.array(
    [(di, dj, dk) for di in (-1, 0, 1) for dj in (-1, 0, 1) for dk in (-1, 0, 1)],
    dtype=np.int64,
)


def _pack_box_rows(triples: np.ndarray) -> np.ndarray:
    t = np.asarray(triples, dtype=np.int64) + _KEY_BIAS
    return (t[..., 0] << (2 * _KEY_SHIFT)) | (t[..., 1] << _KEY_SHIFT) | t[..., 2]


def _axis_index(axis) -> int:
    try:
        return _AXIS_NAMES[axis]
    except KeyError:
        raise DomainError(f"axis must be one of x/y/z or 0/1/2, got {axis!r}") from None


class IntervalNode:
    """One slab of a coordinate interval tree."""

    __slots__ = ("key", "point_ids", "left", "right", "parent", "_red", "_tree")

    def __init__(self, key: int, tree: "CoordinateIntervalTree"):
        self.key = key
        self.point_ids: set[int] = set()
        self.left: Optional[IntervalNode] = None
        self.right: Optional[IntervalNode] = None
        self.parent: Optional[IntervalNode] = None
        self._red = RED
        self._tree = tree

    @property
    def interval(self) -> tuple[float, float]:
        """Half-open slab interval ``[lo, hi)``."""
        return self._tree.interval_for(self.key)

    @property
    def color(self) -> str:
        return "red" if self._red else "black"

    def __repr__(self) -> str:
        lo, hi = self.interval
        return f"IntervalNode([{lo:.4f}, {hi:.4f}), {self.color}, {len(self.point_ids)} pts)"


class CoordinateIntervalTree:
    """Red-black tree of disjoint coordinate slabs on one axis."""

    def __init__(self, half_width: float = DEFAULT_HALF_WIDTH):
        if not (half_width > 0 and math.isfinite(half_width)):
            raise DomainError(f"half_width must be positive and finite, got {half_width}")
        self.half_width = float(half_width)
        self.anchor: Optional[float] = None  # first inserted coordinate; lattice origin
        self.root: Optional[IntervalNode] = None
        self._size = 0

    def __len__(self) -> int:
        return self._size

    # -- lattice ---------------------------------------------------------

    def slab_index(self, coordinate: float) -> int:
        """Lattice index of the slab containing `coordinate`.

        Defined whether or not that slab node exists.  Requires a
        non-empty tree (the lattice is anchored at the first insert).
        """
        if self.anchor is None:
            raise DomainError("slab lattice undefined on an empty tree")
        h = self.half_width
        return math.floor((coordinate - self.anchor + h) / (2.0 * h))

    def interval_for(self, key: int) -> tuple[float, float]:
        h = self.half_width
        lo = self.anchor + (2 * key - 1) * h
        return lo, lo + 2 * h

    # -- queries ---------------------------------------------------------

    def locate(self, coordinate: float) -> Optional[IntervalNode]:
        """Top-down traversal to the slab containing `coordinate`, if any."""
        if self.root is None:
            return None
        key = self.slab_index(coordinate)
        node = self.root
        while node is not None:
            if key < node.key:
                node = node.left
            elif key > node.key:
                node = node.right
            else:
                return node
        return None

    def node_for_key(self, key: int) -> Optional[IntervalNode]:
        node = self.root
        while node is not None:
            if key < node.key:
                node = node.left
            elif key > node.key:
                node = node.right
            else:
                return node
        return None

    def nodes(self) -> Iterator[IntervalNode]:
        """In-order (ascending interval) iteration over slab nodes."""
        stack: list[IntervalNode] = []
        node = self.root
        while stack or node is not None:
            while node is not None:
                stack.append(node)
                node = node.left
            node = stack.pop()
            yield node
            node = node.right

    def height(self) -> int:
        """Longest root-to-leaf path, counted in edges."""

        def walk(node) -> int:
            if node is None:
                return -1
            return 1 + max(walk(node.left), walk(node.right))

        return walk(self.root)

    # -- insertion -------------------------------------------------------

    def insert(self, point_id: int, coordinate: float) -> IntervalNode:
        """Add a point; create and rebalance a new slab if needed."""
        if self.anchor is None:
            self.anchor = float(coordinate)
        return self.insert_key(point_id, self.slab_index(coordinate))

    def insert_key(self, point_id: int, key: int) -> IntervalNode:
        """Add a point under a precomputed slab index (anchor must be set)."""
        node = self._get_or_create(key)
        node.point_ids.add(point_id)
        return node

    def ensure_slab(self, key: int) -> IntervalNode:
        """Create the slab node for `key` if absent (pre-creation support)."""
        return self._get_or_create(key)

    def _get_or_create(self, key: int) -> IntervalNode:
        parent = None
        node = self.root
        while node is not None:
            if key == node.key:
                return node
            parent = node
            node = node.left if key < node.key else node.right
        # The traversal fell off next to the slab with the nearest
        # interval, so attaching here is the nearest-interval position.
        fresh = IntervalNode(key, self)
        fresh.parent = parent
        if parent is None:
            self.root = fresh
        elif key < parent.key:
            parent.left = fresh
        else:
            parent.right = fresh
        self._size += 1
        self._insert_fixup(fresh)
        return fresh

    # -- red-black maintenance --------------------------------------------

    def _rotate_left(self, x: IntervalNode) -> None:
        y = x.right
        x.right = y.left
        if y.left is not None:
            y.left.parent = x
        y.parent = x.parent
        if x.parent is None:
            self.root = y
        elif x is x.parent.left:
            x.parent.left = y
        else:
            x.parent.right = y
        y.left = x
        x.parent = y

    def _rotate_right(self, x: IntervalNode) -> None:
        y = x.left
        x.left = y.right
        if y.right is not None:
            y.right.parent = x
        y.parent = x.parent
        if x.parent is None:
            self.root = y
        elif x is x.parent.right:
            x.parent.right = y
        else:
            x.parent.left = y
        y.right = x
        x.parent = y

    def _insert_fixup(self, z: IntervalNode) -> None:
        while z.parent is not None and z.parent._red:
            parent = z.parent
            grand = parent.parent
            if parent is grand.left:
                uncle = grand.right
                if uncle is not None and uncle._red:
                    parent._red = BLACK
                    uncle._red = BLACK
                    grand._red = RED
                    z = grand
                else:
                    if z is parent.right:
                        z = parent
                        self._rotate_left(z)
                    z.parent._red = BLACK
                    grand._red = RED
                    self._rotate_right(grand)
            else:
                uncle = grand.left
                if uncle is not None and uncle._red:
                    parent._red = BLACK
                    uncle._red = BLACK
                    grand._red = RED
                    z = grand
                else:
                    if z is parent.left:
                        z = parent
                        self._rotate_right(z)
                    z.parent._red = BLACK
                    grand._red = RED
                    self._rotate_left(grand)
        self.root._red = BLACK


class GlobalIndex:
    """Three coordinate interval trees plus the derived box grid.

    Single mutator at a time; all query methods are read-only and may run
    concurrently between insertions.
    """

    def __init__(
        self,
        half_width: float = DEFAULT_HALF_WIDTH,
        merge_dist: float = DEFAULT_MERGE_DIST,
        precreate_neighbors: bool = False,
    ):
        if not (half_width > 0 and math.isfinite(half_width)):
            raise DomainError(f"half_width must be positive, got {half_width}")
        if not (0 < merge_dist < half_width):
            raise DomainError(
                f"merge_dist must satisfy 0 < merge_dist < half_width, got {merge_dist}"
            )
        self.half_width = float(half_width)
        self.merge_dist = float(merge_dist)
        self.precreate_neighbors = bool(precreate_neighbors)
        self.trees = tuple(CoordinateIntervalTree(half_width) for _ in range(3))
        cap = 64
        self._pos = np.empty((cap, 3), dtype=np.float64)
        self._slabs = np.empty((cap, 3), dtype=np.int64)
        self._box_keys = np.empty(cap, dtype=np.int64)
        self._present = np.zeros(cap, dtype=bool)
        self._count = 0
        # lazily sorted (box key, id) view of all present points
        self._sorted_dirty = True
        self._keys_sorted = np.empty(0, dtype=np.int64)
        self._ids_sorted = np.empty(0, dtype=np.int64)

    def __len__(self) -> int:
        return self._count

    def __contains__(self, point_id: int) -> bool:
        p = int(point_id)
        return 0 <= p < self._present.shape[0] and bool(self._present[p])

    def contains_many(self, point_ids) -> np.ndarray:
        ids = np.asarray(point_ids, dtype=np.int64)
        ok = (ids >= 0) & (ids < self._present.shape[0])
        out = np.zeros(ids.shape, dtype=bool)
        out[ok] = self._present[ids[ok]]
        return out

    @property
    def positions(self) -> np.ndarray:
        """Positions indexed by point id (rows of absent ids are garbage)."""
        return self._pos

    def position(self, point_id: int) -> np.ndarray:
        p = int(point_id)
        if p not in self:
            raise UnknownPointError(p)
        return self._pos[p].copy()

    def tree(self, axis) -> CoordinateIntervalTree:
        return self.trees[_axis_index(axis)]

    # -- mutation ----------------------------------------------------------

    def _ensure_capacity(self, n: int) -> None:
        cap = self._present.shape[0]
        if n <= cap:
            return
        new_cap = max(n, cap * 2)
        pos = np.empty((new_cap, 3), dtype=np.float64)
        pos[:cap] = self._pos
        slabs = np.empty((new_cap, 3), dtype=np.int64)
        slabs[:cap] = self._slabs
        keys = np.empty(new_cap, dtype=np.int64)
        keys[:cap] = self._box_keys
        present = np.zeros(new_cap, dtype=bool)
        present[:cap] = self._present
        self._pos, self._slabs, self._box_keys, self._present = pos, slabs, keys, present

    def insert(self, point_id: int, position) -> tuple[IntervalNode, IntervalNode, IntervalNode]:
        """Insert a point into all three axis trees and the box grid."""
        p = int(point_id)
        if p < 0:
            raise DomainError(f"point id must be non-negative, got {p}")
        if p in self:
            raise DuplicatePointError(p)
        pos = np.asarray(position, dtype=np.float64)
        if pos.shape != (3,):
            raise DomainError(f"position must have 3 components, got shape {pos.shape}")
        if not np.all(np.isfinite(pos)):
            raise DomainError("position must be finite")

        nodes = []
        triple = []
        for axis in range(3):
            node = self.trees[axis].insert(p, float(pos[axis]))
            if self.precreate_neighbors:
                self.trees[axis].ensure_slab(node.key - 1)
                self.trees[axis].ensure_slab(node.key + 1)
            nodes.append(node)
            triple.append(node.key)
        if any(abs(k) >= int(_KEY_BIAS) for k in triple):
            raise DomainError(f"position {pos} falls outside the indexable slab range")

        self._ensure_capacity(p + 1)
        self._pos[p] = pos
        self._slabs[p] = triple
        self._box_keys[p] = _pack_box_rows(np.asarray(triple))
        self._present[p] = True
        self._count += 1
        self._sorted_dirty = True
        return tuple(nodes)

    def insert_many(self, point_ids, positions) -> None:
        """Bulk insertion: one validation pass, per-point tree updates.

        Equivalent to calling insert() per point in order.
        """
        ids = np.asarray(point_ids, dtype=np.int64).ravel()
        pos = np.asarray(positions, dtype=np.float64).reshape(-1, 3)
        if ids.size == 0:
            return
        if ids.size != pos.shape[0]:
            raise DomainError("point_ids and positions must have matching lengths")
        if not np.all(np.isfinite(pos)):
            raise DomainError("positions must be finite")
        if ids.min() < 0:
            raise DomainError("point ids must be non-negative")
        upper = int(ids.max()) + 1
        self._ensure_capacity(upper)
        taken = self._present[ids]
        if np.any(taken) or np.unique(ids).size != ids.size:
            raise DuplicatePointError(int(ids[np.argmax(taken)]))

        start = 0
        if any(t.anchor is None for t in self.trees):
            # first point anchors the lattices; insert it the slow way
            self.insert(int(ids[0]), pos[0])
            start = 1
        if start < ids.size:
            rest_ids = ids[start:]
            rest_pos = pos[start:]
            anchors = np.array([t.anchor for t in self.trees])
            h = self.half_width
            keys = np.floor((rest_pos - anchors + h) / (2.0 * h)).astype(np.int64)
            if np.any(np.abs(keys) >= int(_KEY_BIAS)):
                raise DomainError("position falls outside the indexable slab range")
            precreate = self.precreate_neighbors
            for axis in range(3):
                tree = self.trees[axis]
                col = keys[:, axis]
                for i in range(rest_ids.size):
                    node = tree.insert_key(int(rest_ids[i]), int(col[i]))
                    if precreate:
                        tree.ensure_slab(node.key - 1)
                        tree.ensure_slab(node.key + 1)
            self._pos[rest_ids] = rest_pos
            self._slabs[rest_ids] = keys
            self._box_keys[rest_ids] = _pack_box_rows(keys)
            self._present[rest_ids] = True
            self._count += int(rest_ids.size)
            self._sorted_dirty = True

    def pools_for_balls(self, positions: np.ndarray, radius: float) -> tuple[np.ndarray, np.ndarray]:
        """Batched candidate pools for balls of one radius (radius < 2h).

        For Q query positions, returns (owner, ids) covering every box the
        ball around each query can touch: a superset of the points within
        `radius` of each query.
        """
        pos = np.asarray(positions, dtype=np.float64).reshape(-1, 3)
        if pos.shape[0] == 0 or self._count == 0 or any(t.anchor is None for t in self.trees):
            return np.empty(0, dtype=np.int64), np.empty(0, dtype=np.int64)
        if not 0 <= radius < 2 * self.half_width:
            raise DomainError(f"ball radius must lie in [0, 2h), got {radius}")
        anchors = np.array([t.anchor for t in self.trees])
        h = self.half_width
        lo = np.floor((pos - radius - anchors + h) / (2.0 * h)).astype(np.int64)
        hi = np.floor((pos + radius - anchors + h) / (2.0 * h)).astype(np.int64)
        # radius < 2h: at most two slabs per axis, so eight corner boxes
        # cover the ball (duplicates collapse in the argmin downstream)
        corners = np.empty((pos.shape[0], 8, 3), dtype=np.int64)
        for b in range(8):
            corners[:, b, 0] = hi[:, 0] if b & 4 else lo[:, 0]
            corners[:, b, 1] = hi[:, 1] if b & 2 else lo[:, 1]
            corners[:, b, 2] = hi[:, 2] if b & 1 else lo[:, 2]
        indptr, ids = self._gather_keys(_pack_box_rows(corners).ravel())
        counts = np.diff(indptr)
        owner = np.repeat(np.arange(pos.shape[0] * 8, dtype=np.int64) // 8, counts)
        return owner, ids

    # -- queries -----------------------------------------------------------

    def locate(self, axis, coordinate: float) -> Optional[IntervalNode]:
        """Slab containing `coordinate` on `axis`, or None."""
        return self.trees[_axis_index(axis)].locate(float(coordinate))

    def box_of(self, position) -> Optional[tuple[int, int, int]]:
        """Lattice triple of the slab box containing `position`.

        None while any axis tree is still empty (lattice undefined).
        """
        if any(t.anchor is None for t in self.trees):
            return None
        pos = np.asarray(position, dtype=np.float64)
        return tuple(self.trees[a].slab_index(float(pos[a])) for a in range(3))

    def slab_triple(self, point_id: int) -> tuple[int, int, int]:
        p = int(point_id)
        if p not in self:
            raise UnknownPointError(p)
        return tuple(int(v) for v in self._slabs[p])

    def slab_rows(self, point_ids) -> np.ndarray:
        """Slab-index triples for an array of point ids, shape (k, 3)."""
        return self._slabs[np.asarray(point_ids, dtype=np.int64)]

    def neighborhood(self, q) -> set[int]:
        """Points of the slab box containing q.

        Intersection of the three located per-axis slab point sets,
        iterating the smallest and testing membership in the other two.
        """
        located = []
        q = np.asarray(q, dtype=np.float64)
        for axis in range(3):
            node = self.trees[axis].locate(float(q[axis]))
            if node is None:
                return set()
            located.append(node.point_ids)
        a, b, c = sorted(located, key=len)
        return {p for p in a if p in b and p in c}

    def _ensure_sorted(self) -> None:
        if not self._sorted_dirty:
            return
        ids = np.flatnonzero(self._present[: self._box_keys.shape[0]]).astype(np.int64)
        keys = self._box_keys[ids]
        order = np.argsort(keys, kind="stable")  # stable: ids ascend within a box
        self._keys_sorted = keys[order]
        self._ids_sorted = ids[order]
        self._sorted_dirty = False

    def _gather_keys(self, keys_query: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Ids matching each queried box key, CSR style: (indptr, ids)."""
        self._ensure_sorted()
        ks = self._keys_sorted
        lo = np.searchsorted(ks, keys_query, side="left")
        hi = np.searchsorted(ks, keys_query, side="right")
        counts = hi - lo
        indptr = np.zeros(keys_query.size + 1, dtype=np.int64)
        np.cumsum(counts, out=indptr[1:])
        total = int(indptr[-1])
        if total == 0:
            return indptr, np.empty(0, dtype=np.int64)
        span = np.repeat(indptr[:-1], counts)
        take = np.arange(total, dtype=np.int64) - span + np.repeat(lo, counts)
        return indptr, self._ids_sorted[take]

    def pools_for_boxes(self, triples: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Batched 3x3x3 candidate pools.

        For Q box triples, returns (owner, ids): every point of every box
        in each query's 3x3x3 block, with owner[i] the query row that
        pool entry i belongs to.
        """
        triples = np.asarray(triples, dtype=np.int64).reshape(-1, 3)
        q = triples.shape[0]
        if q == 0 or self._count == 0:
            return np.empty(0, dtype=np.int64), np.empty(0, dtype=np.int64)
        neighbor_keys = _pack_box_rows(triples[:, None, :] + _BLOCK_OFFSETS[None, :, :])
        indptr, ids = self._gather_keys(neighbor_keys.ravel())
        counts = np.diff(indptr)
        owner = np.repeat(np.arange(q * 27, dtype=np.int64) // 27, counts)
        return owner, ids

    def box_points(self, box: tuple[int, int, int]) -> list[int]:
        """Point ids stored in one slab box (empty list if void)."""
        key = _pack_box_rows(np.asarray(box, dtype=np.int64)[None, :])
        _, ids = self._gather_keys(key)
        return [int(i) for i in ids]

    def block_ids(self, box: tuple[int, int, int]) -> np.ndarray:
        """Ids in the 3x3x3 block of slab boxes centered on `box`."""
        _, ids = self.pools_for_boxes(np.asarray(box, dtype=np.int64)[None, :])
        return ids

    def extended_ids(self, q) -> np.ndarray:
        """Ids in the 3x3x3 block of slab boxes around q, as an array."""
        box = self.box_of(q)
        if box is None:
            return np.empty(0, dtype=np.int64)
        return self.block_ids(box)

    def extended_neighborhood(self, q) -> set[int]:
        """Union of points over the 3x3x3 block of slab boxes around q."""
        return set(int(p) for p in self.extended_ids(q))

    def ids_within(self, q, radius: float) -> np.ndarray:
        """Ids of all boxes overlapping the ball of `radius` around q.

        A superset of the points within `radius`; exact when
        radius <= half_width because the 3x3x3 block then covers the ball.
        """
        if any(t.anchor is None for t in self.trees):
            return np.empty(0, dtype=np.int64)
        q = np.asarray(q, dtype=np.float64)
        axes = []
        for axis in range(3):
            t = self.trees[axis]
            lo = t.slab_index(float(q[axis]) - radius)
            hi = t.slab_index(float(q[axis]) + radius)
            axes.append(np.arange(lo, hi + 1, dtype=np.int64))
        boxes = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, 3)
        _, ids = self._gather_keys(_pack_box_rows(boxes))
        return ids

    def correspond(self, q) -> Optional[int]:
        """Nearest point within merge_dist of q; ties go to the smaller id."""
        q = np.asarray(q, dtype=np.float64)
        cand = self.ids_within(q, self.merge_dist)
        if cand.size == 0:
            return None
        d2 = ((self._pos[cand] - q) ** 2).sum(axis=1)
        within = d2 <= self.merge_dist * self.merge_dist
        if not np.any(within):
            return None
        cand = cand[within]
        d2 = d2[within]
        order = np.lexsort((cand, d2))
        return int(cand[order[0]])
